// concordia: command-line front end over the library.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"

#include "concordia/boolean.hpp"
#include "concordia/fusion.hpp"
#include "concordia/grounding.hpp"
#include "concordia/harness.hpp"
#include "concordia/hlmrf.hpp"
#include "concordia/logic.hpp"

namespace fs = std::filesystem;
using namespace concordia;

namespace {

struct Options {
  std::string rules, facts, data, config, truth, model, out, semantics = "psl", mode, priors;
  std::optional<std::uint64_t> seed;
  std::optional<int> penalty;
  std::optional<std::size_t> epochs;
  std::optional<double> fraction;
  bool no_logic = false;
  double lr = 0.1;
  // synth-* knobs
  std::optional<std::size_t> users, items, frames, boxes, distractors, classes;
  std::optional<double> density, noise;
};

// Writes to the file, or to stdout when the path is empty.
void emit(const std::string& path, const std::string& text) {
  if (path.empty()) {
    std::cout << text;
    return;
  }
  if (fs::path(path).has_parent_path()) fs::create_directories(fs::path(path).parent_path());
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << text;
}

std::string read_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

grounding::FactSet facts_or_empty(const std::string& path) {
  return path.empty() ? grounding::FactSet{} : grounding::load_facts(path);
}

hlmrf::SolverOptions solver_from(const Options& o) {
  hlmrf::SolverOptions s;
  if (o.penalty) s.p = *o.penalty;
  return s;
}

grounding::GroundFactorGraph ground_files(const logic::Theory& theory, const grounding::FactSet& facts,
                                          const std::vector<grounding::AtomKey>& query = {}) {
  const auto domains = grounding::collect_constants(theory, facts, query);
  grounding::GroundingOptions g;
  g.query = query;
  return grounding::ground_theory(theory, domains, facts, g);
}

void write_values(std::ostream& out, const grounding::GroundFactorGraph& graph, std::span<const double> values) {
  for (const auto& atom : graph.atoms) {
    if (atom.observed) continue;
    out << atom.key.predicate;
    for (const auto& c : atom.key.constants) out << '\t' << c;
    out << '\t' << logic::format_number(values[atom.id]) << '\n';
  }
}

harness::ExperimentConfig config_from(const Options& o) {
  if (o.config.empty()) throw std::invalid_argument("--config is required");
  auto cfg = harness::load_config(o.config);
  if (!o.data.empty()) cfg.data_path = o.data;
  if (!o.facts.empty()) cfg.facts_path = o.facts;
  if (!o.rules.empty()) cfg.rules_path = o.rules;
  if (o.seed) cfg.seed = cfg.recommend.seed = cfg.chain.seed = *o.seed;
  if (o.penalty) cfg.hyper.solver.p = *o.penalty;
  if (!o.mode.empty()) cfg.mode = fusion::parse_mode(o.mode);
  if (!o.priors.empty()) cfg.hyper.priors = o.priors == "on";
  if (o.epochs) cfg.epochs = *o.epochs;
  if (o.fraction) cfg.fractions = {*o.fraction};
  if (o.no_logic) cfg.hyper.use_logic = false;
  return cfg;
}

int cmd_parse(const Options& o) {
  const auto theory = logic::parse_theory_unchecked(read_file(o.rules));
  const auto report = logic::validate_theory(theory);
  for (const auto& issue : report.issues) std::cerr << o.rules << ": " << issue.message << '\n';
  if (!report.issues.empty()) return 1;
  emit(o.out, logic::format_theory(theory));
  return 0;
}

int cmd_ground(const Options& o) {
  const auto theory = logic::load_theory(o.rules);
  const auto graph = ground_files(theory, facts_or_empty(o.facts));
  nlohmann::json j;
  j["atoms"] = graph.atoms.size();
  j["observed_atoms"] = graph.observed_count();
  j["free_atoms"] = graph.atoms.size() - graph.observed_count();
  j["ground_rules"] = graph.ground_rules.size();
  j["constraint_groups"] = graph.constraint_groups.size();
  nlohmann::json per_rule = nlohmann::json::array();
  for (std::size_t i = 0; i < theory.rules.size(); ++i) {
    per_rule.push_back({{"rule", logic::format_rule(theory.rules[i])}, {"groundings", graph.groundings_per_rule.at(i)}});
  }
  j["rules"] = per_rule;
  emit(o.out, j.dump(2) + "\n");
  return 0;
}

int cmd_infer(const Options& o) {
  const auto theory = logic::load_theory(o.rules);
  const auto graph = ground_files(theory, facts_or_empty(o.facts));
  const auto weights = hlmrf::Weights::from_theory(theory);
  const auto observed = hlmrf::observed_assignment(graph);
  std::ostringstream out;
  if (o.semantics == "boolean") {
    const auto a = boolean::mpe(graph, weights, observed);
    std::vector<double> values(a.bits.begin(), a.bits.end());
    write_values(out, graph, values);
  } else {
    const auto r = hlmrf::map_infer(graph, weights, observed, solver_from(o));
    if (!r.converged) std::cerr << "warning: MAP inference stopped after " << r.iterations << " iterations\n";
    write_values(out, graph, r.values);
  }
  emit(o.out, out.str());
  return 0;
}

int cmd_learn_weights(const Options& o) {
  const auto theory = logic::load_theory(o.rules);
  const auto facts = facts_or_empty(o.facts);
  const auto truth_facts = grounding::load_facts(o.truth);
  std::vector<grounding::AtomKey> query;
  for (const auto& f : truth_facts.entries()) query.push_back(f.atom);
  const auto graph = ground_files(theory, facts, query);
  const auto solver = solver_from(o);
  const auto observed = hlmrf::observed_assignment(graph);
  auto clamped = observed;
  for (const auto& f : truth_facts.entries()) clamped[*graph.atoms.find(f.atom)] = f.value;
  auto weights = hlmrf::Weights::from_theory(theory);
  const std::size_t epochs = o.epochs.value_or(100);
  for (std::size_t e = 0; e < epochs; ++e) {
    // Latent atoms in the truth come from MAP with the labeled atoms fixed.
    const auto truth = hlmrf::map_infer(graph, weights, clamped, solver).values;
    const auto map = hlmrf::map_infer(graph, weights, observed, solver).values;
    weights = hlmrf::apply_weight_gradient(weights, hlmrf::weight_gradient(graph, weights, map, truth, solver.p), o.lr);
  }
  auto learned = theory;
  for (std::size_t i = 0; i < learned.rules.size(); ++i) {
    if (learned.rules[i].learnable) learned.rules[i].weight = weights.lambda[i];
  }
  emit(o.out, logic::format_theory(learned));
  return 0;
}

int cmd_train(const Options& o) {
  if (o.out.empty()) throw std::invalid_argument("--out is required");
  const auto cfg = config_from(o);
  const auto in = harness::load_inputs(cfg);
  const auto r = harness::run_fraction(cfg, in, cfg.fractions.front());
  auto extra = r.mapping.to_ptree();
  extra.put("run_fraction", logic::format_number(r.fraction));
  extra.put("run_mode", fusion::to_string(cfg.mode));
  extra.put("run_seed", std::to_string(cfg.seed));
  fusion::save_model(o.out, r.trained.model, extra);
  std::ostringstream history;
  harness::write_history_csv(history, {r});
  emit((fs::path(o.out) / "history.csv").string(), history.str());
  return 0;
}

int cmd_eval(const Options& o) {
  if (o.model.empty()) throw std::invalid_argument("--model is required");
  boost::property_tree::ptree extra;
  const auto model = fusion::load_model(o.model, &extra);
  harness::CompileOptions opt;
  opt.fraction = std::stod(extra.get<std::string>("run_fraction", "1"));
  opt.mode = fusion::parse_mode(extra.get<std::string>("run_mode", "supervised"));
  opt.seed = std::stoull(extra.get<std::string>("run_seed", "0"));
  opt.priors = model.hyper.priors;
  opt.use_logic = model.hyper.use_logic;
  for (const char* key : {"run_fraction", "run_mode", "run_seed"}) extra.erase(key);
  auto mapping = harness::MappingConfig::from_ptree(extra);

  harness::Dataset data;
  if (!o.data.empty()) {
    data = harness::load_dataset(o.data, o.facts);
  } else {
    auto cfg = config_from(o);
    data = harness::load_inputs(cfg).data;
  }
  const auto c = harness::compile(data, mapping, model.theory, opt);
  const auto e = harness::evaluate(model, c.test, c.test_rows, data, mapping);
  harness::FractionResult r;
  r.fraction = opt.fraction;
  r.evaluation = e;
  std::ostringstream metrics;
  harness::write_metrics_csv(metrics, {r});
  if (o.out.empty()) {
    std::cout << metrics.str();
  } else {
    emit((fs::path(o.out) / "metrics.csv").string(), metrics.str());
    std::ostringstream preds;
    harness::write_predictions(preds, e);
    emit((fs::path(o.out) / "predictions.tsv").string(), preds.str());
  }
  return 0;
}

int cmd_synth_recommend(const Options& o) {
  if (o.out.empty()) throw std::invalid_argument("--out is required");
  harness::RecommendParams p;
  p.seed = o.seed.value_or(0);
  if (o.users) p.users = *o.users;
  if (o.items) p.items = *o.items;
  if (o.density) p.density = *o.density;
  harness::write_task(o.out, harness::synth_recommend(p));
  return 0;
}

int cmd_synth_chain(const Options& o) {
  if (o.out.empty()) throw std::invalid_argument("--out is required");
  harness::ChainParams p;
  p.seed = o.seed.value_or(0);
  if (o.frames) p.frames = *o.frames;
  if (o.boxes) p.boxes_per_frame = *o.boxes;
  if (o.noise) p.noise = *o.noise;
  if (o.distractors) p.distractors = *o.distractors;
  if (o.classes) p.classes = *o.classes;
  harness::write_task(o.out, harness::synth_latent_chain(p));
  return 0;
}

int cmd_run(const Options& o) {
  if (o.out.empty()) throw std::invalid_argument("--out is required");
  const auto cfg = config_from(o);
  const auto results = harness::run_experiment(cfg, o.out);
  std::cout << read_file((fs::path(o.out) / "summary.txt").string());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Concordia: neural predictors and weighted logic theories trained side by side"};
  app.require_subcommand(1);
  Options o;

  auto rules = [&](CLI::App* c, bool required) {
    auto* opt = c->add_option("--rules", o.rules, "Rule file")->check(CLI::ExistingFile);
    if (required) opt->required();
  };
  auto facts = [&](CLI::App* c) { c->add_option("--facts", o.facts, "Fact file")->check(CLI::ExistingFile); };
  auto out = [&](CLI::App* c, const std::string& what) { return c->add_option("--out", o.out, what); };
  auto penalty = [&](CLI::App* c) {
    c->add_option("--penalty", o.penalty, "Hinge exponent p")->check(CLI::IsMember({1, 2}));
  };
  auto experiment = [&](CLI::App* c) {
    c->add_option("--config", o.config, "Experiment config (INI)")->check(CLI::ExistingFile);
    c->add_option("--data", o.data, "Data file, overrides the config")->check(CLI::ExistingFile);
    facts(c);
    rules(c, false);
    c->add_option("--seed", o.seed, "Seed for data generation, subsampling and training");
    penalty(c);
    c->add_option("--mode", o.mode, "Training mode")->check(CLI::IsMember({"supervised", "semi", "unsupervised"}));
    c->add_option("--priors", o.priors, "Neural priors in the theory")->check(CLI::IsMember({"on", "off"}));
    c->add_option("--epochs", o.epochs, "Training epochs");
    c->add_option("--fraction", o.fraction, "Fraction of labeled training data")->check(CLI::Range(0.0, 1.0));
    c->add_flag("--no-logic", o.no_logic, "Neural predictor alone");
  };

  auto* parse = app.add_subcommand("parse", "Validate a rule file and print it in canonical form");
  rules(parse, true);
  out(parse, "Output file (default stdout)");

  auto* ground = app.add_subcommand("ground", "Ground a theory and print statistics as JSON");
  rules(ground, true);
  facts(ground);
  out(ground, "Output file (default stdout)");

  auto* infer = app.add_subcommand("infer", "MAP state of every free atom as TSV");
  rules(infer, true);
  facts(infer);
  penalty(infer);
  infer->add_option("--semantics", o.semantics, "psl or boolean")->check(CLI::IsMember({"psl", "boolean"}));
  out(infer, "Output file (default stdout)");

  auto* learn = app.add_subcommand("learn-weights", "Fit rule weights to a truth file");
  rules(learn, true);
  facts(learn);
  penalty(learn);
  learn->add_option("--truth", o.truth, "Target values for free atoms")->required()->check(CLI::ExistingFile);
  learn->add_option("--epochs", o.epochs, "Gradient steps (default 100)");
  learn->add_option("--lr", o.lr, "Step size");
  out(learn, "Output rule file (default stdout)");

  auto* train = app.add_subcommand("train", "Train one model and save its bundle");
  experiment(train);
  out(train, "Bundle directory");

  auto* eval = app.add_subcommand("eval", "Score a saved bundle on the test split");
  experiment(eval);
  eval->add_option("--model", o.model, "Bundle directory")->check(CLI::ExistingDirectory);
  out(eval, "Directory for metrics.csv and predictions.tsv (default: metrics to stdout)");

  auto* srec = app.add_subcommand("synth-recommend", "Write a synthetic rating task");
  srec->add_option("--seed", o.seed, "Generator seed");
  srec->add_option("--users", o.users, "Number of users");
  srec->add_option("--items", o.items, "Number of items");
  srec->add_option("--density", o.density, "Share of rated pairs")->check(CLI::Range(0.0, 1.0));
  out(srec, "Output directory")->required();

  auto* schain = app.add_subcommand("synth-chain", "Write a synthetic latent-chain activity task");
  schain->add_option("--seed", o.seed, "Generator seed");
  schain->add_option("--frames", o.frames, "Number of frames");
  schain->add_option("--boxes-per-frame", o.boxes, "Actors per frame");
  schain->add_option("--noise", o.noise, "Chance an actor deviates from the scene activity")->check(CLI::Range(0.0, 1.0));
  schain->add_option("--distractors", o.distractors, "Irrelevant rules to add");
  schain->add_option("--classes", o.classes, "Number of activity classes");
  out(schain, "Output directory")->required();

  auto* run = app.add_subcommand("run", "Config-driven experiment with reports");
  experiment(run);
  out(run, "Report directory");

  CLI11_PARSE(app, argc, argv);
  try {
    if (*parse) return cmd_parse(o);
    if (*ground) return cmd_ground(o);
    if (*infer) return cmd_infer(o);
    if (*learn) return cmd_learn_weights(o);
    if (*train) return cmd_train(o);
    if (*eval) return cmd_eval(o);
    if (*srec) return cmd_synth_recommend(o);
    if (*schain) return cmd_synth_chain(o);
    if (*run) return cmd_run(o);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 1;
}
