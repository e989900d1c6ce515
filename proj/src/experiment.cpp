#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <limits>
#include <set>
#include <sstream>
#include <stdexcept>

#include <boost/property_tree/ini_parser.hpp>
#include "json.hpp"

#include "concordia/harness.hpp"

namespace concordia::harness {

namespace fs = std::filesystem;

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t");
  return s.substr(b, e - b + 1);
}

struct Reader {
  std::string section;

  std::string where(const std::string& key) const { return section + "." + key; }

  double real(const std::string& key, const std::string& v) const {
    std::size_t used = 0;
    try {
      const double x = std::stod(v, &used);
      if (used == v.size() && std::isfinite(x)) return x;
    } catch (const std::exception&) {
    }
    throw std::invalid_argument(where(key) + ": expected a number, got '" + v + "'");
  }

  std::size_t count(const std::string& key, const std::string& v) const {
    const double x = real(key, v);
    if (x < 0 || x != std::floor(x)) throw std::invalid_argument(where(key) + ": expected a non-negative integer");
    return static_cast<std::size_t>(x);
  }

  std::uint64_t seed(const std::string& key, const std::string& v) const {
    try {
      std::size_t used = 0;
      const auto x = std::stoull(v, &used);
      if (used == v.size() && v[0] != '-') return x;
    } catch (const std::exception&) {
    }
    throw std::invalid_argument(where(key) + ": expected an unsigned integer, got '" + v + "'");
  }

  bool flag(const std::string& key, const std::string& v) const {
    if (v == "on" || v == "true" || v == "1") return true;
    if (v == "off" || v == "false" || v == "0") return false;
    throw std::invalid_argument(where(key) + ": expected on/off, got '" + v + "'");
  }

  std::vector<std::size_t> widths(const std::string& key, const std::string& v) const {
    std::vector<std::size_t> out;
    std::stringstream ss(v);
    std::string item;
    while (std::getline(ss, item, ',')) {
      item = trim(item);
      if (item.empty()) continue;
      const auto w = count(key, item);
      if (w == 0) throw std::invalid_argument(where(key) + ": layer widths must be positive");
      out.push_back(w);
    }
    return out;
  }

  [[noreturn]] void unknown(const std::string& key) const {
    throw std::invalid_argument("unknown config key " + where(key));
  }
};

std::string resolve(const std::string& base, const std::string& path) {
  if (path.empty()) return path;
  const fs::path p(path);
  return p.is_absolute() ? path : (fs::path(base) / p).lexically_normal().string();
}

}  // namespace

ExperimentConfig parse_config(std::istream& in, const std::string& base_dir) {
  ptree root;
  try {
    boost::property_tree::read_ini(in, root);
  } catch (const boost::property_tree::ini_parser_error& e) {
    throw std::invalid_argument("config: line " + std::to_string(e.line()) + ": " + e.message());
  }
  ExperimentConfig cfg;
  std::optional<std::uint64_t> synth_seed;
  std::vector<std::pair<std::string, std::string>> synth_keys;
  for (const auto& [section, body] : root) {
    if (!body.data().empty() && body.empty()) {
      throw std::invalid_argument("config key " + section + " outside any section");
    }
    const Reader r{section};
    if (section == "mapping") {
      cfg.mapping = body;
      continue;
    }
    for (const auto& [key, node] : body) {
      const auto v = trim(node.data());
      if (section == "experiment") {
        if (key == "name") {
          cfg.name = v;
        } else if (key == "seed") {
          cfg.seed = r.seed(key, v);
        } else if (key == "data") {
          cfg.data_path = resolve(base_dir, v);
        } else if (key == "facts") {
          cfg.facts_path = resolve(base_dir, v);
        } else if (key == "rules") {
          cfg.rules_path = resolve(base_dir, v);
        } else if (key == "fractions") {
          cfg.fractions.clear();
          std::stringstream ss(v);
          std::string item;
          while (std::getline(ss, item, ',')) {
            const double f = r.real(key, trim(item));
            if (!(f > 0.0 && f <= 1.0)) throw std::invalid_argument(r.where(key) + ": fractions must be in (0, 1]");
            cfg.fractions.push_back(f);
          }
          if (cfg.fractions.empty()) throw std::invalid_argument(r.where(key) + ": empty list");
        } else if (key == "eval_every") {
          cfg.eval_every = r.count(key, v);
        } else {
          r.unknown(key);
        }
      } else if (section == "synthetic") {
        if (key == "generator") {
          if (v != "recommend" && v != "latent_chain") {
            throw std::invalid_argument(r.where(key) + ": expected recommend or latent_chain, got '" + v + "'");
          }
          cfg.generator = v;
        } else if (key == "seed") {
          synth_seed = r.seed(key, v);
        } else {
          synth_keys.emplace_back(key, v);
        }
      } else if (section == "theory") {
        if (key == "priors") {
          cfg.hyper.priors = r.flag(key, v);
        } else if (key == "learn_weights") {
          cfg.hyper.learn_weights = r.flag(key, v);
        } else if (key == "use_logic") {
          cfg.hyper.use_logic = r.flag(key, v);
        } else {
          r.unknown(key);
        }
      } else if (section == "neural") {
        if (key == "hidden") {
          cfg.hidden = r.widths(key, v);
        } else if (key == "lr") {
          cfg.hyper.lr_neural = r.real(key, v);
        } else {
          r.unknown(key);
        }
      } else if (section == "gating") {
        if (key == "hidden") {
          const auto w = r.widths(key, v);
          if (w.size() != 1) throw std::invalid_argument(r.where(key) + ": the gate has exactly one hidden layer");
          cfg.gate_hidden = w[0];
        } else if (key == "lr") {
          cfg.hyper.lr_gate = r.real(key, v);
        } else {
          r.unknown(key);
        }
      } else if (section == "solver") {
        auto& s = cfg.hyper.solver;
        if (key == "penalty") {
          const auto p = r.count(key, v);
          if (p != 1 && p != 2) throw std::invalid_argument(r.where(key) + ": penalty must be 1 or 2");
          s.p = static_cast<int>(p);
        } else if (key == "max_iterations") {
          s.max_iterations = r.count(key, v);
        } else if (key == "tolerance") {
          s.tolerance = r.real(key, v);
        } else if (key == "step") {
          s.step = r.real(key, v);
        } else if (key == "initialization") {
          s.initialization = r.real(key, v);
        } else {
          r.unknown(key);
        }
      } else if (section == "training") {
        if (key == "epochs") {
          cfg.epochs = r.count(key, v);
        } else if (key == "mode") {
          cfg.mode = fusion::parse_mode(v);
        } else if (key == "lr_logic") {
          cfg.hyper.lr_logic = r.real(key, v);
        } else {
          r.unknown(key);
        }
      } else {
        throw std::invalid_argument("unknown config section [" + section + "]");
      }
    }
  }

  if (!synth_keys.empty() && !cfg.generator) throw std::invalid_argument("[synthetic] needs a generator key");
  if (cfg.generator) {
    const Reader r{"synthetic"};
    cfg.recommend.seed = cfg.chain.seed = synth_seed.value_or(cfg.seed);
    for (const auto& [key, v] : synth_keys) {
      if (*cfg.generator == "recommend") {
        auto& p = cfg.recommend;
        if (key == "users") {
          p.users = r.count(key, v);
        } else if (key == "items") {
          p.items = r.count(key, v);
        } else if (key == "density") {
          p.density = r.real(key, v);
        } else if (key == "test_fraction") {
          p.test_fraction = r.real(key, v);
        } else if (key == "clusters") {
          p.clusters = r.count(key, v);
        } else if (key == "similarity_threshold") {
          p.similarity_threshold = r.real(key, v);
        } else if (key == "feature_noise") {
          p.feature_noise = r.real(key, v);
        } else if (key == "noise_features") {
          p.noise_features = r.count(key, v);
        } else {
          r.unknown(key);
        }
      } else {
        auto& p = cfg.chain;
        if (key == "frames") {
          p.frames = r.count(key, v);
        } else if (key == "boxes_per_frame") {
          p.boxes_per_frame = r.count(key, v);
        } else if (key == "noise") {
          p.noise = r.real(key, v);
        } else if (key == "distractors") {
          p.distractors = r.count(key, v);
        } else if (key == "classes") {
          p.classes = r.count(key, v);
        } else if (key == "frames_per_scene") {
          p.frames_per_scene = r.count(key, v);
        } else if (key == "feature_dim") {
          p.feature_dim = r.count(key, v);
        } else if (key == "feature_noise") {
          p.feature_noise = r.real(key, v);
        } else {
          r.unknown(key);
        }
      }
    }
  } else if (!cfg.mapping) {
    throw std::invalid_argument("config needs a [mapping] section");
  }
  if (cfg.mapping) MappingConfig::from_ptree(*cfg.mapping);
  return cfg;
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config " + path);
  try {
    return parse_config(in, fs::path(path).parent_path().string());
  } catch (const std::invalid_argument& e) {
    throw std::invalid_argument(path + ": " + e.what());
  }
}

Loaded load_inputs(const ExperimentConfig& cfg) {
  Loaded in;
  if (cfg.generator) {
    auto task = *cfg.generator == "recommend" ? synth_recommend(cfg.recommend) : synth_latent_chain(cfg.chain);
    in.data = std::move(task.data);
    in.theory = std::move(task.theory);
    in.mapping = cfg.mapping ? MappingConfig::from_ptree(*cfg.mapping) : std::move(task.mapping);
  } else {
    if (cfg.data_path.empty() || cfg.rules_path.empty()) {
      throw std::invalid_argument("config needs experiment.data and experiment.rules, or a [synthetic] section");
    }
    in.data = load_dataset(cfg.data_path, cfg.facts_path);
    in.theory = logic::load_theory(cfg.rules_path);
    in.mapping = MappingConfig::from_ptree(*cfg.mapping);
  }
  return in;
}

FractionResult run_fraction(const ExperimentConfig& cfg, const Loaded& in, double fraction) {
  FractionResult out;
  out.fraction = fraction;
  out.mapping = in.mapping;
  CompileOptions opt;
  opt.mode = cfg.mode;
  opt.fraction = fraction;
  opt.seed = cfg.seed;
  opt.priors = cfg.hyper.priors;
  opt.use_logic = cfg.hyper.use_logic;
  const auto c = compile(in.data, out.mapping, in.theory, opt);
  out.labeled = c.labeled.size();
  out.unlabeled = c.unlabeled.size();

  fusion::ModelShape shape;
  shape.feature_width = c.feature_width;
  shape.hidden = cfg.hidden;
  shape.gate_hidden = cfg.gate_hidden;
  shape.seed = cfg.seed;
  if (out.mapping.task == neural::Task::classification) shape.heads = {out.mapping.classes.size()};
  auto model = fusion::make_model(in.theory, out.mapping.task, shape, cfg.hyper,
                                  out.mapping.neural_atom ? out.mapping.neural_atom->predicate : std::string());
  model.lo = out.mapping.lo;
  model.hi = out.mapping.hi;

  const bool regression = out.mapping.task == neural::Task::regression;
  fusion::EpochHook hook;
  if (cfg.eval_every > 0) {
    hook = [&](const fusion::ConcordiaModel& m, std::size_t epoch) {
      std::map<std::string, double> row;
      if (epoch % cfg.eval_every != 0) return row;
      const auto e = evaluate(m, c.test, c.test_rows, in.data, out.mapping);
      auto put = [&](const std::string& name, const ComponentMetrics& cm) {
        row[name + (regression ? "_rmse" : "_accuracy")] = regression ? cm.rmse : cm.accuracy;
      };
      put("mixture", e.metrics.mixture);
      put("neural", e.metrics.neural);
      if (e.metrics.logic) put("logic", *e.metrics.logic);
      return row;
    };
  }
  out.trained = fusion::train(model, c.labeled, c.unlabeled, cfg.epochs, cfg.mode, cfg.seed, hook);
  out.evaluation = evaluate(out.trained.model, c.test, c.test_rows, in.data, out.mapping);
  return out;
}

std::string percent_tag(double fraction) {
  return logic::format_number(std::round(fraction * 100.0 * 1e6) / 1e6);
}

namespace {

std::vector<std::pair<std::string, const ComponentMetrics*>> components(const Metrics& m) {
  std::vector<std::pair<std::string, const ComponentMetrics*>> out = {{"mixture", &m.mixture}, {"neural", &m.neural}};
  if (m.logic) out.emplace_back("logic", &*m.logic);
  return out;
}

nlohmann::json number_or_null(double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); }

}  // namespace

void write_metrics_csv(std::ostream& out, const std::vector<FractionResult>& results) {
  const bool regression = !results.empty() && results.front().evaluation.metrics.task == neural::Task::regression;
  out << (regression ? "fraction,component,n,rmse\n" : "fraction,component,n,accuracy,precision,recall,f1\n");
  for (const auto& r : results) {
    for (const auto& [name, cm] : components(r.evaluation.metrics)) {
      out << logic::format_number(r.fraction) << ',' << name << ',' << cm->n;
      if (regression) {
        out << ',' << logic::format_number(cm->rmse);
      } else {
        out << ',' << logic::format_number(cm->accuracy) << ',' << logic::format_number(cm->precision) << ','
            << logic::format_number(cm->recall) << ',' << logic::format_number(cm->f1);
      }
      out << '\n';
    }
  }
}

void write_history_csv(std::ostream& out, const std::vector<FractionResult>& results) {
  std::set<std::string> metric_names;
  for (const auto& r : results) {
    for (const auto& e : r.trained.history.epochs) {
      for (const auto& [k, v] : e.metrics) metric_names.insert(k);
    }
  }
  out << "fraction,epoch,updates,neural_loss,truth_energy,gate_loss";
  for (const auto& k : metric_names) out << ',' << k;
  out << '\n';
  auto num = [](double v) { return std::isfinite(v) ? logic::format_number(v) : std::string(); };
  for (const auto& r : results) {
    for (const auto& e : r.trained.history.epochs) {
      out << logic::format_number(r.fraction) << ',' << e.epoch << ',' << e.updates << ',' << num(e.neural_loss) << ','
          << num(e.truth_energy) << ',' << num(e.gate_loss);
      for (const auto& k : metric_names) {
        auto it = e.metrics.find(k);
        out << ',' << (it == e.metrics.end() ? std::string() : num(it->second));
      }
      out << '\n';
    }
  }
}

void write_summary_json(std::ostream& out, const ExperimentConfig& cfg, const std::vector<FractionResult>& results) {
  nlohmann::json j;
  j["name"] = cfg.name;
  j["seed"] = cfg.seed;
  j["mode"] = fusion::to_string(cfg.mode);
  j["epochs"] = cfg.epochs;
  j["priors"] = cfg.hyper.priors;
  j["use_logic"] = cfg.hyper.use_logic;
  j["learn_weights"] = cfg.hyper.learn_weights;
  j["penalty"] = cfg.hyper.solver.p;
  if (cfg.generator) j["generator"] = *cfg.generator;
  j["results"] = nlohmann::json::array();
  for (const auto& r : results) {
    const bool regression = r.evaluation.metrics.task == neural::Task::regression;
    nlohmann::json row;
    row["fraction"] = r.fraction;
    row["task"] = regression ? "regression" : "classification";
    row["labeled"] = r.labeled;
    row["unlabeled"] = r.unlabeled;
    for (const auto& [name, cm] : components(r.evaluation.metrics)) {
      nlohmann::json m;
      m["n"] = cm->n;
      if (regression) {
        m["rmse"] = number_or_null(cm->rmse);
      } else {
        m["accuracy"] = number_or_null(cm->accuracy);
        m["precision"] = number_or_null(cm->precision);
        m["recall"] = number_or_null(cm->recall);
        m["f1"] = number_or_null(cm->f1);
      }
      row["metrics"][name] = m;
    }
    nlohmann::json weights = nlohmann::json::array();
    const auto& model = r.trained.model;
    for (std::size_t i = 0; i < model.theory.rules.size(); ++i) {
      const auto& rule = model.theory.rules[i];
      weights.push_back({{"rule", logic::format_rule(rule)},
                         {"weight", number_or_null(rule.hard ? std::numeric_limits<double>::quiet_NaN() : model.weights.lambda.at(i))}});
    }
    row["weights"] = weights;
    j["results"].push_back(row);
  }
  out << j.dump(2) << '\n';
}

namespace {

void write_summary_text(std::ostream& out, const ExperimentConfig& cfg, const std::vector<FractionResult>& results) {
  out << cfg.name << " (seed " << cfg.seed << ", " << fusion::to_string(cfg.mode) << ", " << cfg.epochs
      << " epochs)\n\n";
  for (const auto& r : results) {
    const bool regression = r.evaluation.metrics.task == neural::Task::regression;
    out << "fraction " << logic::format_number(r.fraction) << ": " << r.labeled << " labeled, " << r.unlabeled
        << " unlabeled\n";
    for (const auto& [name, cm] : components(r.evaluation.metrics)) {
      out << "  " << std::left << std::setw(8) << name << std::right << " n=" << cm->n;
      if (regression) {
        out << "  rmse " << std::fixed << std::setprecision(4) << cm->rmse;
      } else {
        out << "  acc " << std::fixed << std::setprecision(4) << cm->accuracy << "  f1 " << cm->f1;
      }
      out << std::defaultfloat << '\n';
    }
  }
}

}  // namespace

std::vector<FractionResult> run_experiment(const ExperimentConfig& cfg, const std::string& out_dir) {
  const auto in = load_inputs(cfg);
  fs::create_directories(out_dir);
  std::vector<FractionResult> results;
  for (double f : cfg.fractions) {
    results.push_back(run_fraction(cfg, in, f));
    const auto& r = results.back();
    const auto tag = percent_tag(f);
    std::ofstream preds(fs::path(out_dir) / ("predictions-" + tag + ".tsv"));
    write_predictions(preds, r.evaluation);
    auto extra = r.mapping.to_ptree();
    extra.put("run_fraction", logic::format_number(f));
    extra.put("run_mode", fusion::to_string(cfg.mode));
    extra.put("run_seed", std::to_string(cfg.seed));
    fusion::save_model((fs::path(out_dir) / ("model-" + tag)).string(), r.trained.model, extra);
  }
  auto open = [&](const std::string& name) {
    std::ofstream out(fs::path(out_dir) / name);
    if (!out) throw std::runtime_error("cannot write " + (fs::path(out_dir) / name).string());
    return out;
  };
  {
    auto out = open("metrics.csv");
    write_metrics_csv(out, results);
  }
  {
    auto out = open("history.csv");
    write_history_csv(out, results);
  }
  {
    auto out = open("summary.json");
    write_summary_json(out, cfg, results);
  }
  {
    auto out = open("summary.txt");
    write_summary_text(out, cfg, results);
  }
  return results;
}

}  // namespace concordia::harness
