#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>

#include "concordia/harness.hpp"
#include "doctest.h"

using namespace concordia;
using namespace concordia::harness;
namespace fs = std::filesystem;

namespace {

const char* const small_data =
    "id\tsplit\tgroup\tanchor\tlabel\tf0\tf1\n"
    "r1\ttrain\t-\tb1\tyes\t0.1\t0.2\n"
    "r2\ttrain\tg\tb2\tno\t0.3\t0.4\n"
    "r3\ttest\tg\tb3\tyes\t0.5\t0.6\n"
    "r4\tunlabeled\t-\tb4\t?\t0.7\t0.8\n";

std::string error_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const std::exception& e) {
    return e.what();
  }
  return {};
}

Dataset read(const std::string& data, const std::string& facts) {
  std::istringstream d(data), f(facts);
  return read_dataset(d, f, "data.tsv", "facts.tsv");
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

// Straight count over the TSV text, independent of the dataset reader.
std::map<std::string, std::size_t> split_counts(const std::string& tsv) {
  std::map<std::string, std::size_t> n;
  std::istringstream in(tsv);
  std::string line;
  std::getline(in, line);
  while (std::getline(in, line)) {
    const auto a = line.find('\t');
    const auto b = line.find('\t', a + 1);
    ++n[line.substr(a + 1, b - a - 1)];
  }
  return n;
}

}  // namespace

TEST_CASE("read_dataset counts rows per split") {
  const Dataset d = read(small_data, "Close\tb1\tb2\t0.5\n@g\tNear\tb2\tb3\n");
  const auto oracle = split_counts(small_data);
  CHECK(d.count("train") == oracle.at("train"));
  CHECK(d.count("test") == oracle.at("test"));
  CHECK(d.count("unlabeled") == oracle.at("unlabeled"));
  CHECK(d.data[0].group == "r1");
  CHECK(d.data[1].group == "g");
  CHECK_FALSE(d.data[3].label);
  CHECK(d.feature_names == std::vector<std::string>{"f0", "f1"});
  CHECK(d.facts.size() == 1);
  CHECK(d.group_facts.at("g").size() == 1);
}

TEST_CASE("read_dataset errors name the line") {
  CHECK(error_of([] { read(small_data, "Close\tb1\tb2\t0.5\nClose\tb2\tb1\t1.5\n"); }).find("facts.tsv:2") !=
        std::string::npos);
  std::string dup = small_data;
  dup += "r2\ttrain\t-\tb5\tno\t0\t0\n";
  const auto e = error_of([&] { read(dup, ""); });
  CHECK(e.find("data.tsv:6") != std::string::npos);
  CHECK(e.find("r2") != std::string::npos);
  CHECK(error_of([] { read("id\tsplit\tgroup\tanchor\tlabel\nr1\ttrain\t-\tb1\t?\n", ""); }).find("data.tsv:2") !=
        std::string::npos);
  CHECK(error_of([] { read("id\tsplit\tgroup\tanchor\tlabel\nr1\tdev\t-\tb1\tx\n", ""); }).find("data.tsv:2") !=
        std::string::npos);
  CHECK(error_of([] { read("id\tsplit\tgroup\tanchor\tlabel\tf\nr1\ttrain\t-\tb1\tx\tabc\n", ""); })
            .find("data.tsv:2") != std::string::npos);
}

TEST_CASE("dataset files round trip") {
  const Dataset d = read(small_data, "Close\tb1\tb2\t0.5\n@g\tNear\tb2\tb3\t1\n");
  std::ostringstream data, facts;
  write_data(data, d);
  write_facts(facts, d);
  const Dataset back = read(data.str(), facts.str());
  std::ostringstream data2, facts2;
  write_data(data2, back);
  write_facts(facts2, back);
  CHECK(data.str() == data2.str());
  CHECK(facts.str() == facts2.str());
}

TEST_CASE("atom templates") {
  const auto t = AtomTemplate::parse("Doing(@0, *)");
  CHECK(t.has_class_slot());
  CHECK(t.str() == "Doing(@0, *)");
  const auto k = t.instantiate({"b1"}, "walking");
  CHECK(k.predicate == "Doing");
  CHECK(k.constants == std::vector<std::string>{"b1", "walking"});
  CHECK(AtomTemplate::parse("Rating(@0, @1)").instantiate({"u", "i"}).constants ==
        std::vector<std::string>{"u", "i"});
  CHECK_THROWS(AtomTemplate::parse("Rating(@2, @1)").instantiate({"u", "i"}));
}

TEST_CASE("classification scores") {
  std::vector<std::size_t> truth = {0, 1, 0, 1, 2, 2};
  auto perfect = score_classification(truth, truth);
  CHECK(perfect.accuracy == 1.0);
  CHECK(perfect.precision == 1.0);
  CHECK(perfect.recall == 1.0);
  CHECK(perfect.f1 == 1.0);

  // Constant class on a balanced binary set: accuracy and recall one half,
  // precision (0.5 + 0) / 2.
  std::vector<std::size_t> balanced = {0, 1, 0, 1};
  auto constant = score_classification(balanced, {0, 0, 0, 0});
  CHECK(constant.accuracy == 0.5);
  CHECK(constant.recall == 0.5);
  CHECK(constant.precision == 0.25);
  CHECK(constant.f1 == doctest::Approx(2.0 * 0.25 * 0.5 / 0.75));

  auto r = score_regression({1.0, 2.0, 3.0}, {1.0, 2.0, 5.0});
  CHECK(r.rmse == doctest::Approx(std::sqrt(4.0 / 3.0)));
  CHECK(score_regression({2.0}, {2.0}).rmse == 0.0);
}

TEST_CASE("mapping section") {
  boost::property_tree::ptree p;
  p.put("task", "regression");
  p.put("target", "Rating(@0, @1)");
  p.put("range", "1:5");
  const auto m = MappingConfig::from_ptree(p);
  CHECK(m.task == neural::Task::regression);
  CHECK(m.label_value("3") == 0.5);
  CHECK_THROWS(m.label_value("6"));
  auto bad = p;
  bad.put("colour", "red");
  CHECK(error_of([&] { MappingConfig::from_ptree(bad); }).find("colour") != std::string::npos);
  const auto back = MappingConfig::from_ptree(m.to_ptree());
  CHECK(back.target.str() == m.target.str());
  CHECK(back.lo == 1.0);
  CHECK(back.hi == 5.0);
}

TEST_CASE("subsample is stratified and seeded") {
  auto task = synth_latent_chain({.seed = 5, .frames = 60});
  const auto a = subsample(task.data, task.mapping, 0.5, 9);
  const auto b = subsample(task.data, task.mapping, 0.5, 9);
  CHECK(a == b);
  CHECK(std::is_sorted(a.begin(), a.end()));
  std::map<std::string, std::size_t> all, kept;
  for (const auto& row : task.data.data) {
    if (row.split == "train") ++all[*row.label];
  }
  for (auto i : a) ++kept[*task.data.data[i].label];
  for (const auto& [label, n] : all) {
    CHECK(kept[label] >= 1);
    CHECK(std::abs(static_cast<double>(kept[label]) - 0.5 * static_cast<double>(n)) <= 1.0);
  }
  CHECK(subsample(task.data, task.mapping, 1.0, 9).size() == task.data.count("train"));
}

TEST_CASE("generators are deterministic") {
  auto text = [](const SyntheticTask& t) {
    std::ostringstream s;
    write_data(s, t.data);
    write_facts(s, t.data);
    s << logic::format_theory(t.theory);
    return s.str();
  };
  CHECK(text(synth_recommend({.seed = 3})) == text(synth_recommend({.seed = 3})));
  CHECK(text(synth_recommend({.seed = 3})) != text(synth_recommend({.seed = 4})));
  CHECK(text(synth_latent_chain({.seed = 3})) == text(synth_latent_chain({.seed = 3})));
}

TEST_CASE("similar users rate alike") {
  auto task = synth_recommend({.seed = 8, .users = 40, .items = 40, .density = 0.4});
  std::map<std::string, std::map<std::string, double>> r;
  for (const auto& row : task.data.data) r[row.anchor[0]][row.anchor[1]] = std::stod(*row.label);
  std::set<std::pair<std::string, std::string>> similar;
  for (const auto& f : task.data.facts.entries()) {
    if (f.atom.predicate == "SimilarUser") similar.insert({f.atom.constants[0], f.atom.constants[1]});
  }
  REQUIRE(!similar.empty());
  double sim_gap = 0.0, other_gap = 0.0;
  std::size_t sim_n = 0, other_n = 0;
  for (const auto& [u1, items1] : r) {
    for (const auto& [u2, items2] : r) {
      if (u1 >= u2) continue;
      const bool s = similar.count({u1, u2}) > 0;
      CHECK(s == (similar.count({u2, u1}) > 0));
      for (const auto& [i, v] : items1) {
        auto it = items2.find(i);
        if (it == items2.end()) continue;
        (s ? sim_gap : other_gap) += std::abs(v - it->second);
        ++(s ? sim_n : other_n);
      }
    }
  }
  REQUIRE(sim_n > 0);
  REQUIRE(other_n > 0);
  CHECK(sim_gap / static_cast<double>(sim_n) < other_gap / static_cast<double>(other_n));
}

TEST_CASE("latent chain structure") {
  auto single = synth_latent_chain({.seed = 2, .boxes_per_frame = 1});
  for (const auto& [g, facts] : single.data.group_facts) {
    for (const auto& f : facts.entries()) CHECK(f.atom.predicate != "Close");
  }
  const auto base = synth_latent_chain({.seed = 2}).theory.rules.size();
  CHECK(synth_latent_chain({.seed = 2, .distractors = 3}).theory.rules.size() == base + 3);
}

TEST_CASE("noise-free chain is solved by the logic alone") {
  ExperimentConfig cfg;
  cfg.generator = "latent_chain";
  cfg.chain.seed = 6;
  cfg.chain.noise = 0.0;
  cfg.epochs = 0;
  cfg.eval_every = 0;
  const auto in = load_inputs(cfg);
  const auto r = run_fraction(cfg, in, 1.0);
  REQUIRE(r.evaluation.metrics.logic);
  CHECK(r.evaluation.metrics.logic->accuracy == 1.0);
}

TEST_CASE("empty training set is an error") {
  ExperimentConfig cfg;
  cfg.generator = "recommend";
  cfg.recommend.density = 0.0;
  cfg.epochs = 1;
  const auto in = load_inputs(cfg);
  CHECK(in.data.data.empty());
  CHECK_THROWS(run_fraction(cfg, in, 1.0));
}

TEST_CASE("config parsing") {
  std::istringstream ok(
      "[experiment]\nname = x\nfractions = 0.5, 1.0\n[synthetic]\ngenerator = latent_chain\nframes = 12\n"
      "[training]\nepochs = 3\nmode = semi\n");
  const auto cfg = parse_config(ok);
  CHECK(cfg.fractions == std::vector<double>{0.5, 1.0});
  CHECK(cfg.chain.frames == 12);
  CHECK(cfg.mode == fusion::Mode::semi);
  std::istringstream unknown("[experiment]\nnmae = x\n[synthetic]\ngenerator = recommend\n");
  CHECK(error_of([&] { parse_config(unknown); }).find("nmae") != std::string::npos);
  std::istringstream section("[experimnt]\nname = x\n");
  CHECK(error_of([&] { parse_config(section); }).find("experimnt") != std::string::npos);
}

TEST_CASE("fraction sweep writes one row per fraction and component") {
  ExperimentConfig cfg;
  cfg.generator = "latent_chain";
  cfg.chain.seed = 1;
  cfg.chain.frames = 12;
  cfg.fractions = {0.5, 1.0};
  cfg.epochs = 2;
  const fs::path out = fs::temp_directory_path() / "concordia_sweep_test";
  fs::remove_all(out);
  const auto results = run_experiment(cfg, out.string());
  CHECK(results.size() == 2);
  std::istringstream csv(slurp(out / "metrics.csv"));
  std::string line;
  std::getline(csv, line);
  std::size_t rows = 0;
  while (std::getline(csv, line)) ++rows;
  CHECK(rows == 2 * 3);
  CHECK(fs::exists(out / "summary.json"));
  CHECK(fs::exists(out / "history.csv"));
  CHECK(fs::exists(out / ("predictions-" + percent_tag(0.5) + ".tsv")));
  CHECK(fs::exists(out / ("model-" + percent_tag(1.0)) / "weights.tsv"));
  fs::remove_all(out);
}

TEST_CASE("without logic the mixture is the neural prediction") {
  ExperimentConfig cfg;
  cfg.generator = "latent_chain";
  cfg.chain.seed = 2;
  cfg.chain.frames = 12;
  cfg.epochs = 3;
  cfg.hyper.use_logic = false;
  const auto in = load_inputs(cfg);
  const auto r = run_fraction(cfg, in, 1.0);
  CHECK_FALSE(r.evaluation.metrics.logic);
  for (const auto& row : r.evaluation.rows) {
    CHECK(row.mixture == row.neural);
    CHECK(row.kappa == 1.0);
    CHECK(row.logic == "-");
  }
}
