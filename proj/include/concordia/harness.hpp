// Experiment plumbing: datasets on disk, the τ/ν mapping that turns rows
// into prepared examples, metrics, synthetic task generators, INI configs and
// the report writer behind `concordia run`.

#ifndef CONCORDIA_HARNESS_HPP
#define CONCORDIA_HARNESS_HPP

#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <boost/property_tree/ptree.hpp>

#include "concordia/fusion.hpp"
#include "concordia/grounding.hpp"
#include "concordia/logic.hpp"

namespace concordia::harness {

using boost::property_tree::ptree;

// ---------------------------------------------------------------- datasets

struct Datum {
  std::string id;
  // train, test or unlabeled.
  std::string split;
  // Rows sharing a group are grounded into one graph. Defaults to the id.
  std::string group;
  std::vector<std::string> anchor;
  std::optional<std::string> label;
  std::vector<double> features;
};

struct Dataset {
  std::vector<std::string> feature_names;
  std::vector<Datum> data;
  grounding::FactSet facts;
  std::map<std::string, grounding::FactSet> group_facts;

  std::size_t count(const std::string& split) const;
};

// data.tsv: header `id split group anchor label [features...]`; `-` as the
// group means the row is its own group, `?` as the label means none; the
// anchor is a comma-separated constant list.
Dataset read_dataset(std::istream& data, std::istream& facts, const std::string& data_name = "<data>",
                     const std::string& facts_name = "<facts>");
// With a config path, labels are checked against its [mapping] and the
// mapping against its rules.
Dataset load_dataset(const std::string& data_path, const std::string& facts_path,
                     const std::string& config_path = {});
void write_data(std::ostream& out, const Dataset& d);
void write_facts(std::ostream& out, const Dataset& d);

// ---------------------------------------------------------------- mapping

// An atom pattern over a row: `@k` is anchor constant k, `*` ranges over the
// classes, anything else is a constant.
struct AtomTemplate {
  std::string predicate;
  std::vector<std::string> args;

  static AtomTemplate parse(const std::string& text);
  std::string str() const;
  grounding::AtomKey instantiate(const std::vector<std::string>& anchor, const std::string& cls = {}) const;
  bool has_class_slot() const;
};

struct FeatureSpec {
  std::string name;
  double lo = 0.0;
  double hi = 1.0;
};

struct MeanAtom {
  std::string predicate;
  std::size_t position = 0;
};

struct MappingConfig {
  neural::Task task = neural::Task::classification;
  AtomTemplate target;
  std::vector<std::string> classes;
  // Regression label range.
  double lo = 0.0;
  double hi = 1.0;
  std::optional<AtomTemplate> neural_atom;
  // Empty: every data column, unscaled.
  std::vector<FeatureSpec> features;
  std::vector<std::size_t> onehot;
  // Frozen one-hot vocabularies, filled on first use and kept in bundles.
  std::map<std::size_t, std::vector<std::string>> vocab;
  // Training labels become facts of the target predicate.
  bool observe_training_labels = false;
  // Leave-one-out label means over rows sharing one anchor position.
  std::vector<MeanAtom> mean_atoms;

  // Reads the [mapping] keys; unknown keys are errors.
  static MappingConfig from_ptree(const ptree& section);
  ptree to_ptree() const;

  std::size_t class_index(const std::string& label) const;
  // Unit-scaled label for regression.
  double label_value(const std::string& label) const;
};

// Every predicate the mapping mentions must exist in the theory, and feature
// columns must exist in the data.
void validate_mapping(const MappingConfig& m, const logic::Theory& theory, const Dataset& d);

struct CompileOptions {
  fusion::Mode mode = fusion::Mode::supervised;
  double fraction = 1.0;
  std::uint64_t seed = 0;
  bool priors = false;
  // No logic at all: examples get a dummy graph and no grounding happens.
  bool use_logic = true;
};

struct Compiled {
  std::vector<fusion::Example> labeled;
  std::vector<fusion::Example> unlabeled;
  std::vector<fusion::Example> test;
  // Row index into the dataset, parallel to each list.
  std::vector<std::size_t> labeled_rows;
  std::vector<std::size_t> unlabeled_rows;
  std::vector<std::size_t> test_rows;
  std::size_t feature_width = 0;
  std::size_t ground_rules = 0;
  std::size_t ground_atoms = 0;
};

// Stratified, seeded choice of the training rows kept at `fraction`; returns
// row indices in dataset order.
std::vector<std::size_t> subsample(const Dataset& d, const MappingConfig& m, double fraction, std::uint64_t seed);

// Fills mapping.vocab when empty.
Compiled compile(const Dataset& d, MappingConfig& mapping, const logic::Theory& theory, const CompileOptions& opt);

std::vector<double> feature_vector(const Datum& row, const Dataset& d, const MappingConfig& m);

// ---------------------------------------------------------------- metrics

struct ComponentMetrics {
  std::size_t n = 0;
  double accuracy = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  double rmse = 0.0;
};

struct Metrics {
  neural::Task task = neural::Task::classification;
  ComponentMetrics mixture;
  ComponentMetrics neural;
  // Absent when the logic side is switched off.
  std::optional<ComponentMetrics> logic;
};

// Macro precision and recall over the classes that occur in truth or
// prediction; F1 is their harmonic mean.
ComponentMetrics score_classification(const std::vector<std::size_t>& truth, const std::vector<std::size_t>& pred);
ComponentMetrics score_regression(const std::vector<double>& truth, const std::vector<double>& pred);

struct PredictionRow {
  std::string id;
  std::string truth;
  std::string mixture;
  std::string neural;
  std::string logic;
  double kappa = 1.0;
};

struct Evaluation {
  Metrics metrics;
  std::vector<PredictionRow> rows;
};

// Scores the labeled examples in `test` (rows index into d).
Evaluation evaluate(const fusion::ConcordiaModel& model, const std::vector<fusion::Example>& test,
                    const std::vector<std::size_t>& rows, const Dataset& d, const MappingConfig& mapping);

void write_predictions(std::ostream& out, const Evaluation& e);

// ---------------------------------------------------------------- synthetic tasks

struct SyntheticTask {
  Dataset data;
  logic::Theory theory;
  MappingConfig mapping;
};

struct RecommendParams {
  std::uint64_t seed = 0;
  std::size_t users = 30;
  std::size_t items = 30;
  double density = 0.3;
  double test_fraction = 0.2;
  std::size_t clusters = 3;
  double similarity_threshold = 0.9;
  // Per-row content features are the latent factors plus this much noise.
  double feature_noise = 0.5;
  // Extra columns of pure noise.
  std::size_t noise_features = 0;
};

SyntheticTask synth_recommend(const RecommendParams& p);

struct ChainParams {
  std::uint64_t seed = 0;
  std::size_t frames = 30;
  std::size_t boxes_per_frame = 3;
  double noise = 0.1;
  std::size_t distractors = 0;
  std::size_t classes = 4;
  std::size_t frames_per_scene = 3;
  std::size_t feature_dim = 6;
  double feature_noise = 1.0;
};

// Latent-chain activity task: box actions follow the frame activity, with
// proximity, frame sequence and a latent same-actor relation.
SyntheticTask synth_latent_chain(const ChainParams& p);

// data.tsv, facts.tsv, rules.psl and mapping.ini.
void write_task(const std::string& dir, const SyntheticTask& task);

// ---------------------------------------------------------------- experiments

struct ExperimentConfig {
  std::string name = "experiment";
  std::uint64_t seed = 0;
  // Either files or a [synthetic] section.
  std::string data_path;
  std::string facts_path;
  std::string rules_path;
  std::optional<std::string> generator;
  RecommendParams recommend;
  ChainParams chain;
  std::vector<double> fractions = {1.0};
  std::size_t epochs = 10;
  fusion::Mode mode = fusion::Mode::supervised;
  std::size_t eval_every = 1;
  std::vector<std::size_t> hidden = {16};
  std::size_t gate_hidden = 8;
  fusion::Hyper hyper;
  std::optional<ptree> mapping;
};

// Strict INI reader: unknown sections or keys are errors. Relative paths are
// taken relative to the config file.
ExperimentConfig load_config(const std::string& path);
ExperimentConfig parse_config(std::istream& in, const std::string& base_dir = ".");

struct Loaded {
  Dataset data;
  logic::Theory theory;
  MappingConfig mapping;
};

// Reads the files or runs the generator named by the config.
Loaded load_inputs(const ExperimentConfig& cfg);

struct FractionResult {
  double fraction = 1.0;
  fusion::TrainResult trained;
  Evaluation evaluation;
  MappingConfig mapping;
  std::size_t labeled = 0;
  std::size_t unlabeled = 0;
};

FractionResult run_fraction(const ExperimentConfig& cfg, const Loaded& in, double fraction);

// Trains and evaluates every fraction, writing metrics.csv, summary.json,
// history.csv, predictions-<pct>.tsv and model-<pct>/ into out_dir.
std::vector<FractionResult> run_experiment(const ExperimentConfig& cfg, const std::string& out_dir);

void write_metrics_csv(std::ostream& out, const std::vector<FractionResult>& results);
void write_history_csv(std::ostream& out, const std::vector<FractionResult>& results);
void write_summary_json(std::ostream& out, const ExperimentConfig& cfg, const std::vector<FractionResult>& results);

std::string percent_tag(double fraction);

}  // namespace concordia::harness

#endif  // CONCORDIA_HARNESS_HPP
