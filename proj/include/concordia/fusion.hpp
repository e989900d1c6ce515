// The integration layer: a gating network mixes the neural distribution
// with the one read off the logic MAP state, and one update step trains the
// predictor (with the logic as teacher), the rule weights and the gate.
//
// Everything here works on prepared examples. Building them from raw data
// (grounding per group, label facts, feature vectors) is the harness's job.

#ifndef CONCORDIA_FUSION_HPP
#define CONCORDIA_FUSION_HPP

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include <boost/property_tree/ptree.hpp>

#include "concordia/grounding.hpp"
#include "concordia/hlmrf.hpp"
#include "concordia/logic.hpp"
#include "concordia/neural.hpp"

namespace concordia::fusion {

using grounding::AtomId;
using hlmrf::PartialAssignment;

enum class Mode { supervised, semi, unsupervised };

Mode parse_mode(const std::string& text);
std::string to_string(Mode mode);

// Neural atoms of one datum, per head. translate() fills them from the
// predictor's output on `features`.
struct PriorSlot {
  std::vector<double> features;
  std::vector<std::vector<AtomId>> atoms;
};

struct Example {
  std::string id;
  // ν(x)
  std::vector<double> features;
  std::shared_ptr<const grounding::GroundFactorGraph> graph;
  // τ(x): what MAP inference may condition on.
  PartialAssignment observed;
  // τ(xy): observed plus the targets of every labeled datum in the group.
  PartialAssignment clamped;
  // One target spec per head.
  std::vector<hlmrf::TargetSpec> heads;
  // Neural atoms to fill when priors are on; usually the datum itself plus
  // the other members of its group.
  std::vector<PriorSlot> priors;
  // Concatenated per head: one-hot (classification) or the unit-scaled value
  // (regression). Empty when unlabeled.
  std::vector<double> label;

  bool labeled() const noexcept { return !label.empty(); }
};

struct Hyper {
  double lr_neural = 0.01;
  double lr_logic = 0.01;
  double lr_gate = 0.01;
  bool priors = false;
  // Off: κ is pinned to 1, no teacher, no weight or gate training.
  bool use_logic = true;
  bool learn_weights = true;
  hlmrf::SolverOptions solver;
};

struct ConcordiaModel {
  neural::Mlp predictor;
  logic::Theory theory;
  hlmrf::Weights weights;
  neural::Mlp gating;
  neural::Task task = neural::Task::classification;
  // Regression labels live on [lo, hi] and are mapped to [0, 1].
  double lo = 0.0;
  double hi = 1.0;
  Hyper hyper;

  std::size_t head_count() const { return predictor.heads().size(); }
};

struct ModelShape {
  std::size_t feature_width = 0;
  std::vector<std::size_t> hidden = {16};
  // Class counts per head; ignored for regression.
  std::vector<std::size_t> heads;
  std::size_t gate_hidden = 8;
  std::uint64_t seed = 0;
};

// Throws std::invalid_argument if priors are on and the theory does not
// declare `neural_predicate`.
ConcordiaModel make_model(const logic::Theory& theory, neural::Task task, const ModelShape& shape,
                          const Hyper& hyper, const std::string& neural_predicate = {});

// κ·pn + (1-κ)·pl entrywise.
std::vector<double> mixture(double kappa, std::span<const double> pn, std::span<const double> pl);

// Sigmoid output of the gate, kept strictly inside (0, 1).
double gate(const neural::Mlp& gating, std::span<const double> features);

// d κ / d φ, flattened in Mlp::parameters() order.
std::vector<double> gate_gradient(const neural::Mlp& gating, std::span<const double> features);

struct Observation {
  AtomId atom = 0;
  double value = 0.0;
};

// Neural atom values for one slot. Throws std::invalid_argument when a head
// has no neural atoms to write to.
std::vector<Observation> translate(const ConcordiaModel& m, const PriorSlot& slot);

double scale_regression(double value, double lo, double hi);
double unscale_regression(double unit, double lo, double hi);

struct LogicView {
  hlmrf::MapResult map;
  // Per head.
  std::vector<std::vector<double>> distributions;
};

// τ(x), plus translate() output when priors are on, then MAP at the model's
// weights.
LogicView logic_view(const ConcordiaModel& m, const Example& x);

struct HeadPrediction {
  std::size_t label = 0;
  std::vector<double> distribution;
  std::vector<double> neural;
  std::vector<double> logic;
  // Regression only: mixture value back on [lo, hi].
  double value = 0.0;
};

struct Prediction {
  std::vector<HeadPrediction> heads;
  double kappa = 1.0;
  bool converged = true;
};

Prediction infer_multitask(const ConcordiaModel& m, const Example& x);

// Single-head convenience; throws if the model has more heads.
HeadPrediction infer_concordia(const ConcordiaModel& m, const Example& x, double* kappa = nullptr,
                               bool* converged = nullptr);

struct StepStats {
  double neural_loss = 0.0;
  double gate_loss = 0.0;
  // Energy of τ(xy) completed by MAP, at the pre-step weights.
  double truth_energy = 0.0;
  bool labeled_step = false;
};

// One Concordia step on x. `mode` is supervised or unsupervised; semi is a
// training schedule, not a step kind.
ConcordiaModel update_concordia(const ConcordiaModel& m, const Example& x, Mode mode, StepStats* stats = nullptr);

struct EpochRecord {
  std::size_t epoch = 0;
  std::size_t updates = 0;
  double neural_loss = 0.0;
  // NaN when the epoch had no labeled update.
  double truth_energy = 0.0;
  double gate_loss = 0.0;
  std::map<std::string, double> metrics;
};

struct TrainHistory {
  std::vector<EpochRecord> epochs;
};

using EpochHook = std::function<std::map<std::string, double>(const ConcordiaModel&, std::size_t epoch)>;

struct TrainResult {
  ConcordiaModel model;
  TrainHistory history;
};

// Supervised: labeled passes only. Semi: a labeled pass then an unlabeled
// pass per epoch. Unsupervised: every example, labels ignored. Order is
// reshuffled each epoch from `seed`.
TrainResult train(const ConcordiaModel& m, std::span<const Example> labeled, std::span<const Example> unlabeled,
                  std::size_t epochs, Mode mode, std::uint64_t seed, const EpochHook& hook = {});

// Bundle directory: theory.psl, weights.tsv, predictor.ckpt, gating.ckpt
// and manifest.ini. `extra` is stored in the manifest under [mapping].
void save_model(const std::string& dir, const ConcordiaModel& m, const boost::property_tree::ptree& extra = {});
ConcordiaModel load_model(const std::string& dir, boost::property_tree::ptree* extra = nullptr);

}  // namespace concordia::fusion

#endif  // CONCORDIA_FUSION_HPP
