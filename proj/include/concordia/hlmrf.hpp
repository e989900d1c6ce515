// Hinge-loss MRF over a ground factor graph: Lukasiewicz rule truth,
// potentials, MAP inference under sum constraints, and weight learning.
//
// The joint density is taken as P(x) ∝ exp(-energy(x)) with
// energy(x) = Σ_i λ_i Σ_j (1 - truth_ij(x))^p.

#ifndef CONCORDIA_HLMRF_HPP
#define CONCORDIA_HLMRF_HPP

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "concordia/grounding.hpp"
#include "concordia/logic.hpp"

namespace concordia::hlmrf {

using grounding::AtomId;
using grounding::ConstraintGroup;
using grounding::GroundFactorGraph;
using grounding::GroundRule;

// Soft truth value per atom id.
using Interpretation = std::vector<double>;

// A value fixes the atom; nullopt leaves it free for inference.
using PartialAssignment = std::vector<std::optional<double>>;

// The observed atoms of the graph with their fact values.
PartialAssignment observed_assignment(const GroundFactorGraph& graph);

struct Weights {
  std::vector<double> lambda;
  // Per-rule metadata copied from the theory.
  std::vector<bool> hard;
  std::vector<bool> learnable;
  std::vector<std::size_t> group;

  static Weights from_theory(const logic::Theory& theory);
  std::size_t size() const noexcept { return lambda.size(); }
  bool is_hard(std::size_t i) const { return i < hard.size() && hard[i]; }
  bool is_learnable(std::size_t i) const { return i < learnable.size() && learnable[i]; }
};

struct SolverOptions {
  int p = 2;
  // 0 picks 1/L from a bound on the gradient's Lipschitz constant.
  double step = 0.0;
  std::size_t max_iterations = 5000;
  double tolerance = 1e-6;
  double initialization = 0.5;
  // Abort with std::logic_error if an iteration raises the objective.
  bool check_monotone = false;
  bool record_trace = false;
};

struct MapResult {
  Interpretation values;
  bool converged = false;
  std::size_t iterations = 0;
  // Max coordinate change of the last iteration.
  double residual = 0.0;
  double energy = 0.0;
  std::vector<double> trace;
};

double distance_to_satisfaction(const GroundRule& rule, std::span<const double> values);
double rule_truth(const GroundRule& rule, std::span<const double> values);
double potential(const GroundRule& rule, std::span<const double> values, int p);
double energy(const GroundFactorGraph& graph, const Weights& weights, std::span<const double> values, int p);

// Per-rule sums of potentials, Σ_j f_ij.
std::vector<double> rule_potentials(const GroundFactorGraph& graph, std::size_t n_rules,
                                    std::span<const double> values, int p);

MapResult map_infer(const GroundFactorGraph& graph, const Weights& weights, const PartialAssignment& observed,
                    const SolverOptions& options = {});

struct TargetSpec {
  std::vector<AtomId> targets;
  bool regression = false;
};

struct Distribution {
  std::vector<double> probs;
  // Set when every target came out 0 and a uniform vector was substituted.
  bool degenerate = false;
};

// Reads the target atoms from an interpretation and renormalizes
// (classification) or returns the single soft value (regression).
Distribution distribution_from(std::span<const double> values, const TargetSpec& spec);

Distribution target_distribution(const GroundFactorGraph& graph, const Weights& weights,
                                 const PartialAssignment& observed, const TargetSpec& spec,
                                 const SolverOptions& options = {});

// g_i = Σ_j f_ij(map) - Σ_j f_ij(truth), summed over tied groups, zero for
// fixed and hard rules.
std::vector<double> weight_gradient(const GroundFactorGraph& graph, const Weights& weights,
                                    std::span<const double> map_values, std::span<const double> truth_values, int p);

// λ_i <- max(0, λ_i + lr * g_i) for learnable rules.
Weights apply_weight_gradient(const Weights& weights, std::span<const double> gradient, double lr);

// One gradient step. `truth` assigns every atom; `partial` is what inference
// may condition on.
Weights learn_weights_step(const GroundFactorGraph& graph, std::span<const double> truth,
                           const PartialAssignment& partial, const Weights& weights, double lr,
                           const SolverOptions& options = {});

// Euclidean projection of `values` onto {0 <= v <= 1, Σ v = target}. Targets
// outside [0, n] are clamped to the nearest feasible sum.
void project_capped_simplex(std::span<double> values, double target);

// Projects every group of `values` onto its capped simplex; idempotent.
Interpretation project_constraints(Interpretation values, std::span<const ConstraintGroup> groups);

}  // namespace concordia::hlmrf

#endif  // CONCORDIA_HLMRF_HPP
