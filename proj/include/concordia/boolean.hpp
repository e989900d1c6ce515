// Exact Boolean semantics by enumeration over the free atoms of a small
// ground factor graph. Rules contribute 0/1 violation indicators; sum
// constraints become "exactly k true" filters and hard rules filter too.

#ifndef CONCORDIA_BOOLEAN_HPP
#define CONCORDIA_BOOLEAN_HPP

#include <cstdint>
#include <stdexcept>
#include <vector>

#include "concordia/grounding.hpp"
#include "concordia/hlmrf.hpp"

namespace concordia::boolean {

using grounding::AtomId;
using grounding::GroundFactorGraph;
using hlmrf::PartialAssignment;
using hlmrf::Weights;

inline constexpr std::size_t max_free_atoms = 20;

class EnumerationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct BooleanAssignment {
  std::vector<std::uint8_t> bits;

  friend bool operator==(const BooleanAssignment&, const BooleanAssignment&) = default;
  friend auto operator<=>(const BooleanAssignment&, const BooleanAssignment&) = default;
};

struct JointTable {
  // Free atoms in id order; bit k of a mask is free_atoms[k].
  std::vector<AtomId> free_atoms;
  // Observed atoms fixed, free atoms 0.
  BooleanAssignment base;
  // probability[mask]; 0 for assignments excluded by constraints.
  std::vector<double> probability;
  std::vector<double> energy;
  std::vector<bool> feasible;

  BooleanAssignment assignment(std::size_t mask) const;
  std::size_t size() const noexcept { return probability.size(); }
};

// Observed soft values are binarized at 0.5.
JointTable enumerate_joint(const GroundFactorGraph& graph, const Weights& weights, const PartialAssignment& observed);
JointTable enumerate_joint(const GroundFactorGraph& graph, const Weights& weights);

// Probability of truth per atom id (observed atoms report their fixed bit).
std::vector<double> marginals(const GroundFactorGraph& graph, const Weights& weights, const PartialAssignment& observed);
std::vector<double> marginals(const JointTable& table);

BooleanAssignment mpe(const GroundFactorGraph& graph, const Weights& weights, const PartialAssignment& observed);
BooleanAssignment mpe(const JointTable& table);

// Expected number of violated groundings per rule under the table.
std::vector<double> expected_violations(const GroundFactorGraph& graph, const Weights& weights,
                                        const JointTable& table);

// Violated groundings per rule under one assignment.
std::vector<double> violations(const GroundFactorGraph& graph, std::size_t n_rules, const BooleanAssignment& a);

}  // namespace concordia::boolean

#endif  // CONCORDIA_BOOLEAN_HPP
