#include "concordia/boolean.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <limits>
#include <optional>
#include <string>

namespace concordia::boolean {

namespace {

struct CompiledRule {
  std::size_t rule_index = 0;
  std::uint64_t premise_mask = 0;
  std::uint64_t head_mask = 0;
  // Observed parts: premise holds unless an observed premise atom is false;
  // head fixed true satisfies the rule outright.
  bool never_violated = false;
};

std::uint8_t binarize(double v) { return v >= 0.5 ? 1 : 0; }

}  // namespace

BooleanAssignment JointTable::assignment(std::size_t mask) const {
  BooleanAssignment a = base;
  for (std::size_t k = 0; k < free_atoms.size(); ++k) a.bits[free_atoms[k]] = (mask >> k) & 1U;
  return a;
}

JointTable enumerate_joint(const GroundFactorGraph& graph, const Weights& weights, const PartialAssignment& observed) {
  if (observed.size() != graph.atoms.size()) {
    throw std::invalid_argument("partial assignment does not match the atom table");
  }
  JointTable t;
  t.base.bits.assign(graph.atoms.size(), 0);
  std::vector<std::size_t> bit_of(graph.atoms.size(), std::numeric_limits<std::size_t>::max());
  for (AtomId a = 0; a < graph.atoms.size(); ++a) {
    if (observed[a]) {
      t.base.bits[a] = binarize(*observed[a]);
    } else {
      bit_of[a] = t.free_atoms.size();
      t.free_atoms.push_back(a);
    }
  }
  if (t.free_atoms.size() > max_free_atoms) {
    throw EnumerationError("Boolean enumeration supports at most " + std::to_string(max_free_atoms) +
                           " free atoms, got " + std::to_string(t.free_atoms.size()));
  }

  auto compile = [&](const grounding::GroundRule& r) {
    CompiledRule c;
    c.rule_index = r.rule_index;
    for (AtomId a : r.premise) {
      if (bit_of[a] == std::numeric_limits<std::size_t>::max()) {
        if (!t.base.bits[a]) c.never_violated = true;
      } else {
        c.premise_mask |= std::uint64_t{1} << bit_of[a];
      }
    }
    if (bit_of[r.conclusion] == std::numeric_limits<std::size_t>::max()) {
      if (t.base.bits[r.conclusion]) c.never_violated = true;
    } else {
      c.head_mask = std::uint64_t{1} << bit_of[r.conclusion];
    }
    // A free atom in both premise and head makes the implication valid.
    if (c.premise_mask & c.head_mask) c.never_violated = true;
    return c;
  };
  std::vector<CompiledRule> soft;
  std::vector<CompiledRule> hard;
  for (const auto& r : graph.ground_rules) {
    CompiledRule c = compile(r);
    if (c.never_violated) continue;
    if (weights.is_hard(r.rule_index)) {
      hard.push_back(c);
    } else if (weights.lambda[r.rule_index] != 0.0) {
      soft.push_back(c);
    }
  }

  struct Filter {
    std::uint64_t mask = 0;
    int needed = 0;
  };
  std::vector<Filter> filters;
  bool impossible = false;
  for (const auto& g : graph.constraint_groups) {
    const double rounded = std::round(g.target);
    if (std::abs(rounded - g.target) > 1e-9) {
      throw EnumerationError("Boolean semantics needs integer constraint targets, got " +
                             logic::format_number(g.target));
    }
    Filter f;
    int needed = static_cast<int>(rounded);
    for (AtomId a : g.atoms) {
      if (bit_of[a] == std::numeric_limits<std::size_t>::max()) {
        needed -= t.base.bits[a];
      } else {
        f.mask |= std::uint64_t{1} << bit_of[a];
      }
    }
    f.needed = needed;
    if (needed < 0 || needed > std::popcount(f.mask)) impossible = true;
    filters.push_back(f);
  }

  const std::size_t n = std::size_t{1} << t.free_atoms.size();
  t.probability.assign(n, 0.0);
  t.energy.assign(n, 0.0);
  t.feasible.assign(n, false);
  double min_energy = std::numeric_limits<double>::infinity();
  for (std::size_t m = 0; m < n && !impossible; ++m) {
    const std::uint64_t mask = m;
    bool ok = true;
    for (const auto& f : filters) {
      if (std::popcount(mask & f.mask) != f.needed) {
        ok = false;
        break;
      }
    }
    for (std::size_t i = 0; ok && i < hard.size(); ++i) {
      const auto& c = hard[i];
      if ((mask & c.premise_mask) == c.premise_mask && (c.head_mask == 0 || !(mask & c.head_mask))) ok = false;
    }
    if (!ok) continue;
    double e = 0.0;
    for (const auto& c : soft) {
      if ((mask & c.premise_mask) == c.premise_mask && (c.head_mask == 0 || !(mask & c.head_mask))) {
        e += weights.lambda[c.rule_index];
      }
    }
    t.feasible[m] = true;
    t.energy[m] = e;
    min_energy = std::min(min_energy, e);
  }
  if (!std::isfinite(min_energy)) throw EnumerationError("no assignment satisfies the constraints");

  // log Z relative to the minimum energy, with compensated summation.
  double sum = 0.0;
  double comp = 0.0;
  auto add = [&](double x) {
    const double s = sum + x;
    if (std::abs(sum) >= std::abs(x)) {
      comp += (sum - s) + x;
    } else {
      comp += (x - s) + sum;
    }
    sum = s;
  };
  for (std::size_t m = 0; m < n; ++m) {
    if (t.feasible[m]) add(std::exp(min_energy - t.energy[m]));
  }
  const double z = sum + comp;
  for (std::size_t m = 0; m < n; ++m) {
    if (t.feasible[m]) t.probability[m] = std::exp(min_energy - t.energy[m]) / z;
  }
  return t;
}

JointTable enumerate_joint(const GroundFactorGraph& graph, const Weights& weights) {
  return enumerate_joint(graph, weights, hlmrf::observed_assignment(graph));
}

std::vector<double> marginals(const JointTable& table) {
  std::vector<double> out(table.base.bits.begin(), table.base.bits.end());
  for (std::size_t k = 0; k < table.free_atoms.size(); ++k) {
    double sum = 0.0;
    for (std::size_t m = 0; m < table.size(); ++m) {
      if ((m >> k) & 1U) sum += table.probability[m];
    }
    out[table.free_atoms[k]] = std::min(1.0, sum);
  }
  return out;
}

std::vector<double> marginals(const GroundFactorGraph& graph, const Weights& weights, const PartialAssignment& observed) {
  return marginals(enumerate_joint(graph, weights, observed));
}

BooleanAssignment mpe(const JointTable& table) {
  std::optional<BooleanAssignment> best;
  double best_energy = std::numeric_limits<double>::infinity();
  for (std::size_t m = 0; m < table.size(); ++m) {
    if (!table.feasible[m] || table.energy[m] > best_energy) continue;
    BooleanAssignment a = table.assignment(m);
    if (table.energy[m] < best_energy || a < *best) {
      best = std::move(a);
      best_energy = table.energy[m];
    }
  }
  return *best;
}

BooleanAssignment mpe(const GroundFactorGraph& graph, const Weights& weights, const PartialAssignment& observed) {
  return mpe(enumerate_joint(graph, weights, observed));
}

std::vector<double> violations(const GroundFactorGraph& graph, std::size_t n_rules, const BooleanAssignment& a) {
  std::vector<double> out(n_rules, 0.0);
  for (const auto& r : graph.ground_rules) {
    bool body = true;
    for (AtomId p : r.premise) body = body && a.bits[p];
    if (body && !a.bits[r.conclusion]) out[r.rule_index] += 1.0;
  }
  return out;
}

std::vector<double> expected_violations(const GroundFactorGraph& graph, const Weights& weights,
                                        const JointTable& table) {
  std::vector<double> out(weights.size(), 0.0);
  for (std::size_t m = 0; m < table.size(); ++m) {
    if (table.probability[m] == 0.0) continue;
    const auto v = violations(graph, weights.size(), table.assignment(m));
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += table.probability[m] * v[i];
  }
  return out;
}

}  // namespace concordia::boolean
