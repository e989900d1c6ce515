#include "concordia/hlmrf.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <stdexcept>

namespace concordia::hlmrf {

PartialAssignment observed_assignment(const GroundFactorGraph& graph) {
  PartialAssignment out(graph.atoms.size());
  for (const auto& a : graph.atoms) {
    if (a.observed) out[a.id] = a.value;
  }
  return out;
}

Weights Weights::from_theory(const logic::Theory& theory) {
  Weights w;
  for (const auto& r : theory.rules) {
    w.lambda.push_back(r.hard ? 0.0 : r.weight);
    w.hard.push_back(r.hard);
    w.learnable.push_back(r.learnable && !r.hard);
    w.group.push_back(r.weight_group);
  }
  return w;
}

double distance_to_satisfaction(const GroundRule& rule, std::span<const double> values) {
  double d = 1.0 - static_cast<double>(rule.premise.size()) - values[rule.conclusion];
  for (AtomId a : rule.premise) d += values[a];
  return std::max(0.0, d);
}

double rule_truth(const GroundRule& rule, std::span<const double> values) {
  double sum = 0.0;
  for (AtomId a : rule.premise) sum += values[a];
  const double body = std::max(0.0, sum - (static_cast<double>(rule.premise.size()) - 1.0));
  return std::min(1.0, 1.0 - body + values[rule.conclusion]);
}

double potential(const GroundRule& rule, std::span<const double> values, int p) {
  const double d = 1.0 - rule_truth(rule, values);
  return p == 1 ? d : d * d;
}

double energy(const GroundFactorGraph& graph, const Weights& weights, std::span<const double> values, int p) {
  double e = 0.0;
  for (const auto& r : graph.ground_rules) {
    if (weights.is_hard(r.rule_index)) continue;
    e += weights.lambda[r.rule_index] * potential(r, values, p);
  }
  return e;
}

std::vector<double> rule_potentials(const GroundFactorGraph& graph, std::size_t n_rules,
                                    std::span<const double> values, int p) {
  std::vector<double> out(n_rules, 0.0);
  for (const auto& r : graph.ground_rules) out[r.rule_index] += potential(r, values, p);
  return out;
}

void project_capped_simplex(std::span<double> v, double target) {
  const std::size_t n = v.size();
  if (n == 0) return;
  target = std::clamp(target, 0.0, static_cast<double>(n));
  double current = 0.0;
  bool inside = true;
  for (double x : v) {
    current += x;
    inside = inside && x >= 0.0 && x <= 1.0;
  }
  if (inside && std::abs(current - target) <= 1e-12 * static_cast<double>(n)) return;
  auto mass = [&](double tau) {
    double s = 0.0;
    for (double x : v) s += std::clamp(x - tau, 0.0, 1.0);
    return s;
  };
  // mass() is nonincreasing in tau; bracket the root.
  double lo = *std::min_element(v.begin(), v.end()) - 1.0;
  double hi = *std::max_element(v.begin(), v.end());
  for (int it = 0; it < 200 && hi - lo > 1e-15 * (1.0 + std::abs(lo) + std::abs(hi)); ++it) {
    const double mid = 0.5 * (lo + hi);
    if (mass(mid) > target) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  double tau = 0.5 * (lo + hi);
  // Recompute tau exactly from the active set found by bisection.
  double free_sum = 0.0;
  std::size_t n_free = 0;
  std::size_t n_top = 0;
  for (double x : v) {
    const double y = x - tau;
    if (y >= 1.0) {
      ++n_top;
    } else if (y > 0.0) {
      free_sum += x;
      ++n_free;
    }
  }
  if (n_free > 0) tau = (free_sum + static_cast<double>(n_top) - target) / static_cast<double>(n_free);
  for (double& x : v) x = std::clamp(x - tau, 0.0, 1.0);
}

Interpretation project_constraints(Interpretation values, std::span<const ConstraintGroup> groups) {
  std::vector<double> buf;
  for (const auto& g : groups) {
    buf.clear();
    for (AtomId a : g.atoms) buf.push_back(values[a]);
    project_capped_simplex(buf, g.target);
    for (std::size_t i = 0; i < g.atoms.size(); ++i) values[g.atoms[i]] = buf[i];
  }
  for (double& x : values) x = std::clamp(x, 0.0, 1.0);
  return values;
}

namespace {

// Linear form c + Σ a_k x_k over free coordinates.
struct Linear {
  double constant = 0.0;
  std::vector<std::pair<std::size_t, double>> terms;
  double lambda = 0.0;
};

struct Group {
  std::vector<std::size_t> vars;
  double target = 0.0;
};

class Solver {
 public:
  Solver(const GroundFactorGraph& graph, const Weights& weights, const PartialAssignment& observed,
         const SolverOptions& options)
      : graph_(graph), weights_(weights), options_(options) {
    if (options.p != 1 && options.p != 2) throw std::invalid_argument("penalty p must be 1 or 2");
    if (!(options.tolerance > 0.0)) throw std::invalid_argument("solver tolerance must be positive");
    if (observed.size() != graph.atoms.size()) {
      throw std::invalid_argument("partial assignment does not match the atom table");
    }
    values_.assign(graph.atoms.size(), options.initialization);
    free_index_.assign(graph.atoms.size(), npos);
    for (std::size_t a = 0; a < observed.size(); ++a) {
      if (observed[a]) {
        values_[a] = *observed[a];
      } else {
        free_index_[a] = free_atoms_.size();
        free_atoms_.push_back(a);
      }
    }
    build_rules();
    build_groups();
  }

  MapResult run() {
    MapResult result;
    std::vector<double> x(free_atoms_.size(), options_.initialization);
    project(x);

    std::vector<double> mus;
    if (options_.p == 2) {
      mus = {0.0};
    } else {
      mus = {1e-1, 1e-2, 1e-3, 1e-4};
    }
    bool any_soft = !soft_.empty();
    bool converged = true;
    std::size_t iter = 0;
    double residual = 0.0;
    std::vector<double> grad(x.size());
    std::vector<double> next(x.size());
    if (any_soft && !x.empty()) {
      for (double mu : mus) {
        const double lip = lipschitz(mu);
        if (lip <= 0.0) break;
        const double step = options_.step > 0.0 ? options_.step : 1.0 / lip;
        converged = false;
        double f_prev = options_.check_monotone ? objective(x, mu) : 0.0;
        while (iter < options_.max_iterations) {
          gradient(x, mu, grad);
          for (std::size_t k = 0; k < x.size(); ++k) next[k] = x[k] - step * grad[k];
          project(next);
          residual = 0.0;
          for (std::size_t k = 0; k < x.size(); ++k) residual = std::max(residual, std::abs(next[k] - x[k]));
          x.swap(next);
          ++iter;
          if (options_.check_monotone) {
            const double f = objective(x, mu);
            if (f > f_prev + 1e-9 * (1.0 + std::abs(f_prev))) {
              throw std::logic_error("MAP objective increased at iteration " + std::to_string(iter));
            }
            f_prev = f;
          }
          if (options_.record_trace) result.trace.push_back(objective(x, -1.0));
          if (residual < options_.tolerance) {
            converged = true;
            break;
          }
        }
        if (!converged) break;
      }
    }
    for (std::size_t k = 0; k < x.size(); ++k) values_[free_atoms_[k]] = x[k];
    result.values = values_;
    result.converged = converged;
    result.iterations = iter;
    result.residual = residual;
    result.energy = energy(graph_, weights_, result.values, options_.p);
    return result;
  }

 private:
  static constexpr std::size_t npos = std::numeric_limits<std::size_t>::max();

  Linear linearize(const GroundRule& r) const {
    Linear lin;
    lin.constant = 1.0 - static_cast<double>(r.premise.size());
    std::map<std::size_t, double> coef;
    auto add = [&](AtomId a, double c) {
      if (free_index_[a] == npos) {
        lin.constant += c * values_[a];
      } else {
        coef[free_index_[a]] += c;
      }
    };
    for (AtomId a : r.premise) add(a, 1.0);
    add(r.conclusion, -1.0);
    for (const auto& [k, c] : coef) {
      if (c != 0.0) lin.terms.emplace_back(k, c);
    }
    return lin;
  }

  void build_rules() {
    for (const auto& r : graph_.ground_rules) {
      const bool hard = weights_.is_hard(r.rule_index);
      const double lambda = hard ? 0.0 : weights_.lambda.at(r.rule_index);
      if (!hard && lambda <= 0.0) continue;
      Linear lin = linearize(r);
      if (lin.terms.empty()) continue;
      lin.lambda = lambda;
      (hard ? hard_ : soft_).push_back(std::move(lin));
    }
  }

  void build_groups() {
    std::vector<int> membership(free_atoms_.size(), 0);
    for (const auto& g : graph_.constraint_groups) {
      Group grp;
      grp.target = g.target;
      for (AtomId a : g.atoms) {
        if (free_index_[a] == npos) {
          grp.target -= values_[a];
        } else {
          grp.vars.push_back(free_index_[a]);
          ++membership[free_index_[a]];
        }
      }
      if (!grp.vars.empty()) groups_.push_back(std::move(grp));
    }
    simple_projection_ =
        hard_.empty() && std::all_of(membership.begin(), membership.end(), [](int m) { return m <= 1; });
  }

  static double hinge_value(double d, double mu, int p) {
    if (d <= 0.0) return 0.0;
    if (p == 2) return d * d;
    if (mu <= 0.0) return d;
    return d <= mu ? d * d / (2.0 * mu) : d - 0.5 * mu;
  }

  static double hinge_slope(double d, double mu, int p) {
    if (d <= 0.0) return 0.0;
    if (p == 2) return 2.0 * d;
    return d <= mu ? d / mu : 1.0;
  }

  double eval(const Linear& lin, const std::vector<double>& x) const {
    double d = lin.constant;
    for (const auto& [k, c] : lin.terms) d += c * x[k];
    return d;
  }

  // mu < 0 evaluates the unsmoothed objective.
  double objective(const std::vector<double>& x, double mu) const {
    double f = 0.0;
    for (const auto& lin : soft_) {
      const double d = eval(lin, x);
      f += lin.lambda * (mu < 0.0 ? (options_.p == 2 ? (d > 0 ? d * d : 0.0) : std::max(0.0, d))
                                  : hinge_value(d, mu, options_.p));
    }
    return f;
  }

  void gradient(const std::vector<double>& x, double mu, std::vector<double>& grad) const {
    std::fill(grad.begin(), grad.end(), 0.0);
    for (const auto& lin : soft_) {
      const double s = hinge_slope(eval(lin, x), mu, options_.p);
      if (s == 0.0) continue;
      for (const auto& [k, c] : lin.terms) grad[k] += lin.lambda * s * c;
    }
  }

  // Gershgorin bound on the largest Hessian eigenvalue of the (smoothed)
  // objective.
  double lipschitz(double mu) const {
    const double curvature = options_.p == 2 ? 2.0 : 1.0 / mu;
    std::vector<double> row(free_atoms_.size(), 0.0);
    for (const auto& lin : soft_) {
      double l1 = 0.0;
      for (const auto& [k, c] : lin.terms) l1 += std::abs(c);
      for (const auto& [k, c] : lin.terms) row[k] += curvature * lin.lambda * std::abs(c) * l1;
    }
    return row.empty() ? 0.0 : *std::max_element(row.begin(), row.end());
  }

  void project_group(std::vector<double>& x, const Group& g) const {
    buf_.clear();
    for (std::size_t k : g.vars) buf_.push_back(x[k]);
    project_capped_simplex(buf_, g.target);
    for (std::size_t i = 0; i < g.vars.size(); ++i) x[g.vars[i]] = buf_[i];
  }

  void project(std::vector<double>& x) const {
    for (double& v : x) v = std::clamp(v, 0.0, 1.0);
    if (simple_projection_) {
      for (const auto& g : groups_) project_group(x, g);
      return;
    }
    // Dykstra's alternating projections over box, groups and hard half-spaces.
    const std::size_t n_sets = 1 + groups_.size() + hard_.size();
    std::vector<std::vector<double>> incr(n_sets, std::vector<double>(x.size(), 0.0));
    std::vector<double> before(x.size());
    std::vector<double> y(x.size());
    for (int cycle = 0; cycle < 2000; ++cycle) {
      double change = 0.0;
      for (std::size_t s = 0; s < n_sets; ++s) {
        for (std::size_t k = 0; k < x.size(); ++k) y[k] = x[k] + incr[s][k];
        before = x;
        x = y;
        if (s == 0) {
          for (double& v : x) v = std::clamp(v, 0.0, 1.0);
        } else if (s <= groups_.size()) {
          project_group(x, groups_[s - 1]);
        } else {
          const Linear& h = hard_[s - 1 - groups_.size()];
          const double d = eval(h, x);
          if (d > 0.0) {
            double norm2 = 0.0;
            for (const auto& [k, c] : h.terms) norm2 += c * c;
            for (const auto& [k, c] : h.terms) x[k] -= d / norm2 * c;
          }
        }
        for (std::size_t k = 0; k < x.size(); ++k) {
          incr[s][k] = y[k] - x[k];
          change = std::max(change, std::abs(x[k] - before[k]));
        }
      }
      if (change < 1e-12) break;
    }
    for (double& v : x) v = std::clamp(v, 0.0, 1.0);
  }

  const GroundFactorGraph& graph_;
  const Weights& weights_;
  const SolverOptions& options_;
  Interpretation values_;
  std::vector<std::size_t> free_index_;
  std::vector<AtomId> free_atoms_;
  std::vector<Linear> soft_;
  std::vector<Linear> hard_;
  std::vector<Group> groups_;
  bool simple_projection_ = true;
  mutable std::vector<double> buf_;
};

}  // namespace

MapResult map_infer(const GroundFactorGraph& graph, const Weights& weights, const PartialAssignment& observed,
                    const SolverOptions& options) {
  return Solver(graph, weights, observed, options).run();
}

Distribution distribution_from(std::span<const double> values, const TargetSpec& spec) {
  Distribution out;
  if (spec.regression) {
    if (spec.targets.size() != 1) throw std::invalid_argument("regression needs exactly one target atom");
    out.probs = {std::clamp(values[spec.targets[0]], 0.0, 1.0)};
    return out;
  }
  if (spec.targets.size() < 2) throw std::invalid_argument("classification needs at least two target atoms");
  double total = 0.0;
  for (AtomId a : spec.targets) {
    out.probs.push_back(std::clamp(values[a], 0.0, 1.0));
    total += out.probs.back();
  }
  if (total <= 0.0) {
    std::fill(out.probs.begin(), out.probs.end(), 1.0 / static_cast<double>(out.probs.size()));
    out.degenerate = true;
    return out;
  }
  for (double& p : out.probs) p /= total;
  return out;
}

Distribution target_distribution(const GroundFactorGraph& graph, const Weights& weights,
                                 const PartialAssignment& observed, const TargetSpec& spec,
                                 const SolverOptions& options) {
  for (AtomId a : spec.targets) {
    if (observed.at(a)) throw std::invalid_argument("target atom " + grounding::format_key(graph.atoms[a].key) + " is observed");
  }
  return distribution_from(map_infer(graph, weights, observed, options).values, spec);
}

std::vector<double> weight_gradient(const GroundFactorGraph& graph, const Weights& weights,
                                    std::span<const double> map_values, std::span<const double> truth_values, int p) {
  const std::size_t n = weights.size();
  std::vector<double> raw(n, 0.0);
  for (const auto& r : graph.ground_rules) {
    raw[r.rule_index] += potential(r, map_values, p) - potential(r, truth_values, p);
  }
  std::vector<double> by_group(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) by_group[weights.group[i]] += raw[i];
  std::vector<double> g(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    if (weights.is_learnable(i)) g[i] = by_group[weights.group[i]];
  }
  return g;
}

Weights apply_weight_gradient(const Weights& weights, std::span<const double> gradient, double lr) {
  Weights out = weights;
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (out.is_learnable(i)) out.lambda[i] = std::max(0.0, out.lambda[i] + lr * gradient[i]);
  }
  return out;
}

Weights learn_weights_step(const GroundFactorGraph& graph, std::span<const double> truth,
                           const PartialAssignment& partial, const Weights& weights, double lr,
                           const SolverOptions& options) {
  if (!(lr > 0.0)) throw std::invalid_argument("learning rate must be positive");
  if (truth.size() != graph.atoms.size()) throw std::invalid_argument("truth assignment does not cover every atom");
  MapResult map = map_infer(graph, weights, partial, options);
  return apply_weight_gradient(weights, weight_gradient(graph, weights, map.values, truth, options.p), lr);
}

}  // namespace concordia::hlmrf
