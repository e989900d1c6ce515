#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <sstream>

#include "concordia/logic.hpp"

namespace concordia::logic {

namespace {

void register_atom(Theory& t, const Atom& a) { t.predicates.emplace(a.predicate, PredicateInfo{a.arity(), false}); }

bool is_bare_constant(const std::string& s) {
  if (s.empty() || !std::islower(static_cast<unsigned char>(s[0]))) return false;
  return std::all_of(s.begin(), s.end(), [](char c) { return std::isalnum(static_cast<unsigned char>(c)) || c == '_'; });
}

std::string format_weight(double w) {
  std::string s = format_number(w);
  if (s.find_first_of(".eEn") == std::string::npos) s += ".0";
  return s;
}

bool is_mirror_pair(const Rule& a, const Rule& b) {
  return a.premise.size() == 1 && b.premise.size() == 1 && a.premise[0] == b.conclusion &&
         b.premise[0] == a.conclusion && a.weight == b.weight && a.learnable == b.learnable && a.hard == b.hard;
}

std::string weight_prefix(const Rule& r) {
  if (r.hard) return "HARD";
  if (r.learnable) {
    if (r.weight == default_learnable_weight) return "LEARN";
    return "LEARN(" + format_number(r.weight) + ")";
  }
  return format_weight(r.weight);
}

}  // namespace

std::size_t Theory::add_rule(Rule rule) {
  const std::size_t index = rules.size();
  rule.weight_group = index;
  for (const auto& a : rule.premise) register_atom(*this, a);
  register_atom(*this, rule.conclusion);
  rules.push_back(std::move(rule));
  return index;
}

void Theory::add_constraint(SumConstraint constraint) {
  predicates.emplace(constraint.predicate, PredicateInfo{constraint.args.size(), false});
  constraints.push_back(std::move(constraint));
}

std::string format_number(double value) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, value);
  return std::string(buf, ptr);
}

std::string format_term(const Term& term) {
  if (term.is_variable() || is_bare_constant(term.name)) return term.name;
  std::string out = "\"";
  for (char c : term.name) {
    if (c == '"' || c == '\\') out.push_back('\\');
    out.push_back(c);
  }
  out.push_back('"');
  return out;
}

std::string format_atom(const Atom& atom) {
  std::string out = atom.predicate;
  if (atom.args.empty()) return out;
  out.push_back('(');
  for (std::size_t i = 0; i < atom.args.size(); ++i) {
    if (i) out += ", ";
    out += format_term(atom.args[i]);
  }
  out.push_back(')');
  return out;
}

std::string format_rule(const Rule& rule) {
  std::string out = weight_prefix(rule) + " :: ";
  for (std::size_t i = 0; i < rule.premise.size(); ++i) {
    if (i) out += " & ";
    out += format_atom(rule.premise[i]);
  }
  if (!rule.premise.empty()) out += " -> ";
  out += format_atom(rule.conclusion);
  out += " .";
  return out;
}

std::string format_theory(const Theory& theory) {
  std::set<std::string> used;
  for (const auto& r : theory.rules) {
    for (const auto& a : r.premise) used.insert(a.predicate);
    used.insert(r.conclusion.predicate);
  }
  for (const auto& c : theory.constraints) used.insert(c.predicate);

  std::ostringstream out;
  for (const auto& [name, info] : theory.predicates) {
    if (info.closed || !used.count(name)) {
      out << "predicate: " << name << '/' << info.arity << (info.closed ? " closed" : " open") << " .\n";
    }
  }
  for (std::size_t i = 0; i < theory.rules.size(); ++i) {
    const Rule& r = theory.rules[i];
    if (i + 1 < theory.rules.size()) {
      const Rule& next = theory.rules[i + 1];
      if (r.weight_group == i && next.weight_group == i && is_mirror_pair(r, next)) {
        out << weight_prefix(r) << " :: " << format_atom(r.premise[0]) << " <-> " << format_atom(r.conclusion)
            << " .\n";
        ++i;
        continue;
      }
    }
    out << format_rule(r) << '\n';
  }
  for (const auto& c : theory.constraints) {
    out << "constraint: " << c.predicate << '(';
    for (std::size_t i = 0; i < c.args.size(); ++i) {
      if (i) out << ", ";
      if (i == c.summed_position) out << '+';
      out << format_term(c.args[i]);
    }
    out << ") = " << format_number(c.target) << " .\n";
  }
  return out.str();
}

std::vector<std::string> rule_variables(const Rule& rule) {
  std::vector<std::string> vars;
  auto visit = [&](const Atom& a) {
    for (const auto& t : a.args) {
      if (t.is_variable() && std::find(vars.begin(), vars.end(), t.name) == vars.end()) vars.push_back(t.name);
    }
  };
  for (const auto& a : rule.premise) visit(a);
  visit(rule.conclusion);
  return vars;
}

std::size_t ValidationReport::count(ValidationIssue::Kind kind) const {
  return static_cast<std::size_t>(
      std::count_if(issues.begin(), issues.end(), [kind](const ValidationIssue& i) { return i.kind == kind; }));
}

ValidationReport validate_theory(const Theory& theory) {
  using K = ValidationIssue::Kind;
  ValidationReport report;
  std::set<std::string> conflicted;
  std::set<std::string> undeclared;

  auto check_atom = [&](const Atom& a) {
    auto it = theory.predicates.find(a.predicate);
    if (it == theory.predicates.end()) {
      if (undeclared.insert(a.predicate).second) {
        report.issues.push_back({K::undeclared_predicate, "predicate '" + a.predicate + "' is not declared"});
      }
      return;
    }
    if (it->second.arity != a.arity() && conflicted.insert(a.predicate).second) {
      report.issues.push_back({K::arity_conflict, "predicate '" + a.predicate + "' is used with arity " +
                                                      std::to_string(a.arity()) + " and " +
                                                      std::to_string(it->second.arity)});
    }
  };

  for (std::size_t i = 0; i < theory.rules.size(); ++i) {
    const Rule& r = theory.rules[i];
    const std::string where = "rule " + std::to_string(i) + " (" + format_rule(r) + ")";
    for (const auto& a : r.premise) check_atom(a);
    check_atom(r.conclusion);

    std::set<std::string> bound;
    for (const auto& a : r.premise) {
      for (const auto& t : a.args) {
        if (t.is_variable()) bound.insert(t.name);
      }
    }
    for (const auto& t : r.conclusion.args) {
      if (t.is_variable() && !bound.count(t.name)) {
        report.issues.push_back({K::unsafe_rule, where + ": variable " + t.name + " is not bound by the premise"});
      }
    }
    if (!r.hard && !(r.weight >= 0.0 && std::isfinite(r.weight))) {
      report.issues.push_back({K::bad_weight, where + ": weight must be finite and nonnegative"});
    }
    if (r.weight_group > i) {
      report.issues.push_back({K::bad_weight, where + ": weight group refers to a later rule"});
    } else if (r.weight_group != i) {
      const Rule& leader = theory.rules[r.weight_group];
      if (leader.weight != r.weight || leader.learnable != r.learnable || leader.hard != r.hard) {
        report.issues.push_back({K::bad_weight, where + ": tied rules disagree on their weight"});
      }
    }
  }

  for (std::size_t i = 0; i < theory.constraints.size(); ++i) {
    const SumConstraint& c = theory.constraints[i];
    const std::string where = "constraint " + std::to_string(i) + " on " + c.predicate;
    check_atom(Atom{c.predicate, c.args});
    if (c.summed_position >= c.args.size()) {
      report.issues.push_back({K::bad_constraint, where + ": summed position out of range"});
    } else if (!c.args[c.summed_position].is_variable()) {
      report.issues.push_back({K::bad_constraint, where + ": summed argument must be a variable"});
    }
    if (!(c.target > 0.0 && std::isfinite(c.target))) {
      report.issues.push_back({K::bad_constraint, where + ": target must be positive"});
    }
  }
  return report;
}

}  // namespace concordia::logic
