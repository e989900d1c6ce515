// Weighted first-order rule language: terms, atoms, rules, sum constraints
// and theories, plus the parser and canonical printer.
//
// Concrete syntax (one statement per `.`; `#` starts a comment):
//
//   2.0 :: Similar(I1, I2) & Rates(U, I1) -> Rates(U, I2) .
//   LEARN :: Dnn(B, A) -> Doing(B, A) .
//   LEARN(0.5) :: UserAvg(U, I) <-> Rating(U, I) .
//   HARD :: Same(B1, B2) -> Same(B2, B1) .
//   0.3 :: Prior(a) .                       # empty premise
//   constraint: Doing(B, +A) = 1 .
//   predicate: Close/2 closed .

#ifndef CONCORDIA_LOGIC_HPP
#define CONCORDIA_LOGIC_HPP

#include <cstddef>
#include <map>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace concordia::logic {

class ParseError : public std::runtime_error {
 public:
  ParseError(std::size_t line, std::size_t column, const std::string& message);

  std::size_t line() const noexcept { return line_; }
  std::size_t column() const noexcept { return column_; }

 private:
  std::size_t line_;
  std::size_t column_;
};

struct Term {
  enum class Kind { variable, constant };

  Kind kind = Kind::constant;
  std::string name;

  static Term variable(std::string name) { return {Kind::variable, std::move(name)}; }
  static Term constant(std::string name) { return {Kind::constant, std::move(name)}; }

  bool is_variable() const noexcept { return kind == Kind::variable; }

  friend bool operator==(const Term&, const Term&) = default;
  friend auto operator<=>(const Term&, const Term&) = default;
};

struct Atom {
  std::string predicate;
  std::vector<Term> args;

  std::size_t arity() const noexcept { return args.size(); }

  friend bool operator==(const Atom&, const Atom&) = default;
};

struct Rule {
  // For soft rules: the fixed weight, or the initial value when learnable.
  double weight = 1.0;
  bool learnable = false;
  bool hard = false;
  std::vector<Atom> premise;
  Atom conclusion;
  // Rules desugared from one `<->` statement share a group and so one weight.
  // Equal to the rule's own index otherwise.
  std::size_t weight_group = 0;

  friend bool operator==(const Rule&, const Rule&) = default;
};

struct SumConstraint {
  std::string predicate;
  std::vector<Term> args;
  std::size_t summed_position = 0;
  double target = 1.0;

  friend bool operator==(const SumConstraint&, const SumConstraint&) = default;
};

struct PredicateInfo {
  std::size_t arity = 0;
  // Closed predicates are fully observed: ground atoms missing from the facts
  // are false (0) unless explicitly queried.
  bool closed = false;

  friend bool operator==(const PredicateInfo&, const PredicateInfo&) = default;
};

struct Theory {
  std::vector<Rule> rules;
  std::vector<SumConstraint> constraints;
  std::map<std::string, PredicateInfo> predicates;

  bool empty() const noexcept { return rules.empty() && constraints.empty(); }
  bool declares(std::string_view predicate) const;

  // Appends a rule in its own weight group and registers unseen predicates.
  // Returns the rule index.
  std::size_t add_rule(Rule rule);
  void add_constraint(SumConstraint constraint);

  friend bool operator==(const Theory&, const Theory&) = default;
};

inline constexpr double default_learnable_weight = 1.0;

// Strict parse: syntax errors, arity mismatches, unsafe rules and negative
// weights all throw ParseError.
Theory parse_theory(std::string_view source);

// Syntax-only parse. Arity conflicts and safety violations are left for
// validate_theory to report.
Theory parse_theory_unchecked(std::string_view source);

Theory load_theory(const std::string& path);

struct ValidationIssue {
  enum class Kind { unsafe_rule, arity_conflict, undeclared_predicate, bad_constraint, bad_weight };

  Kind kind;
  std::string message;

  friend bool operator==(const ValidationIssue&, const ValidationIssue&) = default;
};

struct ValidationReport {
  std::vector<ValidationIssue> issues;

  bool ok() const noexcept { return issues.empty(); }
  std::size_t count(ValidationIssue::Kind kind) const;
};

ValidationReport validate_theory(const Theory& theory);

std::string format_term(const Term& term);
std::string format_atom(const Atom& atom);
std::string format_rule(const Rule& rule);
std::string format_theory(const Theory& theory);

// Distinct variable names of a rule in first-occurrence order (premise first).
std::vector<std::string> rule_variables(const Rule& rule);

// Shortest round-tripping decimal for a double.
std::string format_number(double value);

}  // namespace concordia::logic

#endif  // CONCORDIA_LOGIC_HPP
