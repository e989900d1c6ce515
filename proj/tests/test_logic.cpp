#include <random>

#include "concordia/logic.hpp"
#include "doctest.h"

using namespace concordia::logic;

TEST_CASE("parse single weighted rule") {
  Theory t = parse_theory("1.0 :: Dnn(U,I) -> Rates(U,I) .");
  REQUIRE(t.rules.size() == 1);
  const Rule& r = t.rules[0];
  CHECK(r.weight == 1.0);
  CHECK_FALSE(r.learnable);
  CHECK_FALSE(r.hard);
  REQUIRE(r.premise.size() == 1);
  CHECK(r.premise[0] == Atom{"Dnn", {Term::variable("U"), Term::variable("I")}});
  CHECK(r.conclusion == Atom{"Rates", {Term::variable("U"), Term::variable("I")}});
  CHECK(format_theory(t) == "1.0 :: Dnn(U, I) -> Rates(U, I) .\n");
}

TEST_CASE("empty theory") {
  Theory t = parse_theory("");
  CHECK(t.rules.empty());
  CHECK(t.constraints.empty());
  CHECK(t.empty());
  CHECK(format_theory(t) == "");
  CHECK(parse_theory("  # nothing here\n\n").empty());
}

TEST_CASE("two premise atoms") {
  Theory t = parse_theory("2.0 :: Similar(I1,I2) & Rates(U,I1) -> Rates(U,I2) .");
  REQUIRE(t.rules.size() == 1);
  CHECK(t.rules[0].premise.size() == 2);
  CHECK(t.rules[0].weight == 2.0);
  CHECK(t.predicates.at("Similar").arity == 2);
}

TEST_CASE("constraint canonical form") {
  Theory t = parse_theory("constraint: Doing(B,+A) = 1.");
  REQUIRE(t.constraints.size() == 1);
  CHECK(t.constraints[0].summed_position == 1);
  CHECK(t.constraints[0].target == 1.0);
  CHECK(format_theory(t) == "constraint: Doing(B, +A) = 1 .\n");
  CHECK(parse_theory(format_theory(t)) == t);

  Theory d = parse_theory("constraint: Doing(B, +A) .");
  CHECK(d.constraints[0].target == 1.0);
}

TEST_CASE("learnable, hard and bidirectional rules") {
  Theory t = parse_theory(
      "LEARN :: P(X) -> Q(X) .\n"
      "LEARN(0.25) :: Q(X) -> R(X) .\n"
      "HARD :: R(X) -> S(X) .\n"
      "0.5 :: A(X) <-> B(X) .\n");
  REQUIRE(t.rules.size() == 5);
  CHECK(t.rules[0].learnable);
  CHECK(t.rules[0].weight == default_learnable_weight);
  CHECK(t.rules[1].weight == 0.25);
  CHECK(t.rules[2].hard);
  CHECK(t.rules[3].weight_group == 3);
  CHECK(t.rules[4].weight_group == 3);
  CHECK(t.rules[3].premise[0].predicate == "A");
  CHECK(t.rules[4].premise[0].predicate == "B");
  CHECK(parse_theory(format_theory(t)) == t);
}

TEST_CASE("bidirectional desugaring adds exactly one rule") {
  Theory one = parse_theory("1.0 :: A(X) -> B(X) .");
  Theory both = parse_theory("1.0 :: A(X) <-> B(X) .");
  CHECK(both.rules.size() == one.rules.size() + 1);
}

TEST_CASE("empty premise and quoted constants") {
  Theory t = parse_theory("0.3 :: Prior(a) .\n1.5 :: Likes(\"Bob Smith\", X) -> Fan(X) .");
  REQUIRE(t.rules.size() == 2);
  CHECK(t.rules[0].premise.empty());
  CHECK(t.rules[1].premise[0].args[0] == Term::constant("Bob Smith"));
  const std::string text = format_theory(t);
  CHECK(text.find("\"Bob Smith\"") != std::string::npos);
  CHECK(parse_theory(text) == t);
}

TEST_CASE("closed predicate declarations round-trip") {
  Theory t = parse_theory("predicate: Close/2 closed .\npredicate: Unused/1 open .\n1.0 :: Close(A, B) -> Near(A, B) .");
  CHECK(t.predicates.at("Close").closed);
  CHECK_FALSE(t.predicates.at("Near").closed);
  CHECK(parse_theory(format_theory(t)) == t);
}

TEST_CASE("syntax errors carry line and column") {
  try {
    parse_theory("1.0 :: A(X) -> B(X) .\n2.0 :: A(X) -> .");
    FAIL("expected a parse error");
  } catch (const ParseError& e) {
    CHECK(e.line() == 2);
    CHECK(e.column() == 16);
  }
  CHECK_THROWS_AS(parse_theory("1.0 :: A(X) -> B(X)"), ParseError);
  CHECK_THROWS_AS(parse_theory("1.0 A(X) -> B(X) ."), ParseError);
  CHECK_THROWS_AS(parse_theory("1.0 :: A(X) -> B(X) . $"), ParseError);
}

TEST_CASE("strict parse rejects arity conflicts, unsafe rules and negative weights") {
  CHECK_THROWS_AS(parse_theory("1.0 :: P(X) -> Q(X) .\n1.0 :: P(X, Y) -> Q(X) ."), ParseError);
  CHECK_THROWS_AS(parse_theory("1.0 :: P(X) -> Q(X, Y) ."), ParseError);
  CHECK_THROWS_AS(parse_theory("-1.0 :: P(X) -> Q(X) ."), ParseError);
  CHECK_THROWS_AS(parse_theory("constraint: Doing(B, A) = 1 ."), ParseError);
  CHECK_THROWS_AS(parse_theory("constraint: Doing(+B, +A) = 1 ."), ParseError);
  CHECK_THROWS_AS(parse_theory("constraint: Doing(B, +A) = 0 ."), ParseError);
}

TEST_CASE("validate_theory reports each problem") {
  CHECK(validate_theory(parse_theory("1.0 :: P(X) -> Q(X) .")).ok());

  ValidationReport unsafe = validate_theory(parse_theory_unchecked("1.0 :: P(X) -> Q(X,Y) ."));
  CHECK(unsafe.issues.size() == 1);
  CHECK(unsafe.count(ValidationIssue::Kind::unsafe_rule) == 1);

  Theory conflict = parse_theory_unchecked("1.0 :: P(X) -> Q(X) .\n1.0 :: P(X, Y) -> Q(X) .");
  ValidationReport report = validate_theory(conflict);
  CHECK(report.issues.size() == 1);
  CHECK(report.count(ValidationIssue::Kind::arity_conflict) == 1);

  Theory undeclared;
  undeclared.rules.push_back(Rule{1.0, false, false, {Atom{"P", {Term::variable("X")}}}, Atom{"Q", {Term::variable("X")}}, 0});
  ValidationReport u = validate_theory(undeclared);
  CHECK(u.count(ValidationIssue::Kind::undeclared_predicate) == 2);

  // Pure: same input, same report.
  CHECK(validate_theory(conflict).issues == report.issues);
}

namespace {

Theory random_theory(std::mt19937_64& rng) {
  std::uniform_int_distribution<int> coin(0, 1);
  std::uniform_int_distribution<int> n_rules(0, 6);
  std::uniform_int_distribution<int> arity_d(0, 3);
  std::uniform_int_distribution<int> n_prem(0, 3);
  const std::vector<std::string> preds = {"Alpha", "Beta", "Gamma", "Delta", "Eps"};
  const std::vector<std::string> vars = {"X", "Y", "Z", "U1"};
  const std::vector<std::string> consts = {"a", "b2", "c_d", "Has Space", "q\"uote"};
  std::map<std::string, std::size_t> arity;
  for (const auto& p : preds) arity[p] = static_cast<std::size_t>(arity_d(rng));

  auto pick = [&](const auto& v) { return v[std::uniform_int_distribution<std::size_t>(0, v.size() - 1)(rng)]; };
  auto make_atom = [&](bool constants_only_if_unbound, const std::set<std::string>& bound) {
    Atom a;
    a.predicate = pick(preds);
    for (std::size_t i = 0; i < arity[a.predicate]; ++i) {
      bool use_var = coin(rng) == 1;
      if (use_var && constants_only_if_unbound) {
        if (bound.empty()) {
          use_var = false;
        } else {
          std::vector<std::string> b(bound.begin(), bound.end());
          a.args.push_back(Term::variable(pick(b)));
          continue;
        }
      }
      a.args.push_back(use_var ? Term::variable(pick(vars)) : Term::constant(pick(consts)));
    }
    return a;
  };

  Theory t;
  const int rules = n_rules(rng);
  for (int i = 0; i < rules; ++i) {
    Rule r;
    const int kind = std::uniform_int_distribution<int>(0, 3)(rng);
    if (kind == 0) {
      r.weight = std::uniform_real_distribution<double>(0.0, 10.0)(rng);
    } else if (kind == 1) {
      r.learnable = true;
      r.weight = coin(rng) ? default_learnable_weight : std::uniform_real_distribution<double>(0.0, 3.0)(rng);
    } else if (kind == 2) {
      r.hard = true;
      r.weight = 0.0;
    } else {
      r.weight = std::floor(std::uniform_real_distribution<double>(0.0, 5.0)(rng));
    }
    std::set<std::string> bound;
    const int np = n_prem(rng);
    for (int j = 0; j < np; ++j) {
      r.premise.push_back(make_atom(false, bound));
      for (const auto& term : r.premise.back().args) {
        if (term.is_variable()) bound.insert(term.name);
      }
    }
    r.conclusion = make_atom(true, bound);
    t.add_rule(std::move(r));
  }
  if (coin(rng)) {
    for (const auto& p : preds) {
      if (arity[p] >= 2) {
        SumConstraint c{p, {}, 1, coin(rng) ? 1.0 : 2.5};
        for (std::size_t i = 0; i < arity[p]; ++i) c.args.push_back(Term::variable("V" + std::to_string(i)));
        t.add_constraint(c);
        break;
      }
    }
  }
  if (coin(rng)) {
    const std::string p = pick(preds);
    t.predicates[p] = PredicateInfo{arity[p], true};
  }
  return t;
}

}  // namespace

TEST_CASE("random theories round-trip through the printer") {
  std::mt19937_64 rng(7);
  int checked = 0;
  for (int i = 0; i < 500; ++i) {
    Theory t = random_theory(rng);
    if (!validate_theory(t).ok()) continue;
    const std::string text = format_theory(t);
    Theory back = parse_theory(text);
    CAPTURE(text);
    CHECK(back == t);
    CHECK(format_theory(back) == text);
    ++checked;
  }
  CHECK(checked > 200);
}

TEST_CASE("number formatting") {
  CHECK(format_number(1.0) == "1");
  CHECK(format_number(0.1) == "0.1");
  CHECK(format_rule(Rule{3.0, false, false, {}, Atom{"P", {Term::constant("a")}}, 0}) == "3.0 :: P(a) .");
  CHECK(format_rule(Rule{1e-30, false, false, {}, Atom{"P", {}}, 0}) == "1e-30 :: P .");
}
