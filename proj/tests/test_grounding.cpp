#include <random>
#include <sstream>

#include "concordia/grounding.hpp"
#include "doctest.h"

using namespace concordia;
using namespace concordia::grounding;

namespace {

AtomKey key(std::string p, std::vector<std::string> c) { return AtomKey{std::move(p), std::move(c)}; }

// Independent count: enumerate all assignments of rule variables over the
// domain of the first position each variable occupies, drop exact
// tautologies and duplicates.
std::size_t brute_force_count(const logic::Rule& r, const DomainMap& dm) {
  std::vector<std::string> vars = logic::rule_variables(r);
  std::vector<std::vector<std::string>> doms;
  for (const auto& v : vars) {
    bool found = false;
    for (const auto& a : r.premise) {
      for (std::size_t p = 0; p < a.args.size() && !found; ++p) {
        if (a.args[p].is_variable() && a.args[p].name == v) {
          const auto& d = dm.domain(a.predicate, p);
          doms.emplace_back(d.begin(), d.end());
          found = true;
        }
      }
    }
  }
  std::set<std::vector<AtomKey>> seen;
  std::vector<std::size_t> idx(vars.size(), 0);
  for (const auto& d : doms) {
    if (d.empty()) return 0;
  }
  while (true) {
    Substitution s;
    for (std::size_t i = 0; i < vars.size(); ++i) s.mapping[vars[i]] = doms[i][idx[i]];
    std::vector<AtomKey> atoms;
    for (const auto& a : r.premise) atoms.push_back(ground_atom(a, s));
    AtomKey head = ground_atom(r.conclusion, s);
    bool taut = false;
    for (const auto& a : atoms) taut = taut || a == head;
    atoms.push_back(head);
    if (!taut) seen.insert(atoms);
    std::size_t k = 0;
    while (k < vars.size() && ++idx[k] == doms[k].size()) idx[k++] = 0;
    if (k == vars.size()) break;
  }
  return seen.size();
}

}  // namespace

TEST_CASE("collect_constants: single fact") {
  logic::Theory t = logic::parse_theory("2.0 :: Similar(I1,I2) & Rates(U,I1) -> Rates(U,I2) .");
  FactSet facts;
  facts.add(key("Rates", {"alice", "t1"}), 0.5);
  DomainMap dm = collect_constants(t, facts);
  CHECK(dm.domain("Rates", 0) == std::set<std::string>{"alice"});
  CHECK(dm.domain("Rates", 1) == std::set<std::string>{"t1"});
  // Item positions are linked through I1/I2.
  CHECK(dm.class_of("Similar", 0) == dm.class_of("Rates", 1));
  CHECK(dm.class_of("Similar", 1) == dm.class_of("Rates", 1));
  CHECK(dm.class_of("Rates", 0) != dm.class_of("Rates", 1));
}

TEST_CASE("collect_constants: empty facts give empty domains") {
  logic::Theory t = logic::parse_theory("1.0 :: P(X) -> Q(X) .");
  DomainMap dm = collect_constants(t, FactSet{});
  for (const auto& d : dm.classes()) CHECK(d.empty());
}

TEST_CASE("collect_constants: undeclared predicate is an error") {
  logic::Theory t = logic::parse_theory("1.0 :: P(X) -> Q(X) .");
  FactSet facts;
  facts.add(key("R", {"a"}));
  CHECK_THROWS_AS(collect_constants(t, facts), GroundingError);
  FactSet wrong;
  wrong.add(key("P", {"a", "b"}));
  CHECK_THROWS_AS(collect_constants(t, wrong), GroundingError);
}

TEST_CASE("two boxes and one activity") {
  logic::Theory t = logic::parse_theory("1.0 :: Doing(B1, A) & Close(B1, B2) -> Doing(B2, A) .");
  FactSet facts;
  facts.add(key("Close", {"b1", "b2"}));
  facts.add(key("Close", {"b2", "b1"}));
  std::vector<AtomKey> query = {key("Doing", {"b1", "crossing"}), key("Doing", {"b2", "crossing"})};
  DomainMap dm = collect_constants(t, facts, query);
  CHECK(dm.domain("Doing", 0).size() == 2);
  CHECK(dm.domain("Doing", 1).size() == 1);

  GroundingOptions opt;
  opt.query = query;
  GroundFactorGraph g = ground_theory(t, dm, facts, opt);
  CHECK(g.ground_rules.size() == 2);
  CHECK(g.groundings_per_rule == std::vector<std::size_t>{2});
  CHECK(g.atoms.size() == 4);
  // The two groundings share the Doing atoms with roles swapped.
  const auto d1 = *g.atoms.find(query[0]);
  const auto d2 = *g.atoms.find(query[1]);
  CHECK(g.ground_rules[0].premise[0] == d1);
  CHECK(g.ground_rules[0].conclusion == d2);
  CHECK(g.ground_rules[1].premise[0] == d2);
  CHECK(g.ground_rules[1].conclusion == d1);
  CHECK_FALSE(g.atoms[d1].observed);
  CHECK(g.atoms[*g.atoms.find(key("Close", {"b1", "b2"}))].observed);
}

TEST_CASE("zero rules keep only fact atoms") {
  logic::Theory t = logic::parse_theory("predicate: P/1 open .");
  FactSet facts;
  facts.add(key("P", {"a"}), 0.3);
  facts.add(key("P", {"b"}), 0.7);
  GroundFactorGraph g = ground_theory(t, collect_constants(t, facts), facts);
  CHECK(g.ground_rules.empty());
  CHECK(g.atoms.size() == 2);
  CHECK(g.observed_count() == 2);
  CHECK(g.atoms[1].value == 0.7);
}

TEST_CASE("P(X) -> Q(X) over three constants") {
  logic::Theory t = logic::parse_theory("1.0 :: P(X) -> Q(X) .");
  FactSet facts;
  for (const char* c : {"a", "b", "c"}) facts.add(key("P", {c}), 0.5);
  DomainMap dm = collect_constants(t, facts);
  GroundFactorGraph g = ground_theory(t, dm, facts);
  CHECK(g.ground_rules.size() == brute_force_count(t.rules[0], dm));
  CHECK(g.ground_rules.size() == 3);
  CHECK(g.atoms.size() == 6);
  CHECK(g.unobserved_count() == 3);
}

TEST_CASE("apply_substitution") {
  logic::Theory t = logic::parse_theory("2.0 :: Similar(I1,I2) & Rates(U,I1) -> Rates(U,I2) .");
  AtomTable table;
  Substitution s{{{"I1", "t1"}, {"I2", "t2"}, {"U", "alice"}}};
  GroundRule g = apply_substitution(t.rules[0], 0, s, table);
  CHECK(table[g.premise[0]].key == key("Similar", {"t1", "t2"}));
  CHECK(table[g.premise[1]].key == key("Rates", {"alice", "t1"}));
  CHECK(table[g.conclusion].key == key("Rates", {"alice", "t2"}));
  CHECK(format_key(table[g.conclusion].key) == "Rates(alice, t2)");

  // Registering again finds the same ids.
  GroundRule again = apply_substitution(t.rules[0], 0, s, table);
  CHECK(again == g);
  CHECK(table.size() == 3);

  logic::Theory ground = logic::parse_theory("1.0 :: P(a) -> Q(b) .");
  GroundRule id = apply_substitution(ground.rules[0], 0, Substitution{}, table);
  CHECK(table[id.premise[0]].key == key("P", {"a"}));
  CHECK(table[id.conclusion].key == key("Q", {"b"}));

  Substitution partial{{{"I1", "t1"}}};
  CHECK_THROWS_AS(apply_substitution(t.rules[0], 0, partial, table), GroundingError);
}

TEST_CASE("closed predicates, queries and pruning") {
  logic::Theory t = logic::parse_theory(
      "predicate: Close/2 closed .\n"
      "1.0 :: Doing(B1, A) & Close(B1, B2) -> Doing(B2, A) .\n"
      "constraint: Doing(B, +A) = 1 .");
  FactSet facts;
  facts.add(key("Close", {"b1", "b2"}), 0.9);
  facts.add(key("Doing", {"b1", "walk"}), 1.0);
  facts.add(key("Doing", {"b1", "run"}), 0.0);
  facts.add(key("Close", {"b3", "b1"}), 0.4);
  std::vector<AtomKey> query = {key("Doing", {"b2", "walk"}), key("Doing", {"b2", "run"})};
  DomainMap dm = collect_constants(t, facts, query);

  GroundingOptions full;
  full.query = query;
  GroundFactorGraph all = ground_theory(t, dm, facts, full);
  // 3 boxes, 2 activities, 9 box pairs minus 3 reflexive ones: 6 x 2.
  CHECK(all.ground_rules.size() == 12);
  const auto close_b2_b1 = all.atoms.find(key("Close", {"b2", "b1"}));
  REQUIRE(close_b2_b1);
  CHECK(all.atoms[*close_b2_b1].observed);
  CHECK(all.atoms[*close_b2_b1].value == 0.0);

  GroundingOptions pruned = full;
  pruned.drop_trivially_satisfied = true;
  GroundFactorGraph p = ground_theory(t, dm, facts, pruned);
  // Surviving: Close(b1,b2) with either activity (Doing(b1,run)=0 drops one),
  // Close(b3,b1) with both activities.
  CHECK(p.ground_rules.size() == 3);

  pruned.drop_fully_observed = true;
  GroundFactorGraph q = ground_theory(t, dm, facts, pruned);
  CHECK(q.ground_rules.size() == 3);

  // Constraint groups: one per box with at least one free Doing atom.
  for (const auto& grp : all.constraint_groups) {
    CHECK(grp.atoms.size() == 2);
    CHECK(grp.target == 1.0);
  }
  CHECK(all.constraint_groups.size() == 2);
}

TEST_CASE("grounding is deterministic") {
  logic::Theory t = logic::parse_theory(
      "1.0 :: Sim(I1, I2) & Rates(U, I1) -> Rates(U, I2) .\n"
      "LEARN :: Avg(U, I) <-> Rates(U, I) .");
  FactSet facts;
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int i = 0; i < 4; ++i) {
    for (int j = 0; j < 4; ++j) {
      if (i != j && u(rng) < 0.5) facts.set(key("Sim", {"i" + std::to_string(i), "i" + std::to_string(j)}), u(rng));
    }
  }
  for (int uidx = 0; uidx < 3; ++uidx) facts.set(key("Rates", {"u" + std::to_string(uidx), "i0"}), u(rng));
  auto run = [&] { return ground_theory(t, collect_constants(t, facts), facts); };
  GroundFactorGraph a = run();
  GroundFactorGraph b = run();
  REQUIRE(a.atoms.size() == b.atoms.size());
  for (std::size_t i = 0; i < a.atoms.size(); ++i) CHECK(a.atoms[i].key == b.atoms[i].key);
  CHECK(a.ground_rules == b.ground_rules);
}

TEST_CASE("ground-rule counts match brute force on random graphs") {
  std::mt19937_64 rng(11);
  const std::vector<std::string> theories = {
      "1.0 :: P(X) -> Q(X) .",
      "1.0 :: R(X, Y) & P(X) -> P(Y) .",
      "1.0 :: R(X, Y) & R(Y, Z) -> R(X, Z) .",
      "1.0 :: S(X, Y, Z) -> S(Z, Y, X) .",
      "1.0 :: P(X) & Q(Y) -> R(X, Y) .",
      "1.0 :: R(X, c0) & P(X) -> Q(X) .",
  };
  int checked = 0;
  for (int trial = 0; trial < 60; ++trial) {
    logic::Theory t = logic::parse_theory(theories[static_cast<std::size_t>(trial) % theories.size()]);
    FactSet facts;
    std::uniform_int_distribution<int> c(0, 4);
    for (const auto& [name, info] : t.predicates) {
      for (int k = 0; k < 4; ++k) {
        AtomKey a{name, {}};
        for (std::size_t p = 0; p < info.arity; ++p) a.constants.push_back("c" + std::to_string(c(rng)));
        facts.set(a, 0.5);
      }
    }
    DomainMap dm = collect_constants(t, facts);
    GroundFactorGraph g = ground_theory(t, dm, facts);
    const std::size_t expected = brute_force_count(t.rules[0], dm);
    if (expected > 500) continue;
    CHECK(g.ground_rules.size() == expected);
    CHECK(g.groundings_per_rule[0] == g.ground_rules.size());
    ++checked;
  }
  CHECK(checked >= 40);
}

TEST_CASE("cap names the offending rule") {
  logic::Theory t = logic::parse_theory("1.0 :: P(X) -> Q(X) .\n1.0 :: P(X) & P(Y) -> R(X, Y) .");
  FactSet facts;
  for (int i = 0; i < 10; ++i) facts.add(key("P", {"c" + std::to_string(i)}));
  GroundingOptions opt;
  opt.max_ground_rules = 50;
  try {
    ground_theory(t, collect_constants(t, facts), facts, opt);
    FAIL("expected the cap to trigger");
  } catch (const GroundingError& e) {
    CHECK(std::string(e.what()).find("rule 1") != std::string::npos);
  }
}

TEST_CASE("fact file round trip") {
  std::istringstream in("# comment\nRates\talice\tt1\t0.5\nFrame\tb1\tf1\n\nClose\tb1\tb2\t1e-3\n");
  FactSet f = read_facts(in, "mem");
  REQUIRE(f.size() == 3);
  CHECK(*f.find(key("Rates", {"alice", "t1"})) == 0.5);
  CHECK(*f.find(key("Frame", {"b1", "f1"})) == 1.0);
  CHECK(*f.find(key("Close", {"b1", "b2"})) == 0.001);
  std::ostringstream out;
  write_facts(out, f);
  std::istringstream back(out.str());
  FactSet g = read_facts(back);
  REQUIRE(g.size() == 3);
  for (const auto& e : f.entries()) CHECK(*g.find(e.atom) == e.value);

  std::istringstream dup("P\ta\nP\ta\t0.2\n");
  CHECK_THROWS_WITH_AS(read_facts(dup, "dup.tsv"), doctest::Contains("dup.tsv:2"), std::runtime_error);
  std::istringstream range("P\ta\t1.5\n");
  CHECK_THROWS_AS(read_facts(range), std::runtime_error);
}
