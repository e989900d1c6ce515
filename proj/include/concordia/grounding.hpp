// Herbrand base construction and rule instantiation.

#ifndef CONCORDIA_GROUNDING_HPP
#define CONCORDIA_GROUNDING_HPP

#include <cstddef>
#include <iosfwd>
#include <limits>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "concordia/logic.hpp"

namespace concordia::grounding {

class GroundingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct AtomKey {
  std::string predicate;
  std::vector<std::string> constants;

  friend bool operator==(const AtomKey&, const AtomKey&) = default;
  friend auto operator<=>(const AtomKey&, const AtomKey&) = default;
};

// Pred(c1, c2) with constants quoted when needed.
std::string format_key(const AtomKey& key);

struct Fact {
  AtomKey atom;
  double value = 1.0;
};

class FactSet {
 public:
  // Throws std::invalid_argument on a duplicate key or a value outside [0,1].
  void add(AtomKey atom, double value = 1.0);
  // Inserts or overwrites; same range check.
  void set(const AtomKey& atom, double value);
  bool erase(const AtomKey& atom);

  std::optional<double> find(const AtomKey& atom) const;
  bool contains(const AtomKey& atom) const { return index_.count(atom) != 0; }

  const std::vector<Fact>& entries() const noexcept { return entries_; }
  std::size_t size() const noexcept { return entries_.size(); }
  bool empty() const noexcept { return entries_.empty(); }

 private:
  std::vector<Fact> entries_;
  std::map<AtomKey, std::size_t> index_;
};

// Tab-separated `predicate<TAB>c1<TAB>...<TAB>value`; a missing value means
// 1.0. Blank lines and lines starting with '#' are skipped. Errors name the
// source and line.
FactSet read_facts(std::istream& in, const std::string& source_name = "<facts>");
FactSet load_facts(const std::string& path);
void write_facts(std::ostream& out, const FactSet& facts);

// Same line format, except a first field `@name` puts the fact into scope
// `name` instead of the global set.
struct ScopedFacts {
  FactSet global;
  std::map<std::string, FactSet> scoped;
};

ScopedFacts read_scoped_facts(std::istream& in, const std::string& source_name = "<facts>");
ScopedFacts load_scoped_facts(const std::string& path);

using AtomId = std::size_t;

struct GroundAtom {
  AtomId id = 0;
  AtomKey key;
  bool observed = false;
  double value = 0.0;
};

class AtomTable {
 public:
  AtomId get_or_insert(const AtomKey& key);
  std::optional<AtomId> find(const AtomKey& key) const;

  const GroundAtom& operator[](AtomId id) const { return atoms_[id]; }
  GroundAtom& operator[](AtomId id) { return atoms_[id]; }
  std::size_t size() const noexcept { return atoms_.size(); }
  auto begin() const { return atoms_.begin(); }
  auto end() const { return atoms_.end(); }

 private:
  std::vector<GroundAtom> atoms_;
  std::map<AtomKey, AtomId> index_;
};

struct Substitution {
  std::map<std::string, std::string> mapping;
};

struct GroundRule {
  std::size_t rule_index = 0;
  std::vector<AtomId> premise;
  AtomId conclusion = 0;

  friend bool operator==(const GroundRule&, const GroundRule&) = default;
};

struct ConstraintGroup {
  std::size_t constraint_index = 0;
  std::vector<AtomId> atoms;
  double target = 1.0;
};

struct GroundFactorGraph {
  AtomTable atoms;
  std::vector<GroundRule> ground_rules;
  std::vector<ConstraintGroup> constraint_groups;
  // M_i: number of ground rules instantiated from rule i.
  std::vector<std::size_t> groundings_per_rule;

  std::size_t observed_count() const;
  std::size_t unobserved_count() const { return atoms.size() - observed_count(); }
};

// Constant domains per argument position. Positions joined by a shared
// variable in some rule are merged into one class.
class DomainMap {
 public:
  const std::set<std::string>& domain(const std::string& predicate, std::size_t position) const;
  std::size_t class_of(const std::string& predicate, std::size_t position) const;
  const std::vector<std::set<std::string>>& classes() const noexcept { return domains_; }

 private:
  friend DomainMap collect_constants(const logic::Theory&, const FactSet&, std::span<const AtomKey>);
  std::map<std::pair<std::string, std::size_t>, std::size_t> class_index_;
  std::vector<std::set<std::string>> domains_;
};

// Throws GroundingError when a fact (or extra atom) names a predicate the
// theory does not declare or uses the wrong arity. `extra` atoms (typically
// the query targets) contribute their constants as well.
DomainMap collect_constants(const logic::Theory& theory, const FactSet& facts, std::span<const AtomKey> extra = {});

struct GroundingOptions {
  // Atoms forced into the Herbrand base as unobserved, even for closed
  // predicates or when present in the facts.
  std::vector<AtomKey> query;
  // Skip ground rules whose premise contains an observed atom of value 0.
  // Their potential is identically 0.
  bool drop_trivially_satisfied = false;
  // Skip ground rules all of whose atoms are observed. Their potential is a
  // constant, so MAP states and weight gradients are unaffected.
  bool drop_fully_observed = false;
  // Skip ground rules whose conclusion is a closed-predicate atom that is
  // neither a fact nor a query atom. Such an atom is unknown rather than
  // false (a rating nobody gave), so pulling the premise toward 0 is wrong.
  bool drop_unknown_conclusions = false;
  std::size_t max_ground_rules = 10'000'000;
};

GroundFactorGraph ground_theory(const logic::Theory& theory, const DomainMap& domains, const FactSet& facts,
                                const GroundingOptions& options = {});

// Instantiates `rule` under `sigma`, registering its atoms in `table`.
// Throws GroundingError when sigma does not cover every rule variable.
GroundRule apply_substitution(const logic::Rule& rule, std::size_t rule_index, const Substitution& sigma,
                              AtomTable& table);

AtomKey ground_atom(const logic::Atom& atom, const Substitution& sigma);

}  // namespace concordia::grounding

#endif  // CONCORDIA_GROUNDING_HPP
