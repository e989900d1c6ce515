#include "concordia/grounding.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <functional>
#include <istream>
#include <numeric>
#include <ostream>
#include <sstream>

namespace concordia::grounding {

using logic::Atom;
using logic::Rule;
using logic::Theory;

std::string format_key(const AtomKey& key) {
  Atom a{key.predicate, {}};
  for (const auto& c : key.constants) a.args.push_back(logic::Term::constant(c));
  return logic::format_atom(a);
}

namespace {

void check_value(const AtomKey& atom, double value) {
  if (!(value >= 0.0 && value <= 1.0)) {
    throw std::invalid_argument("fact " + format_key(atom) + " has value " + logic::format_number(value) +
                                " outside [0,1]");
  }
}

std::optional<double> parse_double(const std::string& s) {
  double v = 0.0;
  const char* first = s.data();
  const char* last = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(first, last, v);
  if (ec != std::errc() || ptr != last) return std::nullopt;
  return v;
}

}  // namespace

void FactSet::add(AtomKey atom, double value) {
  check_value(atom, value);
  if (index_.count(atom)) throw std::invalid_argument("duplicate fact " + format_key(atom));
  index_.emplace(atom, entries_.size());
  entries_.push_back({std::move(atom), value});
}

void FactSet::set(const AtomKey& atom, double value) {
  check_value(atom, value);
  auto it = index_.find(atom);
  if (it == index_.end()) {
    add(atom, value);
  } else {
    entries_[it->second].value = value;
  }
}

bool FactSet::erase(const AtomKey& atom) {
  auto it = index_.find(atom);
  if (it == index_.end()) return false;
  const std::size_t pos = it->second;
  index_.erase(it);
  entries_.erase(entries_.begin() + static_cast<std::ptrdiff_t>(pos));
  for (auto& [key, idx] : index_) {
    if (idx > pos) --idx;
  }
  return true;
}

std::optional<double> FactSet::find(const AtomKey& atom) const {
  auto it = index_.find(atom);
  if (it == index_.end()) return std::nullopt;
  return entries_[it->second].value;
}

namespace {

// Parses one tab-split fact line into `facts`, errors prefixed with the location.
void add_fact_fields(FactSet& facts, std::span<const std::string> fields, const std::string& where) {
  if (fields.empty() || fields[0].empty()) throw std::runtime_error(where + ": missing predicate");
  AtomKey key{fields[0], {}};
  double value = 1.0;
  std::size_t n_const = fields.size() - 1;
  if (fields.size() > 1) {
    if (auto v = parse_double(fields.back())) {
      value = *v;
      --n_const;
    }
  }
  key.constants.assign(fields.begin() + 1, fields.begin() + 1 + static_cast<std::ptrdiff_t>(n_const));
  try {
    facts.add(std::move(key), value);
  } catch (const std::invalid_argument& e) {
    throw std::runtime_error(where + ": " + e.what());
  }
}

template <class Sink>
void for_each_fact_line(std::istream& in, const std::string& source_name, Sink sink) {
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    std::vector<std::string> fields;
    std::stringstream ss(line);
    std::string field;
    while (std::getline(ss, field, '\t')) fields.push_back(field);
    sink(std::span<const std::string>(fields), source_name + ":" + std::to_string(line_no));
  }
}

}  // namespace

FactSet read_facts(std::istream& in, const std::string& source_name) {
  FactSet facts;
  for_each_fact_line(in, source_name, [&](std::span<const std::string> fields, const std::string& where) {
    add_fact_fields(facts, fields, where);
  });
  return facts;
}

ScopedFacts read_scoped_facts(std::istream& in, const std::string& source_name) {
  ScopedFacts out;
  for_each_fact_line(in, source_name, [&](std::span<const std::string> fields, const std::string& where) {
    if (!fields.empty() && !fields[0].empty() && fields[0][0] == '@') {
      if (fields[0].size() == 1) throw std::runtime_error(where + ": empty scope name");
      add_fact_fields(out.scoped[fields[0].substr(1)], fields.subspan(1), where);
    } else {
      add_fact_fields(out.global, fields, where);
    }
  });
  return out;
}

ScopedFacts load_scoped_facts(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open facts file " + path);
  return read_scoped_facts(in, path);
}

FactSet load_facts(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open facts file " + path);
  return read_facts(in, path);
}

void write_facts(std::ostream& out, const FactSet& facts) {
  for (const auto& f : facts.entries()) {
    out << f.atom.predicate;
    for (const auto& c : f.atom.constants) out << '\t' << c;
    out << '\t' << logic::format_number(f.value) << '\n';
  }
}

AtomId AtomTable::get_or_insert(const AtomKey& key) {
  auto [it, inserted] = index_.emplace(key, atoms_.size());
  if (inserted) atoms_.push_back({it->second, key, false, 0.0});
  return it->second;
}

std::optional<AtomId> AtomTable::find(const AtomKey& key) const {
  auto it = index_.find(key);
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

std::size_t GroundFactorGraph::observed_count() const {
  return static_cast<std::size_t>(
      std::count_if(atoms.begin(), atoms.end(), [](const GroundAtom& a) { return a.observed; }));
}

const std::set<std::string>& DomainMap::domain(const std::string& predicate, std::size_t position) const {
  static const std::set<std::string> empty;
  auto it = class_index_.find({predicate, position});
  if (it == class_index_.end()) return empty;
  return domains_[it->second];
}

std::size_t DomainMap::class_of(const std::string& predicate, std::size_t position) const {
  auto it = class_index_.find({predicate, position});
  if (it == class_index_.end()) {
    throw std::out_of_range("no argument position " + predicate + "/" + std::to_string(position));
  }
  return it->second;
}

DomainMap collect_constants(const Theory& theory, const FactSet& facts, std::span<const AtomKey> extra) {
  std::vector<std::pair<std::string, std::size_t>> slots;
  std::map<std::pair<std::string, std::size_t>, std::size_t> slot_index;
  for (const auto& [name, info] : theory.predicates) {
    for (std::size_t p = 0; p < info.arity; ++p) {
      slot_index.emplace(std::pair{name, p}, slots.size());
      slots.emplace_back(name, p);
    }
  }
  std::vector<std::size_t> parent(slots.size());
  std::iota(parent.begin(), parent.end(), 0);
  std::function<std::size_t(std::size_t)> root = [&](std::size_t x) {
    while (parent[x] != x) x = parent[x] = parent[parent[x]];
    return x;
  };
  auto unite = [&](std::size_t a, std::size_t b) {
    a = root(a);
    b = root(b);
    if (a != b) parent[std::max(a, b)] = std::min(a, b);
  };
  auto slot_of = [&](const std::string& pred, std::size_t pos) -> std::size_t {
    auto it = slot_index.find({pred, pos});
    if (it == slot_index.end()) {
      throw GroundingError("predicate " + pred + " is not declared with arity > " + std::to_string(pos));
    }
    return it->second;
  };

  auto link_atoms = [&](const std::vector<const Atom*>& atoms) {
    std::map<std::string, std::size_t> first;
    for (const Atom* a : atoms) {
      for (std::size_t p = 0; p < a->args.size(); ++p) {
        if (!a->args[p].is_variable()) continue;
        const std::size_t s = slot_of(a->predicate, p);
        auto [it, fresh] = first.emplace(a->args[p].name, s);
        if (!fresh) unite(it->second, s);
      }
    }
  };
  for (const Rule& r : theory.rules) {
    std::vector<const Atom*> atoms;
    for (const auto& a : r.premise) atoms.push_back(&a);
    atoms.push_back(&r.conclusion);
    link_atoms(atoms);
  }
  std::vector<Atom> constraint_atoms;
  for (const auto& c : theory.constraints) constraint_atoms.push_back(Atom{c.predicate, c.args});
  for (const auto& a : constraint_atoms) link_atoms({&a});

  DomainMap dm;
  std::map<std::size_t, std::size_t> compact;
  for (std::size_t s = 0; s < slots.size(); ++s) {
    auto [it, fresh] = compact.emplace(root(s), dm.domains_.size());
    if (fresh) dm.domains_.emplace_back();
    dm.class_index_.emplace(slots[s], it->second);
  }

  auto add_key = [&](const AtomKey& key, const char* what) {
    auto it = theory.predicates.find(key.predicate);
    if (it == theory.predicates.end()) {
      throw GroundingError(std::string(what) + " " + format_key(key) + " uses undeclared predicate " +
                           key.predicate);
    }
    if (it->second.arity != key.constants.size()) {
      throw GroundingError(std::string(what) + " " + format_key(key) + " has arity " +
                           std::to_string(key.constants.size()) + ", expected " +
                           std::to_string(it->second.arity));
    }
    for (std::size_t p = 0; p < key.constants.size(); ++p) {
      dm.domains_[dm.class_index_.at({key.predicate, p})].insert(key.constants[p]);
    }
  };
  for (const auto& f : facts.entries()) add_key(f.atom, "fact");
  for (const auto& k : extra) add_key(k, "query atom");

  auto add_rule_constants = [&](const Atom& a) {
    for (std::size_t p = 0; p < a.args.size(); ++p) {
      if (!a.args[p].is_variable()) dm.domains_[dm.class_index_.at({a.predicate, p})].insert(a.args[p].name);
    }
  };
  for (const Rule& r : theory.rules) {
    for (const auto& a : r.premise) add_rule_constants(a);
    add_rule_constants(r.conclusion);
  }
  for (const auto& a : constraint_atoms) add_rule_constants(a);
  return dm;
}

AtomKey ground_atom(const Atom& atom, const Substitution& sigma) {
  AtomKey key{atom.predicate, {}};
  key.constants.reserve(atom.args.size());
  for (const auto& t : atom.args) {
    if (!t.is_variable()) {
      key.constants.push_back(t.name);
      continue;
    }
    auto it = sigma.mapping.find(t.name);
    if (it == sigma.mapping.end()) {
      throw GroundingError("substitution does not bind variable " + t.name + " in " + logic::format_atom(atom));
    }
    key.constants.push_back(it->second);
  }
  return key;
}

GroundRule apply_substitution(const Rule& rule, std::size_t rule_index, const Substitution& sigma,
                              AtomTable& table) {
  GroundRule g;
  g.rule_index = rule_index;
  for (const auto& a : rule.premise) g.premise.push_back(table.get_or_insert(ground_atom(a, sigma)));
  g.conclusion = table.get_or_insert(ground_atom(rule.conclusion, sigma));
  return g;
}

namespace {

struct AtomStatus {
  bool observed;
  double value;
};

class Grounder {
 public:
  Grounder(const Theory& theory, const DomainMap& domains, const FactSet& facts, const GroundingOptions& options)
      : theory_(theory), domains_(domains), facts_(facts), options_(options),
        query_(options.query.begin(), options.query.end()) {}

  GroundFactorGraph run() {
    for (const auto& f : facts_.entries()) intern(f.atom);
    for (const auto& q : options_.query) intern(q);
    graph_.groundings_per_rule.assign(theory_.rules.size(), 0);
    for (std::size_t i = 0; i < theory_.rules.size(); ++i) ground_rule(i);
    for (std::size_t i = 0; i < theory_.constraints.size(); ++i) ground_constraint(i);
    return std::move(graph_);
  }

 private:
  AtomStatus status(const AtomKey& key) const {
    if (query_.count(key)) return {false, 0.0};
    if (auto v = facts_.find(key)) return {true, *v};
    auto it = theory_.predicates.find(key.predicate);
    if (it != theory_.predicates.end() && it->second.closed) return {true, 0.0};
    return {false, 0.0};
  }

  bool unknown(const AtomKey& key) const {
    if (query_.count(key) || facts_.contains(key)) return false;
    auto it = theory_.predicates.find(key.predicate);
    return it != theory_.predicates.end() && it->second.closed;
  }

  AtomId intern(const AtomKey& key) {
    const std::size_t before = graph_.atoms.size();
    const AtomId id = graph_.atoms.get_or_insert(key);
    if (graph_.atoms.size() != before) {
      const AtomStatus s = status(key);
      graph_.atoms[id].observed = s.observed;
      graph_.atoms[id].value = s.value;
    }
    return id;
  }

  // Closed-predicate premise atoms first so that pruning cuts early.
  std::vector<std::size_t> premise_order(const Rule& r) const {
    std::vector<std::size_t> order(r.premise.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      auto closed = [&](std::size_t i) {
        auto it = theory_.predicates.find(r.premise[i].predicate);
        return it != theory_.predicates.end() && it->second.closed;
      };
      return closed(a) && !closed(b);
    });
    return order;
  }

  void ground_rule(std::size_t index) {
    const Rule& rule = theory_.rules[index];
    const auto order = premise_order(rule);

    // Variables in binding order, with each variable's domain.
    std::vector<std::string> vars;
    std::vector<const std::set<std::string>*> var_domain;
    // checks_at[k]: premise atoms that become ground once variable k-1 is bound
    // (checks_at[0] holds variable-free atoms).
    std::vector<std::vector<std::size_t>> checks_at(1);
    for (std::size_t pi : order) {
      const Atom& a = rule.premise[pi];
      for (std::size_t p = 0; p < a.args.size(); ++p) {
        const auto& t = a.args[p];
        if (t.is_variable() && std::find(vars.begin(), vars.end(), t.name) == vars.end()) {
          vars.push_back(t.name);
          var_domain.push_back(&domains_.domain(a.predicate, p));
          checks_at.emplace_back();
        }
      }
      checks_at[vars.size()].push_back(pi);
    }
    for (const auto& t : rule.conclusion.args) {
      if (t.is_variable() && std::find(vars.begin(), vars.end(), t.name) == vars.end()) {
        throw GroundingError("rule " + std::to_string(index) + " (" + logic::format_rule(rule) +
                             ") is unsafe: variable " + t.name + " does not occur in the premise");
      }
    }

    Substitution sigma;
    std::vector<AtomKey> premise_keys(rule.premise.size());
    std::set<std::pair<std::vector<AtomId>, AtomId>> seen;

    auto atoms_ok = [&](std::size_t level) {
      for (std::size_t pi : checks_at[level]) {
        premise_keys[pi] = ground_atom(rule.premise[pi], sigma);
        if (options_.drop_trivially_satisfied) {
          const AtomStatus s = status(premise_keys[pi]);
          if (s.observed && s.value == 0.0) return false;
        }
      }
      return true;
    };

    auto emit = [&]() {
      AtomKey head = ground_atom(rule.conclusion, sigma);
      for (const auto& k : premise_keys) {
        if (k == head) return;
      }
      if (options_.drop_unknown_conclusions && unknown(head)) return;
      if (options_.drop_fully_observed) {
        bool all = status(head).observed;
        for (std::size_t i = 0; all && i < premise_keys.size(); ++i) all = status(premise_keys[i]).observed;
        if (all) return;
      }
      GroundRule g;
      g.rule_index = index;
      for (const auto& k : premise_keys) g.premise.push_back(intern(k));
      g.conclusion = intern(head);
      if (!seen.emplace(g.premise, g.conclusion).second) return;
      if (graph_.ground_rules.size() >= options_.max_ground_rules) {
        throw GroundingError("grounding exceeds the cap of " + std::to_string(options_.max_ground_rules) +
                             " ground rules while instantiating rule " + std::to_string(index) + " (" +
                             logic::format_rule(rule) + ")");
      }
      graph_.ground_rules.push_back(std::move(g));
      ++graph_.groundings_per_rule[index];
    };

    std::function<void(std::size_t)> descend = [&](std::size_t k) {
      if (k == vars.size()) {
        emit();
        return;
      }
      for (const auto& c : *var_domain[k]) {
        sigma.mapping[vars[k]] = c;
        if (atoms_ok(k + 1)) descend(k + 1);
      }
      sigma.mapping.erase(vars[k]);
    };
    if (atoms_ok(0)) descend(0);
  }

  void ground_constraint(std::size_t index) {
    const logic::SumConstraint& c = theory_.constraints[index];
    std::vector<std::string> vars;
    std::vector<const std::set<std::string>*> var_domain;
    for (std::size_t p = 0; p < c.args.size(); ++p) {
      if (p == c.summed_position || !c.args[p].is_variable()) continue;
      if (std::find(vars.begin(), vars.end(), c.args[p].name) != vars.end()) continue;
      vars.push_back(c.args[p].name);
      var_domain.push_back(&domains_.domain(c.predicate, p));
    }
    const auto& summed = domains_.domain(c.predicate, c.summed_position);
    const std::string& summed_var = c.args[c.summed_position].name;
    const Atom pattern{c.predicate, c.args};

    Substitution sigma;
    std::function<void(std::size_t)> descend = [&](std::size_t k) {
      if (k == vars.size()) {
        ConstraintGroup group{index, {}, c.target};
        bool any_free = false;
        for (const auto& value : summed) {
          sigma.mapping[summed_var] = value;
          const AtomId id = intern(ground_atom(pattern, sigma));
          any_free = any_free || !graph_.atoms[id].observed;
          group.atoms.push_back(id);
        }
        sigma.mapping.erase(summed_var);
        if (any_free) graph_.constraint_groups.push_back(std::move(group));
        return;
      }
      for (const auto& v : *var_domain[k]) {
        sigma.mapping[vars[k]] = v;
        descend(k + 1);
      }
      sigma.mapping.erase(vars[k]);
    };
    descend(0);
  }

  const Theory& theory_;
  const DomainMap& domains_;
  const FactSet& facts_;
  const GroundingOptions& options_;
  std::set<AtomKey> query_;
  GroundFactorGraph graph_;
};

}  // namespace

GroundFactorGraph ground_theory(const Theory& theory, const DomainMap& domains, const FactSet& facts,
                                const GroundingOptions& options) {
  return Grounder(theory, domains, facts, options).run();
}

}  // namespace concordia::grounding
