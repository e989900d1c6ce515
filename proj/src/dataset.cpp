#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <stdexcept>

#include "concordia/harness.hpp"

namespace concordia::harness {

namespace {

std::vector<std::string> split_on(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string field;
  std::stringstream ss(s);
  while (std::getline(ss, field, sep)) out.push_back(field);
  if (!s.empty() && s.back() == sep) out.emplace_back();
  return out;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> list_of(const std::string& s) {
  std::vector<std::string> out;
  if (trim(s).empty()) return out;
  for (auto& item : split_on(s, ',')) out.push_back(trim(item));
  return out;
}

std::optional<double> number(const std::string& s) {
  if (s.empty()) return std::nullopt;
  std::size_t used = 0;
  try {
    const double v = std::stod(s, &used);
    if (used == s.size()) return v;
  } catch (const std::exception&) {
  }
  return std::nullopt;
}

double require_number(const std::string& s, const std::string& what) {
  auto v = number(trim(s));
  if (!v) throw std::invalid_argument("expected a number for " + what + ", got '" + s + "'");
  return *v;
}

bool parse_bool(const std::string& s, const std::string& what) {
  if (s == "true" || s == "on" || s == "1") return true;
  if (s == "false" || s == "off" || s == "0") return false;
  throw std::invalid_argument("expected true/false for " + what + ", got '" + s + "'");
}

std::string join(const std::vector<std::string>& items, const std::string& sep = ",") {
  std::string out;
  for (std::size_t i = 0; i < items.size(); ++i) out += (i ? sep : "") + items[i];
  return out;
}

}  // namespace

std::size_t Dataset::count(const std::string& split) const {
  return static_cast<std::size_t>(std::count_if(data.begin(), data.end(), [&](const Datum& r) { return r.split == split; }));
}

Dataset read_dataset(std::istream& data, std::istream& facts, const std::string& data_name,
                     const std::string& facts_name) {
  Dataset d;
  std::string line;
  std::size_t line_no = 0;
  auto fail = [&](const std::string& msg) {
    throw std::runtime_error(data_name + ":" + std::to_string(line_no) + ": " + msg);
  };
  std::vector<std::string> header;
  while (std::getline(data, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    header = split_on(line, '\t');
    break;
  }
  static const std::vector<std::string> fixed = {"id", "split", "group", "anchor", "label"};
  if (header.size() < fixed.size() || !std::equal(fixed.begin(), fixed.end(), header.begin())) {
    fail("header must start with id, split, group, anchor, label");
  }
  d.feature_names.assign(header.begin() + 5, header.end());
  std::set<std::string> ids;
  while (std::getline(data, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    auto fields = split_on(line, '\t');
    if (fields.size() != header.size()) {
      fail("expected " + std::to_string(header.size()) + " fields, got " + std::to_string(fields.size()));
    }
    Datum r;
    r.id = fields[0];
    if (r.id.empty()) fail("empty id");
    if (!ids.insert(r.id).second) fail("duplicate id '" + r.id + "'");
    r.split = fields[1];
    if (r.split != "train" && r.split != "test" && r.split != "unlabeled") {
      fail("split must be train, test or unlabeled, got '" + r.split + "'");
    }
    r.group = fields[2] == "-" || fields[2].empty() ? r.id : fields[2];
    r.anchor = split_on(fields[3], ',');
    if (fields[3].empty() || std::any_of(r.anchor.begin(), r.anchor.end(), [](const auto& c) { return c.empty(); })) {
      fail("bad anchor '" + fields[3] + "'");
    }
    if (fields[4] != "?" && !fields[4].empty()) r.label = fields[4];
    if (r.split == "train" && !r.label) fail("training row '" + r.id + "' has no label");
    for (std::size_t k = 5; k < fields.size(); ++k) {
      auto v = number(fields[k]);
      if (!v) fail("feature " + header[k] + " is not a number: '" + fields[k] + "'");
      r.features.push_back(*v);
    }
    d.data.push_back(std::move(r));
  }
  auto scoped = grounding::read_scoped_facts(facts, facts_name);
  d.facts = std::move(scoped.global);
  d.group_facts = std::move(scoped.scoped);
  return d;
}

Dataset load_dataset(const std::string& data_path, const std::string& facts_path, const std::string& config_path) {
  std::ifstream data(data_path);
  if (!data) throw std::runtime_error("cannot open data file " + data_path);
  std::ifstream facts;
  std::istringstream no_facts;
  std::istream* facts_in = &no_facts;
  if (!facts_path.empty()) {
    facts.open(facts_path);
    if (!facts) throw std::runtime_error("cannot open facts file " + facts_path);
    facts_in = &facts;
  }
  Dataset d = read_dataset(data, *facts_in, data_path, facts_path.empty() ? "<no facts>" : facts_path);
  if (!config_path.empty()) {
    const auto cfg = load_config(config_path);
    if (!cfg.mapping) throw std::runtime_error(config_path + ": no [mapping] section");
    const auto mapping = MappingConfig::from_ptree(*cfg.mapping);
    std::optional<logic::Theory> theory;
    if (!cfg.rules_path.empty()) theory = logic::load_theory(cfg.rules_path);
    for (const auto& r : d.data) {
      if (!r.label) continue;
      try {
        if (mapping.task == neural::Task::classification) {
          mapping.class_index(*r.label);
        } else {
          mapping.label_value(*r.label);
        }
      } catch (const std::exception& e) {
        throw std::runtime_error(data_path + ": row " + r.id + ": " + e.what());
      }
    }
    if (theory) validate_mapping(mapping, *theory, d);
  }
  return d;
}

void write_data(std::ostream& out, const Dataset& d) {
  out << "id\tsplit\tgroup\tanchor\tlabel";
  for (const auto& f : d.feature_names) out << '\t' << f;
  out << '\n';
  for (const auto& r : d.data) {
    out << r.id << '\t' << r.split << '\t' << (r.group == r.id ? "-" : r.group) << '\t' << join(r.anchor) << '\t'
        << (r.label ? *r.label : "?");
    for (double v : r.features) out << '\t' << logic::format_number(v);
    out << '\n';
  }
}

void write_facts(std::ostream& out, const Dataset& d) {
  grounding::write_facts(out, d.facts);
  for (const auto& [group, facts] : d.group_facts) {
    std::ostringstream body;
    grounding::write_facts(body, facts);
    std::istringstream lines(body.str());
    std::string line;
    while (std::getline(lines, line)) out << '@' << group << '\t' << line << '\n';
  }
}

// ---------------------------------------------------------------- templates

AtomTemplate AtomTemplate::parse(const std::string& text) {
  const auto s = trim(text);
  const auto open = s.find('(');
  if (open == std::string::npos || s.back() != ')') {
    throw std::invalid_argument("atom template must look like Pred(@0, *): '" + text + "'");
  }
  AtomTemplate t;
  t.predicate = trim(s.substr(0, open));
  if (t.predicate.empty()) throw std::invalid_argument("atom template without predicate: '" + text + "'");
  for (auto& a : split_on(s.substr(open + 1, s.size() - open - 2), ',')) {
    a = trim(a);
    if (a.empty()) throw std::invalid_argument("empty argument in atom template '" + text + "'");
    if (a[0] == '@' && !number(a.substr(1))) throw std::invalid_argument("bad anchor slot '" + a + "'");
    t.args.push_back(a);
  }
  return t;
}

std::string AtomTemplate::str() const { return predicate + "(" + join(args, ", ") + ")"; }

bool AtomTemplate::has_class_slot() const { return std::find(args.begin(), args.end(), "*") != args.end(); }

grounding::AtomKey AtomTemplate::instantiate(const std::vector<std::string>& anchor, const std::string& cls) const {
  grounding::AtomKey key{predicate, {}};
  for (const auto& a : args) {
    if (a == "*") {
      key.constants.push_back(cls);
    } else if (a[0] == '@') {
      const auto k = static_cast<std::size_t>(std::stoul(a.substr(1)));
      if (k >= anchor.size()) {
        throw std::invalid_argument("template " + str() + " needs anchor slot " + a + " but the row has " +
                                    std::to_string(anchor.size()) + " anchor constants");
      }
      key.constants.push_back(anchor[k]);
    } else {
      key.constants.push_back(a);
    }
  }
  return key;
}

// ---------------------------------------------------------------- mapping

MappingConfig MappingConfig::from_ptree(const ptree& section) {
  MappingConfig m;
  bool have_target = false;
  for (const auto& [key, node] : section) {
    const auto value = trim(node.data());
    if (key == "task") {
      if (value == "classification") {
        m.task = neural::Task::classification;
      } else if (value == "regression") {
        m.task = neural::Task::regression;
      } else {
        throw std::invalid_argument("mapping.task must be classification or regression");
      }
    } else if (key == "target") {
      m.target = AtomTemplate::parse(value);
      have_target = true;
    } else if (key == "classes") {
      m.classes = list_of(value);
    } else if (key == "range") {
      const auto parts = split_on(value, ':');
      if (parts.size() != 2) throw std::invalid_argument("mapping.range must be lo:hi");
      m.lo = require_number(parts[0], "mapping.range");
      m.hi = require_number(parts[1], "mapping.range");
    } else if (key == "neural_atom") {
      if (!value.empty()) m.neural_atom = AtomTemplate::parse(value);
    } else if (key == "features") {
      for (const auto& item : list_of(value)) {
        const auto parts = split_on(item, ':');
        if (parts.size() != 3) throw std::invalid_argument("feature spec must be name:lo:hi, got '" + item + "'");
        FeatureSpec f{parts[0], require_number(parts[1], item), require_number(parts[2], item)};
        if (!(f.hi > f.lo)) throw std::invalid_argument("feature range needs lo < hi in '" + item + "'");
        m.features.push_back(f);
      }
    } else if (key == "onehot") {
      for (const auto& item : list_of(value)) m.onehot.push_back(static_cast<std::size_t>(require_number(item, key)));
    } else if (key.rfind("vocab_", 0) == 0) {
      m.vocab[static_cast<std::size_t>(require_number(key.substr(6), key))] = list_of(value);
    } else if (key == "observe_training_labels") {
      m.observe_training_labels = parse_bool(value, key);
    } else if (key == "mean_atoms") {
      for (const auto& item : list_of(value)) {
        const auto parts = split_on(item, ':');
        if (parts.size() != 2) throw std::invalid_argument("mean atom must be Pred:position, got '" + item + "'");
        m.mean_atoms.push_back({parts[0], static_cast<std::size_t>(require_number(parts[1], item))});
      }
    } else {
      throw std::invalid_argument("unknown key mapping." + key);
    }
  }
  if (!have_target) throw std::invalid_argument("mapping.target is required");
  if (m.task == neural::Task::classification) {
    if (m.classes.size() < 2) throw std::invalid_argument("classification mapping needs at least two classes");
    if (!m.target.has_class_slot()) throw std::invalid_argument("classification target needs a * slot");
  } else {
    if (m.target.has_class_slot()) throw std::invalid_argument("regression target cannot have a * slot");
    if (!(m.hi > m.lo)) throw std::invalid_argument("mapping.range needs lo < hi");
    if (!m.mean_atoms.empty() && m.classes.size()) throw std::invalid_argument("regression mapping takes no classes");
  }
  if (m.task == neural::Task::classification && !m.mean_atoms.empty()) {
    throw std::invalid_argument("mean atoms need a regression task");
  }
  if (m.neural_atom && m.neural_atom->has_class_slot() != (m.task == neural::Task::classification)) {
    throw std::invalid_argument("neural atom needs a * slot exactly when the task is classification");
  }
  return m;
}

ptree MappingConfig::to_ptree() const {
  ptree p;
  p.put("task", task == neural::Task::regression ? "regression" : "classification");
  p.put("target", target.str());
  if (task == neural::Task::classification) {
    p.put("classes", join(classes));
  } else {
    p.put("range", logic::format_number(lo) + ":" + logic::format_number(hi));
  }
  if (neural_atom) p.put("neural_atom", neural_atom->str());
  if (!features.empty()) {
    std::vector<std::string> items;
    for (const auto& f : features) {
      items.push_back(f.name + ":" + logic::format_number(f.lo) + ":" + logic::format_number(f.hi));
    }
    p.put("features", join(items));
  }
  if (!onehot.empty()) {
    std::vector<std::string> items;
    for (auto k : onehot) items.push_back(std::to_string(k));
    p.put("onehot", join(items));
  }
  for (const auto& [k, words] : vocab) p.put("vocab_" + std::to_string(k), join(words));
  p.put("observe_training_labels", observe_training_labels ? "true" : "false");
  if (!mean_atoms.empty()) {
    std::vector<std::string> items;
    for (const auto& a : mean_atoms) items.push_back(a.predicate + ":" + std::to_string(a.position));
    p.put("mean_atoms", join(items));
  }
  return p;
}

std::size_t MappingConfig::class_index(const std::string& label) const {
  auto it = std::find(classes.begin(), classes.end(), label);
  if (it == classes.end()) throw std::invalid_argument("unknown class '" + label + "'");
  return static_cast<std::size_t>(it - classes.begin());
}

double MappingConfig::label_value(const std::string& label) const {
  const double v = require_number(label, "regression label");
  if (v < lo || v > hi) {
    throw std::invalid_argument("label " + label + " outside [" + logic::format_number(lo) + ", " +
                                logic::format_number(hi) + "]");
  }
  return fusion::scale_regression(v, lo, hi);
}

void validate_mapping(const MappingConfig& m, const logic::Theory& theory, const Dataset& d) {
  auto check_pred = [&](const std::string& pred, std::size_t arity, const std::string& role) {
    auto it = theory.predicates.find(pred);
    if (it == theory.predicates.end()) {
      throw std::invalid_argument(role + " predicate " + pred + " is not declared by the theory");
    }
    if (it->second.arity != arity) {
      throw std::invalid_argument(role + " predicate " + pred + " has arity " + std::to_string(it->second.arity) +
                                  " in the theory, " + std::to_string(arity) + " in the mapping");
    }
  };
  check_pred(m.target.predicate, m.target.args.size(), "target");
  if (m.neural_atom) check_pred(m.neural_atom->predicate, m.neural_atom->args.size(), "neural");
  for (const auto& a : m.mean_atoms) {
    if (!d.data.empty()) check_pred(a.predicate, d.data.front().anchor.size(), "mean");
  }
  for (const auto& f : m.features) {
    if (std::find(d.feature_names.begin(), d.feature_names.end(), f.name) == d.feature_names.end()) {
      throw std::invalid_argument("feature column " + f.name + " is not in the data");
    }
  }
  for (const auto& r : d.data) {
    for (auto k : m.onehot) {
      if (k >= r.anchor.size()) throw std::invalid_argument("one-hot slot " + std::to_string(k) + " missing in row " + r.id);
    }
    for (const auto& a : m.mean_atoms) {
      if (a.position >= r.anchor.size()) throw std::invalid_argument("mean atom slot missing in row " + r.id);
    }
  }
}

std::vector<double> feature_vector(const Datum& row, const Dataset& d, const MappingConfig& m) {
  std::vector<double> out;
  if (m.features.empty()) {
    out = row.features;
  } else {
    for (const auto& f : m.features) {
      const auto it = std::find(d.feature_names.begin(), d.feature_names.end(), f.name);
      if (it == d.feature_names.end()) throw std::invalid_argument("feature column " + f.name + " is not in the data");
      out.push_back((row.features[static_cast<std::size_t>(it - d.feature_names.begin())] - f.lo) / (f.hi - f.lo));
    }
  }
  for (auto k : m.onehot) {
    const auto& words = m.vocab.at(k);
    const auto it = std::lower_bound(words.begin(), words.end(), row.anchor.at(k));
    for (std::size_t j = 0; j < words.size(); ++j) {
      out.push_back(it != words.end() && *it == row.anchor[k] && static_cast<std::size_t>(it - words.begin()) == j);
    }
  }
  return out;
}

std::vector<std::size_t> subsample(const Dataset& d, const MappingConfig& m, double fraction, std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction <= 1.0)) throw std::invalid_argument("fraction must be in (0, 1]");
  std::map<std::string, std::vector<std::size_t>> strata;
  for (std::size_t i = 0; i < d.data.size(); ++i) {
    const auto& r = d.data[i];
    if (r.split != "train" || !r.label) continue;
    std::string key = *r.label;
    if (m.task == neural::Task::regression) key = std::to_string(std::llround(require_number(*r.label, "label")));
    strata[key].push_back(i);
  }
  std::vector<std::size_t> kept;
  std::mt19937_64 rng(seed);
  for (auto& [key, rows] : strata) {
    if (fraction >= 1.0) {
      kept.insert(kept.end(), rows.begin(), rows.end());
      continue;
    }
    std::shuffle(rows.begin(), rows.end(), rng);
    auto take = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(rows.size())));
    take = std::clamp<std::size_t>(take, 1, rows.size());
    kept.insert(kept.end(), rows.begin(), rows.begin() + static_cast<std::ptrdiff_t>(take));
  }
  std::sort(kept.begin(), kept.end());
  return kept;
}

Compiled compile(const Dataset& d, MappingConfig& mapping, const logic::Theory& theory, const CompileOptions& opt) {
  const bool regression = mapping.task == neural::Task::regression;
  for (auto k : mapping.onehot) {
    if (mapping.vocab.count(k)) continue;
    std::set<std::string> words;
    for (const auto& r : d.data) words.insert(r.anchor.at(k));
    mapping.vocab[k].assign(words.begin(), words.end());
  }
  if (opt.use_logic) validate_mapping(mapping, theory, d);
  if (opt.priors && !mapping.neural_atom) throw std::invalid_argument("priors are on but the mapping has no neural_atom");

  // Roles: 1 labeled, 2 unlabeled, 3 test, 0 unused.
  std::vector<int> role(d.data.size(), 0);
  const auto kept = subsample(d, mapping, opt.fraction, opt.seed);
  std::vector<bool> is_kept(d.data.size(), false);
  for (auto i : kept) is_kept[i] = true;
  for (std::size_t i = 0; i < d.data.size(); ++i) {
    const auto& r = d.data[i];
    if (r.split == "test") {
      role[i] = 3;
    } else if (r.split == "train") {
      if (opt.mode == fusion::Mode::unsupervised) {
        role[i] = 2;
      } else if (is_kept[i]) {
        role[i] = 1;
      } else if (opt.mode == fusion::Mode::semi) {
        role[i] = 2;
      }
    } else if (opt.mode != fusion::Mode::supervised) {
      role[i] = 2;
    }
  }

  auto label_vector = [&](const Datum& r) {
    if (regression) return std::vector<double>{mapping.label_value(*r.label)};
    std::vector<double> v(mapping.classes.size(), 0.0);
    v[mapping.class_index(*r.label)] = 1.0;
    return v;
  };
  auto targets_of = [&](const Datum& r) {
    std::vector<grounding::AtomKey> keys;
    if (regression) {
      keys.push_back(mapping.target.instantiate(r.anchor));
    } else {
      for (const auto& c : mapping.classes) keys.push_back(mapping.target.instantiate(r.anchor, c));
    }
    return keys;
  };
  auto neural_of = [&](const Datum& r) {
    std::vector<grounding::AtomKey> keys;
    if (!mapping.neural_atom) return keys;
    if (regression) {
      keys.push_back(mapping.neural_atom->instantiate(r.anchor));
    } else {
      for (const auto& c : mapping.classes) keys.push_back(mapping.neural_atom->instantiate(r.anchor, c));
    }
    return keys;
  };

  Compiled out;
  std::vector<std::vector<double>> features(d.data.size());
  for (std::size_t i = 0; i < d.data.size(); ++i) {
    if (role[i]) features[i] = feature_vector(d.data[i], d, mapping);
  }
  for (std::size_t i = 0; i < d.data.size(); ++i) {
    if (role[i]) {
      out.feature_width = features[i].size();
      break;
    }
  }

  auto place = [&](std::size_t i, fusion::Example x) {
    if (d.data[i].label && role[i] == 1) x.label = label_vector(d.data[i]);
    switch (role[i]) {
      case 1:
        out.labeled.push_back(std::move(x));
        out.labeled_rows.push_back(i);
        break;
      case 2:
        out.unlabeled.push_back(std::move(x));
        out.unlabeled_rows.push_back(i);
        break;
      case 3:
        out.test.push_back(std::move(x));
        out.test_rows.push_back(i);
        break;
      default:
        break;
    }
  };

  if (!opt.use_logic) {
    auto empty = std::make_shared<const grounding::GroundFactorGraph>();
    for (std::size_t i = 0; i < d.data.size(); ++i) {
      if (!role[i]) continue;
      fusion::Example x;
      x.id = d.data[i].id;
      x.features = features[i];
      x.graph = empty;
      place(i, std::move(x));
    }
    return out;
  }

  // Facts shared by every group: the data's own plus label and mean atoms.
  grounding::FactSet shared = d.facts;
  if (mapping.observe_training_labels) {
    for (std::size_t i = 0; i < d.data.size(); ++i) {
      if (role[i] != 1) continue;
      const auto keys = targets_of(d.data[i]);
      const auto y = label_vector(d.data[i]);
      for (std::size_t k = 0; k < keys.size(); ++k) shared.set(keys[k], y[k]);
    }
  }
  for (const auto& mean : mapping.mean_atoms) {
    std::map<std::string, std::pair<double, std::size_t>> sums;
    double total = 0.0;
    std::size_t count = 0;
    for (std::size_t i = 0; i < d.data.size(); ++i) {
      if (role[i] != 1) continue;
      const double y = mapping.label_value(*d.data[i].label);
      auto& s = sums[d.data[i].anchor.at(mean.position)];
      s.first += y;
      ++s.second;
      total += y;
      ++count;
    }
    const double fallback = count ? total / static_cast<double>(count) : 0.5;
    for (std::size_t i = 0; i < d.data.size(); ++i) {
      if (!role[i]) continue;
      const auto& r = d.data[i];
      double sum = 0.0;
      std::size_t n = 0;
      if (auto it = sums.find(r.anchor.at(mean.position)); it != sums.end()) {
        sum = it->second.first;
        n = it->second.second;
      }
      if (role[i] == 1) {
        sum -= mapping.label_value(*r.label);
        --n;
      }
      const double v = n ? sum / static_cast<double>(n) : fallback;
      shared.set(grounding::AtomKey{mean.predicate, r.anchor}, std::clamp(v, 0.0, 1.0));
    }
  }

  std::map<std::string, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < d.data.size(); ++i) {
    if (role[i]) groups[d.data[i].group].push_back(i);
  }

  grounding::GroundingOptions gopt;
  gopt.drop_trivially_satisfied = true;
  gopt.drop_fully_observed = true;
  gopt.drop_unknown_conclusions = true;

  // Groups without facts of their own share one constant domain.
  std::optional<grounding::DomainMap> shared_domain;
  auto shared_domains = [&]() -> const grounding::DomainMap& {
    if (!shared_domain) {
      std::vector<grounding::AtomKey> all;
      for (const auto& [g, members] : groups) {
        for (auto i : members) {
          auto t = targets_of(d.data[i]);
          all.insert(all.end(), t.begin(), t.end());
        }
      }
      shared_domain = grounding::collect_constants(theory, shared, all);
    }
    return *shared_domain;
  };

  // Rows are emitted in dataset order, whatever the group order.
  std::vector<std::optional<fusion::Example>> built(d.data.size());
  for (const auto& [g, members] : groups) {
    std::vector<grounding::AtomKey> query;
    for (auto i : members) {
      auto t = targets_of(d.data[i]);
      query.insert(query.end(), t.begin(), t.end());
    }
    gopt.query = query;
    const auto scoped = d.group_facts.find(g);
    const bool own_facts = scoped != d.group_facts.end() || opt.priors;
    std::shared_ptr<const grounding::GroundFactorGraph> graph;
    if (own_facts) {
      grounding::FactSet facts = shared;
      if (scoped != d.group_facts.end()) {
        for (const auto& f : scoped->second.entries()) facts.set(f.atom, f.value);
      }
      if (opt.priors) {
        for (auto i : members) {
          for (const auto& k : neural_of(d.data[i])) facts.set(k, 0.5);
        }
      }
      const auto domains = grounding::collect_constants(theory, facts, query);
      graph = std::make_shared<const grounding::GroundFactorGraph>(grounding::ground_theory(theory, domains, facts, gopt));
    } else {
      graph = std::make_shared<const grounding::GroundFactorGraph>(
          grounding::ground_theory(theory, shared_domains(), shared, gopt));
    }
    out.ground_rules += graph->ground_rules.size();
    out.ground_atoms += graph->atoms.size();

    auto ids = [&](const std::vector<grounding::AtomKey>& keys) {
      std::vector<grounding::AtomId> v;
      for (const auto& k : keys) {
        auto id = graph->atoms.find(k);
        if (!id) throw std::logic_error("atom " + grounding::format_key(k) + " missing from its group graph");
        v.push_back(*id);
      }
      return v;
    };
    const auto base = hlmrf::observed_assignment(*graph);
    auto clamped = base;
    for (auto i : members) {
      if (role[i] != 1) continue;
      const auto y = label_vector(d.data[i]);
      const auto t = ids(targets_of(d.data[i]));
      for (std::size_t k = 0; k < t.size(); ++k) clamped[t[k]] = y[k];
    }
    std::vector<fusion::PriorSlot> slots;
    if (opt.priors) {
      for (auto i : members) slots.push_back({features[i], {ids(neural_of(d.data[i]))}});
    }
    for (std::size_t mi = 0; mi < members.size(); ++mi) {
      const auto i = members[mi];
      fusion::Example x;
      x.id = d.data[i].id;
      x.features = features[i];
      x.graph = graph;
      x.observed = base;
      x.clamped = clamped;
      x.heads.push_back({ids(targets_of(d.data[i])), regression});
      if (opt.priors) {
        x.priors.push_back(slots[mi]);
        for (std::size_t mj = 0; mj < members.size(); ++mj) {
          if (mj != mi) x.priors.push_back(slots[mj]);
        }
      }
      built[i] = std::move(x);
    }
  }
  for (std::size_t i = 0; i < d.data.size(); ++i) {
    if (built[i]) place(i, std::move(*built[i]));
  }
  return out;
}

}  // namespace concordia::harness
