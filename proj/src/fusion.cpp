#include "concordia/fusion.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numeric>
#include <optional>
#include <random>
#include <sstream>
#include <stdexcept>

#include <boost/property_tree/ini_parser.hpp>

namespace concordia::fusion {

namespace {

constexpr double kappa_floor = 1e-15;
constexpr double mixture_floor = 1e-12;

std::vector<std::vector<double>> split_heads(const neural::Mlp& net, const std::vector<double>& flat) {
  std::vector<std::vector<double>> out;
  std::size_t start = 0;
  for (std::size_t h : net.heads()) {
    out.emplace_back(flat.begin() + static_cast<std::ptrdiff_t>(start),
                     flat.begin() + static_cast<std::ptrdiff_t>(start + h));
    start += h;
  }
  return out;
}

std::vector<double> concat(const std::vector<std::vector<double>>& blocks) {
  std::vector<double> out;
  for (const auto& b : blocks) out.insert(out.end(), b.begin(), b.end());
  return out;
}

void check_example(const ConcordiaModel& m, const Example& x) {
  if (!x.graph) throw std::invalid_argument("example " + x.id + " has no ground graph");
  if (x.observed.size() != x.graph->atoms.size()) {
    throw std::invalid_argument("example " + x.id + ": observation vector does not match the graph");
  }
  if (x.heads.size() != m.head_count()) {
    throw std::invalid_argument("example " + x.id + " has " + std::to_string(x.heads.size()) +
                                " target heads, model has " + std::to_string(m.head_count()));
  }
}

PartialAssignment with_priors(const ConcordiaModel& m, const Example& x, PartialAssignment base) {
  if (!m.hyper.priors) return base;
  for (const auto& slot : x.priors) {
    for (const auto& z : translate(m, slot)) base.at(z.atom) = z.value;
  }
  return base;
}

// τ(xy) when the harness did not provide one: τ(x) with this datum's targets
// fixed to its label.
PartialAssignment own_clamp(const Example& x) {
  PartialAssignment out = x.observed;
  std::size_t k = 0;
  for (const auto& head : x.heads) {
    for (AtomId a : head.targets) out.at(a) = x.label.at(k++);
  }
  return out;
}

std::string num(double v) { return logic::format_number(v); }

double to_double(const std::string& s, const std::string& what) {
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(s, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != s.size() || s.empty()) throw std::runtime_error("bad number for " + what + ": '" + s + "'");
  return v;
}

}  // namespace

Mode parse_mode(const std::string& text) {
  if (text == "supervised") return Mode::supervised;
  if (text == "semi") return Mode::semi;
  if (text == "unsupervised") return Mode::unsupervised;
  throw std::invalid_argument("unknown mode '" + text + "' (supervised, semi, unsupervised)");
}

std::string to_string(Mode mode) {
  switch (mode) {
    case Mode::supervised:
      return "supervised";
    case Mode::semi:
      return "semi";
    case Mode::unsupervised:
      return "unsupervised";
  }
  return "?";
}

ConcordiaModel make_model(const logic::Theory& theory, neural::Task task, const ModelShape& shape,
                          const Hyper& hyper, const std::string& neural_predicate) {
  if (hyper.priors && !theory.declares(neural_predicate)) {
    throw std::invalid_argument("priors are on but the theory does not declare the neural predicate '" +
                                neural_predicate + "'");
  }
  ConcordiaModel m;
  m.task = task;
  m.theory = theory;
  m.weights = hlmrf::Weights::from_theory(theory);
  m.hyper = hyper;
  std::vector<std::size_t> widths = {shape.feature_width};
  widths.insert(widths.end(), shape.hidden.begin(), shape.hidden.end());
  if (task == neural::Task::regression) {
    widths.push_back(1);
    m.predictor = neural::Mlp(widths, task, shape.seed);
  } else {
    if (shape.heads.empty()) throw std::invalid_argument("classification model needs at least one head");
    widths.push_back(std::accumulate(shape.heads.begin(), shape.heads.end(), std::size_t{0}));
    m.predictor = neural::Mlp(widths, task, shape.seed, shape.heads);
  }
  m.gating = neural::Mlp({shape.feature_width, shape.gate_hidden, 1}, neural::Task::regression,
                         shape.seed ^ 0x9e3779b97f4a7c15ULL);
  return m;
}

std::vector<double> mixture(double kappa, std::span<const double> pn, std::span<const double> pl) {
  if (pn.size() != pl.size()) {
    throw std::invalid_argument("mixture arity mismatch: " + std::to_string(pn.size()) + " vs " +
                                std::to_string(pl.size()));
  }
  if (!(kappa >= 0.0 && kappa <= 1.0)) throw std::invalid_argument("mixture weight outside [0,1]");
  std::vector<double> out(pn.size());
  for (std::size_t i = 0; i < pn.size(); ++i) out[i] = kappa * pn[i] + (1.0 - kappa) * pl[i];
  return out;
}

double gate(const neural::Mlp& gating, std::span<const double> features) {
  return std::clamp(neural::predict(gating, features)[0], kappa_floor, 1.0 - kappa_floor);
}

std::vector<double> gate_gradient(const neural::Mlp& gating, std::span<const double> features) {
  const auto fw = neural::forward(gating, features);
  const double one[1] = {1.0};
  return neural::backprop_output(gating, fw, one);
}

std::vector<Observation> translate(const ConcordiaModel& m, const PriorSlot& slot) {
  const auto pn = neural::predict(m.predictor, slot.features);
  const auto blocks = split_heads(m.predictor, pn);
  if (slot.atoms.size() != blocks.size()) {
    throw std::invalid_argument("neural atoms missing: the theory declares no neural predicate for every head");
  }
  std::vector<Observation> z;
  for (std::size_t h = 0; h < blocks.size(); ++h) {
    if (slot.atoms[h].size() != blocks[h].size()) {
      throw std::invalid_argument("head " + std::to_string(h) + " has " + std::to_string(blocks[h].size()) +
                                  " outputs but " + std::to_string(slot.atoms[h].size()) + " neural atoms");
    }
    for (std::size_t j = 0; j < blocks[h].size(); ++j) z.push_back({slot.atoms[h][j], blocks[h][j]});
  }
  return z;
}

double scale_regression(double value, double lo, double hi) {
  if (!(hi > lo)) throw std::invalid_argument("regression range needs lo < hi");
  return (value - lo) / (hi - lo);
}

double unscale_regression(double unit, double lo, double hi) {
  if (!(hi > lo)) throw std::invalid_argument("regression range needs lo < hi");
  return lo + unit * (hi - lo);
}

LogicView logic_view(const ConcordiaModel& m, const Example& x) {
  check_example(m, x);
  LogicView v;
  v.map = hlmrf::map_infer(*x.graph, m.weights, with_priors(m, x, x.observed), m.hyper.solver);
  for (const auto& head : x.heads) v.distributions.push_back(hlmrf::distribution_from(v.map.values, head).probs);
  return v;
}

Prediction infer_multitask(const ConcordiaModel& m, const Example& x) {
  Prediction out;
  const auto pn = split_heads(m.predictor, neural::predict(m.predictor, x.features));
  std::vector<std::vector<double>> pl;
  if (m.hyper.use_logic) {
    auto v = logic_view(m, x);
    pl = std::move(v.distributions);
    out.converged = v.map.converged;
    out.kappa = gate(m.gating, x.features);
  } else {
    pl = pn;
    out.kappa = 1.0;
  }
  for (std::size_t h = 0; h < pn.size(); ++h) {
    HeadPrediction hp;
    hp.neural = pn[h];
    hp.logic = pl[h];
    hp.distribution = mixture(out.kappa, pn[h], pl[h]);
    if (m.task == neural::Task::regression) {
      hp.value = unscale_regression(hp.distribution[0], m.lo, m.hi);
    } else {
      hp.label = neural::argmax(hp.distribution);
    }
    out.heads.push_back(std::move(hp));
  }
  return out;
}

HeadPrediction infer_concordia(const ConcordiaModel& m, const Example& x, double* kappa, bool* converged) {
  if (m.head_count() != 1) throw std::invalid_argument("infer_concordia needs a single-head model");
  auto p = infer_multitask(m, x);
  if (kappa) *kappa = p.kappa;
  if (converged) *converged = p.converged;
  return std::move(p.heads[0]);
}

ConcordiaModel update_concordia(const ConcordiaModel& m, const Example& x, Mode mode, StepStats* stats) {
  if (mode == Mode::semi) throw std::invalid_argument("update_concordia takes a supervised or unsupervised step");
  const bool supervised = mode == Mode::supervised;
  if (supervised && !x.labeled()) throw std::invalid_argument("supervised step on unlabeled example " + x.id);
  const auto loss_mode = supervised ? neural::LossMode::supervised : neural::LossMode::unsupervised;
  const std::span<const double> label = supervised ? std::span<const double>(x.label) : std::span<const double>();

  ConcordiaModel next = m;
  const auto pn_flat = neural::predict(m.predictor, x.features);

  // Teacher from the pre-step weights.
  std::optional<LogicView> view;
  std::vector<double> teacher;
  if (m.hyper.use_logic) {
    view = logic_view(m, x);
    teacher = concat(view->distributions);
  }
  StepStats local;
  local.labeled_step = supervised;
  local.neural_loss = neural::loss(m.predictor, pn_flat, label, teacher, loss_mode);
  next.predictor = neural::update_neural(m.predictor, x.features, label, teacher, m.hyper.lr_neural, loss_mode);

  if (supervised && m.hyper.use_logic) {
    const int p = m.hyper.solver.p;
    const PartialAssignment clamped = with_priors(m, x, x.clamped.empty() ? own_clamp(x) : x.clamped);
    const auto truth = hlmrf::map_infer(*x.graph, m.weights, clamped, m.hyper.solver).values;
    local.truth_energy = hlmrf::energy(*x.graph, m.weights, truth, p);
    if (m.hyper.learn_weights && m.hyper.lr_logic != 0.0) {
      const auto g = hlmrf::weight_gradient(*x.graph, m.weights, view->map.values, truth, p);
      next.weights = hlmrf::apply_weight_gradient(m.weights, g, m.hyper.lr_logic);
    }

    // Gate step: only κ moves, Δ_N and Δ_L held at their pre-step values.
    const double kappa = gate(m.gating, x.features);
    const auto pn = split_heads(m.predictor, pn_flat);
    double gate_loss = 0.0;
    double d_kappa = 0.0;
    std::size_t offset = 0;
    for (std::size_t h = 0; h < pn.size(); ++h) {
      const auto& a = pn[h];
      const auto& b = view->distributions[h];
      if (m.task == neural::Task::regression) {
        const double mix = kappa * a[0] + (1.0 - kappa) * b[0];
        const double r = mix - x.label[offset];
        gate_loss += r * r;
        d_kappa += 2.0 * r * (a[0] - b[0]);
      } else {
        const auto y = neural::argmax(std::span<const double>(x.label).subspan(offset, a.size()));
        const double mix = std::max(kappa * a[y] + (1.0 - kappa) * b[y], mixture_floor);
        gate_loss -= std::log(mix);
        d_kappa -= (a[y] - b[y]) / mix;
      }
      offset += a.size();
    }
    local.gate_loss = gate_loss;
    if (m.hyper.lr_gate != 0.0) {
      const auto dk = gate_gradient(m.gating, x.features);
      auto params = m.gating.parameters();
      for (std::size_t i = 0; i < params.size(); ++i) params[i] -= m.hyper.lr_gate * d_kappa * dk[i];
      next.gating.set_parameters(params);
    }
  }
  if (stats) *stats = local;
  return next;
}

TrainResult train(const ConcordiaModel& m, std::span<const Example> labeled, std::span<const Example> unlabeled,
                  std::size_t epochs, Mode mode, std::uint64_t seed, const EpochHook& hook) {
  if (labeled.empty() && unlabeled.empty()) throw std::invalid_argument("training set is empty");
  if (mode == Mode::supervised && labeled.empty()) throw std::invalid_argument("no labeled training data");
  TrainResult out{m, {}};
  std::mt19937_64 rng(seed);

  struct Pass {
    std::span<const Example> data;
    Mode step;
  };
  std::vector<Pass> passes;
  std::vector<Example> everything;
  switch (mode) {
    case Mode::supervised:
      passes.push_back({labeled, Mode::supervised});
      break;
    case Mode::semi:
      passes.push_back({labeled, Mode::supervised});
      passes.push_back({unlabeled, Mode::unsupervised});
      break;
    case Mode::unsupervised:
      everything.assign(labeled.begin(), labeled.end());
      everything.insert(everything.end(), unlabeled.begin(), unlabeled.end());
      passes.push_back({everything, Mode::unsupervised});
      break;
  }

  for (std::size_t epoch = 1; epoch <= epochs; ++epoch) {
    EpochRecord rec;
    rec.epoch = epoch;
    double neural_sum = 0.0, energy_sum = 0.0, gate_sum = 0.0;
    std::size_t n_labeled = 0;
    for (const auto& pass : passes) {
      std::vector<std::size_t> order(pass.data.size());
      std::iota(order.begin(), order.end(), 0);
      std::shuffle(order.begin(), order.end(), rng);
      for (std::size_t i : order) {
        StepStats s;
        out.model = update_concordia(out.model, pass.data[i], pass.step, &s);
        ++rec.updates;
        neural_sum += s.neural_loss;
        if (s.labeled_step && out.model.hyper.use_logic) {
          ++n_labeled;
          energy_sum += s.truth_energy;
          gate_sum += s.gate_loss;
        }
      }
    }
    const double nan = std::numeric_limits<double>::quiet_NaN();
    rec.neural_loss = rec.updates ? neural_sum / static_cast<double>(rec.updates) : nan;
    rec.truth_energy = n_labeled ? energy_sum / static_cast<double>(n_labeled) : nan;
    rec.gate_loss = n_labeled ? gate_sum / static_cast<double>(n_labeled) : nan;
    if (hook) rec.metrics = hook(out.model, epoch);
    out.history.epochs.push_back(std::move(rec));
  }
  return out;
}

void save_model(const std::string& dir, const ConcordiaModel& m, const boost::property_tree::ptree& extra) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  const fs::path root(dir);
  {
    std::ofstream out(root / "theory.psl");
    out << logic::format_theory(m.theory);
  }
  {
    std::ofstream out(root / "weights.tsv");
    for (std::size_t i = 0; i < m.weights.size(); ++i) out << i << '\t' << num(m.weights.lambda[i]) << '\n';
  }
  neural::save_checkpoint((root / "predictor.ckpt").string(), m.predictor);
  neural::save_checkpoint((root / "gating.ckpt").string(), m.gating);

  boost::property_tree::ptree manifest;
  manifest.put("model.task", m.task == neural::Task::regression ? "regression" : "classification");
  manifest.put("model.lo", num(m.lo));
  manifest.put("model.hi", num(m.hi));
  manifest.put("model.priors", m.hyper.priors ? "on" : "off");
  manifest.put("model.use_logic", m.hyper.use_logic ? "true" : "false");
  manifest.put("model.learn_weights", m.hyper.learn_weights ? "true" : "false");
  manifest.put("model.lr_neural", num(m.hyper.lr_neural));
  manifest.put("model.lr_logic", num(m.hyper.lr_logic));
  manifest.put("model.lr_gate", num(m.hyper.lr_gate));
  manifest.put("solver.penalty", std::to_string(m.hyper.solver.p));
  manifest.put("solver.step", num(m.hyper.solver.step));
  manifest.put("solver.max_iterations", std::to_string(m.hyper.solver.max_iterations));
  manifest.put("solver.tolerance", num(m.hyper.solver.tolerance));
  manifest.put("solver.initialization", num(m.hyper.solver.initialization));
  if (!extra.empty()) manifest.add_child("mapping", extra);
  std::ofstream out(root / "manifest.ini");
  boost::property_tree::write_ini(out, manifest);
}

ConcordiaModel load_model(const std::string& dir, boost::property_tree::ptree* extra) {
  namespace fs = std::filesystem;
  const fs::path root(dir);
  if (!fs::is_directory(root)) throw std::runtime_error("model bundle " + dir + " does not exist");
  ConcordiaModel m;
  m.theory = logic::load_theory((root / "theory.psl").string());
  m.weights = hlmrf::Weights::from_theory(m.theory);
  {
    std::ifstream in(root / "weights.tsv");
    if (!in) throw std::runtime_error("model bundle " + dir + " has no weights.tsv");
    std::string line;
    std::size_t seen = 0;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      const auto tab = line.find('\t');
      if (tab == std::string::npos) throw std::runtime_error("weights.tsv: malformed line '" + line + "'");
      const auto index = static_cast<std::size_t>(to_double(line.substr(0, tab), "rule index"));
      if (index >= m.weights.size()) throw std::runtime_error("weights.tsv: rule index out of range");
      m.weights.lambda[index] = to_double(line.substr(tab + 1), "weight");
      ++seen;
    }
    if (seen != m.weights.size()) throw std::runtime_error("weights.tsv does not cover every rule");
  }
  m.predictor = neural::load_checkpoint((root / "predictor.ckpt").string());
  m.gating = neural::load_checkpoint((root / "gating.ckpt").string());

  boost::property_tree::ptree manifest;
  boost::property_tree::read_ini((root / "manifest.ini").string(), manifest);
  const auto task = manifest.get<std::string>("model.task");
  if (task != "regression" && task != "classification") throw std::runtime_error("manifest: unknown task " + task);
  m.task = task == "regression" ? neural::Task::regression : neural::Task::classification;
  m.lo = to_double(manifest.get<std::string>("model.lo"), "lo");
  m.hi = to_double(manifest.get<std::string>("model.hi"), "hi");
  m.hyper.priors = manifest.get<std::string>("model.priors") == "on";
  m.hyper.use_logic = manifest.get<std::string>("model.use_logic") == "true";
  m.hyper.learn_weights = manifest.get<std::string>("model.learn_weights") == "true";
  m.hyper.lr_neural = to_double(manifest.get<std::string>("model.lr_neural"), "lr_neural");
  m.hyper.lr_logic = to_double(manifest.get<std::string>("model.lr_logic"), "lr_logic");
  m.hyper.lr_gate = to_double(manifest.get<std::string>("model.lr_gate"), "lr_gate");
  m.hyper.solver.p = static_cast<int>(to_double(manifest.get<std::string>("solver.penalty"), "penalty"));
  m.hyper.solver.step = to_double(manifest.get<std::string>("solver.step"), "step");
  m.hyper.solver.max_iterations =
      static_cast<std::size_t>(to_double(manifest.get<std::string>("solver.max_iterations"), "max_iterations"));
  m.hyper.solver.tolerance = to_double(manifest.get<std::string>("solver.tolerance"), "tolerance");
  m.hyper.solver.initialization = to_double(manifest.get<std::string>("solver.initialization"), "initialization");
  if (extra) *extra = manifest.get_child("mapping", {});
  return m;
}

}  // namespace concordia::fusion
