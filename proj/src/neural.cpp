#include "concordia/neural.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <ios>
#include <istream>
#include <numeric>
#include <ostream>
#include <random>
#include <sstream>

namespace concordia::neural {

void Mlp::init_shape(std::vector<std::size_t> widths, Task task, std::vector<std::size_t> heads) {
  if (widths.size() < 2) throw WidthError("a network needs at least an input and an output width");
  if (widths.back() == 0) throw WidthError("output width must be positive");
  for (std::size_t i = 1; i + 1 < widths.size(); ++i) {
    if (widths[i] == 0) throw WidthError("hidden widths must be positive");
  }
  if (task == Task::regression) {
    if (widths.back() != 1) throw WidthError("regression networks have a single sigmoid output");
    heads = {1};
  } else if (heads.empty()) {
    heads = {widths.back()};
  }
  if (std::accumulate(heads.begin(), heads.end(), std::size_t{0}) != widths.back()) {
    throw WidthError("head sizes must add up to the output width");
  }
  task_ = task;
  widths_ = std::move(widths);
  heads_ = std::move(heads);
  layers_.clear();
  for (std::size_t i = 0; i + 1 < widths_.size(); ++i) {
    Layer l;
    l.in = widths_[i];
    l.out = widths_[i + 1];
    l.weights.assign(l.in * l.out, 0.0);
    l.bias.assign(l.out, 0.0);
    layers_.push_back(std::move(l));
  }
}

Mlp::Mlp(std::vector<std::size_t> widths, Task task, std::uint64_t seed, std::vector<std::size_t> heads) {
  init_shape(std::move(widths), task, std::move(heads));
  std::mt19937_64 rng(seed);
  for (auto& l : layers_) {
    const double limit = std::sqrt(6.0 / static_cast<double>(l.in + l.out));
    std::uniform_real_distribution<double> u(-limit, limit);
    for (double& w : l.weights) w = u(rng);
  }
}

Mlp Mlp::zeros(std::vector<std::size_t> widths, Task task, std::vector<std::size_t> heads) {
  Mlp m;
  m.init_shape(std::move(widths), task, std::move(heads));
  return m;
}

std::size_t Mlp::parameter_count() const {
  std::size_t n = 0;
  for (const auto& l : layers_) n += l.weights.size() + l.bias.size();
  return n;
}

std::vector<double> Mlp::parameters() const {
  std::vector<double> out;
  out.reserve(parameter_count());
  for (const auto& l : layers_) {
    out.insert(out.end(), l.weights.begin(), l.weights.end());
    out.insert(out.end(), l.bias.begin(), l.bias.end());
  }
  return out;
}

void Mlp::set_parameters(std::span<const double> flat) {
  if (flat.size() != parameter_count()) throw WidthError("parameter vector has the wrong length");
  std::size_t k = 0;
  for (auto& l : layers_) {
    for (double& w : l.weights) w = flat[k++];
    for (double& b : l.bias) b = flat[k++];
  }
}

double sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

std::vector<double> softmax(std::span<const double> logits) {
  std::vector<double> out(logits.begin(), logits.end());
  if (out.empty()) return out;
  const double m = *std::max_element(out.begin(), out.end());
  double sum = 0.0;
  for (double& v : out) {
    v = std::exp(v - m);
    sum += v;
  }
  for (double& v : out) v /= sum;
  return out;
}

Forward forward(const Mlp& net, std::span<const double> features) {
  if (features.size() != net.input_width()) {
    throw WidthError("feature vector has width " + std::to_string(features.size()) + ", network expects " +
                     std::to_string(net.input_width()));
  }
  Forward fw;
  fw.activations.emplace_back(features.begin(), features.end());
  const auto& layers = net.layers();
  for (std::size_t li = 0; li < layers.size(); ++li) {
    const Layer& l = layers[li];
    const auto& in = fw.activations.back();
    std::vector<double> out(l.out);
    for (std::size_t o = 0; o < l.out; ++o) {
      double z = l.bias[o];
      const double* w = &l.weights[o * l.in];
      for (std::size_t i = 0; i < l.in; ++i) z += w[i] * in[i];
      out[o] = li + 1 < layers.size() ? std::tanh(z) : z;
    }
    fw.activations.push_back(std::move(out));
  }
  const auto& z = fw.activations.back();
  if (net.task() == Task::regression) {
    fw.output = {sigmoid(z[0])};
  } else {
    std::size_t start = 0;
    for (std::size_t h : net.heads()) {
      auto block = softmax(std::span<const double>(z).subspan(start, h));
      fw.output.insert(fw.output.end(), block.begin(), block.end());
      start += h;
    }
  }
  return fw;
}

std::vector<double> predict(const Mlp& net, std::span<const double> features) {
  return forward(net, features).output;
}

double kl_divergence(std::span<const double> p, std::span<const double> q, double eps) {
  if (p.size() != q.size()) throw WidthError("KL arguments differ in width");
  const double k = static_cast<double>(p.size());
  double kl = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double ps = (1.0 - eps) * p[i] + eps / k;
    const double qs = (1.0 - eps) * q[i] + eps / k;
    if (ps > 0.0) kl += ps * std::log(ps / qs);
  }
  return kl;
}

namespace {

void check_widths(const Mlp& net, std::span<const double> pred, std::span<const double> label,
                  std::span<const double> teacher, LossMode mode) {
  const std::size_t w = net.output_width();
  if (pred.size() != w) throw WidthError("prediction width does not match the network output");
  if (mode == LossMode::supervised && label.size() != w) throw WidthError("label width does not match the network output");
  if (!teacher.empty() && teacher.size() != w) throw WidthError("teacher width does not match the network output");
}

double bernoulli_kl(double p, double q, double eps) {
  const double pv[2] = {p, 1.0 - p};
  const double qv[2] = {q, 1.0 - q};
  return kl_divergence(pv, qv, eps);
}

// d loss / d logits.
std::vector<double> logit_gradient(const Mlp& net, std::span<const double> pred, std::span<const double> label,
                                   std::span<const double> teacher, LossMode mode) {
  const double eps = kl_smoothing;
  std::vector<double> dz(pred.size(), 0.0);
  if (net.task() == Task::regression) {
    const double p = pred[0];
    double dp = 0.0;
    if (mode == LossMode::supervised) dp += 2.0 * (p - label[0]);
    if (!teacher.empty()) {
      const double ps = (1.0 - eps) * p + eps / 2.0;
      const double qs = (1.0 - eps) * teacher[0] + eps / 2.0;
      dp += (1.0 - eps) * (std::log(ps / qs) - std::log((1.0 - ps) / (1.0 - qs)));
    }
    dz[0] = dp * p * (1.0 - p);
    return dz;
  }
  std::size_t start = 0;
  for (std::size_t h : net.heads()) {
    const double k = static_cast<double>(h);
    if (mode == LossMode::supervised) {
      double ysum = 0.0;
      for (std::size_t i = start; i < start + h; ++i) ysum += label[i];
      for (std::size_t i = start; i < start + h; ++i) dz[i] += pred[i] * ysum - label[i];
    }
    if (!teacher.empty()) {
      std::vector<double> g(h);
      double dot = 0.0;
      for (std::size_t i = 0; i < h; ++i) {
        const double ps = (1.0 - eps) * pred[start + i] + eps / k;
        const double qs = (1.0 - eps) * teacher[start + i] + eps / k;
        g[i] = (1.0 - eps) * (std::log(ps / qs) + 1.0);
        dot += pred[start + i] * g[i];
      }
      for (std::size_t i = 0; i < h; ++i) dz[start + i] += pred[start + i] * (g[i] - dot);
    }
    start += h;
  }
  return dz;
}

std::vector<double> backprop_logits(const Mlp& net, const Forward& fw, std::vector<double> delta) {
  const auto& layers = net.layers();
  std::vector<double> grad(net.parameter_count(), 0.0);
  std::vector<std::size_t> offset(layers.size());
  std::size_t k = 0;
  for (std::size_t li = 0; li < layers.size(); ++li) {
    offset[li] = k;
    k += layers[li].weights.size() + layers[li].bias.size();
  }
  for (std::size_t li = layers.size(); li-- > 0;) {
    const Layer& l = layers[li];
    const auto& in = fw.activations[li];
    double* gw = &grad[offset[li]];
    double* gb = gw + l.weights.size();
    for (std::size_t o = 0; o < l.out; ++o) {
      gb[o] = delta[o];
      for (std::size_t i = 0; i < l.in; ++i) gw[o * l.in + i] = delta[o] * in[i];
    }
    if (li == 0) break;
    std::vector<double> prev(l.in, 0.0);
    for (std::size_t o = 0; o < l.out; ++o) {
      for (std::size_t i = 0; i < l.in; ++i) prev[i] += l.weights[o * l.in + i] * delta[o];
    }
    for (std::size_t i = 0; i < l.in; ++i) prev[i] *= 1.0 - in[i] * in[i];
    delta = std::move(prev);
  }
  return grad;
}

}  // namespace

double loss(const Mlp& net, std::span<const double> pred, std::span<const double> label,
            std::span<const double> teacher, LossMode mode) {
  check_widths(net, pred, label, teacher, mode);
  double total = 0.0;
  if (net.task() == Task::regression) {
    if (mode == LossMode::supervised) total += (pred[0] - label[0]) * (pred[0] - label[0]);
    if (!teacher.empty()) total += bernoulli_kl(pred[0], teacher[0], kl_smoothing);
    return total;
  }
  std::size_t start = 0;
  for (std::size_t h : net.heads()) {
    if (mode == LossMode::supervised) {
      for (std::size_t i = start; i < start + h; ++i) {
        if (label[i] != 0.0) total -= label[i] * std::log(std::max(pred[i], 1e-300));
      }
    }
    if (!teacher.empty()) total += kl_divergence(pred.subspan(start, h), teacher.subspan(start, h));
    start += h;
  }
  return total;
}

std::vector<double> loss_gradient(const Mlp& net, std::span<const double> features, std::span<const double> label,
                                  std::span<const double> teacher, LossMode mode) {
  Forward fw = forward(net, features);
  check_widths(net, fw.output, label, teacher, mode);
  return backprop_logits(net, fw, logit_gradient(net, fw.output, label, teacher, mode));
}

std::vector<double> backprop_output(const Mlp& net, const Forward& fw, std::span<const double> d_output) {
  if (d_output.size() != net.output_width()) throw WidthError("output gradient has the wrong width");
  std::vector<double> dz(d_output.size(), 0.0);
  const auto& p = fw.output;
  if (net.task() == Task::regression) {
    dz[0] = d_output[0] * p[0] * (1.0 - p[0]);
  } else {
    std::size_t start = 0;
    for (std::size_t h : net.heads()) {
      double dot = 0.0;
      for (std::size_t i = start; i < start + h; ++i) dot += p[i] * d_output[i];
      for (std::size_t i = start; i < start + h; ++i) dz[i] = p[i] * (d_output[i] - dot);
      start += h;
    }
  }
  return backprop_logits(net, fw, std::move(dz));
}

Mlp update_neural(const Mlp& net, std::span<const double> features, std::span<const double> label,
                  std::span<const double> teacher, double lr, LossMode mode) {
  Mlp next = net;
  if (lr == 0.0) return next;
  const auto g = loss_gradient(net, features, label, teacher, mode);
  auto params = net.parameters();
  for (std::size_t i = 0; i < params.size(); ++i) params[i] -= lr * g[i];
  next.set_parameters(params);
  return next;
}

double grad_check(const Mlp& net, std::span<const double> features, std::span<const double> label,
                  std::span<const double> teacher, LossMode mode, double h) {
  const auto analytic = loss_gradient(net, features, label, teacher, mode);
  Mlp probe = net;
  auto params = net.parameters();
  double worst = 0.0;
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double saved = params[i];
    params[i] = saved + h;
    probe.set_parameters(params);
    const double up = loss(probe, predict(probe, features), label, teacher, mode);
    params[i] = saved - h;
    probe.set_parameters(params);
    const double down = loss(probe, predict(probe, features), label, teacher, mode);
    params[i] = saved;
    const double numeric = (up - down) / (2.0 * h);
    const double err = std::abs(analytic[i] - numeric) / std::max(std::abs(analytic[i]) + std::abs(numeric), 1e-6);
    worst = std::max(worst, err);
  }
  return worst;
}

namespace {

void write_values(std::ostream& out, const char* tag, const std::vector<double>& v) {
  out << tag;
  for (double x : v) out << ' ' << std::hexfloat << x << std::defaultfloat;
  out << '\n';
}

std::vector<double> read_values(std::istream& in, const char* tag, std::size_t n) {
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error("checkpoint truncated before '" + std::string(tag) + "'");
  std::istringstream ss(line);
  std::string word;
  ss >> word;
  if (word != tag) throw std::runtime_error("checkpoint: expected '" + std::string(tag) + "', found '" + word + "'");
  std::vector<double> out;
  while (ss >> word) {
    char* end = nullptr;
    const double v = std::strtod(word.c_str(), &end);
    if (end != word.c_str() + word.size()) throw std::runtime_error("checkpoint: bad number '" + word + "'");
    out.push_back(v);
  }
  if (out.size() != n) throw std::runtime_error("checkpoint: '" + std::string(tag) + "' has the wrong length");
  return out;
}

std::vector<std::size_t> read_sizes(std::istream& in, const char* tag) {
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error("checkpoint truncated before '" + std::string(tag) + "'");
  std::istringstream ss(line);
  std::string word;
  ss >> word;
  if (word != tag) throw std::runtime_error("checkpoint: expected '" + std::string(tag) + "', found '" + word + "'");
  std::vector<std::size_t> out;
  std::size_t v = 0;
  while (ss >> v) out.push_back(v);
  return out;
}

}  // namespace

void save_checkpoint(std::ostream& out, const Mlp& net) {
  out << "concordia-mlp 1\n";
  out << "task " << (net.task() == Task::regression ? "regression" : "classification") << '\n';
  out << "widths";
  for (auto w : net.widths()) out << ' ' << w;
  out << "\nheads";
  for (auto h : net.heads()) out << ' ' << h;
  out << '\n';
  for (const auto& l : net.layers()) {
    write_values(out, "w", l.weights);
    write_values(out, "b", l.bias);
  }
}

Mlp load_checkpoint(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line != "concordia-mlp 1") throw std::runtime_error("not a network checkpoint");
  if (!std::getline(in, line)) throw std::runtime_error("checkpoint truncated");
  Task task;
  if (line == "task classification") {
    task = Task::classification;
  } else if (line == "task regression") {
    task = Task::regression;
  } else {
    throw std::runtime_error("checkpoint: unknown task line '" + line + "'");
  }
  auto widths = read_sizes(in, "widths");
  auto heads = read_sizes(in, "heads");
  Mlp net = Mlp::zeros(widths, task, heads);
  for (auto& l : net.layers()) {
    l.weights = read_values(in, "w", l.weights.size());
    l.bias = read_values(in, "b", l.bias.size());
  }
  return net;
}

void save_checkpoint(const std::string& path, const Mlp& net) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path);
  save_checkpoint(out, net);
}

Mlp load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  return load_checkpoint(in);
}

std::size_t argmax(std::span<const double> values) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < values.size(); ++i) {
    if (values[i] > values[best]) best = i;
  }
  return best;
}

}  // namespace concordia::neural
