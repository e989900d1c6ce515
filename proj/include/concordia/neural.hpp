// Built-in neural predictor: a fully connected net with tanh hidden layers
// and a softmax (per head) or sigmoid output, trained by plain SGD on
// cross-entropy / squared error plus a KL term towards a teacher.

#ifndef CONCORDIA_NEURAL_HPP
#define CONCORDIA_NEURAL_HPP

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace concordia::neural {

enum class Task { classification, regression };

enum class LossMode { supervised, unsupervised };

class WidthError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

inline constexpr double kl_smoothing = 1e-6;

struct Layer {
  std::size_t in = 0;
  std::size_t out = 0;
  std::vector<double> weights;  // out x in, row-major
  std::vector<double> bias;     // out

  friend bool operator==(const Layer&, const Layer&) = default;
};

class Mlp {
 public:
  Mlp() = default;
  // widths = {input, hidden..., output}. Classification output blocks are
  // given by `heads` (sizes summing to the output width); empty means one
  // head. Regression requires output width 1. Weights are Xavier-uniform
  // from `seed`, biases zero.
  Mlp(std::vector<std::size_t> widths, Task task, std::uint64_t seed, std::vector<std::size_t> heads = {});

  static Mlp zeros(std::vector<std::size_t> widths, Task task, std::vector<std::size_t> heads = {});

  Task task() const noexcept { return task_; }
  const std::vector<std::size_t>& widths() const noexcept { return widths_; }
  const std::vector<std::size_t>& heads() const noexcept { return heads_; }
  std::size_t input_width() const { return widths_.front(); }
  std::size_t output_width() const { return widths_.back(); }

  std::vector<Layer>& layers() noexcept { return layers_; }
  const std::vector<Layer>& layers() const noexcept { return layers_; }

  std::size_t parameter_count() const;
  std::vector<double> parameters() const;
  void set_parameters(std::span<const double> flat);

  friend bool operator==(const Mlp&, const Mlp&) = default;

 private:
  void init_shape(std::vector<std::size_t> widths, Task task, std::vector<std::size_t> heads);

  Task task_ = Task::classification;
  std::vector<std::size_t> widths_;
  std::vector<std::size_t> heads_;
  std::vector<Layer> layers_;
};

struct Forward {
  // activations[0] is the input; activations[k] the output of layer k
  // (tanh for hidden layers, raw logits for the last).
  std::vector<std::vector<double>> activations;
  std::vector<double> output;

  const std::vector<double>& logits() const { return activations.back(); }
};

Forward forward(const Mlp& net, std::span<const double> features);

// Softmax per head block (classification) or sigmoid (regression).
std::vector<double> predict(const Mlp& net, std::span<const double> features);

std::vector<double> softmax(std::span<const double> logits);
double sigmoid(double z);

// KL(p || q) after mixing both with uniform at weight eps.
double kl_divergence(std::span<const double> p, std::span<const double> q, double eps = kl_smoothing);

// Supervised: ℓ(pred, label) + KL(pred || teacher); unsupervised: the KL term
// only. Classification labels are one-hot per head; regression labels and
// predictions are single unit values and the KL is between Bernoullis. An
// empty teacher drops the KL term.
double loss(const Mlp& net, std::span<const double> pred, std::span<const double> label,
            std::span<const double> teacher, LossMode mode);

// d loss / d parameters, flattened in Mlp::parameters() order.
std::vector<double> loss_gradient(const Mlp& net, std::span<const double> features, std::span<const double> label,
                                  std::span<const double> teacher, LossMode mode);

// Backpropagates a gradient given with respect to the post-activation output.
std::vector<double> backprop_output(const Mlp& net, const Forward& fw, std::span<const double> d_output);

// One SGD step on loss().
Mlp update_neural(const Mlp& net, std::span<const double> features, std::span<const double> label,
                  std::span<const double> teacher, double lr, LossMode mode = LossMode::supervised);

// Max relative error between loss_gradient and central differences with
// step h. Relative error is |a - n| / max(|a| + |n|, 1e-6).
double grad_check(const Mlp& net, std::span<const double> features, std::span<const double> label,
                  std::span<const double> teacher, LossMode mode = LossMode::supervised, double h = 1e-5);

// Text checkpoint with hexfloat parameters; round-trips bit-exactly.
void save_checkpoint(std::ostream& out, const Mlp& net);
Mlp load_checkpoint(std::istream& in);
void save_checkpoint(const std::string& path, const Mlp& net);
Mlp load_checkpoint(const std::string& path);

// Index of the largest entry; ties go to the lowest index.
std::size_t argmax(std::span<const double> values);

}  // namespace concordia::neural

#endif  // CONCORDIA_NEURAL_HPP
