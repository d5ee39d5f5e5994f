#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

#include "metassl/losses.hpp"
#include "metassl/tape.hpp"
#include "metassl/tensor.hpp"

namespace metassl {

enum class Activation { relu, tanh };

std::string_view to_string(Activation a);
Activation parse_activation(std::string_view name);

/// Where one dense layer lives inside the flat parameter array. The weight is
/// stored row-major as fan_in × fan_out, followed by the bias.
struct LayerSlot {
  std::size_t weight_offset;
  std::size_t bias_offset;
  std::size_t fan_in;
  std::size_t fan_out;

  friend bool operator==(const LayerSlot&, const LayerSlot&) = default;
};

std::vector<LayerSlot> mlp_layout(std::span<const std::size_t> layer_sizes);

/// Flat view of all model parameters θ with per-layer layout metadata.
class ParamVector {
 public:
  ParamVector() = default;
  ParamVector(std::vector<double> flat, std::vector<LayerSlot> layout);

  static ParamVector zeros_like(const ParamVector& other);

  /// Inverse of unflatten(): concatenates W0, b0, W1, b1, ...
  static ParamVector flatten(const std::vector<Tensor>& blocks, std::vector<LayerSlot> layout);
  std::vector<Tensor> unflatten() const;

  std::size_t size() const noexcept { return flat_.size(); }
  std::span<const double> values() const noexcept { return flat_; }
  std::span<double> values() noexcept { return flat_; }
  const std::vector<LayerSlot>& layout() const noexcept { return layout_; }
  std::size_t num_layers() const noexcept { return layout_.size(); }

  Tensor weight(std::size_t layer) const;
  Tensor bias(std::size_t layer) const;

  bool same_layout(const ParamVector& other) const { return layout_ == other.layout_ && size() == other.size(); }
  void require_same_layout(const ParamVector& other, const char* what) const;

  /// this + eps·g, elementwise.
  ParamVector axpy(double eps, const ParamVector& g) const;
  double dot(const ParamVector& other) const;
  double norm() const;
  ParamVector scaled(double s) const;

  friend bool operator==(const ParamVector&, const ParamVector&) = default;

 private:
  std::vector<double> flat_;
  std::vector<LayerSlot> layout_;
};

/// Which output of the network a Jacobian refers to.
enum class OutputHead { probabilities, logits };

/// Multilayer perceptron f(x; θ) with softmax output. Deterministic: no
/// dropout, no normalization layers.
class MlpClassifier {
 public:
  /// Weights uniform in ±sqrt(6/(fan_in+fan_out)), biases zero.
  MlpClassifier(std::vector<std::size_t> layer_sizes, Activation activation, std::uint64_t seed);
  MlpClassifier(std::vector<std::size_t> layer_sizes, Activation activation, ParamVector params);

  static MlpClassifier zeros(std::vector<std::size_t> layer_sizes, Activation activation);

  const std::vector<std::size_t>& layer_sizes() const noexcept { return layer_sizes_; }
  Activation activation() const noexcept { return activation_; }
  std::size_t input_dim() const noexcept { return layer_sizes_.front(); }
  std::size_t num_classes() const noexcept { return layer_sizes_.back(); }
  std::size_t num_params() const noexcept { return params_.size(); }

  const ParamVector& params() const noexcept { return params_; }
  void set_params(ParamVector params);
  MlpClassifier with_params(ParamVector params) const;

  /// Row-wise class distributions, B×K.
  Tensor forward(const Tensor& x) const;
  Tensor logits(const Tensor& x) const;

  struct Recording {
    std::vector<Tape::Var> blocks;  // W0, b0, W1, b1, ...
    Tape::Var logits;
    Tape::Var probs;
  };

  /// Records the forward pass on `tape` with every parameter block as a leaf.
  Recording record(Tape& tape, const Tensor& x) const;
  ParamVector collect(const Gradients& grads, const Recording& rec) const;

 private:
  void require_input(const Tensor& x) const;

  std::vector<std::size_t> layer_sizes_;
  Activation activation_;
  ParamVector params_;
};

/// forward() of a model whose parameters are θ + sign·eps·g; the model itself
/// is left untouched.
Tensor perturbed_forward(const MlpClassifier& model, const Tensor& x, const ParamVector& g, double eps, int sign);

struct LossGradient {
  double loss = 0.0;
  ParamVector grad;
};

/// Batch-mean loss Φ(f(x; θ), targets) and its gradient with respect to θ.
LossGradient loss_and_gradient(const MlpClassifier& model, const Tensor& x, const Tensor& targets, LossKind kind);

/// Dense K×P Jacobian of a single example, one backward pass per output entry.
Tensor jacobian(const MlpClassifier& model, const Tensor& x, OutputHead head = OutputHead::probabilities);

/// J_θ f(x; θ)·v for a single example (1×d). Returns a length-K vector.
Tensor jacobian_vector_product(const MlpClassifier& model, const Tensor& x, const ParamVector& v,
                               OutputHead head = OutputHead::probabilities);

/// J_θ f(x; θ)ᵀ·u for a single example, one backward pass.
ParamVector vector_jacobian_product(const MlpClassifier& model, const Tensor& x, std::span<const double> u,
                                    OutputHead head = OutputHead::probabilities);

struct JacobianNormOptions {
  std::uint64_t seed = 0;
  std::size_t max_iterations = 500;
  double tolerance = 1e-12;
  OutputHead head = OutputHead::probabilities;
};

struct JacobianNormEstimate {
  double value = 0.0;          // max over inputs of the spectral norm
  std::size_t argmax_row = 0;  // input attaining the max
  bool converged = true;       // false if any power iteration hit the cap
};

/// Empirical M̂: largest ‖J_θ f(x_i)‖₂ over the rows of `xs`, each by power
/// iteration on J·Jᵀ.
JacobianNormEstimate jacobian_norm_estimate(const MlpClassifier& model, const Tensor& xs,
                                            const JacobianNormOptions& options = {});

}  // namespace metassl
