#include "metassl/model.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "metassl/errors.hpp"
#include "metassl/rng.hpp"

namespace metassl {

std::string_view to_string(Activation a) { return a == Activation::relu ? "relu" : "tanh"; }

Activation parse_activation(std::string_view name) {
  if (name == "relu") return Activation::relu;
  if (name == "tanh") return Activation::tanh;
  throw ConfigError("unknown activation '" + std::string(name) + "'");
}

std::vector<LayerSlot> mlp_layout(std::span<const std::size_t> layer_sizes) {
  if (layer_sizes.size() < 2) throw ConfigError("mlp: need at least input and output sizes");
  std::vector<LayerSlot> layout;
  std::size_t offset = 0;
  for (std::size_t l = 0; l + 1 < layer_sizes.size(); ++l) {
    const std::size_t fan_in = layer_sizes[l], fan_out = layer_sizes[l + 1];
    if (fan_in == 0 || fan_out == 0) throw ConfigError("mlp: layer sizes must be positive");
    layout.push_back({offset, offset + fan_in * fan_out, fan_in, fan_out});
    offset += (fan_in + 1) * fan_out;
  }
  return layout;
}

// ---------------------------------------------------------------------------
// ParamVector

ParamVector::ParamVector(std::vector<double> flat, std::vector<LayerSlot> layout)
    : flat_(std::move(flat)), layout_(std::move(layout)) {
  std::size_t expected = 0;
  for (const auto& s : layout_) expected += (s.fan_in + 1) * s.fan_out;
  if (!layout_.empty() && expected != flat_.size()) {
    throw DimensionError("param vector: layout needs " + std::to_string(expected) + " values, got " +
                         std::to_string(flat_.size()));
  }
}

ParamVector ParamVector::zeros_like(const ParamVector& other) {
  return ParamVector(std::vector<double>(other.size(), 0.0), other.layout_);
}

ParamVector ParamVector::flatten(const std::vector<Tensor>& blocks, std::vector<LayerSlot> layout) {
  if (blocks.size() != 2 * layout.size()) throw DimensionError("flatten: expected W and b per layer");
  std::vector<double> flat;
  for (std::size_t l = 0; l < layout.size(); ++l) {
    const Tensor& w = blocks[2 * l];
    const Tensor& b = blocks[2 * l + 1];
    if (w.size() != layout[l].fan_in * layout[l].fan_out || b.size() != layout[l].fan_out) {
      throw DimensionError("flatten: block shape does not match layer " + std::to_string(l));
    }
    flat.insert(flat.end(), w.values().begin(), w.values().end());
    flat.insert(flat.end(), b.values().begin(), b.values().end());
  }
  return ParamVector(std::move(flat), std::move(layout));
}

std::vector<Tensor> ParamVector::unflatten() const {
  std::vector<Tensor> blocks;
  for (std::size_t l = 0; l < layout_.size(); ++l) {
    blocks.push_back(weight(l));
    blocks.push_back(bias(l));
  }
  return blocks;
}

Tensor ParamVector::weight(std::size_t layer) const {
  const LayerSlot& s = layout_.at(layer);
  auto first = flat_.begin() + static_cast<std::ptrdiff_t>(s.weight_offset);
  return Tensor({s.fan_in, s.fan_out}, std::vector<double>(first, first + static_cast<std::ptrdiff_t>(s.fan_in * s.fan_out)));
}

Tensor ParamVector::bias(std::size_t layer) const {
  const LayerSlot& s = layout_.at(layer);
  auto first = flat_.begin() + static_cast<std::ptrdiff_t>(s.bias_offset);
  return Tensor({s.fan_out}, std::vector<double>(first, first + static_cast<std::ptrdiff_t>(s.fan_out)));
}

void ParamVector::require_same_layout(const ParamVector& other, const char* what) const {
  if (!same_layout(other)) {
    throw DimensionError(std::string(what) + ": parameter layout mismatch (" + std::to_string(size()) + " vs " +
                         std::to_string(other.size()) + ")");
  }
}

ParamVector ParamVector::axpy(double eps, const ParamVector& g) const {
  require_same_layout(g, "axpy");
  std::vector<double> out(flat_.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = flat_[i] + eps * g.flat_[i];
  return ParamVector(std::move(out), layout_);
}

double ParamVector::dot(const ParamVector& other) const {
  require_same_layout(other, "dot");
  return ops::dot(flat_, other.flat_);
}

double ParamVector::norm() const { return ops::norm2(flat_); }

ParamVector ParamVector::scaled(double s) const {
  std::vector<double> out(flat_.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = s * flat_[i];
  return ParamVector(std::move(out), layout_);
}

// ---------------------------------------------------------------------------
// MlpClassifier

MlpClassifier::MlpClassifier(std::vector<std::size_t> layer_sizes, Activation activation, std::uint64_t seed)
    : layer_sizes_(std::move(layer_sizes)), activation_(activation) {
  auto layout = mlp_layout(layer_sizes_);
  std::size_t total = 0;
  for (const auto& s : layout) total += (s.fan_in + 1) * s.fan_out;
  std::vector<double> flat(total, 0.0);
  Rng rng(seed);
  for (const auto& s : layout) {
    const double limit = std::sqrt(6.0 / static_cast<double>(s.fan_in + s.fan_out));
    for (std::size_t i = 0; i < s.fan_in * s.fan_out; ++i) flat[s.weight_offset + i] = uniform(rng, -limit, limit);
  }
  params_ = ParamVector(std::move(flat), std::move(layout));
}

MlpClassifier::MlpClassifier(std::vector<std::size_t> layer_sizes, Activation activation, ParamVector params)
    : layer_sizes_(std::move(layer_sizes)), activation_(activation) {
  auto layout = mlp_layout(layer_sizes_);
  if (params.layout() != layout) throw DimensionError("mlp: parameter layout does not match layer sizes");
  params_ = std::move(params);
}

MlpClassifier MlpClassifier::zeros(std::vector<std::size_t> layer_sizes, Activation activation) {
  auto layout = mlp_layout(layer_sizes);
  std::size_t total = 0;
  for (const auto& s : layout) total += (s.fan_in + 1) * s.fan_out;
  return MlpClassifier(std::move(layer_sizes), activation, ParamVector(std::vector<double>(total, 0.0), std::move(layout)));
}

void MlpClassifier::set_params(ParamVector params) {
  params_.require_same_layout(params, "set_params");
  params_ = std::move(params);
}

MlpClassifier MlpClassifier::with_params(ParamVector params) const {
  MlpClassifier copy = *this;
  copy.set_params(std::move(params));
  return copy;
}

void MlpClassifier::require_input(const Tensor& x) const {
  if (x.rank() != 2 || x.cols() != input_dim()) {
    throw DimensionError("mlp: input " + x.shape_string() + " does not have width " + std::to_string(input_dim()));
  }
}

Tensor MlpClassifier::logits(const Tensor& x) const {
  require_input(x);
  Tensor h = x;
  const std::size_t layers = params_.num_layers();
  for (std::size_t l = 0; l < layers; ++l) {
    h = ops::add_row(ops::matmul(h, params_.weight(l)), params_.bias(l));
    if (l + 1 < layers) h = activation_ == Activation::relu ? ops::relu(h) : ops::tanh(h);
  }
  require_finite(h, "mlp forward");
  return h;
}

Tensor MlpClassifier::forward(const Tensor& x) const { return ops::softmax_rows(logits(x)); }

MlpClassifier::Recording MlpClassifier::record(Tape& tape, const Tensor& x) const {
  require_input(x);
  Recording rec{{}, {}, {}};
  Tape::Var h = tape.constant(x);
  const std::size_t layers = params_.num_layers();
  for (std::size_t l = 0; l < layers; ++l) {
    Tape::Var w = tape.input(params_.weight(l));
    Tape::Var b = tape.input(params_.bias(l));
    rec.blocks.push_back(w);
    rec.blocks.push_back(b);
    h = tape.add_row(tape.matmul(h, w), b);
    if (l + 1 < layers) h = activation_ == Activation::relu ? tape.relu(h) : tape.tanh(h);
  }
  rec.logits = h;
  rec.probs = tape.softmax(h);
  return rec;
}

ParamVector MlpClassifier::collect(const Gradients& grads, const Recording& rec) const {
  std::vector<Tensor> blocks;
  blocks.reserve(rec.blocks.size());
  for (Tape::Var v : rec.blocks) blocks.push_back(grads.of(v));
  return ParamVector::flatten(blocks, params_.layout());
}

// ---------------------------------------------------------------------------
// Free functions

Tensor perturbed_forward(const MlpClassifier& model, const Tensor& x, const ParamVector& g, double eps, int sign) {
  if (sign != 1 && sign != -1) throw DomainError("perturbed_forward: sign must be +1 or -1");
  if (!(eps >= 0.0)) throw DomainError("perturbed_forward: eps must be nonnegative");
  model.params().require_same_layout(g, "perturbed_forward");
  return model.with_params(model.params().axpy(static_cast<double>(sign) * eps, g)).forward(x);
}

LossGradient loss_and_gradient(const MlpClassifier& model, const Tensor& x, const Tensor& targets, LossKind kind) {
  Tape tape;
  auto rec = model.record(tape, x);
  Tape::Var loss = batch_loss(tape, kind, rec.probs, targets);
  LossGradient out;
  out.loss = tape.value(loss)[0];
  out.grad = model.collect(tape.backward(loss), rec);
  return out;
}

namespace {

void require_single_example(const MlpClassifier& model, const Tensor& x) {
  if (x.rank() != 2 || x.rows() != 1 || x.cols() != model.input_dim()) {
    throw DimensionError("jacobian: expected a single 1x" + std::to_string(model.input_dim()) + " example, got " +
                         x.shape_string());
  }
}

Tape::Var head_var(const MlpClassifier::Recording& rec, OutputHead head) {
  return head == OutputHead::probabilities ? rec.probs : rec.logits;
}

}  // namespace

ParamVector vector_jacobian_product(const MlpClassifier& model, const Tensor& x, std::span<const double> u,
                                    OutputHead head) {
  require_single_example(model, x);
  if (u.size() != model.num_classes()) throw DimensionError("vjp: cotangent length must equal class count");
  Tape tape;
  auto rec = model.record(tape, x);
  Tensor seed({1, model.num_classes()}, std::vector<double>(u.begin(), u.end()));
  return model.collect(tape.backward(head_var(rec, head), seed), rec);
}

Tensor jacobian(const MlpClassifier& model, const Tensor& x, OutputHead head) {
  require_single_example(model, x);
  const std::size_t k = model.num_classes(), p = model.num_params();
  Tensor jac({k, p});
  std::vector<double> e(k, 0.0);
  for (std::size_t j = 0; j < k; ++j) {
    e[j] = 1.0;
    ParamVector row = vector_jacobian_product(model, x, e, head);
    e[j] = 0.0;
    std::ranges::copy(row.values(), jac.row(j).begin());
  }
  return jac;
}

Tensor jacobian_vector_product(const MlpClassifier& model, const Tensor& x, const ParamVector& v, OutputHead head) {
  model.params().require_same_layout(v, "jacobian_vector_product");
  const Tensor jac = jacobian(model, x, head);
  Tensor out({model.num_classes()});
  for (std::size_t j = 0; j < jac.rows(); ++j) out[j] = ops::dot(jac.row(j), v.values());
  return out;
}

JacobianNormEstimate jacobian_norm_estimate(const MlpClassifier& model, const Tensor& xs,
                                            const JacobianNormOptions& options) {
  if (xs.rows() == 0) throw DomainError("jacobian_norm_estimate: empty sample");
  JacobianNormEstimate best;
  best.value = 0.0;
  Rng rng(options.seed);
  const std::size_t k = model.num_classes();
  for (std::size_t i = 0; i < xs.rows(); ++i) {
    const Tensor x = xs.row_tensor(i);
    std::vector<double> u(k);
    for (double& v : u) v = standard_normal(rng);
    double lambda = 0.0;
    bool converged = false;
    for (std::size_t it = 0; it < options.max_iterations; ++it) {
      const double un = ops::norm2(u);
      if (un == 0.0) {
        converged = true;
        lambda = 0.0;
        break;
      }
      for (double& v : u) v /= un;
      // u ← J Jᵀ u
      ParamVector jt_u = vector_jacobian_product(model, x, u, options.head);
      Tensor next = jacobian_vector_product(model, x, jt_u, options.head);
      const double next_lambda = ops::dot(next.values(), u);
      u.assign(next.values().begin(), next.values().end());
      const bool settled = std::abs(next_lambda - lambda) <= options.tolerance * std::max(1.0, std::abs(next_lambda));
      lambda = next_lambda;
      if (settled && it > 0) {
        converged = true;
        break;
      }
    }
    const double sigma = std::sqrt(std::max(lambda, 0.0));
    best.converged = best.converged && converged;
    if (sigma > best.value || i == 0) {
      best.value = sigma;
      best.argmax_row = i;
    }
  }
  return best;
}

}  // namespace metassl
