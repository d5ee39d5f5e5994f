#pragma once

#include <cstddef>
#include <optional>
#include <vector>

#include "metassl/data.hpp"
#include "metassl/model.hpp"
#include "metassl/tensor.hpp"

namespace metassl {

/// Soft pseudo-labels for one unlabeled mini-batch through one meta step.
struct PseudoLabelSet {
  std::vector<std::size_t> indices;
  Tensor y_init;                    // ỹ = f(x_u; θ_t)
  std::optional<Tensor> y_grad;     // ∇ỹ
  std::optional<Tensor> y_updated;  // ŷ = ỹ − β·∇ỹ (optionally projected)
};

/// The provisional update θ̃ = θ − α·∇θ used only to expose the pseudo-labels'
/// influence on the labeled loss; never committed.
struct VirtualStep {
  ParamVector theta_before;
  ParamVector grad;
  double alpha = 0.0;
  ParamVector theta_after;
};

/// Floor used by the pseudo-label simplex projection.
inline constexpr double kProjectionFloor = 1e-6;

/// Norm below which the labeled gradient is treated as zero.
inline constexpr double kDegenerateGradientNorm = 1e-12;

PseudoLabelSet init_pseudo_labels(const MlpClassifier& model, const Tensor& x_u, std::vector<std::size_t> indices = {});

/// Mean consistency-loss gradient (1/B^u)·Σ_i ∇θ Φ^MSE(f(x_i; θ), targets_i).
LossGradient consistency_gradient(const MlpClassifier& model, const Tensor& x_u, const Tensor& targets);

/// ∇θ^l: mean KL gradient of the labeled batch at the current parameters.
LossGradient labeled_gradient(const MlpClassifier& model, const Batch& labeled);

/// One SGD step on the MSE consistency loss against `targets`.
VirtualStep virtual_step(const MlpClassifier& model, const Tensor& x_u, const Tensor& targets, double alpha);

/// Exact meta-gradient ∂G(θ̃)/∂ỹ for the MSE consistency loss, in closed form:
/// row i = (2α/B^u)·J_θ f(x_i^u; θ)·∇θ^l. Requires the pseudo-labels to sit at
/// the current predictions (then θ̃ = θ); throws PreconditionError otherwise.
Tensor exact_meta_gradient(const MlpClassifier& model, const Tensor& x_u, const PseudoLabelSet& pseudo,
                           const Batch& labeled, double alpha);

/// Prefactor of the finite-difference meta-gradient.
enum class MetaGradScaling {
  alpha_over_batch,  // α/(B^u·ε), the closed-form-consistent default
  unscaled,          // 1/ε, the bare algorithm-listing form
};

struct FirstOrderOptions {
  double eps_rule = 0.01;  // ε = eps_rule / ‖∇θ^l‖
  double eps_cap = 1.0;
  MetaGradScaling scaling = MetaGradScaling::alpha_over_batch;
};

struct FirstOrderResult {
  Tensor y_grad;
  double eps = 0.0;
  double labeled_grad_norm = 0.0;
  bool degenerate = false;  // ‖∇θ^l‖ < 1e-12; y_grad is zero
};

/// Symmetric finite difference of the network output along ∇θ^l.
FirstOrderResult first_order_meta_gradient(const MlpClassifier& model, const Tensor& x_u, const Batch& labeled,
                                           double alpha, const FirstOrderOptions& options = {});

/// Same, given a precomputed labeled gradient.
FirstOrderResult first_order_meta_gradient(const MlpClassifier& model, const Tensor& x_u,
                                           const ParamVector& labeled_grad, double alpha,
                                           const FirstOrderOptions& options = {});

/// Clamp each row to ≥ 1e-6 and renormalize to sum one.
Tensor project_rows_to_simplex(const Tensor& y);

/// ŷ = ỹ − β·∇ỹ, then optional projection. Requires y_grad.
PseudoLabelSet update_pseudo_labels(PseudoLabelSet pseudo, double beta, bool project);

}  // namespace metassl
