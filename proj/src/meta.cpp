#include "metassl/meta.hpp"

#include <algorithm>
#include <cmath>

#include "metassl/errors.hpp"

namespace metassl {

PseudoLabelSet init_pseudo_labels(const MlpClassifier& model, const Tensor& x_u, std::vector<std::size_t> indices) {
  PseudoLabelSet out;
  out.y_init = model.forward(x_u);
  if (indices.empty()) {
    indices.resize(x_u.rows());
    for (std::size_t i = 0; i < indices.size(); ++i) indices[i] = i;
  }
  if (indices.size() != x_u.rows()) throw DimensionError("init_pseudo_labels: one index per row required");
  out.indices = std::move(indices);
  return out;
}

LossGradient consistency_gradient(const MlpClassifier& model, const Tensor& x_u, const Tensor& targets) {
  return loss_and_gradient(model, x_u, targets, LossKind::mse);
}

LossGradient labeled_gradient(const MlpClassifier& model, const Batch& labeled) {
  return loss_and_gradient(model, labeled.x, labeled.y, LossKind::kl);
}

VirtualStep virtual_step(const MlpClassifier& model, const Tensor& x_u, const Tensor& targets, double alpha) {
  VirtualStep step;
  step.theta_before = model.params();
  step.grad = consistency_gradient(model, x_u, targets).grad;
  step.alpha = alpha;
  step.theta_after = step.theta_before.axpy(-alpha, step.grad);
  return step;
}

Tensor exact_meta_gradient(const MlpClassifier& model, const Tensor& x_u, const PseudoLabelSet& pseudo,
                           const Batch& labeled, double alpha) {
  if (pseudo.y_init.shape() != std::vector<std::size_t>{x_u.rows(), model.num_classes()}) {
    throw DimensionError("exact_meta_gradient: pseudo-labels " + pseudo.y_init.shape_string() +
                         " do not match the unlabeled batch");
  }
  const Tensor current = model.forward(x_u);
  if (ops::max_abs_diff(current.values(), pseudo.y_init.values()) > 1e-12) {
    throw PreconditionError("exact_meta_gradient: pseudo-labels are not at the current predictions");
  }
  const ParamVector g = labeled_gradient(model, labeled).grad;
  const double b_u = static_cast<double>(x_u.rows());
  const double factor = 2.0 * alpha / b_u;
  Tensor out({x_u.rows(), model.num_classes()});
  for (std::size_t i = 0; i < x_u.rows(); ++i) {
    const Tensor jv = jacobian_vector_product(model, x_u.row_tensor(i), g);
    for (std::size_t j = 0; j < jv.size(); ++j) out(i, j) = factor * jv[j];
  }
  return out;
}

FirstOrderResult first_order_meta_gradient(const MlpClassifier& model, const Tensor& x_u, const Batch& labeled,
                                           double alpha, const FirstOrderOptions& options) {
  return first_order_meta_gradient(model, x_u, labeled_gradient(model, labeled).grad, alpha, options);
}

FirstOrderResult first_order_meta_gradient(const MlpClassifier& model, const Tensor& x_u,
                                           const ParamVector& labeled_grad, double alpha,
                                           const FirstOrderOptions& options) {
  FirstOrderResult out;
  out.y_grad = Tensor({x_u.rows(), model.num_classes()});
  out.labeled_grad_norm = labeled_grad.norm();
  if (out.labeled_grad_norm < kDegenerateGradientNorm) {
    out.degenerate = true;
    return out;
  }
  out.eps = std::min(options.eps_rule / out.labeled_grad_norm, options.eps_cap);
  const Tensor plus = perturbed_forward(model, x_u, labeled_grad, out.eps, +1);
  const Tensor minus = perturbed_forward(model, x_u, labeled_grad, out.eps, -1);
  const double prefactor = options.scaling == MetaGradScaling::alpha_over_batch
                               ? alpha / (static_cast<double>(x_u.rows()) * out.eps)
                               : 1.0 / out.eps;
  for (std::size_t i = 0; i < out.y_grad.size(); ++i) out.y_grad[i] = prefactor * (plus[i] - minus[i]);
  return out;
}

Tensor project_rows_to_simplex(const Tensor& y) {
  Tensor out = y;
  for (std::size_t i = 0; i < out.rows(); ++i) {
    auto r = out.row(i);
    double total = 0.0;
    for (double& v : r) {
      v = std::max(v, kProjectionFloor);
      total += v;
    }
    for (double& v : r) v /= total;
  }
  return out;
}

PseudoLabelSet update_pseudo_labels(PseudoLabelSet pseudo, double beta, bool project) {
  if (!pseudo.y_grad) throw PreconditionError("update_pseudo_labels: meta-gradient not computed");
  if (pseudo.y_grad->shape() != pseudo.y_init.shape()) throw DimensionError("update_pseudo_labels: shape mismatch");
  Tensor updated = pseudo.y_init;
  for (std::size_t i = 0; i < updated.size(); ++i) updated[i] -= beta * (*pseudo.y_grad)[i];
  pseudo.y_updated = project ? project_rows_to_simplex(updated) : std::move(updated);
  return pseudo;
}

}  // namespace metassl
