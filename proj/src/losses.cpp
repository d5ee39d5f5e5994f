#include "metassl/losses.hpp"

#include <cmath>
#include <string>

#include "metassl/errors.hpp"

namespace metassl {
namespace {

void require_same_length(std::span<const double> p, std::span<const double> y, const char* op) {
  if (p.size() != y.size()) {
    throw DimensionError(std::string(op) + ": length mismatch " + std::to_string(p.size()) + " vs " +
                         std::to_string(y.size()));
  }
}

void require_batch(const Tensor& preds, const Tensor& targets) {
  if (preds.shape() != targets.shape()) {
    throw DimensionError("batch_loss: " + preds.shape_string() + " vs " + targets.shape_string());
  }
  if (preds.rows() == 0 || preds.size() == 0) throw DomainError("batch_loss: empty batch");
}

}  // namespace

std::string_view to_string(LossKind kind) { return kind == LossKind::kl ? "kl" : "mse"; }

bool is_distribution(std::span<const double> y, double tol) {
  double total = 0.0;
  for (double v : y) {
    if (!(v >= -tol)) return false;
    total += v;
  }
  return std::abs(total - 1.0) <= tol;
}

double kl(std::span<const double> p, std::span<const double> y) {
  require_same_length(p, y, "kl");
  if (!is_distribution(y)) throw DomainError("kl: target is not a probability distribution");
  double total = 0.0;
  for (std::size_t n = 0; n < y.size(); ++n) {
    if (y[n] <= 0.0) continue;
    total += y[n] * (std::log(y[n]) - std::log(std::max(p[n], kProbabilityFloor)));
  }
  return total;
}

double mse(std::span<const double> p, std::span<const double> y) {
  require_same_length(p, y, "mse");
  double total = 0.0;
  for (std::size_t n = 0; n < y.size(); ++n) total += (p[n] - y[n]) * (p[n] - y[n]);
  return total;
}

double loss(LossKind kind, std::span<const double> p, std::span<const double> y) {
  return kind == LossKind::kl ? kl(p, y) : mse(p, y);
}

std::vector<double> kl_grad_p(std::span<const double> p, std::span<const double> y) {
  require_same_length(p, y, "kl_grad_p");
  std::vector<double> g(p.size(), 0.0);
  for (std::size_t n = 0; n < p.size(); ++n) {
    if (y[n] > 0.0 && p[n] > kProbabilityFloor) g[n] = -y[n] / p[n];
  }
  return g;
}

std::vector<double> mse_grad_p(std::span<const double> p, std::span<const double> y) {
  require_same_length(p, y, "mse_grad_p");
  std::vector<double> g(p.size());
  for (std::size_t n = 0; n < p.size(); ++n) g[n] = 2.0 * (p[n] - y[n]);
  return g;
}

std::vector<double> mse_grad_y(std::span<const double> p, std::span<const double> y) {
  require_same_length(p, y, "mse_grad_y");
  std::vector<double> g(p.size());
  for (std::size_t n = 0; n < p.size(); ++n) g[n] = -2.0 * (p[n] - y[n]);
  return g;
}

double batch_loss(LossKind kind, const Tensor& preds, const Tensor& targets) {
  require_batch(preds, targets);
  double total = 0.0;
  for (std::size_t i = 0; i < preds.rows(); ++i) total += loss(kind, preds.row(i), targets.row(i));
  return total / static_cast<double>(preds.rows());
}

Tape::Var batch_loss(Tape& tape, LossKind kind, Tape::Var preds, const Tensor& targets) {
  const Tensor& p = tape.value(preds);
  const double value = batch_loss(kind, p, targets);
  const double inv_b = 1.0 / static_cast<double>(p.rows());
  return tape.custom({preds}, Tensor::vector({value}), [p, targets, kind, inv_b](const Tensor& g) {
    Tensor d(p.shape());
    for (std::size_t i = 0; i < p.rows(); ++i) {
      auto gi = kind == LossKind::kl ? kl_grad_p(p.row(i), targets.row(i)) : mse_grad_p(p.row(i), targets.row(i));
      for (std::size_t j = 0; j < p.cols(); ++j) d(i, j) = g[0] * inv_b * gi[j];
    }
    return std::vector<Tensor>{std::move(d)};
  });
}

}  // namespace metassl
