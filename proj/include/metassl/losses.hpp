#pragma once

#include <span>
#include <string_view>
#include <vector>

#include "metassl/tape.hpp"
#include "metassl/tensor.hpp"

namespace metassl {

/// Discrepancy Φ(p, y) between a prediction p and a target distribution y.
enum class LossKind { kl, mse };

std::string_view to_string(LossKind kind);

/// Floor applied to prediction entries inside log arguments only.
inline constexpr double kProbabilityFloor = 1e-12;

/// Nonnegative entries summing to one, both within `tol`.
bool is_distribution(std::span<const double> y, double tol = 1e-8);

/// Σ_n y_n log(y_n / p_n) with 0·log 0 = 0. Throws DomainError if y is not a
/// distribution.
double kl(std::span<const double> p, std::span<const double> y);

/// ‖p − y‖², summed over classes (no 1/K).
double mse(std::span<const double> p, std::span<const double> y);

double loss(LossKind kind, std::span<const double> p, std::span<const double> y);

std::vector<double> kl_grad_p(std::span<const double> p, std::span<const double> y);
std::vector<double> mse_grad_p(std::span<const double> p, std::span<const double> y);
std::vector<double> mse_grad_y(std::span<const double> p, std::span<const double> y);

/// (1/B)·Σ_i Φ(preds_i, targets_i). Throws DomainError on an empty batch.
double batch_loss(LossKind kind, const Tensor& preds, const Tensor& targets);

/// Records the batch-mean loss on `tape`; targets are treated as constants.
Tape::Var batch_loss(Tape& tape, LossKind kind, Tape::Var preds, const Tensor& targets);

}  // namespace metassl
