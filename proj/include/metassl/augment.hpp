#pragma once

#include <cstddef>

#include "metassl/data.hpp"
#include "metassl/rng.hpp"
#include "metassl/tensor.hpp"

namespace metassl {

/// Gamma(shape, 1) draw: Marsaglia–Tsang for shape ≥ 1, and the
/// Gamma(a) = Gamma(a+1)·U^(1/a) boost for shape < 1.
double sample_gamma(double shape, Rng& rng);

/// n i.i.d. Beta(γ, γ) draws as X/(X+Y) with X, Y ~ Gamma(γ, 1).
/// Throws DomainError for γ ≤ 0.
Tensor sample_beta(double gamma, std::size_t n, Rng& rng);

/// Cross-domain mixup of paired labeled and unlabeled examples.
struct MixupBatch {
  Tensor x_in;     // λ_i·x_i^l + (1 − λ_i)·x_i^u
  Tensor y_in;     // λ_i·y_i + (1 − λ_i)·ŷ_i
  Tensor lambdas;  // one λ per pair, unfolded
};

/// Pairs the i-th labeled example with the i-th unlabeled one. Requires equal
/// batch sizes (ConfigError otherwise).
MixupBatch mixup(const Batch& labeled, const Tensor& x_u, const Tensor& y_hat, double gamma, Rng& rng);

/// Deterministic core of mixup() with caller-supplied coefficients.
MixupBatch mixup_with_lambdas(const Batch& labeled, const Tensor& x_u, const Tensor& y_hat, const Tensor& lambdas);

}  // namespace metassl
