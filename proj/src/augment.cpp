#include "metassl/augment.hpp"

#include <cmath>
#include <string>

#include <boost/random/gamma_distribution.hpp>

#include "metassl/errors.hpp"

namespace metassl {

double sample_gamma(double shape, Rng& rng) {
  if (!(shape > 0.0)) throw DomainError("sample_gamma: shape must be positive");
  return boost::random::gamma_distribution<double>(shape, 1.0)(rng);
}

Tensor sample_beta(double gamma, std::size_t n, Rng& rng) {
  if (!(gamma > 0.0)) throw DomainError("sample_beta: gamma must be positive");
  Tensor out({n});
  for (std::size_t i = 0; i < n; ++i) {
    const double a = sample_gamma(gamma, rng);
    const double b = sample_gamma(gamma, rng);
    // Both draws can underflow to zero for tiny γ; fall back to a fair coin,
    // which is the γ → 0 limit of Beta(γ, γ).
    out[i] = (a + b) > 0.0 ? a / (a + b) : (uniform01(rng) < 0.5 ? 0.0 : 1.0);
  }
  return out;
}

MixupBatch mixup_with_lambdas(const Batch& labeled, const Tensor& x_u, const Tensor& y_hat, const Tensor& lambdas) {
  const std::size_t b = labeled.x.rows();
  if (x_u.rows() != b || y_hat.rows() != b || labeled.y.rows() != b) {
    throw ConfigError("mixup: labeled and unlabeled batches must have the same size (" + std::to_string(b) + " vs " +
                      std::to_string(x_u.rows()) + ")");
  }
  if (x_u.cols() != labeled.x.cols() || y_hat.cols() != labeled.y.cols()) {
    throw DimensionError("mixup: feature or class dimensions differ");
  }
  if (lambdas.size() != b) throw DimensionError("mixup: one coefficient per pair required");
  MixupBatch out{Tensor(labeled.x.shape()), Tensor(labeled.y.shape()), lambdas};
  for (std::size_t i = 0; i < b; ++i) {
    const double lam = lambdas[i];
    if (!(lam >= 0.0 && lam <= 1.0)) throw DomainError("mixup: coefficient outside [0, 1]");
    for (std::size_t c = 0; c < out.x_in.cols(); ++c) {
      out.x_in(i, c) = lam * labeled.x(i, c) + (1.0 - lam) * x_u(i, c);
    }
    for (std::size_t c = 0; c < out.y_in.cols(); ++c) {
      out.y_in(i, c) = lam * labeled.y(i, c) + (1.0 - lam) * y_hat(i, c);
    }
  }
  return out;
}

MixupBatch mixup(const Batch& labeled, const Tensor& x_u, const Tensor& y_hat, double gamma, Rng& rng) {
  if (x_u.rows() != labeled.x.rows()) {
    throw ConfigError("mixup: labeled and unlabeled batches must have the same size (" +
                      std::to_string(labeled.x.rows()) + " vs " + std::to_string(x_u.rows()) + ")");
  }
  return mixup_with_lambdas(labeled, x_u, y_hat, sample_beta(gamma, x_u.rows(), rng));
}

}  // namespace metassl
