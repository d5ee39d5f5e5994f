#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "metassl/augment.hpp"
#include "metassl/errors.hpp"
#include "oracles.hpp"

using namespace metassl;

namespace {

Batch labeled_pair_batch() {
  Batch b;
  b.indices = {0, 1, 2};
  b.x = Tensor::from_rows({{0.0, 2.0}, {1.0, -1.0}, {3.0, 0.5}});
  b.y = Tensor::from_rows({{1.0, 0.0}, {0.0, 1.0}, {1.0, 0.0}});
  return b;
}

const Tensor kXu = Tensor::from_rows({{2.0, 0.0}, {-1.0, 4.0}, {0.5, 0.5}});
const Tensor kYhat = Tensor::from_rows({{0.3, 0.7}, {0.9, 0.1}, {0.5, 0.5}});

}  // namespace

TEST_CASE("beta(1,1) is uniform") {
  Rng rng(1);
  Tensor s = sample_beta(1.0, 10000, rng);
  std::vector<double> v(s.values().begin(), s.values().end());
  std::sort(v.begin(), v.end());
  double ks = 0.0;
  const double n = static_cast<double>(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) {
    ks = std::max({ks, (i + 1) / n - v[i], v[i] - i / n});
  }
  CHECK(ks < 0.02);
}

TEST_CASE("beta(gamma, gamma) is symmetric about one half") {
  for (double gamma : {0.1, 0.5, 1.0, 2.0, 7.5}) {
    Rng rng(static_cast<std::uint64_t>(gamma * 100));
    const std::size_t n = 20000;
    const Tensor s = sample_beta(gamma, n, rng);
    double mean = 0.0;
    for (double v : s.values()) {
      CHECK(v >= 0.0);
      CHECK(v <= 1.0);
      mean += v;
    }
    mean /= n;
    const double sd = std::sqrt(1.0 / (4.0 * (2.0 * gamma + 1.0)));
    CHECK(std::abs(mean - 0.5) < 3.0 * sd / std::sqrt(static_cast<double>(n)));
  }
}

TEST_CASE("beta(0.1, 0.1) piles up at the ends as its CDF predicts") {
  const double predicted = 2.0 * oracle::beta_cdf_symmetric(0.05, 0.1);
  CHECK(predicted > 0.6);
  Rng rng(77);
  const std::size_t n = 10000;
  const Tensor s = sample_beta(0.1, n, rng);
  std::size_t tails = 0;
  for (double v : s.values()) tails += (v <= 0.05 || v >= 0.95) ? 1 : 0;
  const double frac = static_cast<double>(tails) / n;
  CHECK(frac > 0.6);
  CHECK(std::abs(frac - predicted) < 4.0 * std::sqrt(predicted * (1 - predicted) / n));
}

TEST_CASE("gamma sampler mean") {
  for (double shape : {0.3, 1.0, 4.0}) {
    Rng rng(5);
    double mean = 0.0;
    const int n = 20000;
    for (int i = 0; i < n; ++i) mean += sample_gamma(shape, rng);
    mean /= n;
    CHECK(std::abs(mean - shape) < 4.0 * std::sqrt(shape / n));
  }
}

TEST_CASE("beta sampling domain and determinism") {
  Rng rng(0);
  CHECK_THROWS_AS(sample_beta(0.0, 3, rng), DomainError);
  CHECK_THROWS_AS(sample_beta(-1.0, 3, rng), DomainError);
  Rng a(9);
  Rng b(9);
  CHECK(sample_beta(0.7, 50, a) == sample_beta(0.7, 50, b));
}

TEST_CASE("mixup endpoints and midpoint") {
  const Batch l = labeled_pair_batch();
  const MixupBatch ones = mixup_with_lambdas(l, kXu, kYhat, Tensor::vector({1.0, 1.0, 1.0}));
  CHECK(ones.x_in == l.x);
  CHECK(ones.y_in == l.y);
  const MixupBatch zeros = mixup_with_lambdas(l, kXu, kYhat, Tensor::vector({0.0, 0.0, 0.0}));
  CHECK(zeros.x_in == kXu);
  CHECK(zeros.y_in == kYhat);
  const MixupBatch half = mixup_with_lambdas(l, kXu, kYhat, Tensor::vector({0.5, 0.5, 0.5}));
  CHECK(half.x_in(0, 0) == 1.0);
  CHECK(half.x_in(0, 1) == 1.0);
}

TEST_CASE("mixup is convex, row-stochastic and reproducible") {
  const Batch l = labeled_pair_batch();
  Rng a(4);
  Rng b(4);
  const MixupBatch m = mixup(l, kXu, kYhat, 1.0, a);
  CHECK(m.x_in == mixup(l, kXu, kYhat, 1.0, b).x_in);
  for (std::size_t i = 0; i < 3; ++i) {
    const double lam = m.lambdas[i];
    CHECK(lam >= 0.0);
    CHECK(lam <= 1.0);
    for (std::size_t j = 0; j < 2; ++j) {
      CHECK(m.x_in(i, j) >= std::min(l.x(i, j), kXu(i, j)));
      CHECK(m.x_in(i, j) <= std::max(l.x(i, j), kXu(i, j)));
      CHECK(m.x_in(i, j) == doctest::Approx(lam * l.x(i, j) + (1 - lam) * kXu(i, j)).epsilon(1e-15));
    }
    CHECK(std::abs(m.y_in(i, 0) + m.y_in(i, 1) - 1.0) <= 1e-12);
  }
}

TEST_CASE("mixup needs equal batch sizes") {
  Rng rng(1);
  CHECK_THROWS_AS(mixup(labeled_pair_batch(), kXu.gather_rows(std::vector<std::size_t>{0, 1}),
                        kYhat.gather_rows(std::vector<std::size_t>{0, 1}), 1.0, rng),
                  ConfigError);
}
