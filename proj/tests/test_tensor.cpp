#include <doctest.h>

#include <cmath>
#include <limits>

#include "metassl/errors.hpp"
#include "metassl/rng.hpp"
#include "metassl/tape.hpp"
#include "metassl/tensor.hpp"
#include "oracles.hpp"

using namespace metassl;

namespace {

Tensor random_tensor(std::size_t r, std::size_t c, Rng& rng) {
  Tensor t({r, c});
  for (double& v : t.values()) v = uniform(rng, -2.0, 2.0);
  return t;
}

// Gradient of sum(w ⊙ op(inputs)) for a fixed random weighting w, by tape and
// by central differences on every input entry.
template <typename Build>
double tape_vs_fd(std::vector<Tensor> inputs, Build build, Rng& rng) {
  Tape probe;
  std::vector<Tape::Var> pv;
  for (const Tensor& t : inputs) pv.push_back(probe.input(t));
  const Tensor out_shape = probe.value(build(probe, pv));
  Tensor w(out_shape.shape());
  for (double& v : w.values()) v = uniform(rng, -1.0, 1.0);

  auto objective = [&](const std::vector<Tensor>& xs) {
    Tape t;
    std::vector<Tape::Var> vs;
    for (const Tensor& x : xs) vs.push_back(t.input(x));
    const Tensor& y = t.value(build(t, vs));
    double s = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) s += w[i] * y[i];
    return s;
  };

  Tape t;
  std::vector<Tape::Var> vs;
  for (const Tensor& x : inputs) vs.push_back(t.input(x));
  const Tape::Var y = build(t, vs);
  const Gradients g = t.backward(y, w);

  double worst = 0.0;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    oracle::Vec flat(inputs[k].values().begin(), inputs[k].values().end());
    const auto f = [&](const oracle::Vec& v) {
      std::vector<Tensor> xs = inputs;
      xs[k] = Tensor(inputs[k].shape(), v);
      return objective(xs);
    };
    const oracle::Vec fd = oracle::central_difference(f, flat, 1e-5);
    const Tensor adj = g.of(vs[k]);
    worst = std::max(worst, oracle::scaled_error({adj.values().begin(), adj.values().end()}, fd));
  }
  return worst;
}

}  // namespace

TEST_CASE("matmul hand products") {
  const Tensor m = Tensor::from_rows({{1.5, -2.0}, {3.0, 0.25}});
  CHECK(ops::matmul(Tensor::from_rows({{1, 0}, {0, 1}}), m) == m);
  const Tensor r = ops::matmul(Tensor::from_rows({{1, 2}}), Tensor::from_rows({{3}, {4}}));
  CHECK(r.shape() == std::vector<std::size_t>{1, 1});
  CHECK(r[0] == 11.0);
  CHECK_THROWS_AS(ops::matmul(Tensor::zeros(2, 3), Tensor::zeros(2, 3)), DimensionError);
}

TEST_CASE("transposed products agree with explicit loops") {
  Rng rng(3);
  const Tensor a = random_tensor(3, 4, rng);
  const Tensor b = random_tensor(3, 2, rng);
  const Tensor c = random_tensor(5, 4, rng);
  const Tensor tn = ops::matmul_tn(a, b);
  const Tensor nt = ops::matmul_nt(a, c);
  for (std::size_t i = 0; i < 4; ++i) {
    for (std::size_t j = 0; j < 2; ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < 3; ++k) s += a(k, i) * b(k, j);
      CHECK(tn(i, j) == doctest::Approx(s).epsilon(1e-14));
    }
  }
  for (std::size_t i = 0; i < 3; ++i) {
    for (std::size_t j = 0; j < 5; ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < 4; ++k) s += a(i, k) * c(j, k);
      CHECK(nt(i, j) == doctest::Approx(s).epsilon(1e-14));
    }
  }
}

TEST_CASE("softmax values and stability") {
  const Tensor a = ops::softmax_rows(Tensor::from_rows({{0, 0}, {1000, 1000}, {0, std::log(3.0)}}));
  CHECK(a(0, 0) == doctest::Approx(0.5));
  CHECK(a(1, 0) == doctest::Approx(0.5));
  CHECK(a(1, 1) == doctest::Approx(0.5));
  CHECK(a(2, 0) == doctest::Approx(0.25).epsilon(1e-15));
  CHECK(a(2, 1) == doctest::Approx(0.75).epsilon(1e-15));

  Rng rng(11);
  const Tensor big = ops::softmax_rows(random_tensor(50, 7, rng));
  for (std::size_t r = 0; r < big.rows(); ++r) {
    double s = 0.0;
    for (double v : big.row(r)) {
      CHECK(v > 0.0);
      CHECK(v < 1.0);
      s += v;
    }
    CHECK(std::abs(s - 1.0) <= 1e-12);
  }
}

TEST_CASE("non-finite values are rejected") {
  Tensor t = Tensor::zeros(1, 2);
  t[1] = std::numeric_limits<double>::quiet_NaN();
  CHECK_FALSE(t.all_finite());
  CHECK_THROWS_AS(require_finite(t, "test"), NumericalError);
  CHECK_THROWS_AS(Tensor({2, 2}, {1.0, 2.0, 3.0}), DimensionError);
}

TEST_CASE("tape primitives match central differences") {
  Rng rng(5);
  for (int trial = 0; trial < 5; ++trial) {
    const Tensor a = random_tensor(3, 4, rng);
    const Tensor b = random_tensor(4, 2, rng);
    const Tensor c = random_tensor(3, 4, rng);
    const Tensor row = random_tensor(1, 4, rng);
    CHECK(tape_vs_fd({a, b}, [](Tape& t, auto& v) { return t.matmul(v[0], v[1]); }, rng) < 1e-6);
    CHECK(tape_vs_fd({a, row}, [](Tape& t, auto& v) { return t.add_row(v[0], v[1]); }, rng) < 1e-6);
    CHECK(tape_vs_fd({a, c}, [](Tape& t, auto& v) { return t.add(v[0], v[1]); }, rng) < 1e-6);
    CHECK(tape_vs_fd({a, c}, [](Tape& t, auto& v) { return t.sub(v[0], v[1]); }, rng) < 1e-6);
    CHECK(tape_vs_fd({a, c}, [](Tape& t, auto& v) { return t.mul(v[0], v[1]); }, rng) < 1e-6);
    CHECK(tape_vs_fd({a}, [](Tape& t, auto& v) { return t.scale(v[0], -1.7); }, rng) < 1e-6);
    CHECK(tape_vs_fd({a}, [](Tape& t, auto& v) { return t.square(v[0]); }, rng) < 1e-6);
    CHECK(tape_vs_fd({a}, [](Tape& t, auto& v) { return t.tanh(v[0]); }, rng) < 1e-6);
    CHECK(tape_vs_fd({a}, [](Tape& t, auto& v) { return t.relu(v[0]); }, rng) < 1e-6);
    CHECK(tape_vs_fd({a}, [](Tape& t, auto& v) { return t.softmax(v[0]); }, rng) < 1e-6);
    CHECK(tape_vs_fd({a}, [](Tape& t, auto& v) { return t.sum(v[0]); }, rng) < 1e-6);
  }
}

TEST_CASE("backward basics") {
  Tape t;
  const auto x = t.input(Tensor::vector({3.0}));
  const auto k = t.input(Tensor::vector({2.0}));
  const auto y = t.add(t.square(x), t.scale(t.constant(Tensor::vector({5.0})), 1.0));
  const Gradients g = t.backward(t.sum(y));
  CHECK(g.of(x)[0] == 6.0);
  CHECK(g.of(k)[0] == 0.0);  // unreached input
  CHECK(t.consumed());
  CHECK_THROWS_AS(t.backward(y), UsageError);
  CHECK_THROWS_AS(t.input(Tensor::vector({1.0})), UsageError);
}

TEST_CASE("non-scalar output needs an explicit seed") {
  Tape t;
  const auto x = t.input(Tensor::zeros(2, 2));
  CHECK_THROWS(t.backward(t.tanh(x)));
}

TEST_CASE("diamond graph sums path-wise gradients") {
  // y = a·b + a·c with b = 2a, c = a²: dy/da = 4a + 3a² on the two paths.
  Tape t;
  const auto a = t.input(Tensor::vector({1.5}));
  const auto b = t.scale(a, 2.0);
  const auto c = t.square(a);
  const auto y = t.add(t.mul(a, b), t.mul(a, c));
  const Gradients g = t.backward(t.sum(y));
  CHECK(g.of(a)[0] == doctest::Approx(4 * 1.5 + 3 * 1.5 * 1.5).epsilon(1e-15));
}
