#include <doctest.h>

#include <cmath>
#include <limits>
#include <sstream>

#include "metassl/errors.hpp"
#include "metassl/meta.hpp"
#include "metassl/tensor.hpp"
#include "metassl/verify.hpp"

using namespace metassl;

namespace {

StepRecord theorem_record(std::size_t step, double before, double after) {
  StepRecord r;
  r.step = step;
  r.G_before = before;
  r.G_after = after;
  r.theorem_mode = true;
  r.beta = 0.1;
  r.pseudo_grad_norm = 0.5;
  return r;
}

struct Fixture {
  MlpClassifier model{{2, 5, 2}, Activation::tanh, 21};
  Tensor x_u = Tensor::from_rows({{0.3, -0.2}, {1.0, 0.4}, {-0.6, 0.9}});
  Batch labeled{{0, 1}, Tensor::from_rows({{0.5, 0.5}, {-1.0, 0.2}}), Tensor::from_rows({{1.0, 0.0}, {0.0, 1.0}})};
};

}  // namespace

TEST_CASE("learning rate condition") {
  const LrCondition ok = check_lr_condition(0.1, 0.1, 1.0, 1.0, 2.0);
  CHECK(ok.product == doctest::Approx(1e-3));
  CHECK(ok.bound == doctest::Approx(0.125));
  CHECK(ok.satisfied);
  // Equality does not satisfy the strict condition.
  CHECK_FALSE(check_lr_condition(1.0, 0.125, 1.0, 1.0, 2.0).satisfied);
  CHECK_FALSE(check_lr_condition(1.0, 1.0, 2.0, 3.0, 1.0).satisfied);
  const LrCondition flat = check_lr_condition(5.0, 5.0, 0.0, 1.0, 2.0);
  CHECK(std::isinf(flat.bound));
  CHECK(flat.satisfied);
}

TEST_CASE("descent audit") {
  std::vector<StepRecord> recs;
  for (std::size_t t = 0; t < 5; ++t) recs.push_back(theorem_record(t, 1.0 - 0.1 * t, 0.95 - 0.1 * t));
  CHECK(descent_audit(recs).passed());
  CHECK(descent_audit(recs).steps == 5);

  recs[2].G_after = recs[2].G_before + 1e-9;
  DescentAudit a = descent_audit(recs);
  CHECK(a.violations == 1);
  CHECK(a.violation_steps == std::vector<std::size_t>{2});
  CHECK(a.worst_margin == doctest::Approx(1e-9));

  recs[2].G_after = recs[2].G_before + 1e-11;
  CHECK(descent_audit(recs).violations == 0);

  // A flat step with a large pseudo-label gradient contradicts the theorem's
  // equality case.
  recs[3].G_after = recs[3].G_before;
  CHECK(descent_audit(recs).equality_mismatches == 1);
  recs[3].pseudo_grad_norm = 0.0;
  CHECK(descent_audit(recs).equality_mismatches == 0);

  recs[4].aborted = true;
  CHECK(descent_audit(recs).violations == 1);

  recs[1].theorem_mode = false;
  CHECK_THROWS_AS(descent_audit(recs), PreconditionError);
}

TEST_CASE("Lipschitz estimate of a quadratic") {
  // g(θ) = ‖Xθ − y‖²/N has the constant Hessian 2XᵀX/N.
  const double X[3][2] = {{1.0, 2.0}, {0.5, -1.0}, {3.0, 0.25}};
  const double Y[3] = {1.0, -2.0, 0.5};
  const GradientFn grad = [&](std::span<const double> th) {
    std::vector<double> g(2, 0.0);
    for (int i = 0; i < 3; ++i) {
      const double r = X[i][0] * th[0] + X[i][1] * th[1] - Y[i];
      g[0] += 2.0 * X[i][0] * r / 3.0;
      g[1] += 2.0 * X[i][1] * r / 3.0;
    }
    return g;
  };
  double a = 0.0, b = 0.0, c = 0.0;
  for (const auto& row : X) {
    a += 2.0 * row[0] * row[0] / 3.0;
    b += 2.0 * row[0] * row[1] / 3.0;
    c += 2.0 * row[1] * row[1] / 3.0;
  }
  const double lambda_max = 0.5 * (a + c) + std::sqrt(0.25 * (a - c) * (a - c) + b * b);

  const std::vector<double> theta = {0.2, -0.3};
  double previous = 0.0;
  for (std::size_t n : {1, 2, 4, 8, 16}) {
    const double est = estimate_lipschitz(grad, theta, {n, 0.05, 3});
    CHECK(est >= previous);
    CHECK(est <= lambda_max * (1 + 1e-9));
    previous = est;
  }
  CHECK(previous == doctest::Approx(lambda_max).epsilon(1e-3));
  CHECK_THROWS_AS(estimate_lipschitz(grad, theta, {0, 0.05, 3}), DomainError);
  CHECK_THROWS_AS(estimate_lipschitz(grad, theta, {4, 0.0, 3}), DomainError);

  const Fixture f;
  CHECK(estimate_L0(f.model, Batch{}) == 0.0);
  CHECK(estimate_L0(f.model, f.labeled) > 0.0);
}

TEST_CASE("unrolled oracle") {
  const Fixture f;
  const PseudoLabelSet pseudo = init_pseudo_labels(f.model, f.x_u);
  const Tensor zero = hypergrad_oracle(f.model, f.x_u, pseudo.y_init, f.labeled, 0.0);
  CHECK(ops::max_abs(zero.values()) == 0.0);

  const Tensor coarse = hypergrad_oracle(f.model, f.x_u, pseudo.y_init, f.labeled, 0.2, 1e-3);
  const Tensor fine = hypergrad_oracle(f.model, f.x_u, pseudo.y_init, f.labeled, 0.2, 5e-4);
  const Tensor exact = exact_meta_gradient(f.model, f.x_u, pseudo, f.labeled, 0.2);
  CHECK(scaled_relative_error(fine.values(), exact.values()) < 1e-6);
  CHECK(scaled_relative_error(coarse.values(), fine.values()) < 1e-5);

  CHECK(unrolled_labeled_loss(f.model, f.x_u, pseudo.y_init, f.labeled, 0.2) ==
        doctest::Approx(labeled_gradient(f.model, f.labeled).loss).epsilon(1e-14));
}

TEST_CASE("scaled relative error") {
  const std::vector<double> ref = {1.0, -4.0};
  CHECK(scaled_relative_error(std::vector{1.0, -3.0}, ref) == doctest::Approx(0.25));
  CHECK(scaled_relative_error(std::vector{0.0, 0.0}, std::vector{0.0, 0.0}) == 0.0);
  CHECK(std::isinf(scaled_relative_error(std::vector{1e-3, 0.0}, std::vector{0.0, 0.0})));
}

TEST_CASE("pseudo-label gradient Lipschitz spot check") {
  const Fixture f;
  Lemma1Options opt;
  opt.n_pairs = 10;
  const Lemma1Result frozen = lemma1_spot_check(f.model, f.x_u, f.labeled, 0.0, opt);
  CHECK(frozen.max_ratio == 0.0);
  CHECK(frozen.pairs == 10);

  const Lemma1Result r = lemma1_spot_check(f.model, f.x_u, f.labeled, 0.3, opt);
  CHECK(r.max_ratio > 0.0);
  CHECK(r.holds);
  CHECK(r.bound == doctest::Approx(2.0 * 4.0 * 0.09 * r.M_hat * r.M_hat * r.L0_hat));
}

TEST_CASE("report format") {
  VerifyReport report;
  report.M_hat = 0.1;
  std::ostringstream out;
  write_report(out, report);
  CHECK(out.str().find("estimates=empirical") != std::string::npos);
  CHECK(out.str().find("M_hat=0.10000000000000001") != std::string::npos);
  VerifyReport sink;
  CHECK_THROWS_AS(run_suite("nope", {}, sink), ConfigError);
}

TEST_CASE("gradcheck sweep on a few configurations") {
  CHECK(gradcheck_sweep(5, 1) < 1e-5);
  const HypergradTriangle t = hypergrad_triangle(3, 1);
  CHECK(t.exact_vs_oracle <= 1e-5);
  CHECK(t.first_order_vs_exact <= 1e-3);
}
