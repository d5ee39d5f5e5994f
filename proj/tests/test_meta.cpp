#include <doctest.h>

#include <array>
#include <cmath>

#include "metassl/errors.hpp"
#include "metassl/meta.hpp"
#include "metassl/rng.hpp"
#include "metassl/verify.hpp"
#include "oracles.hpp"

using namespace metassl;

namespace {

struct Instance {
  MlpClassifier model;
  Tensor x_u;
  Batch labeled;
};

Instance random_instance(std::uint64_t seed, std::vector<std::size_t> sizes = {2, 8, 2}, std::size_t b = 4) {
  Rng rng(seed);
  MlpClassifier m(sizes, Activation::tanh, rng());
  const std::size_t d = sizes.front();
  const std::size_t k = sizes.back();
  Tensor x_u({b, d});
  for (double& v : x_u.values()) v = standard_normal(rng);
  Batch l;
  l.x = Tensor({b, d});
  for (double& v : l.x.values()) v = standard_normal(rng);
  l.y = Tensor({b, k});
  for (std::size_t i = 0; i < b; ++i) {
    l.indices.push_back(i);
    l.y(i, uniform_index(rng, k)) = 1.0;
  }
  return {std::move(m), std::move(x_u), std::move(l)};
}

}  // namespace

TEST_CASE("initialization zeroes the consistency loss and its gradient") {
  for (std::uint64_t s = 0; s < 10; ++s) {
    const Instance in = random_instance(s, {3, 6, 4}, 5);
    const PseudoLabelSet ps = init_pseudo_labels(in.model, in.x_u);
    for (std::size_t i = 0; i < ps.y_init.rows(); ++i) {
      double total = 0.0;
      for (double v : ps.y_init.row(i)) total += v;
      CHECK(std::abs(total - 1.0) <= 1e-12);
    }
    const LossGradient cg = consistency_gradient(in.model, in.x_u, ps.y_init);
    CHECK(cg.loss == 0.0);
    CHECK(cg.grad.norm() <= 1e-12);
    const Tensor yg = exact_meta_gradient(in.model, in.x_u, ps, in.labeled, 0.1);
    CHECK(ops::norm2(yg.values()) > 1e-6);
    CHECK_FALSE(ps.y_grad.has_value());
    CHECK_FALSE(ps.y_updated.has_value());
  }
}

TEST_CASE("virtual step") {
  const Instance in = random_instance(3);
  Tensor targets = in.model.forward(in.x_u);
  targets(0, 0) += 0.2;
  targets(0, 1) -= 0.2;
  const VirtualStep vs = virtual_step(in.model, in.x_u, targets, 0.25);
  for (std::size_t i = 0; i < vs.theta_after.size(); ++i) {
    CHECK(vs.theta_after.values()[i] == vs.theta_before.values()[i] - 0.25 * vs.grad.values()[i]);
  }
}

TEST_CASE("exact meta-gradient") {
  SUBCASE("vanishes at a labeled critical point") {
    const MlpClassifier m = MlpClassifier::zeros({2, 3, 2}, Activation::tanh);
    Batch l;
    l.indices = {0};
    l.x = Tensor::from_rows({{0.4, -0.3}});
    l.y = Tensor::from_rows({{0.5, 0.5}});
    const Tensor x_u = Tensor::from_rows({{1.0, 2.0}, {-1.0, 0.5}});
    const Tensor yg = exact_meta_gradient(m, x_u, init_pseudo_labels(m, x_u), l, 0.1);
    for (double v : yg.values()) CHECK(v == 0.0);
  }
  SUBCASE("linear softmax model matches a hand derivation") {
    // f(x) = softmax(x·W + b) with one input. For one labeled pair (x_l, y_l)
    // the KL gradient is (x_l·(p_l − y_l), p_l − y_l); pushing it through the
    // unlabeled Jacobian gives ∇ỹ = (2α/B)(x_u·x_l + 1)·S_u·(p_l − y_l) with
    // S_u = diag(p_u) − p_u·p_uᵀ.
    const ParamVector theta(std::vector<double>{0.7, -0.4, 0.1, 0.3}, mlp_layout(std::vector<std::size_t>{1, 2}));
    const MlpClassifier m({1, 2}, Activation::tanh, theta);
    const double xl = 0.8;
    const double xu = -1.3;
    const double alpha = 0.2;
    auto softmax2 = [&](double x) {
      const double z0 = x * 0.7 + 0.1;
      const double z1 = x * -0.4 + 0.3;
      const double e0 = std::exp(z0);
      const double e1 = std::exp(z1);
      return std::array<double, 2>{e0 / (e0 + e1), e1 / (e0 + e1)};
    };
    const auto pl = softmax2(xl);
    const auto pu = softmax2(xu);
    const double r0 = pl[0] - 1.0;
    const double r1 = pl[1] - 0.0;
    const double s00 = pu[0] - pu[0] * pu[0];
    const double s01 = -pu[0] * pu[1];
    const double s11 = pu[1] - pu[1] * pu[1];
    const double c = 2.0 * alpha * (xu * xl + 1.0);
    const double e0 = c * (s00 * r0 + s01 * r1);
    const double e1 = c * (s01 * r0 + s11 * r1);

    Batch l;
    l.indices = {0};
    l.x = Tensor::from_rows({{xl}});
    l.y = Tensor::from_rows({{1.0, 0.0}});
    const Tensor x_u = Tensor::from_rows({{xu}});
    const Tensor yg = exact_meta_gradient(m, x_u, init_pseudo_labels(m, x_u), l, alpha);
    CHECK(yg[0] == doctest::Approx(e0).epsilon(1e-13));
    CHECK(yg[1] == doctest::Approx(e1).epsilon(1e-13));
    // The unrolled oracle agrees on the same instance.
    const Tensor brute = hypergrad_oracle(m, x_u, init_pseudo_labels(m, x_u).y_init, l, alpha);
    CHECK(brute[0] == doctest::Approx(e0).epsilon(1e-7));
    CHECK(brute[1] == doctest::Approx(e1).epsilon(1e-7));
  }
  SUBCASE("agrees with the unrolled oracle on small MLPs") {
    for (std::uint64_t s = 0; s < 10; ++s) {
      const Instance in = random_instance(100 + s);
      const PseudoLabelSet ps = init_pseudo_labels(in.model, in.x_u);
      const Tensor exact = exact_meta_gradient(in.model, in.x_u, ps, in.labeled, 0.1);
      const Tensor brute = hypergrad_oracle(in.model, in.x_u, ps.y_init, in.labeled, 0.1);
      CHECK(scaled_relative_error(exact.values(), brute.values()) <= 1e-5);
    }
  }
  SUBCASE("refuses pseudo-labels away from the predictions") {
    const Instance in = random_instance(4);
    PseudoLabelSet ps = init_pseudo_labels(in.model, in.x_u);
    ps.y_init(0, 0) += 1e-6;
    CHECK_THROWS_AS(exact_meta_gradient(in.model, in.x_u, ps, in.labeled, 0.1), PreconditionError);
  }
}

TEST_CASE("first-order meta-gradient") {
  SUBCASE("agrees with the exact form") {
    const Instance in = random_instance(0);
    const Tensor exact = exact_meta_gradient(in.model, in.x_u, init_pseudo_labels(in.model, in.x_u), in.labeled, 0.1);
    const FirstOrderResult fo = first_order_meta_gradient(in.model, in.x_u, in.labeled, 0.1);
    CHECK_FALSE(fo.degenerate);
    CHECK(fo.eps == doctest::Approx(0.01 / fo.labeled_grad_norm).epsilon(1e-15));
    CHECK(scaled_relative_error(fo.y_grad.values(), exact.values()) <= 1e-3);
  }
  SUBCASE("error shrinks quadratically with the step") {
    for (std::uint64_t s = 0; s < 5; ++s) {
      const Instance in = random_instance(200 + s);
      const Tensor exact =
          exact_meta_gradient(in.model, in.x_u, init_pseudo_labels(in.model, in.x_u), in.labeled, 0.1);
      auto err = [&](double rule) {
        const auto fo = first_order_meta_gradient(in.model, in.x_u, in.labeled, 0.1, {rule, 1.0, {}});
        return scaled_relative_error(fo.y_grad.values(), exact.values());
      };
      const double coarse = err(0.01);
      const double fine = err(0.005);
      CHECK(fine / coarse == doctest::Approx(0.25).epsilon(0.05));
      CHECK(err(0.0025) < fine);
    }
  }
  SUBCASE("unscaled form differs by B/alpha") {
    const Instance in = random_instance(7);
    const auto a = first_order_meta_gradient(in.model, in.x_u, in.labeled, 0.1);
    const auto b = first_order_meta_gradient(in.model, in.x_u, in.labeled, 0.1,
                                             {0.01, 1.0, MetaGradScaling::unscaled});
    for (std::size_t i = 0; i < a.y_grad.size(); ++i) {
      CHECK(b.y_grad[i] == doctest::Approx(a.y_grad[i] * 4.0 / 0.1).epsilon(1e-12));
    }
  }
  SUBCASE("degenerate labeled gradient") {
    const Instance in = random_instance(8);
    const auto r = first_order_meta_gradient(in.model, in.x_u, ParamVector::zeros_like(in.model.params()), 0.1);
    CHECK(r.degenerate);
    for (double v : r.y_grad.values()) CHECK(v == 0.0);
  }
  SUBCASE("step is capped for tiny gradients") {
    const Instance in = random_instance(9);
    const ParamVector tiny = labeled_gradient(in.model, in.labeled).grad.scaled(1e-9);
    const auto r = first_order_meta_gradient(in.model, in.x_u, tiny, 0.1);
    CHECK_FALSE(r.degenerate);
    CHECK(r.eps == 1.0);
  }
}

TEST_CASE("pseudo-label update and projection") {
  const Instance in = random_instance(10);
  PseudoLabelSet ps = init_pseudo_labels(in.model, in.x_u);
  ps.y_grad = exact_meta_gradient(in.model, in.x_u, ps, in.labeled, 0.1);
  CHECK(*update_pseudo_labels(ps, 0.0, false).y_updated == ps.y_init);
  PseudoLabelSet zero = ps;
  zero.y_grad = Tensor(ps.y_init.shape());
  CHECK(*update_pseudo_labels(zero, 0.3, false).y_updated == ps.y_init);
  const Tensor upd = *update_pseudo_labels(ps, 0.3, false).y_updated;
  for (std::size_t i = 0; i < upd.size(); ++i) CHECK(upd[i] == ps.y_init[i] - 0.3 * (*ps.y_grad)[i]);

  const Tensor pr = project_rows_to_simplex(Tensor::from_rows({{-0.1, 1.1}}));
  CHECK(pr[0] == doctest::Approx(1e-6 / (1.1 + 1e-6)).epsilon(1e-12));
  CHECK(pr[1] == doctest::Approx(1.1 / (1.1 + 1e-6)).epsilon(1e-12));
  CHECK(std::abs(pr[0] + pr[1] - 1.0) <= 1e-12);

  PseudoLabelSet missing = init_pseudo_labels(in.model, in.x_u);
  CHECK_THROWS(update_pseudo_labels(missing, 0.1, false));
}

TEST_CASE("a small step against the meta-gradient does not raise the unrolled loss") {
  for (std::uint64_t s = 0; s < 10; ++s) {
    const Instance in = random_instance(300 + s);
    const PseudoLabelSet ps = init_pseudo_labels(in.model, in.x_u);
    const Tensor g = hypergrad_oracle(in.model, in.x_u, ps.y_init, in.labeled, 0.1);
    Tensor stepped = ps.y_init;
    for (std::size_t i = 0; i < stepped.size(); ++i) stepped[i] -= 1e-2 * g[i];
    const double h0 = unrolled_labeled_loss(in.model, in.x_u, ps.y_init, in.labeled, 0.1);
    const double h1 = unrolled_labeled_loss(in.model, in.x_u, stepped, in.labeled, 0.1);
    CHECK(h1 <= h0);
  }
}
