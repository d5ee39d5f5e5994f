#pragma once

// Independent reference implementations used only by the tests. Nothing here
// calls into the library's numerical kernels.

#include <cmath>
#include <cstddef>
#include <functional>
#include <vector>

namespace oracle {

using Vec = std::vector<double>;

inline Vec central_difference(const std::function<double(const Vec&)>& f, Vec x, double h) {
  Vec g(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double saved = x[i];
    x[i] = saved + h;
    const double fp = f(x);
    x[i] = saved - h;
    const double fm = f(x);
    x[i] = saved;
    g[i] = (fp - fm) / (2.0 * h);
  }
  return g;
}

inline double max_abs(const Vec& a) {
  double m = 0.0;
  for (double v : a) m = std::max(m, std::abs(v));
  return m;
}

inline double scaled_error(const Vec& a, const Vec& ref) {
  double d = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) d = std::max(d, std::abs(a[i] - ref[i]));
  const double s = max_abs(ref);
  return s == 0.0 ? d : d / s;
}

/// Straight-loop MLP forward pass over the flat layout W (fan_in × fan_out,
/// row-major) followed by b, hidden activation tanh or relu, softmax output.
inline Vec mlp_forward(const std::vector<std::size_t>& sizes, const Vec& theta, const Vec& x, bool relu,
                       bool softmax = true) {
  Vec h = x;
  std::size_t off = 0;
  for (std::size_t l = 0; l + 1 < sizes.size(); ++l) {
    const std::size_t fi = sizes[l];
    const std::size_t fo = sizes[l + 1];
    Vec z(fo, 0.0);
    for (std::size_t o = 0; o < fo; ++o) {
      double acc = 0.0;
      for (std::size_t i = 0; i < fi; ++i) acc += h[i] * theta[off + i * fo + o];
      z[o] = acc + theta[off + fi * fo + o];
    }
    off += fi * fo + fo;
    const bool last = l + 2 == sizes.size();
    if (!last) {
      for (double& v : z) v = relu ? (v > 0.0 ? v : 0.0) : std::tanh(v);
    }
    h = z;
  }
  if (!softmax) return h;
  double m = h[0];
  for (double v : h) m = std::max(m, v);
  double s = 0.0;
  for (double& v : h) {
    v = std::exp(v - m);
    s += v;
  }
  for (double& v : h) v /= s;
  return h;
}

inline double kl(const Vec& p, const Vec& y) {
  double s = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (y[i] > 0.0) s += y[i] * std::log(y[i] / std::max(p[i], 1e-12));
  }
  return s;
}

inline double sq(const Vec& p, const Vec& y) {
  double s = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) s += (p[i] - y[i]) * (p[i] - y[i]);
  return s;
}

/// Regularized lower incomplete beta I_x(a, b) by composite Simpson
/// integration of the density after the substitution t = u^(1/a), which
/// removes the endpoint singularity at 0 for a < 1. Symmetric a = b only.
inline double beta_cdf_symmetric(double x, double a, int panels = 200000) {
  // ∫_0^x t^(a-1)(1-t)^(a-1) dt = (1/a)∫_0^{x^a} (1 - u^(1/a))^(a-1) du
  auto integral = [&](double upper) {
    const double U = std::pow(upper, a);
    const double h = U / panels;
    auto g = [&](double u) {
      const double t = std::pow(u, 1.0 / a);
      return t >= 1.0 ? 0.0 : std::pow(1.0 - t, a - 1.0);
    };
    double s = g(0.0) + g(U);
    for (int i = 1; i < panels; ++i) s += g(i * h) * (i % 2 ? 4.0 : 2.0);
    return s * h / 3.0 / a;
  };
  if (x <= 0.0) return 0.0;
  if (x >= 1.0) return 1.0;
  if (x <= 0.5) return integral(x) / (2.0 * integral(0.5));
  return 1.0 - integral(1.0 - x) / (2.0 * integral(0.5));
}

}  // namespace oracle
