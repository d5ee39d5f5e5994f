#include "metassl/verify.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <ostream>
#include <sstream>

#include "metassl/errors.hpp"
#include "metassl/losses.hpp"
#include "metassl/meta.hpp"
#include "metassl/rng.hpp"
#include "metassl/tensor.hpp"

namespace metassl {

namespace {

std::vector<double> to_vector(std::span<const double> s) { return {s.begin(), s.end()}; }

std::vector<double> random_unit(std::size_t n, Rng& rng) {
  std::vector<double> d(n);
  double norm = 0.0;
  while (norm == 0.0) {
    for (double& v : d) v = standard_normal(rng);
    norm = ops::norm2(d);
  }
  for (double& v : d) v /= norm;
  return d;
}

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

double median(std::vector<double> v) {
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

Tensor random_distributions(std::size_t rows, std::size_t k, Rng& rng) {
  Tensor y({rows, k});
  for (std::size_t i = 0; i < rows; ++i) {
    double total = 0.0;
    for (std::size_t j = 0; j < k; ++j) {
      y(i, j) = std::exp(standard_normal(rng));
      total += y(i, j);
    }
    for (std::size_t j = 0; j < k; ++j) y(i, j) /= total;
  }
  return y;
}

Tensor random_inputs(std::size_t rows, std::size_t d, Rng& rng) {
  Tensor x({rows, d});
  for (double& v : x.values()) v = standard_normal(rng);
  return x;
}

Batch random_labeled(std::size_t rows, std::size_t d, std::size_t k, Rng& rng) {
  Batch b;
  b.x = random_inputs(rows, d, rng);
  b.y = Tensor({rows, k});
  b.indices.resize(rows);
  for (std::size_t i = 0; i < rows; ++i) {
    b.indices[i] = i;
    b.y(i, uniform_index(rng, k)) = 1.0;
  }
  return b;
}

// Central-difference gradient of one batch loss, step h, coordinate by coordinate.
std::vector<double> fd_loss_gradient(const MlpClassifier& model, const Tensor& x, const Tensor& y, LossKind kind,
                                     double h) {
  const ParamVector theta = model.params();
  std::vector<double> out(theta.size());
  for (std::size_t i = 0; i < theta.size(); ++i) {
    ParamVector plus = theta;
    ParamVector minus = theta;
    plus.values()[i] += h;
    minus.values()[i] -= h;
    const double fp = batch_loss(kind, model.with_params(std::move(plus)).forward(x), y);
    const double fm = batch_loss(kind, model.with_params(std::move(minus)).forward(x), y);
    out[i] = (fp - fm) / (2.0 * h);
  }
  return out;
}

// Smallest |pre-activation| of any hidden ReLU unit; infinity for tanh models.
double kink_distance(const MlpClassifier& model, const Tensor& x) {
  if (model.activation() != Activation::relu) return std::numeric_limits<double>::infinity();
  double closest = std::numeric_limits<double>::infinity();
  Tensor h = x;
  const ParamVector& p = model.params();
  for (std::size_t l = 0; l + 1 < p.num_layers(); ++l) {
    h = ops::add_row(ops::matmul(h, p.weight(l)), p.bias(l));
    for (double v : h.values()) closest = std::min(closest, std::abs(v));
    h = ops::relu(h);
  }
  return closest;
}

double gradcheck_model(const MlpClassifier& model, std::size_t batch, Rng& rng) {
  // Central differences are only meaningful away from ReLU kinks, so inputs
  // within 1e-3 of one are redrawn.
  Tensor x = random_inputs(batch, model.input_dim(), rng);
  for (int tries = 0; tries < 100 && kink_distance(model, x) < 1e-3; ++tries) {
    x = random_inputs(batch, model.input_dim(), rng);
  }
  const Tensor y = random_distributions(batch, model.num_classes(), rng);
  double worst = 0.0;
  for (LossKind kind : {LossKind::kl, LossKind::mse}) {
    const LossGradient lg = loss_and_gradient(model, x, y, kind);
    const std::vector<double> fd = fd_loss_gradient(model, x, y, kind, 1e-5);
    worst = std::max(worst, scaled_relative_error(lg.grad.values(), fd));
  }
  return worst;
}

struct TriangleCase {
  double exact_vs_oracle = 0.0;
  double first_order_vs_exact = 0.0;
};

TriangleCase triangle_case(const MlpClassifier& model, const Tensor& x_u, const Batch& labeled, double alpha) {
  const PseudoLabelSet pseudo = init_pseudo_labels(model, x_u);
  const Tensor exact = exact_meta_gradient(model, x_u, pseudo, labeled, alpha);
  const Tensor oracle = hypergrad_oracle(model, x_u, pseudo.y_init, labeled, alpha);
  const FirstOrderResult fo = first_order_meta_gradient(model, x_u, labeled, alpha);
  return {scaled_relative_error(exact.values(), oracle.values()),
          scaled_relative_error(fo.y_grad.values(), exact.values())};
}

}  // namespace

double estimate_lipschitz(const GradientFn& grad, std::span<const double> theta, const LipschitzOptions& options) {
  if (options.n_probes == 0) throw DomainError("estimate_lipschitz: n_probes must be at least 1");
  if (!(options.radius > 0.0)) throw DomainError("estimate_lipschitz: radius must be positive");
  Rng rng(options.seed);
  const std::vector<double> g0 = grad(theta);
  const std::size_t n = theta.size();
  if (n == 0) return 0.0;
  // Random directions interleaved with power-iteration directions on the
  // secant operator, so the sample reaches the dominant curvature instead of
  // the average one.
  std::vector<double> direction = random_unit(n, rng);
  std::vector<double> probe(n);
  double best = 0.0;
  for (std::size_t k = 0; k < options.n_probes; ++k) {
    if (k % 4 == 0 && k > 0) direction = random_unit(n, rng);
    for (std::size_t i = 0; i < n; ++i) probe[i] = theta[i] + options.radius * direction[i];
    const std::vector<double> g1 = grad(probe);
    std::vector<double> diff(n);
    for (std::size_t i = 0; i < n; ++i) diff[i] = g1[i] - g0[i];
    const double dn = ops::norm2(diff);
    best = std::max(best, dn / options.radius);
    if (dn > 0.0 && std::isfinite(dn)) {
      for (std::size_t i = 0; i < n; ++i) direction[i] = diff[i] / dn;
    } else {
      direction = random_unit(n, rng);
    }
  }
  return best;
}

double estimate_L0(const MlpClassifier& model, const Batch& labeled, const LipschitzOptions& options) {
  if (labeled.size() == 0) return 0.0;
  const GradientFn grad = [&](std::span<const double> theta) {
    ParamVector p(to_vector(theta), model.params().layout());
    return to_vector(labeled_gradient(model.with_params(std::move(p)), labeled).grad.values());
  };
  return estimate_lipschitz(grad, model.params().values(), options);
}

LrCondition check_lr_condition(double alpha, double beta, double M_hat, double L0_hat, double safety_factor) {
  LrCondition out;
  out.product = alpha * alpha * beta;
  const double denom = safety_factor * 4.0 * M_hat * M_hat * L0_hat;
  out.bound = denom > 0.0 ? 1.0 / denom : std::numeric_limits<double>::infinity();
  out.satisfied = out.product < out.bound;
  return out;
}

double unrolled_labeled_loss(const MlpClassifier& model, const Tensor& x_u, const Tensor& y_tilde,
                             const Batch& labeled, double alpha) {
  const VirtualStep step = virtual_step(model, x_u, y_tilde, alpha);
  return batch_loss(LossKind::kl, model.with_params(step.theta_after).forward(labeled.x), labeled.y);
}

Tensor hypergrad_oracle(const MlpClassifier& model, const Tensor& x_u, const Tensor& y_tilde, const Batch& labeled,
                        double alpha, double h) {
  if (!(h > 0.0)) throw DomainError("hypergrad_oracle: h must be positive");
  Tensor out(y_tilde.shape());
  Tensor y = y_tilde;
  for (std::size_t i = 0; i < y.size(); ++i) {
    const double saved = y[i];
    y[i] = saved + h;
    const double fp = unrolled_labeled_loss(model, x_u, y, labeled, alpha);
    y[i] = saved - h;
    const double fm = unrolled_labeled_loss(model, x_u, y, labeled, alpha);
    y[i] = saved;
    out[i] = (fp - fm) / (2.0 * h);
  }
  return out;
}

double scaled_relative_error(std::span<const double> a, std::span<const double> reference) {
  if (a.size() != reference.size()) throw DimensionError("scaled_relative_error: length mismatch");
  const double diff = ops::max_abs_diff(a, reference);
  const double scale = ops::max_abs(reference);
  if (scale == 0.0) return diff == 0.0 ? 0.0 : std::numeric_limits<double>::infinity();
  return diff / scale;
}

Lemma1Result lemma1_spot_check(const MlpClassifier& model, const Tensor& x_u, const Batch& labeled, double alpha,
                               const Lemma1Options& options) {
  Lemma1Result out;
  out.M_hat = options.M_hat ? *options.M_hat : jacobian_norm_estimate(model, x_u, {options.seed}).value;
  out.L0_hat = options.L0_hat ? *options.L0_hat : estimate_L0(model, labeled, options.l0);
  out.bound = options.safety_factor * 4.0 * alpha * alpha * out.M_hat * out.M_hat * out.L0_hat;
  Rng rng(derive_seed(options.seed, 17));
  const std::size_t k = model.num_classes();
  while (out.pairs < options.n_pairs) {
    const Tensor y1 = random_distributions(x_u.rows(), k, rng);
    const Tensor y2 = random_distributions(x_u.rows(), k, rng);
    std::vector<double> dy(y1.size());
    for (std::size_t i = 0; i < dy.size(); ++i) dy[i] = y1[i] - y2[i];
    const double dn = ops::norm2(dy);
    if (dn == 0.0) continue;
    const Tensor g1 = hypergrad_oracle(model, x_u, y1, labeled, alpha, options.h);
    const Tensor g2 = hypergrad_oracle(model, x_u, y2, labeled, alpha, options.h);
    std::vector<double> dg(g1.size());
    for (std::size_t i = 0; i < dg.size(); ++i) dg[i] = g1[i] - g2[i];
    out.max_ratio = std::max(out.max_ratio, ops::norm2(dg) / dn);
    ++out.pairs;
  }
  out.holds = out.max_ratio <= out.bound;
  return out;
}

DescentAudit descent_audit(const std::vector<StepRecord>& records) {
  DescentAudit out;
  out.worst_margin = -std::numeric_limits<double>::infinity();
  constexpr double kEps = std::numeric_limits<double>::epsilon();
  for (const StepRecord& r : records) {
    if (!r.theorem_mode) {
      throw PreconditionError("descent audit: step " + std::to_string(r.step) +
                              " was not run in theorem mode; only plain SGD with a full labeled batch and the "
                              "learning-rate condition guarantees descent");
    }
    ++out.steps;
    const double margin = r.G_after - r.G_before;
    out.worst_margin = std::max(out.worst_margin, margin);
    if (r.aborted || !(margin <= kDescentTolerance)) {
      ++out.violations;
      out.violation_steps.push_back(r.step);
      continue;
    }
    // Unchanged loss is only legitimate when the pseudo-label step was
    // negligible at working precision.
    const double predicted_drop = r.beta * r.pseudo_grad_norm * r.pseudo_grad_norm;
    if (r.G_after == r.G_before && predicted_drop > 64.0 * kEps * std::max(1.0, std::abs(r.G_before))) {
      ++out.equality_mismatches;
    }
  }
  if (out.steps == 0) out.worst_margin = 0.0;
  return out;
}

void write_report(std::ostream& out, const VerifyReport& r) {
  auto line = [&](const char* key, double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    out << key << '=' << buf << '\n';
  };
  out << "estimates=empirical\n";
  line("safety_factor", r.safety_factor);
  line("M_hat", r.M_hat);
  line("L0_hat", r.L0_hat);
  line("lr_bound", r.lr_bound);
  out << "descent_violations=" << r.descent_violations << '\n';
  line("descent_worst_margin", r.descent_worst_margin);
  line("hypergrad_max_rel_err", r.hypergrad_max_rel_err);
  line("first_order_max_rel_err", r.first_order_max_rel_err);
  line("lemma1_max_ratio", r.lemma1_max_ratio);
  line("lemma1_bound", r.lemma1_bound);
  line("R_hat", r.R_hat);
  line("gradcheck_max_rel_err", r.gradcheck_max_rel_err);
}

double gradcheck_sweep(std::size_t n_configs, std::uint64_t seed) {
  double worst = 0.0;
  for (std::size_t c = 0; c < n_configs; ++c) {
    Rng rng(derive_seed(seed, c));
    std::vector<std::size_t> sizes{1 + uniform_index(rng, 4)};
    const std::size_t depth = 1 + uniform_index(rng, 2);
    for (std::size_t l = 0; l < depth; ++l) sizes.push_back(1 + uniform_index(rng, 6));
    sizes.push_back(2 + uniform_index(rng, 3));
    const Activation act = c % 2 == 0 ? Activation::tanh : Activation::relu;
    MlpClassifier model(sizes, act, rng());
    // Zero biases behind a dead ReLU layer put later pre-activations exactly
    // on the kink, where central differences see half the slope. Random
    // biases move the check point off it.
    ParamVector theta = model.params();
    for (std::size_t l = 0; l < theta.num_layers(); ++l) {
      const LayerSlot& slot = theta.layout()[l];
      for (std::size_t j = 0; j < slot.fan_out; ++j) theta.values()[slot.bias_offset + j] = 0.5 * standard_normal(rng);
    }
    model.set_params(std::move(theta));
    worst = std::max(worst, gradcheck_model(model, 1 + uniform_index(rng, 5), rng));
  }
  return worst;
}

HypergradTriangle hypergrad_triangle(std::size_t trials, std::uint64_t seed) {
  HypergradTriangle out;
  for (std::size_t t = 0; t < trials; ++t) {
    Rng rng(derive_seed(seed, t));
    const MlpClassifier model({2, 8, 2}, Activation::tanh, rng());
    const Tensor x_u = random_inputs(4, 2, rng);
    const Batch labeled = random_labeled(4, 2, 2, rng);
    const TriangleCase c = triangle_case(model, x_u, labeled, 0.1);
    out.exact_vs_oracle = std::max(out.exact_vs_oracle, c.exact_vs_oracle);
    out.first_order_vs_exact = std::max(out.first_order_vs_exact, c.first_order_vs_exact);
  }
  return out;
}

Dataset theorem_dataset(std::uint64_t seed, bool include_labeled_in_unlabeled) {
  const Dataset blobs = gen_blobs(240, 3, 3.0, 0.8, derive_seed(seed, 50));
  return split_labels(blobs, 30, derive_seed(seed, 51), include_labeled_in_unlabeled);
}

TrainConfig theorem_config(std::uint64_t seed, std::size_t steps) {
  TrainConfig cfg;
  cfg.algorithm = Algorithm::exact;
  cfg.theorem_mode = true;
  cfg.hidden = {8};
  cfg.activation = Activation::tanh;
  cfg.alpha = {ScheduleKind::constant, 0.1, 1.0, 1.0};
  cfg.beta_equals_alpha = true;
  cfg.batch_size_unlabeled = 16;
  cfg.project = false;
  cfg.total_steps = steps;
  cfg.seed = seed;
  return cfg;
}

double min_squared_labeled_grad(const std::vector<StepRecord>& records, std::size_t horizon) {
  double best = std::numeric_limits<double>::infinity();
  for (const StepRecord& r : records) {
    if (r.step >= horizon) break;
    best = std::min(best, r.labeled_grad_norm * r.labeled_grad_norm);
  }
  return best;
}

SuiteResult run_suite(const std::string& name, const VerifyOptions& options, VerifyReport& report) {
  SuiteResult out;
  out.name = name;
  report.safety_factor = options.safety_factor;
  std::ostringstream detail;

  if (name == "gradcheck") {
    double err = gradcheck_sweep(options.gradcheck_configs, options.seed);
    if (options.model) {
      Rng rng(derive_seed(options.seed, 900));
      err = std::max(err, gradcheck_model(*options.model, 4, rng));
    }
    report.gradcheck_max_rel_err = err;
    out.passed = err < 1e-5;
    detail << "max relative error " << fmt(err) << " (limit 1e-5)";
  } else if (name == "hypergrad") {
    HypergradTriangle tri = hypergrad_triangle(options.hypergrad_trials, options.seed);
    if (options.model) {
      Rng rng(derive_seed(options.seed, 901));
      const MlpClassifier& m = *options.model;
      const TriangleCase c = triangle_case(m, random_inputs(4, m.input_dim(), rng),
                                           random_labeled(4, m.input_dim(), m.num_classes(), rng), 0.1);
      tri.exact_vs_oracle = std::max(tri.exact_vs_oracle, c.exact_vs_oracle);
      tri.first_order_vs_exact = std::max(tri.first_order_vs_exact, c.first_order_vs_exact);
    }
    report.hypergrad_max_rel_err = tri.exact_vs_oracle;
    report.first_order_max_rel_err = tri.first_order_vs_exact;
    out.passed = tri.exact_vs_oracle <= 1e-5 && tri.first_order_vs_exact <= 1e-3;
    detail << "exact vs oracle " << fmt(tri.exact_vs_oracle) << " (limit 1e-5), first-order vs exact "
           << fmt(tri.first_order_vs_exact) << " (limit 1e-3)";
  } else if (name == "lemma1") {
    std::vector<MlpClassifier> models;
    for (std::size_t m = 0; m < options.lemma1_models; ++m) {
      models.emplace_back(std::vector<std::size_t>{2, 8, 3}, Activation::tanh, derive_seed(options.seed, 1000 + m));
    }
    if (options.model) models.push_back(*options.model);
    out.passed = true;
    double worst_fraction = -1.0;
    for (std::size_t m = 0; m < models.size(); ++m) {
      const MlpClassifier& model = models[m];
      Rng rng(derive_seed(options.seed, 2000 + m));
      const Tensor x_u = random_inputs(8, model.input_dim(), rng);
      const Batch labeled = random_labeled(8, model.input_dim(), model.num_classes(), rng);
      Lemma1Options lopt;
      lopt.n_pairs = options.lemma1_pairs;
      lopt.seed = derive_seed(options.seed, 3000 + m);
      lopt.safety_factor = options.safety_factor;
      lopt.l0.seed = derive_seed(options.seed, 4000 + m);
      const Lemma1Result r = lemma1_spot_check(model, x_u, labeled, 0.1, lopt);
      out.passed = out.passed && r.holds;
      const double fraction = r.bound > 0.0 ? r.max_ratio / r.bound : std::numeric_limits<double>::infinity();
      if (fraction > worst_fraction) {
        worst_fraction = fraction;
        report.lemma1_max_ratio = r.max_ratio;
        report.lemma1_bound = r.bound;
        report.M_hat = r.M_hat;
        report.L0_hat = r.L0_hat;
      }
    }
    detail << models.size() << " models x " << options.lemma1_pairs << " pairs, worst ratio/bound "
           << fmt(worst_fraction);
  } else if (name == "descent") {
    const Dataset ds = theorem_dataset(options.seed, false);
    const FitResult fr = fit(theorem_config(options.seed, options.descent_steps), ds);
    const DescentAudit audit = descent_audit(fr.records);
    report.descent_violations = audit.violations;
    report.descent_worst_margin = audit.worst_margin;
    if (!fr.records.empty()) {
      const StepRecord& last = fr.records.back();
      report.M_hat = last.M_hat;
      report.L0_hat = last.L0_hat;
      report.lr_bound = check_lr_condition(last.alpha, last.beta, last.M_hat, last.L0_hat, options.safety_factor).bound;
    }
    double r_hat = 0.0;
    const auto idx = ds.indices(Split::labeled);
    const Batch labeled = ds.labeled_batch(idx);
    const Tensor p = fr.model.forward(fr.scaling.apply(labeled.x));
    for (std::size_t i = 0; i < p.rows(); ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j < p.cols(); ++j) s += (p(i, j) - labeled.y(i, j)) * (p(i, j) - labeled.y(i, j));
      r_hat = std::max(r_hat, std::sqrt(s));
    }
    report.R_hat = r_hat;
    out.passed = audit.passed() && !fr.aborted;
    detail << audit.steps << " steps, " << audit.violations << " violations, worst margin "
           << fmt(audit.worst_margin) << ", equality mismatches " << audit.equality_mismatches;
    if (fr.aborted) detail << ", aborted: " << fr.diagnostic;
  } else if (name == "rate-trend") {
    if (options.rate_short >= options.rate_long) throw ConfigError("rate-trend: short horizon must be below long");
    std::vector<double> shorts;
    std::vector<double> longs;
    bool aborted = false;
    for (std::size_t s = 0; s < options.rate_seeds; ++s) {
      const std::uint64_t seed = derive_seed(options.seed, 5000 + s);
      const FitResult fr = fit(theorem_config(seed, options.rate_long), theorem_dataset(seed, true));
      aborted = aborted || fr.aborted;
      shorts.push_back(min_squared_labeled_grad(fr.records, options.rate_short));
      longs.push_back(min_squared_labeled_grad(fr.records, options.rate_long));
    }
    const double ms = median(shorts);
    const double ml = median(longs);
    out.passed = !aborted && ml < ms;
    detail << "median min ||grad G||^2: T=" << options.rate_short << " " << fmt(ms) << ", T=" << options.rate_long
           << " " << fmt(ml);
  } else {
    throw ConfigError("unknown suite '" + name + "'");
  }
  out.detail = detail.str();
  return out;
}

}  // namespace metassl
