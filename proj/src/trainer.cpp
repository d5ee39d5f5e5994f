#include "metassl/trainer.hpp"

#include <cmath>
#include <cstdio>
#include <limits>
#include <numbers>
#include <ostream>
#include <string>

#include "metassl/augment.hpp"
#include "metassl/errors.hpp"
#include "metassl/evaluate.hpp"
#include "metassl/verify.hpp"

namespace metassl {

std::string_view to_string(Algorithm a) {
  switch (a) {
    case Algorithm::exact:
      return "exact";
    case Algorithm::first_order_mixup:
      return "first-order-mixup";
    case Algorithm::labeled_only:
      return "labeled-only";
  }
  return "?";
}

std::string_view to_string(OptimizerKind o) { return o == OptimizerKind::plain_sgd ? "sgd" : "momentum"; }

std::string_view to_string(ScheduleKind s) {
  switch (s) {
    case ScheduleKind::constant:
      return "constant";
    case ScheduleKind::step:
      return "step";
    case ScheduleKind::cosine:
      return "cosine";
  }
  return "?";
}

Algorithm parse_algorithm(std::string_view s) {
  if (s == "exact") return Algorithm::exact;
  if (s == "first-order-mixup") return Algorithm::first_order_mixup;
  if (s == "labeled-only") return Algorithm::labeled_only;
  throw ConfigError("unknown algorithm '" + std::string(s) + "'");
}

OptimizerKind parse_optimizer(std::string_view s) {
  if (s == "sgd") return OptimizerKind::plain_sgd;
  if (s == "momentum") return OptimizerKind::momentum_sgd;
  throw ConfigError("unknown optimizer '" + std::string(s) + "'");
}

ScheduleKind parse_schedule(std::string_view s) {
  if (s == "constant") return ScheduleKind::constant;
  if (s == "step") return ScheduleKind::step;
  if (s == "cosine") return ScheduleKind::cosine;
  throw ConfigError("unknown schedule '" + std::string(s) + "'");
}

double Schedule::at(std::size_t step, std::size_t total_steps) const {
  switch (kind) {
    case ScheduleKind::constant:
      return base;
    case ScheduleKind::step: {
      const double boundary = decay_at * static_cast<double>(total_steps);
      return static_cast<double>(step) >= boundary ? base * factor : base;
    }
    case ScheduleKind::cosine: {
      if (total_steps == 0) return base;
      const double progress = static_cast<double>(step) / static_cast<double>(total_steps);
      return 0.5 * base * (1.0 + std::cos(std::numbers::pi * progress));
    }
  }
  return base;
}

bool TrainConfig::projection_enabled() const {
  if (project) return *project;
  return algorithm == Algorithm::first_order_mixup && use_mixup;
}

TrainConfig resolve(TrainConfig cfg) {
  if (cfg.theorem_mode) {
    if (cfg.algorithm != Algorithm::exact) throw ConfigError("theorem mode requires the exact algorithm");
    cfg.optimizer = OptimizerKind::plain_sgd;
    cfg.full_labeled_batch = true;
    if (cfg.theorem_refresh_every == 0) throw ConfigError("theorem_refresh_every must be positive");
    if (!(cfg.safety_factor >= 1.0)) throw ConfigError("safety_factor must be at least 1");
  }
  if (cfg.beta_equals_alpha) cfg.beta = cfg.alpha;
  if (!(cfg.alpha.base > 0.0)) throw ConfigError("alpha must be positive");
  if (!(cfg.beta.base >= 0.0)) throw ConfigError("beta must be nonnegative");
  if (!(cfg.alpha.factor > 0.0) || !(cfg.beta.factor > 0.0)) throw ConfigError("schedule decay factor must be positive");
  if (cfg.batch_size_labeled == 0 || cfg.batch_size_unlabeled == 0) throw ConfigError("batch sizes must be at least 1");
  if (!(cfg.momentum >= 0.0 && cfg.momentum < 1.0)) throw ConfigError("momentum must lie in [0, 1)");
  if (!(cfg.weight_decay >= 0.0)) throw ConfigError("weight_decay must be nonnegative");
  if (!(cfg.gamma > 0.0)) throw ConfigError("gamma must be positive");
  if (!(cfg.eps_rule > 0.0)) throw ConfigError("eps_rule must be positive");
  if (!(cfg.consistency_weight >= 0.0)) throw ConfigError("consistency_weight must be nonnegative");
  if (cfg.algorithm == Algorithm::first_order_mixup && cfg.use_mixup && !cfg.full_labeled_batch &&
      cfg.batch_size_labeled != cfg.batch_size_unlabeled) {
    throw ConfigError("mixup pairs labeled and unlabeled examples: batch sizes must match");
  }
  for (std::size_t h : cfg.hidden) {
    if (h == 0) throw ConfigError("hidden layer sizes must be positive");
  }
  return cfg;
}

// ---------------------------------------------------------------------------

Optimizer::Optimizer(OptimizerKind kind, double momentum, double weight_decay)
    : kind_(kind), momentum_(momentum), weight_decay_(weight_decay) {}

void Optimizer::step(ParamVector& theta, const ParamVector& grad, double lr) {
  theta.require_same_layout(grad, "optimizer");
  auto th = theta.values();
  auto g = grad.values();
  if (kind_ == OptimizerKind::plain_sgd) {
    for (std::size_t i = 0; i < th.size(); ++i) th[i] -= lr * g[i];
    return;
  }
  if (velocity_.size() != th.size()) velocity_.assign(th.size(), 0.0);
  for (std::size_t i = 0; i < th.size(); ++i) {
    velocity_[i] = momentum_ * velocity_[i] + (g[i] + weight_decay_ * th[i]);
    th[i] -= lr * velocity_[i];
  }
}

// ---------------------------------------------------------------------------

BatchSampler::BatchSampler(std::vector<std::size_t> pool, std::size_t batch_size, std::uint64_t seed, SamplingMode mode)
    : pool_(std::move(pool)), batch_size_(batch_size), mode_(mode), rng_(seed) {
  if (pool_.empty()) throw ConfigError("batch sampler: split is empty");
  if (mode_ == SamplingMode::full) batch_size_ = pool_.size();
  if (batch_size_ == 0) throw ConfigError("batch sampler: batch size must be positive");
  if (mode_ == SamplingMode::shuffle) {
    wrapped_ = batch_size_ > pool_.size();
    reshuffle();
  }
}

void BatchSampler::reshuffle() {
  order_ = pool_;
  shuffle(order_.begin(), order_.end(), rng_);
  cursor_ = 0;
}

std::vector<std::size_t> BatchSampler::next() {
  switch (mode_) {
    case SamplingMode::full:
      return pool_;
    case SamplingMode::replacement: {
      std::vector<std::size_t> out(batch_size_);
      for (auto& i : out) i = pool_[uniform_index(rng_, pool_.size())];
      return out;
    }
    case SamplingMode::shuffle: {
      std::vector<std::size_t> out;
      out.reserve(batch_size_);
      while (out.size() < batch_size_) {
        if (cursor_ == order_.size()) reshuffle();
        out.push_back(order_[cursor_++]);
      }
      return out;
    }
  }
  return {};
}

// ---------------------------------------------------------------------------

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ull * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

TrainState::TrainState(MlpClassifier m, const TrainConfig& cfg)
    : model(std::move(m)),
      optimizer(cfg.optimizer, cfg.momentum, cfg.weight_decay),
      rng(derive_seed(cfg.seed, 3)) {}

namespace {

struct Rates {
  double alpha;
  double beta;
};

Rates rates_at(const TrainConfig& cfg, std::size_t step) {
  const double alpha = cfg.alpha.at(step, cfg.total_steps);
  const double beta = cfg.beta_equals_alpha ? alpha : cfg.beta.at(step, cfg.total_steps);
  return {alpha, beta};
}

double labeled_loss(const MlpClassifier& model, const Batch& labeled) {
  return batch_loss(LossKind::kl, model.forward(labeled.x), labeled.y);
}

void finish(StepRecord& rec, TrainState& state, const Batch& labeled, const ParamVector& grad, double lr) {
  ParamVector theta = state.model.params();
  state.optimizer.step(theta, grad, lr);
  for (double v : theta.values()) {
    if (!std::isfinite(v)) throw NumericalError("non-finite parameter after update");
  }
  MlpClassifier next = state.model.with_params(std::move(theta));
  rec.G_after = labeled_loss(next, labeled);
  if (!std::isfinite(rec.G_after)) throw NumericalError("non-finite labeled loss after update");
  state.model = std::move(next);
  rec.descent_ok = rec.G_after <= rec.G_before + kDescentTolerance;
  ++state.step;
}

template <typename Body>
StepRecord guarded(TrainState& state, Body body) {
  StepRecord rec;
  rec.step = state.step;
  const MlpClassifier snapshot = state.model;
  const Optimizer opt_snapshot = state.optimizer;
  try {
    body(rec);
  } catch (const NumericalError& e) {
    state.model = snapshot;
    state.optimizer = opt_snapshot;
    rec.aborted = true;
    rec.descent_ok = false;
    rec.diagnostic = e.what();
  }
  return rec;
}

}  // namespace

StepRecord train_step_exact(TrainState& state, const Batch& labeled, const Batch& unlabeled, const TrainConfig& cfg) {
  return guarded(state, [&](StepRecord& rec) {
    const MlpClassifier& model = state.model;
    auto [alpha, beta] = rates_at(cfg, state.step);
    rec.theorem_mode = cfg.theorem_mode;
    if (cfg.theorem_mode && state.monitor.valid) {
      rec.M_hat = state.monitor.M_hat;
      rec.L0_hat = state.monitor.L0_hat;
      const LrCondition cond = check_lr_condition(alpha, beta, rec.M_hat, rec.L0_hat, cfg.safety_factor);
      if (!cond.satisfied) {
        beta = 0.5 * cond.bound / (alpha * alpha);
        rec.beta_adapted = true;
      }
    }
    rec.alpha = alpha;
    rec.beta = beta;

    // With ỹ at the current predictions the virtual step leaves θ unchanged,
    // so the closed-form meta-gradient needs no explicit θ̃.
    PseudoLabelSet pseudo = init_pseudo_labels(model, unlabeled.x, unlabeled.indices);

    const LossGradient lg = labeled_gradient(model, labeled);
    rec.G_before = lg.loss;
    rec.labeled_grad_norm = lg.grad.norm();
    if (!std::isfinite(rec.G_before)) throw NumericalError("non-finite labeled loss");

    pseudo.y_grad = exact_meta_gradient(model, unlabeled.x, pseudo, labeled, alpha);
    rec.pseudo_grad_norm = ops::norm2(pseudo.y_grad->values());
    pseudo = update_pseudo_labels(std::move(pseudo), beta, cfg.projection_enabled());

    const LossGradient cons = consistency_gradient(model, unlabeled.x, *pseudo.y_updated);
    rec.consistency_loss = cons.loss;
    const ParamVector grad = cons.grad.scaled(cfg.consistency_weight);
    rec.param_grad_norm = grad.norm();
    finish(rec, state, labeled, grad, alpha);
  });
}

StepRecord train_step_first_order(TrainState& state, const Batch& labeled, const Batch& unlabeled,
                                  const TrainConfig& cfg) {
  return guarded(state, [&](StepRecord& rec) {
    const MlpClassifier& model = state.model;
    const auto [alpha, beta] = rates_at(cfg, state.step);
    rec.alpha = alpha;
    rec.beta = beta;

    const Tensor y_tilde = model.forward(unlabeled.x);
    const LossGradient lg = labeled_gradient(model, labeled);
    rec.G_before = lg.loss;
    rec.labeled_grad_norm = lg.grad.norm();

    Tensor y_hat = y_tilde;
    if (cfg.use_meta) {
      const FirstOrderResult fo = first_order_meta_gradient(model, unlabeled.x, lg.grad, alpha,
                                                            {cfg.eps_rule, 1.0, cfg.meta_scaling});
      rec.degenerate = fo.degenerate;
      if (!fo.degenerate) {
        rec.pseudo_grad_norm = ops::norm2(fo.y_grad.values());
        PseudoLabelSet pseudo{unlabeled.indices, y_tilde, fo.y_grad, std::nullopt};
        y_hat = *update_pseudo_labels(std::move(pseudo), beta, cfg.projection_enabled()).y_updated;
      }
    }

    Tensor x_in = labeled.x;
    Tensor y_in = labeled.y;
    if (cfg.use_mixup) {
      MixupBatch mixed = mixup(labeled, unlabeled.x, y_hat, cfg.gamma, state.rng);
      x_in = std::move(mixed.x_in);
      y_in = std::move(mixed.y_in);
    }

    const LossGradient cls = loss_and_gradient(model, x_in, y_in, LossKind::kl);
    const LossGradient cons = consistency_gradient(model, unlabeled.x, y_hat);
    rec.consistency_loss = cons.loss;
    const ParamVector grad = cls.grad.axpy(cfg.consistency_weight, cons.grad);
    rec.param_grad_norm = grad.norm();
    finish(rec, state, labeled, grad, alpha);
  });
}

StepRecord train_step_labeled_only(TrainState& state, const Batch& labeled, const TrainConfig& cfg) {
  return guarded(state, [&](StepRecord& rec) {
    const auto [alpha, beta] = rates_at(cfg, state.step);
    rec.alpha = alpha;
    rec.beta = beta;
    const LossGradient lg = labeled_gradient(state.model, labeled);
    rec.G_before = lg.loss;
    rec.labeled_grad_norm = lg.grad.norm();
    rec.param_grad_norm = rec.labeled_grad_norm;
    finish(rec, state, labeled, lg.grad, alpha);
  });
}

// ---------------------------------------------------------------------------

namespace {

void refresh_monitor(TrainState& state, const Dataset& ds, const std::vector<std::size_t>& pool,
                     const Batch& labeled_all, const TrainConfig& cfg) {
  constexpr std::size_t kSample = 64;
  Rng rng(derive_seed(cfg.seed, 100 + state.step));
  std::vector<std::size_t> sample = pool;
  shuffle(sample.begin(), sample.end(), rng);
  if (sample.size() > kSample) sample.resize(kSample);
  JacobianNormOptions jopt;
  jopt.seed = derive_seed(cfg.seed, 200 + state.step);
  state.monitor.M_hat = jacobian_norm_estimate(state.model, ds.features().gather_rows(sample), jopt).value;
  LipschitzOptions lopt;
  lopt.seed = derive_seed(cfg.seed, 300 + state.step);
  state.monitor.L0_hat = estimate_L0(state.model, labeled_all, lopt);
  state.monitor.valid = true;
}

}  // namespace

FitResult fit(const TrainConfig& raw_cfg, const Dataset& dataset, const StepCallback& on_step) {
  const TrainConfig cfg = resolve(raw_cfg);
  const std::vector<std::size_t> labeled_idx = dataset.indices(Split::labeled);
  const std::vector<std::size_t> pool = dataset.unlabeled_pool();
  if (labeled_idx.empty()) throw ConfigError("fit: dataset has no labeled examples");
  if (cfg.algorithm != Algorithm::labeled_only && pool.empty()) {
    throw ConfigError("fit: dataset has no unlabeled examples");
  }

  InputScaling scaling = cfg.standardize ? InputScaling::fit(dataset) : InputScaling{};
  const Dataset ds = dataset.with_features(scaling.apply(dataset.features()));

  std::vector<std::size_t> sizes{ds.dim()};
  sizes.insert(sizes.end(), cfg.hidden.begin(), cfg.hidden.end());
  sizes.push_back(ds.num_classes());
  TrainState state(MlpClassifier(sizes, cfg.activation, derive_seed(cfg.seed, 0)), cfg);

  BatchSampler labeled_sampler(labeled_idx, cfg.batch_size_labeled, derive_seed(cfg.seed, 1),
                               cfg.full_labeled_batch ? SamplingMode::full : SamplingMode::shuffle);
  std::optional<BatchSampler> unlabeled_sampler;
  if (!pool.empty()) {
    unlabeled_sampler.emplace(pool, cfg.batch_size_unlabeled, derive_seed(cfg.seed, 2), SamplingMode::shuffle);
  }
  const Batch labeled_all = ds.labeled_batch(labeled_idx);
  const std::vector<std::size_t> test_idx = ds.indices(Split::test);

  FitResult result{state.model, scaling, {}, {}, false, {}};
  auto evaluate_now = [&](std::size_t step) {
    EvalPoint ep;
    ep.step = step;
    ep.labeled_accuracy = accuracy(state.model, ds, labeled_idx);
    ep.test_accuracy = test_idx.empty() ? std::numeric_limits<double>::quiet_NaN() : accuracy(state.model, ds, test_idx);
    result.evals.push_back(ep);
  };

  for (std::size_t t = 0; t < cfg.total_steps; ++t) {
    if (cfg.theorem_mode && t % cfg.theorem_refresh_every == 0) refresh_monitor(state, ds, pool, labeled_all, cfg);
    const Batch labeled = ds.labeled_batch(labeled_sampler.next());
    StepRecord rec;
    switch (cfg.algorithm) {
      case Algorithm::exact:
        rec = train_step_exact(state, labeled, ds.unlabeled_batch(unlabeled_sampler->next()), cfg);
        break;
      case Algorithm::first_order_mixup:
        rec = train_step_first_order(state, labeled, ds.unlabeled_batch(unlabeled_sampler->next()), cfg);
        break;
      case Algorithm::labeled_only:
        rec = train_step_labeled_only(state, labeled, cfg);
        break;
    }
    if (on_step) on_step(rec);
    result.records.push_back(rec);
    if (rec.aborted) {
      result.aborted = true;
      result.diagnostic = "step " + std::to_string(t) + ": " + rec.diagnostic;
      break;
    }
    if (cfg.eval_every != 0 && (t + 1) % cfg.eval_every == 0 && t + 1 != cfg.total_steps) evaluate_now(t + 1);
  }
  evaluate_now(state.step);
  result.model = state.model;
  return result;
}

// ---------------------------------------------------------------------------

namespace {

std::string num(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

void write_metrics_csv(std::ostream& out, const std::vector<StepRecord>& records) {
  out << "step,G_before,G_after,consistency_loss,pseudo_grad_norm,param_grad_norm,alpha,beta,descent_ok\n";
  for (const StepRecord& r : records) {
    out << r.step << ',' << num(r.G_before) << ',' << num(r.G_after) << ',' << num(r.consistency_loss) << ','
        << num(r.pseudo_grad_norm) << ',' << num(r.param_grad_norm) << ',' << num(r.alpha) << ',' << num(r.beta)
        << ',' << (r.descent_ok ? 1 : 0) << '\n';
  }
}

void write_eval_csv(std::ostream& out, const std::vector<EvalPoint>& evals) {
  out << "step,labeled_accuracy,test_accuracy\n";
  for (const EvalPoint& e : evals) {
    out << e.step << ',' << num(e.labeled_accuracy) << ',' << num(e.test_accuracy) << '\n';
  }
}

}  // namespace metassl
