#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "metassl/data.hpp"
#include "metassl/meta.hpp"
#include "metassl/model.hpp"
#include "metassl/rng.hpp"

namespace metassl {

enum class Algorithm { exact, first_order_mixup, labeled_only };
enum class OptimizerKind { plain_sgd, momentum_sgd };
enum class ScheduleKind { constant, step, cosine };

std::string_view to_string(Algorithm a);
std::string_view to_string(OptimizerKind o);
std::string_view to_string(ScheduleKind s);
Algorithm parse_algorithm(std::string_view s);
OptimizerKind parse_optimizer(std::string_view s);
ScheduleKind parse_schedule(std::string_view s);

/// Learning-rate schedule. `step` multiplies by `factor` once `decay_at` of
/// the run has elapsed; `cosine` anneals from `base` to zero.
struct Schedule {
  ScheduleKind kind = ScheduleKind::step;
  double base = 0.1;
  double decay_at = 0.75;
  double factor = 0.1;

  double at(std::size_t step, std::size_t total_steps) const;
};

struct TrainConfig {
  Algorithm algorithm = Algorithm::first_order_mixup;
  std::vector<std::size_t> hidden = {16, 16};
  Activation activation = Activation::tanh;

  Schedule alpha;
  Schedule beta;
  bool beta_equals_alpha = true;

  std::size_t batch_size_labeled = 32;
  std::size_t batch_size_unlabeled = 32;
  bool full_labeled_batch = false;
  double gamma = 1.0;

  OptimizerKind optimizer = OptimizerKind::momentum_sgd;
  double momentum = 0.9;
  double weight_decay = 1e-4;

  std::size_t total_steps = 1000;
  std::uint64_t seed = 0;
  double consistency_weight = 1.0;
  std::optional<bool> project;  // default: on when ŷ feeds mixup targets
  double eps_rule = 0.01;
  MetaGradScaling meta_scaling = MetaGradScaling::alpha_over_batch;

  // Ablation switches of the first-order algorithm.
  bool use_meta = true;
  bool use_mixup = true;

  // Plain SGD, full labeled batch and the learning-rate condition re-checked
  // every `theorem_refresh_every` steps; β is lowered when it would fail.
  bool theorem_mode = false;
  std::size_t theorem_refresh_every = 50;
  double safety_factor = 2.0;

  bool standardize = true;
  std::size_t eval_every = 0;  // 0: evaluate at the end only

  bool projection_enabled() const;
};

/// Applies mode implications (theorem mode forces plain SGD and full labeled
/// batches) and validates ranges. Throws ConfigError.
TrainConfig resolve(TrainConfig cfg);

class Optimizer {
 public:
  Optimizer() = default;
  Optimizer(OptimizerKind kind, double momentum, double weight_decay);

  void step(ParamVector& theta, const ParamVector& grad, double lr);

 private:
  OptimizerKind kind_ = OptimizerKind::plain_sgd;
  double momentum_ = 0.0;
  double weight_decay_ = 0.0;
  std::vector<double> velocity_;
};

enum class SamplingMode { shuffle, replacement, full };

/// Index stream over one split. `shuffle` walks successive random
/// permutations; a batch larger than the split wraps into the next one and
/// sets wrapped().
class BatchSampler {
 public:
  BatchSampler(std::vector<std::size_t> pool, std::size_t batch_size, std::uint64_t seed, SamplingMode mode);

  std::vector<std::size_t> next();
  bool wrapped() const noexcept { return wrapped_; }
  std::size_t batch_size() const noexcept { return batch_size_; }

 private:
  void reshuffle();

  std::vector<std::size_t> pool_;
  std::vector<std::size_t> order_;
  std::size_t batch_size_;
  std::size_t cursor_ = 0;
  SamplingMode mode_;
  Rng rng_;
  bool wrapped_ = false;
};

struct StepRecord {
  std::size_t step = 0;
  double G_before = 0.0;  // labeled loss of the step's labeled batch at θ_t
  double G_after = 0.0;   // same batch at θ_{t+1}
  double consistency_loss = 0.0;
  double pseudo_grad_norm = 0.0;   // ‖∇ỹ‖
  double param_grad_norm = 0.0;    // ‖∇θ̂_t‖
  double labeled_grad_norm = 0.0;  // ‖∇θ^l‖ at θ_t
  double alpha = 0.0;
  double beta = 0.0;
  bool descent_ok = true;  // G_after ≤ G_before + 1e-10

  bool theorem_mode = false;
  bool beta_adapted = false;
  bool degenerate = false;  // first-order meta step skipped
  bool aborted = false;     // non-finite value; parameters untouched
  double M_hat = 0.0;
  double L0_hat = 0.0;
  std::string diagnostic;
};

inline constexpr double kDescentTolerance = 1e-10;

/// Live theorem-mode constants.
struct TheoremMonitor {
  double M_hat = 0.0;
  double L0_hat = 0.0;
  bool valid = false;
};

struct TrainState {
  MlpClassifier model;
  Optimizer optimizer;
  Rng rng;
  std::size_t step = 0;
  TheoremMonitor monitor;

  TrainState(MlpClassifier m, const TrainConfig& cfg);
};

/// One iteration of the exact meta-gradient algorithm.
StepRecord train_step_exact(TrainState& state, const Batch& labeled, const Batch& unlabeled, const TrainConfig& cfg);

/// One iteration of the first-order algorithm with mixup.
StepRecord train_step_first_order(TrainState& state, const Batch& labeled, const Batch& unlabeled,
                                  const TrainConfig& cfg);

/// Supervised KL step on the labeled batch only.
StepRecord train_step_labeled_only(TrainState& state, const Batch& labeled, const TrainConfig& cfg);

struct EvalPoint {
  std::size_t step = 0;
  double labeled_accuracy = 0.0;
  double test_accuracy = 0.0;  // NaN when the dataset has no test split
};

struct FitResult {
  MlpClassifier model;
  InputScaling scaling;
  std::vector<StepRecord> records;
  std::vector<EvalPoint> evals;
  bool aborted = false;
  std::string diagnostic;
};

using StepCallback = std::function<void(const StepRecord&)>;

/// Runs cfg.total_steps seeded steps. The trainer never reads class ids of
/// unlabeled examples.
FitResult fit(const TrainConfig& cfg, const Dataset& dataset, const StepCallback& on_step = {});

/// Header `step,G_before,G_after,consistency_loss,pseudo_grad_norm,param_grad_norm,alpha,beta,descent_ok`.
void write_metrics_csv(std::ostream& out, const std::vector<StepRecord>& records);
void write_eval_csv(std::ostream& out, const std::vector<EvalPoint>& evals);

/// SplitMix64 derivation of independent stream seeds from one run seed.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream);

}  // namespace metassl
