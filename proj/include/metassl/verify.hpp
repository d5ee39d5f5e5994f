#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "metassl/data.hpp"
#include "metassl/model.hpp"
#include "metassl/trainer.hpp"

namespace metassl {

// All constants below are sampled estimates, not certified bounds. Each
// comparison against a theoretical bound multiplies the bound's Lipschitz
// constant by a safety factor.

struct LipschitzOptions {
  std::size_t n_probes = 32;
  double radius = 0.05;
  std::uint64_t seed = 0;
};

using GradientFn = std::function<std::vector<double>(std::span<const double>)>;

/// max over probes δ (‖δ‖ ≤ radius) of ‖∇g(θ+δ) − ∇g(θ)‖/‖δ‖. The probe
/// sequence depends only on the seed, so the estimate is nondecreasing in
/// n_probes.
double estimate_lipschitz(const GradientFn& grad, std::span<const double> theta, const LipschitzOptions& options);

/// L̂₀ for the labeled KL loss G around the model's parameters. An empty
/// labeled batch gives 0 (G is constant).
double estimate_L0(const MlpClassifier& model, const Batch& labeled, const LipschitzOptions& options = {});

struct LrCondition {
  double product = 0.0;  // α²β
  double bound = 0.0;    // 1 / (safety · 4 M̂² L̂₀)
  bool satisfied = false;
};

/// Strict inequality α²β < bound.
LrCondition check_lr_condition(double alpha, double beta, double M_hat, double L0_hat, double safety_factor = 2.0);

/// H(ỹ) = G(θ − α·∇θ MSE(f(x_u; θ), ỹ)), the labeled loss after the virtual
/// step, for arbitrary pseudo-labels.
double unrolled_labeled_loss(const MlpClassifier& model, const Tensor& x_u, const Tensor& y_tilde,
                             const Batch& labeled, double alpha);

/// Brute-force ∂H/∂ỹ by central differences of the literal unrolled
/// pipeline, entry by entry.
Tensor hypergrad_oracle(const MlpClassifier& model, const Tensor& x_u, const Tensor& y_tilde, const Batch& labeled,
                        double alpha, double h = 1e-4);

/// max|a − b| / max|b|: error relative to the reference's scale.
double scaled_relative_error(std::span<const double> a, std::span<const double> reference);

struct Lemma1Options {
  std::size_t n_pairs = 100;
  std::uint64_t seed = 0;
  double h = 1e-4;
  double safety_factor = 2.0;
  LipschitzOptions l0;
  std::optional<double> M_hat;
  std::optional<double> L0_hat;
};

struct Lemma1Result {
  double max_ratio = 0.0;
  double bound = 0.0;  // safety · 4 α² M̂² L̂₀
  double M_hat = 0.0;
  double L0_hat = 0.0;
  std::size_t pairs = 0;
  bool holds = false;
};

/// Samples pseudo-label pairs and compares the secant ratio of ∇H (from the
/// brute-force oracle) with the Lipschitz bound.
Lemma1Result lemma1_spot_check(const MlpClassifier& model, const Tensor& x_u, const Batch& labeled, double alpha,
                               const Lemma1Options& options = {});

struct DescentAudit {
  std::size_t steps = 0;
  std::size_t violations = 0;
  std::vector<std::size_t> violation_steps;
  double worst_margin = 0.0;  // max over steps of G_after − G_before
  std::size_t equality_mismatches = 0;

  bool passed() const noexcept { return violations == 0 && equality_mismatches == 0; }
};

/// Counts steps where the labeled loss rose by more than 1e-10. A step whose
/// loss stayed bit-identical must have a negligible pseudo-label gradient.
/// Throws PreconditionError for series not produced in theorem mode.
DescentAudit descent_audit(const std::vector<StepRecord>& records);

struct VerifyReport {
  double M_hat = 0.0;
  double L0_hat = 0.0;
  double lr_bound = 0.0;
  std::size_t descent_violations = 0;
  double descent_worst_margin = 0.0;
  double hypergrad_max_rel_err = 0.0;
  double first_order_max_rel_err = 0.0;
  double lemma1_max_ratio = 0.0;
  double lemma1_bound = 0.0;
  double R_hat = 0.0;
  double gradcheck_max_rel_err = 0.0;
  double safety_factor = 2.0;
};

/// Flat `key=value` lines; estimates are tagged as empirical.
void write_report(std::ostream& out, const VerifyReport& report);

struct SuiteResult {
  std::string name;
  bool passed = false;
  std::string detail;
};

struct VerifyOptions {
  std::uint64_t seed = 0;
  std::size_t descent_steps = 500;
  std::size_t rate_short = 500;
  std::size_t rate_long = 4000;
  std::size_t rate_seeds = 5;
  std::size_t gradcheck_configs = 50;
  std::size_t hypergrad_trials = 100;
  std::size_t lemma1_models = 10;
  std::size_t lemma1_pairs = 100;
  double safety_factor = 2.0;
  std::optional<MlpClassifier> model;  // checked in addition to fresh models
};

inline const std::vector<std::string> kSuiteNames = {"gradcheck", "hypergrad", "lemma1", "descent", "rate-trend"};

/// Runs one named suite and folds its estimates into `report`. Throws
/// ConfigError for unknown names.
SuiteResult run_suite(const std::string& name, const VerifyOptions& options, VerifyReport& report);

// Building blocks shared by the suites and the acceptance tests.

/// Max scaled relative error between tape gradients and central differences
/// (step 1e-5) over random MLP/loss configurations.
double gradcheck_sweep(std::size_t n_configs, std::uint64_t seed);

struct HypergradTriangle {
  double exact_vs_oracle = 0.0;
  double first_order_vs_exact = 0.0;
};

/// Worst-case errors over random 2-8-2 tanh MLPs with B = 4.
HypergradTriangle hypergrad_triangle(std::size_t trials, std::uint64_t seed);

/// Blob dataset and config used by the theorem checks.
Dataset theorem_dataset(std::uint64_t seed, bool include_labeled_in_unlabeled);
TrainConfig theorem_config(std::uint64_t seed, std::size_t steps);

/// min over the first `horizon` steps of ‖∇G(θ_t)‖².
double min_squared_labeled_grad(const std::vector<StepRecord>& records, std::size_t horizon);

}  // namespace metassl
