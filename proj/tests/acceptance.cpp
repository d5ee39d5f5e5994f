// Acceptance checks. Prints one PASS/FAIL line per criterion and exits
// nonzero if any criterion fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "cli.hpp"
#include "metassl/data.hpp"
#include "metassl/meta.hpp"
#include "metassl/rng.hpp"
#include "metassl/trainer.hpp"
#include "metassl/verify.hpp"

using namespace metassl;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool passed = false;
  std::string detail;
};

struct Criterion {
  int id;
  std::string title;
  double time_limit_s;  // 0: no limit
  std::function<Outcome()> check;
};

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4g", v);
  return buf;
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

Outcome gradient_correctness() {
  const double err = gradcheck_sweep(50, 1);
  return {err < 1e-5, "50 configurations, max relative error " + fmt(err) + " (limit 1e-5)"};
}

Outcome zero_gradient_at_init() {
  Rng rng(derive_seed(7, 0));
  double worst_theta = 0.0;
  double smallest_y = INFINITY;
  const std::size_t instances = 20;
  for (std::size_t k = 0; k < instances; ++k) {
    const MlpClassifier model({3, 6, 3}, Activation::tanh, derive_seed(7, 1 + k));
    Tensor x_u = Tensor::zeros(5, 3);
    Tensor x_l = Tensor::zeros(4, 3);
    Tensor y_l = Tensor::zeros(4, 3);
    for (double& v : x_u.values()) v = standard_normal(rng);
    for (double& v : x_l.values()) v = standard_normal(rng);
    for (std::size_t i = 0; i < 4; ++i) y_l(i, uniform_index(rng, 3)) = 1.0;
    const Batch labeled{{0, 1, 2, 3}, x_l, y_l};
    const PseudoLabelSet pseudo = init_pseudo_labels(model, x_u);
    const double theta_norm = consistency_gradient(model, x_u, pseudo.y_init).grad.norm();
    const Tensor y_grad = exact_meta_gradient(model, x_u, pseudo, labeled, 0.1);
    worst_theta = std::max(worst_theta, theta_norm);
    smallest_y = std::min(smallest_y, ops::norm2(y_grad.values()));
  }
  return {worst_theta <= 1e-12 && smallest_y > 1e-6,
          std::to_string(instances) + " instances, max ||grad theta|| " + fmt(worst_theta) + " (<= 1e-12), min ||grad y|| " +
              fmt(smallest_y) + " (> 1e-6)"};
}

Outcome hypergradient_triangle() {
  const HypergradTriangle t = hypergrad_triangle(100, 1);
  return {t.exact_vs_oracle <= 1e-5 && t.first_order_vs_exact <= 1e-3,
          "100 seeds, exact vs unrolled " + fmt(t.exact_vs_oracle) + " (<= 1e-5), first-order vs exact " +
              fmt(t.first_order_vs_exact) + " (<= 1e-3)"};
}

Outcome theorem1_descent() {
  VerifyOptions opt;
  opt.seed = 1;
  opt.descent_steps = 500;
  VerifyReport report;
  const SuiteResult descent = run_suite("descent", opt, report);

  // β = 0 control: ŷ = ỹ, so the consistency gradient vanishes and G stays put.
  TrainConfig control = theorem_config(1, 500);
  control.beta_equals_alpha = false;
  control.beta = {ScheduleKind::constant, 0.0, 1.0, 1.0};
  const FitResult fr = fit(control, theorem_dataset(1, false));
  double drift = 0.0;
  for (const StepRecord& r : fr.records) drift = std::max(drift, std::abs(r.G_after - r.G_before));
  const bool control_ok = !fr.aborted && fr.records.size() == 500 && drift <= 1e-12;
  return {descent.passed && control_ok, descent.detail + "; beta=0 control max |G(t+1)-G(t)| " + fmt(drift) +
                                            " (<= 1e-12)"};
}

Outcome lemma1_bound() {
  VerifyOptions opt;
  opt.seed = 1;
  VerifyReport report;
  const SuiteResult r = run_suite("lemma1", opt, report);
  return {r.passed, r.detail};
}

Outcome theorem2_trend() {
  VerifyOptions opt;
  opt.seed = 1;
  VerifyReport report;
  const SuiteResult r = run_suite("rate-trend", opt, report);
  return {r.passed, r.detail + " (inclusion flag on, 5 seeds)"};
}

// Two-moons protocol shared by criteria 7 and 8: 1000 unlabeled + 6 labeled
// + 500 test, 2-16-16-2 MLP.
enum class Arm { labeled_only, meta_mixup, meta_only, mixup_only };

TrainConfig ssl_config(Arm arm, std::uint64_t seed) {
  TrainConfig cfg;
  cfg.hidden = {16, 16};
  cfg.gamma = 1.0;
  cfg.momentum = 0.9;
  cfg.alpha.base = 0.3;
  cfg.total_steps = 3000;
  cfg.seed = seed;
  switch (arm) {
    case Arm::labeled_only: cfg.algorithm = Algorithm::labeled_only; break;
    case Arm::meta_mixup: break;
    case Arm::meta_only: cfg.use_mixup = false; break;
    case Arm::mixup_only: cfg.use_meta = false; break;
  }
  return cfg;
}

Dataset ssl_dataset(std::uint64_t s) {
  const Dataset ds = hold_out_test(gen_two_moons(1506, 0.1, 1000 + s), 500, 2000 + s);
  return split_labels(ds, 6, 3000 + s);
}

std::vector<double> ssl_accuracies(Arm arm) {
  std::vector<double> acc;
  for (std::uint64_t s = 0; s < 10; ++s) {
    const FitResult r = fit(ssl_config(arm, s), ssl_dataset(s));
    acc.push_back(r.aborted ? 0.0 : r.evals.back().test_accuracy);
  }
  return acc;
}

// Margin measured by the first validated run of this protocol; a different
// value means the training pipeline changed.
constexpr double kPinnedMargin = 0.876 - 0.851;
constexpr double kRequiredMargin = 0.05;

double median_meta_mixup = NAN;

Outcome ssl_benefit() {
  median_meta_mixup = median(ssl_accuracies(Arm::meta_mixup));
  const double base = median(ssl_accuracies(Arm::labeled_only));
  const double margin = median_meta_mixup - base;
  std::string detail = "median test accuracy meta+mixup " + fmt(median_meta_mixup) + " vs labeled-only " + fmt(base) +
                       ", margin " + fmt(100 * margin) + "pp (required >= 5pp)";
  if (!std::isnan(kPinnedMargin) && std::abs(margin - kPinnedMargin) > 1e-12) {
    detail += ", differs from pinned margin " + fmt(100 * kPinnedMargin) + "pp";
  }
  return {margin >= kRequiredMargin, detail};
}

Outcome ablation_order() {
  if (std::isnan(median_meta_mixup)) median_meta_mixup = median(ssl_accuracies(Arm::meta_mixup));
  const double meta_only = median(ssl_accuracies(Arm::meta_only));
  const double mixup_only = median(ssl_accuracies(Arm::mixup_only));
  return {median_meta_mixup >= meta_only && median_meta_mixup >= mixup_only,
          "medians meta+mixup " + fmt(median_meta_mixup) + ", meta only " + fmt(meta_only) + ", mixup only " +
              fmt(mixup_only)};
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

Outcome replay_reproducibility() {
  const fs::path dir = fs::temp_directory_path() / "metassl_acceptance_replay";
  fs::remove_all(dir);
  fs::create_directories(dir);
  std::ostringstream sink;
  const auto run = [&](std::vector<std::string> args) { return cli::run(args, sink, sink); };
  const std::string data = (dir / "moons.csv").string();
  if (run({"gen-data", "--kind", "two-moons", "--n", "400", "--seed", "3", "--n-test", "100", "--out", data}) != 0) {
    return {false, "gen-data failed: " + sink.str()};
  }
  struct Case {
    std::string name;
    std::vector<std::string> flags;
  };
  const std::vector<Case> cases = {
      {"first-order", {"--algorithm", "first-order-mixup", "--steps", "200"}},
      {"exact", {"--algorithm", "exact", "--steps", "100", "--set", "project=true"}},
      {"theorem", {"--algorithm", "exact", "--theorem-mode", "--steps", "60", "--set", "theorem_refresh_every=20"}},
      {"labeled-only", {"--algorithm", "labeled-only", "--steps", "200", "--optimizer", "sgd"}},
  };
  std::size_t identical = 0;
  for (const Case& c : cases) {
    const fs::path out = dir / c.name;
    std::vector<std::string> args = {"train", "--data", data, "--labels", "6", "--seed", "11", "--out-dir",
                                     out.string()};
    args.insert(args.end(), c.flags.begin(), c.flags.end());
    fs::create_directories(out);
    if (run(args) != 0) return {false, c.name + ": train failed: " + sink.str()};
    const std::string first = slurp(out / "metrics.csv");
    fs::rename(out / "metrics.csv", out / "original.csv");
    if (run({"replay", (out / "run.manifest").string()}) != 0) return {false, c.name + ": replay failed"};
    if (!first.empty() && slurp(out / "metrics.csv") == first) ++identical;
  }
  return {identical == cases.size(), std::to_string(identical) + "/" + std::to_string(cases.size()) +
                                         " manifests replayed to byte-identical metrics CSV"};
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<Criterion> criteria = {
      {1, "gradient correctness", 10, gradient_correctness},
      {2, "zero gradient at initialization", 1, zero_gradient_at_init},
      {3, "hypergradient triangle", 30, hypergradient_triangle},
      {4, "per-step descent in theorem mode", 60, theorem1_descent},
      {5, "pseudo-label gradient Lipschitz bound", 60, lemma1_bound},
      {6, "convergence trend", 300, theorem2_trend},
      {7, "semi-supervised benefit on two moons", 600, ssl_benefit},
      {8, "ablation ordering", 1200, ablation_order},
      {9, "manifest replay reproducibility", 0, replay_reproducibility},
  };
  std::vector<int> only;
  for (int i = 1; i < argc; ++i) only.push_back(std::atoi(argv[i]));

  int failures = 0;
  for (const Criterion& c : criteria) {
    if (!only.empty() && std::find(only.begin(), only.end(), c.id) == only.end()) continue;
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.check();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    bool pass = o.passed;
    std::string timing = fmt(secs) + " s";
    if (c.time_limit_s > 0) {
      timing += " (limit " + fmt(c.time_limit_s) + " s)";
      pass = pass && secs < c.time_limit_s;
    }
    std::printf("criterion %d %s: %s | %s | %s\n", c.id, pass ? "PASS" : "FAIL", c.title.c_str(), o.detail.c_str(),
                timing.c_str());
    std::fflush(stdout);
    failures += pass ? 0 : 1;
  }
  return failures == 0 ? 0 : 1;
}
