#include "cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include "metassl/config.hpp"
#include "metassl/data.hpp"
#include "metassl/errors.hpp"
#include "metassl/evaluate.hpp"
#include "metassl/trainer.hpp"
#include "metassl/verify.hpp"

namespace metassl::cli {

namespace fs = std::filesystem;

namespace {

/// Raised for bad flag combinations detected after parsing.
struct UsageFailure : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct GenDataOptions {
  std::string kind = "two-moons";
  std::size_t n = 1000;
  double noise = 0.1;
  std::size_t classes = 3;
  double spread = 3.0;
  std::uint64_t seed = 0;
  std::size_t n_test = 0;
  std::optional<std::size_t> labels;
  bool include_labeled = false;
  std::string out;
};

struct TrainOptions {
  std::string data;
  std::string config;
  std::string manifest;
  std::string out_dir = ".";
  std::string metrics;
  std::string checkpoint;
  std::string eval_out;
  std::string manifest_out;
  std::vector<std::string> settings;  // key=value from flags, in order
  std::optional<std::size_t> labels;
  bool include_labeled = false;
};

struct VerifyCliOptions {
  std::vector<std::string> suites;
  std::uint64_t seed = 0;
  std::optional<std::size_t> steps;
  std::string checkpoint;
  std::string report;
  bool quick = false;
};

struct EvalOptions {
  std::string checkpoint;
  std::string data;
  std::string out;
};

std::string full(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw ConfigError("cannot write " + path.string());
  f << text;
}

Dataset generate(const GenDataOptions& o) {
  if (o.n == 0) throw UsageFailure("--n must be positive");
  Dataset ds;
  if (o.kind == "two-moons") {
    ds = gen_two_moons(o.n, o.noise, o.seed);
  } else if (o.kind == "blobs") {
    ds = gen_blobs(o.n, o.classes, o.spread, o.noise, o.seed);
  } else {
    throw UsageFailure("unknown generator '" + o.kind + "' (expected two-moons or blobs)");
  }
  if (o.n_test > 0) ds = hold_out_test(ds, o.n_test, derive_seed(o.seed, 60));
  if (o.labels) ds = split_labels(ds, *o.labels, derive_seed(o.seed, 61), o.include_labeled);
  return ds;
}

int cmd_gen_data(const GenDataOptions& o, std::ostream& out) {
  if (o.out.empty()) throw UsageFailure("--out is required");
  const Dataset ds = generate(o);
  save_csv(ds, o.out);
  std::ostringstream m;
  m << "# metassl run manifest\n"
    << "manifest_version = 1\n"
    << "command = gen-data\n"
    << "kind = " << o.kind << '\n'
    << "n = " << o.n << '\n'
    << "noise = " << full(o.noise) << '\n'
    << "classes = " << o.classes << '\n'
    << "spread = " << full(o.spread) << '\n'
    << "seed = " << o.seed << '\n'
    << "n_test = " << o.n_test << '\n'
    << "labels = " << (o.labels ? std::to_string(*o.labels) : "none") << '\n'
    << "include_labeled = " << (o.include_labeled ? "true" : "false") << '\n'
    << "out = " << o.out << '\n'
    << "data_fingerprint = " << fingerprint(ds) << '\n';
  write_text(o.out + ".manifest", m.str());
  out << "wrote " << ds.size() << " rows to " << o.out << " (fingerprint " << fingerprint(ds) << ")\n";
  return kExitOk;
}

int run_training(RunManifest manifest, std::ostream& out, std::ostream& err, const std::string& manifest_out) {
  const Dataset raw = load_csv(manifest.data_path);
  const std::string fp = fingerprint(raw);
  if (!manifest.data_fingerprint.empty() && manifest.data_fingerprint != fp) {
    throw UsageFailure("data fingerprint mismatch: manifest has " + manifest.data_fingerprint + ", " +
                       manifest.data_path + " has " + fp);
  }
  manifest.data_fingerprint = fp;
  const Dataset ds =
      manifest.labels ? split_labels(raw, *manifest.labels, derive_seed(manifest.config.seed, 40), manifest.include_labeled)
                      : raw;

  const auto start = std::chrono::steady_clock::now();
  const FitResult result = fit(manifest.config, ds);
  manifest.wall_clock_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();

  {
    std::ofstream f(manifest.metrics_path, std::ios::binary);
    if (!f) throw ConfigError("cannot write " + manifest.metrics_path);
    write_metrics_csv(f, result.records);
  }
  {
    std::ofstream f(manifest.eval_path, std::ios::binary);
    if (!f) throw ConfigError("cannot write " + manifest.eval_path);
    write_eval_csv(f, result.evals);
  }
  save_checkpoint(manifest.checkpoint_path, {result.model, result.scaling});
  if (!manifest_out.empty()) write_manifest(manifest_out, manifest);

  if (result.aborted) {
    err << "numerical abort: " << result.diagnostic << "\nlast good checkpoint: " << manifest.checkpoint_path << '\n';
    return kExitNumerical;
  }
  const EvalPoint& last = result.evals.back();
  std::size_t violations = 0;
  for (const StepRecord& r : result.records) violations += r.descent_ok ? 0 : 1;
  out << "steps=" << result.records.size() << '\n';
  out << "train_accuracy=" << last.labeled_accuracy << '\n';
  out << "test_accuracy=" << last.test_accuracy << '\n';
  out << "steps_without_descent=" << violations << '\n';
  out << "metrics=" << manifest.metrics_path << '\n';
  out << "checkpoint=" << manifest.checkpoint_path << '\n';
  if (!manifest_out.empty()) out << "manifest=" << manifest_out << '\n';
  return kExitOk;
}

int cmd_train(const TrainOptions& o, std::ostream& out, std::ostream& err) {
  RunManifest manifest;
  const fs::path dir = o.out_dir;
  if (!o.manifest.empty()) {
    if (!fs::exists(o.manifest)) throw UsageFailure("manifest not found: " + o.manifest);
    manifest = read_manifest(o.manifest);
    if (manifest.command != "train") throw UsageFailure("manifest was not written by train");
    if (!o.data.empty()) manifest.data_path = o.data;
  } else {
    if (o.data.empty()) throw UsageFailure("--data is required");
    manifest.data_path = o.data;
    manifest.metrics_path = (dir / "metrics.csv").string();
    manifest.eval_path = (dir / "eval.csv").string();
    manifest.checkpoint_path = (dir / "checkpoint.txt").string();
    manifest.labels = o.labels;
    manifest.include_labeled = o.include_labeled;
  }
  if (!o.config.empty()) {
    if (!fs::exists(o.config)) throw UsageFailure("config file not found: " + o.config);
    manifest.config = load_config_file(o.config, manifest.config);
  }
  for (const std::string& s : o.settings) {
    const auto eq = s.find('=');
    apply_setting(manifest.config, s.substr(0, eq), s.substr(eq + 1));
  }
  manifest.config = resolve(manifest.config);
  if (!o.metrics.empty()) manifest.metrics_path = o.metrics;
  if (!o.eval_out.empty()) manifest.eval_path = o.eval_out;
  if (!o.checkpoint.empty()) manifest.checkpoint_path = o.checkpoint;
  if (!fs::exists(manifest.data_path)) throw UsageFailure("data file not found: " + manifest.data_path);
  // A replay leaves its source manifest alone unless asked to write one.
  std::string manifest_out = o.manifest_out;
  if (o.manifest.empty() && manifest_out.empty()) manifest_out = (dir / "run.manifest").string();
  return run_training(manifest, out, err, manifest_out);
}

int cmd_verify(const VerifyCliOptions& o, std::ostream& out) {
  VerifyOptions vo;
  vo.seed = o.seed;
  if (o.steps) vo.descent_steps = *o.steps;
  if (o.quick) {
    vo.rate_long = 1500;
    vo.rate_seeds = 3;
    vo.gradcheck_configs = 20;
    vo.hypergrad_trials = 20;
    vo.lemma1_models = 3;
    vo.lemma1_pairs = 20;
  }
  if (!o.checkpoint.empty()) {
    if (!fs::exists(o.checkpoint)) throw UsageFailure("checkpoint not found: " + o.checkpoint);
    vo.model = load_checkpoint(o.checkpoint).model;
  }
  std::vector<std::string> suites = o.suites.empty() ? kSuiteNames : o.suites;
  for (const std::string& s : suites) {
    if (std::find(kSuiteNames.begin(), kSuiteNames.end(), s) == kSuiteNames.end()) {
      throw UsageFailure("unknown suite '" + s + "'");
    }
  }
  VerifyReport report;
  bool all = true;
  for (const std::string& s : suites) {
    const SuiteResult r = run_suite(s, vo, report);
    all = all && r.passed;
    out << (r.passed ? "PASS " : "FAIL ") << r.name << ": " << r.detail << '\n';
  }
  std::ostringstream rep;
  write_report(rep, report);
  out << rep.str();
  if (!o.report.empty()) write_text(o.report, rep.str());
  return all ? kExitOk : kExitVerifyFailed;
}

int cmd_eval(const EvalOptions& o, std::ostream& out) {
  if (!fs::exists(o.checkpoint)) throw UsageFailure("checkpoint not found: " + o.checkpoint);
  if (!fs::exists(o.data)) throw UsageFailure("data file not found: " + o.data);
  const Checkpoint ck = load_checkpoint(o.checkpoint);
  const Dataset raw = load_csv(o.data);
  if (raw.num_classes() != ck.model.num_classes()) {
    throw UsageFailure("class count mismatch: checkpoint has " + std::to_string(ck.model.num_classes()) +
                       ", data has " + std::to_string(raw.num_classes()));
  }
  if (raw.dim() != ck.model.input_dim()) {
    throw UsageFailure("feature dimension mismatch: checkpoint expects " + std::to_string(ck.model.input_dim()) +
                       ", data has " + std::to_string(raw.dim()));
  }
  const Dataset ds = raw.with_features(ck.scaling.apply(raw.features()));
  std::ostringstream rep;
  rep << "split,count,accuracy,error_rate\n";
  for (const SplitAccuracy& s : evaluate_splits(ck.model, ds)) {
    rep << to_string(s.split) << ',' << s.count << ',' << s.accuracy << ',' << s.error_rate << '\n';
  }
  out << rep.str();
  if (!o.out.empty()) write_text(o.out, rep.str());
  return kExitOk;
}

int replay_gen_data(const KeyValues& kv, std::ostream& out) {
  GenDataOptions o;
  for (const auto& [k, v] : kv) {
    if (k == "kind") o.kind = v;
    else if (k == "n") o.n = std::stoull(v);
    else if (k == "noise") o.noise = std::stod(v);
    else if (k == "classes") o.classes = std::stoull(v);
    else if (k == "spread") o.spread = std::stod(v);
    else if (k == "seed") o.seed = std::stoull(v);
    else if (k == "n_test") o.n_test = std::stoull(v);
    else if (k == "labels" && v != "none") o.labels = std::stoull(v);
    else if (k == "include_labeled") o.include_labeled = v == "true";
    else if (k == "out") o.out = v;
  }
  return cmd_gen_data(o, out);
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Meta-gradient pseudo-label training for semi-supervised classification", "metassl"};
  app.require_subcommand(1);

  GenDataOptions gen;
  auto* gen_cmd = app.add_subcommand("gen-data", "Generate a synthetic dataset as CSV");
  gen_cmd->add_option("--kind", gen.kind, "two-moons or blobs");
  gen_cmd->add_option("--n", gen.n, "number of examples");
  gen_cmd->add_option("--noise", gen.noise, "Gaussian noise standard deviation");
  gen_cmd->add_option("--classes", gen.classes, "number of blobs");
  gen_cmd->add_option("--spread", gen.spread, "radius of the blob centers");
  gen_cmd->add_option("--seed", gen.seed);
  gen_cmd->add_option("--n-test", gen.n_test, "examples moved to the test split");
  gen_cmd->add_option("--labels", gen.labels, "keep this many labels, the rest become unlabeled");
  gen_cmd->add_flag("--include-labeled", gen.include_labeled, "labeled examples also join the unlabeled pool");
  gen_cmd->add_option("--out", gen.out, "output CSV path");

  TrainOptions tr;
  auto* train_cmd = app.add_subcommand("train", "Train a classifier and write metrics, checkpoint and manifest");
  train_cmd->add_option("--data", tr.data, "dataset CSV");
  train_cmd->add_option("--config", tr.config, "key = value config file");
  train_cmd->add_option("--manifest", tr.manifest, "replay a run manifest");
  train_cmd->add_option("--out-dir", tr.out_dir);
  train_cmd->add_option("--metrics", tr.metrics, "metrics CSV path");
  train_cmd->add_option("--checkpoint", tr.checkpoint, "checkpoint path");
  train_cmd->add_option("--eval-out", tr.eval_out, "evaluation CSV path");
  train_cmd->add_option("--manifest-out", tr.manifest_out, "manifest path");
  train_cmd->add_option("--labels", tr.labels, "relabel the dataset with this many labels");
  train_cmd->add_flag("--include-labeled", tr.include_labeled);
  auto setting = [&](const std::string& flag, const std::string& key, const std::string& help) {
    train_cmd->add_option_function<std::string>(
        flag, [&tr, key](const std::string& v) { tr.settings.push_back(key + "=" + v); }, help);
  };
  setting("--algorithm", "algorithm", "exact, first-order-mixup or labeled-only");
  setting("--steps", "steps", "training steps");
  setting("--alpha", "alpha", "regular learning rate");
  setting("--beta", "beta", "meta learning rate (default: equal to alpha)");
  setting("--gamma", "gamma", "mixup Beta(gamma, gamma) shape");
  setting("--momentum", "momentum", "SGD momentum");
  setting("--weight-decay", "weight_decay", "L2 weight decay");
  setting("--seed", "seed", "run seed");
  setting("--hidden", "hidden", "hidden layer sizes, comma separated");
  setting("--optimizer", "optimizer", "sgd or momentum");
  setting("--consistency-weight", "consistency_weight", "weight of the consistency loss");
  train_cmd->add_flag_callback("--theorem-mode", [&tr] { tr.settings.push_back("theorem_mode=true"); },
                               "plain SGD, full labeled batch and the learning-rate condition enforced");
  train_cmd->add_option_function<std::string>(
      "--set", [&tr](const std::string& v) {
        if (v.find('=') == std::string::npos) throw CLI::ValidationError("--set", "expected key=value");
        tr.settings.push_back(v);
      },
      "any config key as key=value");

  VerifyCliOptions ver;
  auto* verify_cmd = app.add_subcommand("verify", "Run numerical verification suites");
  verify_cmd->add_option("--suite", ver.suites, "gradcheck, hypergrad, lemma1, descent, rate-trend (default: all)");
  verify_cmd->add_option("--seed", ver.seed);
  verify_cmd->add_option("--steps", ver.steps, "steps of the descent run");
  verify_cmd->add_option("--checkpoint", ver.checkpoint, "also check this model");
  verify_cmd->add_option("--report", ver.report, "write the key=value report here");
  verify_cmd->add_flag("--quick", ver.quick, "smaller sample sizes");

  EvalOptions ev;
  auto* eval_cmd = app.add_subcommand("eval", "Report accuracy and error rate per split");
  eval_cmd->add_option("--checkpoint", ev.checkpoint)->required();
  eval_cmd->add_option("--data", ev.data)->required();
  eval_cmd->add_option("--out", ev.out, "write the report here");

  std::string replay_path;
  auto* replay_cmd = app.add_subcommand("replay", "Rerun the command recorded in a manifest");
  replay_cmd->add_option("manifest", replay_path)->required();

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  }

  try {
    if (*gen_cmd) return cmd_gen_data(gen, out);
    if (*train_cmd) return cmd_train(tr, out, err);
    if (*verify_cmd) return cmd_verify(ver, out);
    if (*eval_cmd) return cmd_eval(ev, out);
    if (*replay_cmd) {
      const KeyValues kv = read_key_values(replay_path);
      std::string command;
      for (const auto& [k, v] : kv) {
        if (k == "command") command = v;
      }
      if (command == "gen-data") return replay_gen_data(kv, out);
      if (command == "train") {
        TrainOptions t;
        t.manifest = replay_path;
        return cmd_train(t, out, err);
      }
      throw UsageFailure("manifest has no replayable command");
    }
  } catch (const UsageFailure& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const NumericalError& e) {
    err << "numerical error: " << e.what() << '\n';
    return kExitNumerical;
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const metassl::ParseError& e) {
    err << "input error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::invalid_argument& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  }
  return kExitUsage;
}

}  // namespace metassl::cli
