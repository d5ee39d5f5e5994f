#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "metassl/data.hpp"
#include "metassl/model.hpp"
#include "metassl/trainer.hpp"

namespace metassl {

using KeyValues = std::vector<std::pair<std::string, std::string>>;

/// One `key = value` per line; `#` starts a comment, blank lines are skipped.
/// Throws ParseError with the offending line number.
KeyValues parse_key_values(std::istream& in);
KeyValues read_key_values(const std::filesystem::path& path);

/// Sets one TrainConfig field from its text form. Throws ConfigError for
/// unknown keys and malformed values. Setting `beta` detaches it from alpha.
void apply_setting(TrainConfig& cfg, const std::string& key, const std::string& value);

/// Every field of `cfg` in a fixed order, doubles with 17 significant digits,
/// so that applying the list to a default config reproduces `cfg` exactly.
KeyValues config_settings(const TrainConfig& cfg);

TrainConfig load_config_file(const std::filesystem::path& path, TrainConfig base = {});
void write_config(std::ostream& out, const TrainConfig& cfg);

/// Everything needed to rerun a training command bit for bit.
struct RunManifest {
  std::string command = "train";
  TrainConfig config;
  std::string data_path;
  std::string data_fingerprint;
  std::optional<std::size_t> labels;  // relabel the dataset with this many labels
  bool include_labeled = false;       // relabeled examples stay in the unlabeled pool
  std::string metrics_path;
  std::string eval_path;
  std::string checkpoint_path;
  double wall_clock_seconds = 0.0;
};

void write_manifest(const std::filesystem::path& path, const RunManifest& manifest);
RunManifest read_manifest(const std::filesystem::path& path);

struct Checkpoint {
  MlpClassifier model;
  InputScaling scaling;
};

/// Versioned text format: architecture, input standardization, then one
/// parameter per line at full precision.
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace metassl
