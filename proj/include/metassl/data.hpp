#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "metassl/errors.hpp"
#include "metassl/tensor.hpp"

namespace metassl {

enum class Split { labeled, unlabeled, test };

std::string_view to_string(Split s);

/// Inconsistent CSV layout (column count, missing label column).
class SchemaError : public ParseError {
 public:
  using ParseError::ParseError;
};

/// A sampled mini-batch. `y` holds one-hot targets for labeled batches and is
/// empty for unlabeled ones. `indices` refer to rows of the source dataset.
struct Batch {
  std::vector<std::size_t> indices;
  Tensor x;
  Tensor y;

  std::size_t size() const noexcept { return indices.size(); }
};

/// Immutable collection of examples with per-example split tags.
///
/// Class ids of unlabeled examples may be retained for evaluation, but label()
/// never reveals them; only ground_truth() (evaluation code) can.
class Dataset {
 public:
  Dataset() = default;
  /// labels[i] < 0 means unknown. `shared[i]` marks labeled examples that are
  /// also members of the unlabeled pool (empty = none).
  Dataset(Tensor features, std::vector<int> labels, std::vector<Split> splits, std::size_t num_classes,
          std::vector<bool> shared = {});

  std::size_t size() const noexcept { return labels_.size(); }
  std::size_t dim() const noexcept { return features_.cols(); }
  std::size_t num_classes() const noexcept { return num_classes_; }
  const Tensor& features() const noexcept { return features_; }

  Split split(std::size_t i) const { return splits_.at(i); }
  bool shared(std::size_t i) const { return shared_.at(i); }

  /// Class id of a labeled or test example; nullopt for unlabeled ones.
  std::optional<int> label(std::size_t i) const;

  std::vector<std::size_t> indices(Split s) const;

  /// Unlabeled examples plus labeled ones flagged as shared.
  std::vector<std::size_t> unlabeled_pool() const;

  /// Features and one-hot targets; every index must be labeled or test.
  Batch labeled_batch(const std::vector<std::size_t>& idx) const;
  Batch unlabeled_batch(const std::vector<std::size_t>& idx) const;

  Dataset with_features(Tensor features) const;

 private:
  friend std::optional<int> ground_truth(const Dataset& ds, std::size_t i);
  friend Dataset split_labels(const Dataset&, std::size_t, std::uint64_t, bool);
  friend Dataset hold_out_test(const Dataset&, std::size_t, std::uint64_t);
  friend std::string fingerprint(const Dataset& ds);
  friend void save_csv(const Dataset& ds, const std::filesystem::path& path);

  Tensor features_;
  std::vector<int> labels_;
  std::vector<Split> splits_;
  std::vector<bool> shared_;
  std::size_t num_classes_ = 0;
};

/// Hidden class id, including for unlabeled examples. Evaluation only.
std::optional<int> ground_truth(const Dataset& ds, std::size_t i);

/// Two interleaved unit half-circles with isotropic Gaussian noise. Every
/// example is tagged labeled; use split_labels()/hold_out_test() afterwards.
Dataset gen_two_moons(std::size_t n, double noise_sigma, std::uint64_t seed);

/// k Gaussian clusters in 2-D with centers evenly spaced on a circle of radius
/// `centers_spread`.
Dataset gen_blobs(std::size_t n, std::size_t k, double centers_spread, double sigma, std::uint64_t seed);

/// Category-balanced labeling: exactly n_labeled non-test examples keep their
/// label (per-class counts differ by at most one); the rest become unlabeled.
/// With `include_labeled_in_unlabeled`, labeled examples also join the
/// unlabeled pool.
Dataset split_labels(const Dataset& ds, std::size_t n_labeled, std::uint64_t seed,
                     bool include_labeled_in_unlabeled = false);

/// Moves n_test random non-test examples with known labels to the test split.
Dataset hold_out_test(const Dataset& ds, std::size_t n_test, std::uint64_t seed);

/// Header `f0,...,f{d-1},label[,split]`; label -1 or empty marks unlabeled rows;
/// split ∈ {train,test}. Features are written with 17 significant digits.
Dataset load_csv(const std::filesystem::path& path, std::size_t num_classes = 0);
void save_csv(const Dataset& ds, const std::filesystem::path& path);

/// Stable 64-bit FNV-1a content hash, hex encoded.
std::string fingerprint(const Dataset& ds);

/// Per-dimension affine input normalization.
struct InputScaling {
  std::vector<double> mean;
  std::vector<double> stddev;

  bool identity() const noexcept { return mean.empty(); }
  Tensor apply(const Tensor& x) const;

  /// Zero mean and unit variance over the labeled and unlabeled rows.
  static InputScaling fit(const Dataset& ds);
};

}  // namespace metassl
