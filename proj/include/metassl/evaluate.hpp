#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "metassl/data.hpp"
#include "metassl/model.hpp"

namespace metassl {

/// Index of the largest entry; ties go to the lowest class id.
std::size_t argmax(std::span<const double> row);

/// Top-1 accuracy against ground truth over `indices`; NaN when empty.
/// Examples without a known class id are skipped.
double accuracy(const MlpClassifier& model, const Dataset& ds, const std::vector<std::size_t>& indices);

struct SplitAccuracy {
  Split split;
  std::size_t count = 0;
  double accuracy = 0.0;
  double error_rate = 0.0;
};

/// Accuracy on every nonempty split. Unlabeled examples are scored against
/// their hidden class ids when those are known.
std::vector<SplitAccuracy> evaluate_splits(const MlpClassifier& model, const Dataset& ds);

}  // namespace metassl
