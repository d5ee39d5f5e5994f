#include "metassl/evaluate.hpp"

#include <cmath>
#include <limits>

namespace metassl {

std::size_t argmax(std::span<const double> row) {
  std::size_t best = 0;
  for (std::size_t j = 1; j < row.size(); ++j) {
    if (row[j] > row[best]) best = j;
  }
  return best;
}

double accuracy(const MlpClassifier& model, const Dataset& ds, const std::vector<std::size_t>& indices) {
  std::vector<std::size_t> known;
  for (std::size_t i : indices) {
    if (ground_truth(ds, i)) known.push_back(i);
  }
  if (known.empty()) return std::numeric_limits<double>::quiet_NaN();
  const Tensor probs = model.forward(ds.features().gather_rows(known));
  std::size_t correct = 0;
  for (std::size_t r = 0; r < known.size(); ++r) {
    if (static_cast<int>(argmax(probs.row(r))) == *ground_truth(ds, known[r])) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(known.size());
}

std::vector<SplitAccuracy> evaluate_splits(const MlpClassifier& model, const Dataset& ds) {
  std::vector<SplitAccuracy> out;
  for (Split s : {Split::labeled, Split::unlabeled, Split::test}) {
    std::vector<std::size_t> idx;
    for (std::size_t i : ds.indices(s)) {
      if (ground_truth(ds, i)) idx.push_back(i);
    }
    if (idx.empty()) continue;
    const double acc = accuracy(model, ds, idx);
    out.push_back({s, idx.size(), acc, 1.0 - acc});
  }
  return out;
}

}  // namespace metassl
