#include "metassl/data.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <sstream>

#include "metassl/rng.hpp"

namespace metassl {

std::string_view to_string(Split s) {
  switch (s) {
    case Split::labeled:
      return "labeled";
    case Split::unlabeled:
      return "unlabeled";
    case Split::test:
      return "test";
  }
  return "?";
}

Dataset::Dataset(Tensor features, std::vector<int> labels, std::vector<Split> splits, std::size_t num_classes,
                 std::vector<bool> shared)
    : features_(std::move(features)),
      labels_(std::move(labels)),
      splits_(std::move(splits)),
      shared_(std::move(shared)),
      num_classes_(num_classes) {
  const std::size_t n = labels_.size();
  if (shared_.empty()) shared_.assign(n, false);
  if (features_.rank() != 2 || features_.rows() != n || splits_.size() != n || shared_.size() != n) {
    throw DimensionError("dataset: features, labels and splits must have one entry per example");
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (labels_[i] >= static_cast<int>(num_classes_)) {
      throw ConfigError("dataset: class id " + std::to_string(labels_[i]) + " outside [0, " +
                        std::to_string(num_classes_) + ")");
    }
    if (splits_[i] != Split::unlabeled && labels_[i] < 0) {
      throw ConfigError("dataset: example " + std::to_string(i) + " is " + std::string(to_string(splits_[i])) +
                        " but has no class id");
    }
    if (shared_[i] && splits_[i] != Split::labeled) shared_[i] = false;
  }
  require_finite(features_, "dataset features");
}

std::optional<int> Dataset::label(std::size_t i) const {
  if (splits_.at(i) == Split::unlabeled) return std::nullopt;
  return labels_[i];
}

std::vector<std::size_t> Dataset::indices(Split s) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < size(); ++i) {
    if (splits_[i] == s) out.push_back(i);
  }
  return out;
}

std::vector<std::size_t> Dataset::unlabeled_pool() const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < size(); ++i) {
    if (splits_[i] == Split::unlabeled || (splits_[i] == Split::labeled && shared_[i])) out.push_back(i);
  }
  return out;
}

Batch Dataset::labeled_batch(const std::vector<std::size_t>& idx) const {
  Batch b{idx, features_.gather_rows(idx), Tensor({idx.size(), num_classes_})};
  for (std::size_t r = 0; r < idx.size(); ++r) {
    auto lab = label(idx[r]);
    if (!lab) throw PreconditionError("labeled_batch: example " + std::to_string(idx[r]) + " is unlabeled");
    b.y(r, static_cast<std::size_t>(*lab)) = 1.0;
  }
  return b;
}

Batch Dataset::unlabeled_batch(const std::vector<std::size_t>& idx) const {
  return Batch{idx, features_.gather_rows(idx), Tensor()};
}

Dataset Dataset::with_features(Tensor features) const {
  Dataset out = *this;
  if (features.rows() != size()) throw DimensionError("with_features: row count changed");
  out.features_ = std::move(features);
  return out;
}

std::optional<int> ground_truth(const Dataset& ds, std::size_t i) {
  const int lab = ds.labels_.at(i);
  if (lab < 0) return std::nullopt;
  return lab;
}

// ---------------------------------------------------------------------------
// Generators

namespace {

Dataset assemble(std::vector<std::array<double, 2>> points, std::vector<int> labels, std::size_t k, Rng& rng) {
  const std::size_t n = points.size();
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  shuffle(order.begin(), order.end(), rng);
  Tensor x({n, 2});
  std::vector<int> y(n);
  for (std::size_t i = 0; i < n; ++i) {
    x(i, 0) = points[order[i]][0];
    x(i, 1) = points[order[i]][1];
    y[i] = labels[order[i]];
  }
  return Dataset(std::move(x), std::move(y), std::vector<Split>(n, Split::labeled), k);
}

}  // namespace

Dataset gen_two_moons(std::size_t n, double noise_sigma, std::uint64_t seed) {
  if (n < 2) throw ConfigError("gen_two_moons: need at least 2 examples");
  if (noise_sigma < 0.0) throw ConfigError("gen_two_moons: noise must be nonnegative");
  Rng rng(seed);
  std::vector<std::array<double, 2>> pts;
  std::vector<int> labels;
  for (std::size_t i = 0; i < n; ++i) {
    const int c = static_cast<int>(i % 2);
    const double t = uniform(rng, 0.0, std::numbers::pi);
    double px = c == 0 ? std::cos(t) : 1.0 - std::cos(t);
    double py = c == 0 ? std::sin(t) : 0.5 - std::sin(t);
    if (noise_sigma > 0.0) {
      px += noise_sigma * standard_normal(rng);
      py += noise_sigma * standard_normal(rng);
    }
    pts.push_back({px, py});
    labels.push_back(c);
  }
  return assemble(std::move(pts), std::move(labels), 2, rng);
}

Dataset gen_blobs(std::size_t n, std::size_t k, double centers_spread, double sigma, std::uint64_t seed) {
  if (n < 2) throw ConfigError("gen_blobs: need at least 2 examples");
  if (k < 2) throw ConfigError("gen_blobs: need at least 2 classes");
  if (sigma < 0.0) throw ConfigError("gen_blobs: sigma must be nonnegative");
  Rng rng(seed);
  std::vector<std::array<double, 2>> pts;
  std::vector<int> labels;
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t c = i % k;
    const double angle = 2.0 * std::numbers::pi * static_cast<double>(c) / static_cast<double>(k);
    double px = centers_spread * std::cos(angle);
    double py = centers_spread * std::sin(angle);
    if (sigma > 0.0) {
      px += sigma * standard_normal(rng);
      py += sigma * standard_normal(rng);
    }
    pts.push_back({px, py});
    labels.push_back(static_cast<int>(c));
  }
  return assemble(std::move(pts), std::move(labels), k, rng);
}

// ---------------------------------------------------------------------------
// Splitting

Dataset split_labels(const Dataset& ds, std::size_t n_labeled, std::uint64_t seed, bool include_labeled_in_unlabeled) {
  const std::size_t k = ds.num_classes();
  std::vector<std::vector<std::size_t>> by_class(k);
  std::size_t candidates = 0;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    if (ds.splits_[i] == Split::test || ds.labels_[i] < 0) continue;
    by_class[static_cast<std::size_t>(ds.labels_[i])].push_back(i);
    ++candidates;
  }
  if (n_labeled > candidates) {
    throw ConfigError("split_labels: asked for " + std::to_string(n_labeled) + " labels but only " +
                      std::to_string(candidates) + " labeled-able examples exist");
  }
  Rng rng(seed);
  std::vector<std::size_t> class_order(k);
  for (std::size_t c = 0; c < k; ++c) class_order[c] = c;
  shuffle(class_order.begin(), class_order.end(), rng);

  Dataset out = ds;
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (out.splits_[i] != Split::test) {
      out.splits_[i] = Split::unlabeled;
      out.shared_[i] = false;
    }
  }
  const std::size_t base = n_labeled / k, extra = n_labeled % k;
  for (std::size_t r = 0; r < k; ++r) {
    const std::size_t c = class_order[r];
    const std::size_t quota = base + (r < extra ? 1 : 0);
    auto& pool = by_class[c];
    if (quota > pool.size()) {
      throw ConfigError("split_labels: class " + std::to_string(c) + " has only " + std::to_string(pool.size()) +
                        " examples, needs " + std::to_string(quota));
    }
    shuffle(pool.begin(), pool.end(), rng);
    for (std::size_t j = 0; j < quota; ++j) {
      out.splits_[pool[j]] = Split::labeled;
      out.shared_[pool[j]] = include_labeled_in_unlabeled;
    }
  }
  return out;
}

Dataset hold_out_test(const Dataset& ds, std::size_t n_test, std::uint64_t seed) {
  std::vector<std::size_t> pool;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    if (ds.splits_[i] != Split::test && ds.labels_[i] >= 0) pool.push_back(i);
  }
  if (n_test > pool.size()) {
    throw ConfigError("hold_out_test: asked for " + std::to_string(n_test) + " test examples, only " +
                      std::to_string(pool.size()) + " available");
  }
  Rng rng(seed);
  shuffle(pool.begin(), pool.end(), rng);
  Dataset out = ds;
  for (std::size_t j = 0; j < n_test; ++j) {
    out.splits_[pool[j]] = Split::test;
    out.shared_[pool[j]] = false;
  }
  return out;
}

// ---------------------------------------------------------------------------
// CSV

namespace {

std::vector<std::string> split_fields(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream is(line);
  while (std::getline(is, field, ',')) out.push_back(field);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  for (auto& f : out) {
    const auto first = f.find_first_not_of(" \t\r");
    const auto last = f.find_last_not_of(" \t\r");
    f = first == std::string::npos ? std::string() : f.substr(first, last - first + 1);
  }
  return out;
}

double parse_double(const std::string& s, std::size_t line) {
  if (s.empty()) throw ParseError(line, "empty feature value");
  const char* begin = s.data();
  char* end = nullptr;
  const double v = std::strtod(begin, &end);
  if (end != begin + s.size()) throw ParseError(line, "invalid number '" + s + "'");
  if (!std::isfinite(v)) throw ParseError(line, "non-finite feature '" + s + "'");
  return v;
}

int parse_label(const std::string& s, std::size_t line) {
  if (s.empty()) return -1;
  int v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size() || v < -1) {
    throw ParseError(line, "invalid label '" + s + "'");
  }
  return v;
}

}  // namespace

Dataset load_csv(const std::filesystem::path& path, std::size_t num_classes) {
  std::ifstream in(path);
  if (!in) throw ConfigError("load_csv: cannot open " + path.string());
  std::string line;
  std::size_t line_no = 0;
  std::vector<std::string> header;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    header = split_fields(line);
    break;
  }
  if (header.empty()) throw SchemaError(line_no, "missing header row");
  const auto label_it = std::ranges::find(header, "label");
  if (label_it == header.end()) throw SchemaError(line_no, "header has no 'label' column");
  const auto label_col = static_cast<std::size_t>(label_it - header.begin());
  const auto split_it = std::ranges::find(header, "split");
  const bool has_split = split_it != header.end();
  const std::size_t split_col = has_split ? static_cast<std::size_t>(split_it - header.begin()) : 0;
  std::vector<std::size_t> feature_cols;
  for (std::size_t c = 0; c < header.size(); ++c) {
    if (c != label_col && !(has_split && c == split_col)) feature_cols.push_back(c);
  }
  if (feature_cols.empty()) throw SchemaError(line_no, "header has no feature columns");

  std::vector<double> values;
  std::vector<int> labels;
  std::vector<Split> splits;
  int max_label = -1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const auto fields = split_fields(line);
    if (fields.size() != header.size()) {
      throw SchemaError(line_no, "expected " + std::to_string(header.size()) + " fields, found " +
                                     std::to_string(fields.size()));
    }
    for (std::size_t c : feature_cols) values.push_back(parse_double(fields[c], line_no));
    const int lab = parse_label(fields[label_col], line_no);
    Split s = lab < 0 ? Split::unlabeled : Split::labeled;
    if (has_split) {
      const std::string& tag = fields[split_col];
      if (tag == "test") {
        if (lab < 0) throw ParseError(line_no, "test rows need a label");
        s = Split::test;
      } else if (!(tag == "train" || tag.empty())) {
        throw ParseError(line_no, "unknown split '" + tag + "'");
      }
    }
    labels.push_back(lab);
    splits.push_back(s);
    max_label = std::max(max_label, lab);
  }
  const std::size_t n = labels.size();
  const std::size_t k = num_classes != 0 ? num_classes : static_cast<std::size_t>(std::max(max_label + 1, 2));
  return Dataset(Tensor({n, feature_cols.size()}, std::move(values)), std::move(labels), std::move(splits), k);
}

void save_csv(const Dataset& ds, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("save_csv: cannot write " + path.string());
  for (std::size_t c = 0; c < ds.dim(); ++c) out << 'f' << c << ',';
  out << "label,split\n";
  char buf[64];
  for (std::size_t i = 0; i < ds.size(); ++i) {
    for (std::size_t c = 0; c < ds.dim(); ++c) {
      std::snprintf(buf, sizeof buf, "%.17g", ds.features_(i, c));
      out << buf << ',';
    }
    // Hidden class ids of unlabeled rows never reach disk.
    const int lab = ds.splits_[i] == Split::unlabeled ? -1 : ds.labels_[i];
    out << lab << ',' << (ds.splits_[i] == Split::test ? "test" : "train") << '\n';
  }
}

std::string fingerprint(const Dataset& ds) {
  std::uint64_t h = 14695981039346656037ull;
  auto mix = [&h](const void* data, std::size_t len) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < len; ++i) {
      h ^= p[i];
      h *= 1099511628211ull;
    }
  };
  const std::uint64_t n = ds.size(), d = ds.dim(), k = ds.num_classes();
  mix(&n, sizeof n);
  mix(&d, sizeof d);
  mix(&k, sizeof k);
  mix(ds.features_.values().data(), ds.features_.size() * sizeof(double));
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const std::int32_t lab = ds.labels_[i];
    const std::uint8_t tag = static_cast<std::uint8_t>(ds.splits_[i]) | (ds.shared_[i] ? 0x10 : 0);
    mix(&lab, sizeof lab);
    mix(&tag, sizeof tag);
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

Tensor InputScaling::apply(const Tensor& x) const {
  if (identity()) return x;
  if (x.cols() != mean.size()) throw DimensionError("input scaling: width mismatch");
  Tensor out = x;
  for (std::size_t i = 0; i < out.rows(); ++i) {
    for (std::size_t c = 0; c < out.cols(); ++c) out(i, c) = (out(i, c) - mean[c]) / stddev[c];
  }
  return out;
}

InputScaling InputScaling::fit(const Dataset& ds) {
  std::vector<std::size_t> rows;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    if (ds.split(i) != Split::test) rows.push_back(i);
  }
  InputScaling s;
  if (rows.empty()) return s;
  const std::size_t d = ds.dim();
  s.mean.assign(d, 0.0);
  s.stddev.assign(d, 0.0);
  for (std::size_t i : rows) {
    for (std::size_t c = 0; c < d; ++c) s.mean[c] += ds.features()(i, c);
  }
  for (double& m : s.mean) m /= static_cast<double>(rows.size());
  for (std::size_t i : rows) {
    for (std::size_t c = 0; c < d; ++c) {
      const double dev = ds.features()(i, c) - s.mean[c];
      s.stddev[c] += dev * dev;
    }
  }
  for (double& v : s.stddev) {
    v = std::sqrt(v / static_cast<double>(rows.size()));
    if (!(v > 1e-12)) v = 1.0;
  }
  return s;
}

}  // namespace metassl
