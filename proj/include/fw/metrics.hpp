#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <ostream>
#include <span>
#include <vector>

#include "fw/error.hpp"

namespace fw {

struct ScoredLabel {
  double score = 0.0;
  int label = 0;
};

// Mann-Whitney AUC with midranks for ties. nullopt unless both classes occur.
inline std::optional<double> auc(std::span<const ScoredLabel> pairs) {
  std::vector<ScoredLabel> v(pairs.begin(), pairs.end());
  std::sort(v.begin(), v.end(), [](const ScoredLabel& a, const ScoredLabel& b) { return a.score < b.score; });
  double pos_rank_sum = 0.0;
  std::uint64_t n_pos = 0;
  std::size_t i = 0;
  while (i < v.size()) {
    std::size_t j = i;
    std::uint64_t tied_pos = 0;
    while (j < v.size() && v[j].score == v[i].score) tied_pos += v[j++].label == 1;
    const double midrank = 0.5 * static_cast<double>(i + 1 + j);  // mean of ranks i+1..j
    pos_rank_sum += midrank * static_cast<double>(tied_pos);
    n_pos += tied_pos;
    i = j;
  }
  const std::uint64_t n_neg = v.size() - n_pos;
  if (n_pos == 0 || n_neg == 0) return std::nullopt;
  const double np = static_cast<double>(n_pos);
  return (pos_rank_sum - np * (np + 1.0) / 2.0) / (np * static_cast<double>(n_neg));
}

// Ring of the most recent `capacity` pairs.
class MetricWindow {
 public:
  explicit MetricWindow(std::size_t capacity = 30000) : capacity_(capacity) {
    if (capacity == 0) throw ContractError("metric window capacity must be > 0");
    ring_.reserve(capacity);
  }

  void add(double score, int label) {
    if (ring_.size() < capacity_) {
      ring_.push_back({score, label});
    } else {
      ring_[head_] = {score, label};
      head_ = (head_ + 1) % capacity_;
    }
  }

  std::size_t capacity() const { return capacity_; }
  std::size_t size() const { return ring_.size(); }
  bool full() const { return ring_.size() == capacity_; }
  std::optional<double> auc() const { return fw::auc(ring_); }
  void clear() {
    ring_.clear();
    head_ = 0;
  }

 private:
  std::size_t capacity_;
  std::size_t head_ = 0;
  std::vector<ScoredLabel> ring_;
};

struct AucPoint {
  std::uint64_t index = 0;     // examples seen when the window closed
  std::optional<double> auc;   // nullopt: single-class window, skipped
};

// Emits the window AUC every `stride` examples once `window` examples have
// been seen. stride == window gives non-overlapping windows.
class RollingAuc {
 public:
  explicit RollingAuc(std::size_t window = 30000, std::size_t stride = 0)
      : window_(window), stride_(stride == 0 ? window : stride) {
    if (stride_ > window) throw ContractError("rolling auc stride must not exceed the window");
  }

  std::optional<AucPoint> add(double score, int label) {
    window_.add(score, label);
    ++seen_;
    if (seen_ < window_.capacity() || (seen_ - window_.capacity()) % stride_ != 0) return std::nullopt;
    return AucPoint{seen_, window_.auc()};
  }

  std::uint64_t seen() const { return seen_; }

 private:
  MetricWindow window_;
  std::size_t stride_;
  std::uint64_t seen_ = 0;
};

inline std::vector<AucPoint> rolling_auc(std::span<const ScoredLabel> stream, std::size_t window,
                                         std::size_t stride = 0) {
  RollingAuc r(window, stride);
  std::vector<AucPoint> out;
  for (const auto& s : stream) {
    if (auto p = r.add(s.score, s.label)) out.push_back(*p);
  }
  return out;
}

inline double clamp_probability(double p) { return std::min(std::max(p, 1e-7), 1.0 - 1e-7); }

inline double logloss(std::span<const ScoredLabel> pairs) {
  if (pairs.empty()) throw ContractError("logloss of an empty set");
  double s = 0.0;
  for (const auto& x : pairs) {
    const double p = clamp_probability(x.score);
    s += x.label == 1 ? -std::log(p) : -std::log1p(-p);
  }
  return s / static_cast<double>(pairs.size());
}

inline double binary_entropy(double p) { return -(p * std::log(p) + (1.0 - p) * std::log1p(-p)); }

// Relative information gain: 1 - logloss / H(base rate).
inline double rig(std::span<const ScoredLabel> pairs) {
  std::size_t pos = 0;
  for (const auto& x : pairs) pos += x.label == 1;
  if (pos == 0 || pos == pairs.size()) throw ContractError("rig needs both classes");
  const double base = static_cast<double>(pos) / static_cast<double>(pairs.size());
  return 1.0 - logloss(pairs) / binary_entropy(base);
}

// `index<TAB>metric<TAB>value`; skipped windows print "skip".
inline void write_metric(std::ostream& os, std::uint64_t index, const char* metric, std::optional<double> value) {
  os << index << '\t' << metric << '\t';
  if (value) {
    const auto old = os.precision(6);
    os << std::fixed << *value;
    os.unsetf(std::ios::floatfield);
    os.precision(old);
  } else {
    os << "skip";
  }
  os << '\n';
}

}  // namespace fw
