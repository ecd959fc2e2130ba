#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <limits>
#include <numeric>
#include <optional>
#include <queue>
#include <string>
#include <vector>

#include "mfgp/errors.hpp"
#include "mfgp/log.hpp"
#include "mfgp/numerics.hpp"

namespace mfgp {

using Labels = std::vector<int>;

enum class DiscretizationMethod { EqualFrequency, FayyadIraniMdl };

inline std::string to_string(DiscretizationMethod m) {
  return m == DiscretizationMethod::EqualFrequency ? "equal-frequency" : "mdl";
}

// Labels are in [0, n_bins) per column.
struct DiscreteTable {
  Index n_rows = 0;
  std::vector<Labels> columns;
  std::vector<int> n_bins;
};

struct FeatureRanking {
  std::vector<Index> order;  // best first
  std::vector<double> scores; // criterion value at the step each feature was picked
};

namespace detail {

inline void check_bins(int n_bins) {
  if (n_bins < 2) throw InvalidArgument("discretize: n_bins must be >= 2");
}

inline bool is_constant(const std::vector<double> &x) {
  return std::all_of(x.begin(), x.end(), [&](double v) { return v == x.front(); });
}

inline Labels equal_frequency(const std::vector<double> &x, int n_bins) {
  const std::size_t n = x.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return x[a] < x[b]; });
  Labels out(n);
  for (std::size_t r = 0; r < n; ++r)
    out[order[r]] = static_cast<int>((r * static_cast<std::size_t>(n_bins)) / n);
  return out;
}

// Entropy in bits of the class labels in sorted positions [lo, hi).
inline double segment_entropy(const std::vector<int> &cls, std::size_t lo, std::size_t hi, int *n_classes) {
  std::map<int, std::size_t> counts;
  for (std::size_t i = lo; i < hi; ++i) ++counts[cls[i]];
  const double n = static_cast<double>(hi - lo);
  double h = 0.0;
  for (const auto &[c, k] : counts) {
    const double p = static_cast<double>(k) / n;
    h -= p * std::log2(p);
  }
  if (n_classes) *n_classes = static_cast<int>(counts.size());
  return h;
}

struct MdlCandidate {
  double gain = 0.0;
  std::size_t lo = 0, hi = 0, cut = 0; // cut: first index of the right part
  bool operator<(const MdlCandidate &o) const {
    if (gain != o.gain) return gain < o.gain;
    return lo > o.lo; // earlier segment first on ties
  }
};

// Best boundary cut of sorted segment [lo, hi) that passes the MDL test.
inline std::optional<MdlCandidate> mdl_best_cut(const std::vector<double> &xs, const std::vector<int> &cls, std::size_t lo,
                                                std::size_t hi) {
  const std::size_t n = hi - lo;
  if (n < 2) return std::nullopt;
  int k = 0;
  const double ent = segment_entropy(cls, lo, hi, &k);
  if (k < 2) return std::nullopt;
  double best_e = std::numeric_limits<double>::infinity();
  std::size_t best_cut = 0;
  for (std::size_t c = lo + 1; c < hi; ++c) {
    if (xs[c] == xs[c - 1]) continue;
    const double e = (static_cast<double>(c - lo) * segment_entropy(cls, lo, c, nullptr) +
                      static_cast<double>(hi - c) * segment_entropy(cls, c, hi, nullptr)) /
                     static_cast<double>(n);
    if (e < best_e) {
      best_e = e;
      best_cut = c;
    }
  }
  if (best_cut == 0) return std::nullopt;
  int k1 = 0, k2 = 0;
  const double e1 = segment_entropy(cls, lo, best_cut, &k1);
  const double e2 = segment_entropy(cls, best_cut, hi, &k2);
  const double gain = ent - best_e;
  const double delta = std::log2(std::pow(3.0, k) - 2.0) - (k * ent - k1 * e1 - k2 * e2);
  const double threshold = (std::log2(static_cast<double>(n - 1)) + delta) / static_cast<double>(n);
  if (!(gain > threshold)) return std::nullopt;
  return MdlCandidate{gain, lo, hi, best_cut};
}

inline Labels fayyad_irani(const std::vector<double> &x, const Labels &target, int n_bins) {
  if (target.size() != x.size())
    throw DimensionMismatch("discretize: target length", static_cast<Index>(x.size()), static_cast<Index>(target.size()));
  const std::size_t n = x.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return x[a] < x[b]; });
  std::vector<double> xs(n);
  std::vector<int> cls(n);
  for (std::size_t i = 0; i < n; ++i) {
    xs[i] = x[order[i]];
    cls[i] = target[order[i]];
  }
  std::priority_queue<MdlCandidate> queue;
  if (auto c = mdl_best_cut(xs, cls, 0, n)) queue.push(*c);
  std::vector<double> cut_values;
  while (!queue.empty() && static_cast<int>(cut_values.size()) < n_bins - 1) {
    const auto c = queue.top();
    queue.pop();
    cut_values.push_back(0.5 * (xs[c.cut - 1] + xs[c.cut]));
    if (auto l = mdl_best_cut(xs, cls, c.lo, c.cut)) queue.push(*l);
    if (auto r = mdl_best_cut(xs, cls, c.cut, c.hi)) queue.push(*r);
  }
  std::sort(cut_values.begin(), cut_values.end());
  Labels out(n);
  for (std::size_t i = 0; i < n; ++i)
    out[i] = static_cast<int>(std::upper_bound(cut_values.begin(), cut_values.end(), x[i]) - cut_values.begin());
  return out;
}

} // namespace detail

// Constant columns map to a single bin. MDL needs target labels.
inline Labels discretize(const std::vector<double> &x, int n_bins, DiscretizationMethod method = DiscretizationMethod::EqualFrequency,
                         const Labels *target = nullptr) {
  detail::check_bins(n_bins);
  if (x.empty()) return {};
  for (double v : x)
    if (!std::isfinite(v)) throw InvalidArgument("discretize: non-finite value");
  if (detail::is_constant(x)) {
    logger()->warn("discretize: constant column mapped to a single bin");
    return Labels(x.size(), 0);
  }
  if (method == DiscretizationMethod::EqualFrequency) return detail::equal_frequency(x, n_bins);
  if (!target) throw InvalidArgument("discretize: MDL method requires target labels");
  return detail::fayyad_irani(x, *target, n_bins);
}

inline Labels discretize(const Vector &x, int n_bins, DiscretizationMethod method = DiscretizationMethod::EqualFrequency,
                         const Labels *target = nullptr) {
  return discretize(std::vector<double>(x.data(), x.data() + x.size()), n_bins, method, target);
}

// The target is always binned by equal frequency; features use `method`.
inline DiscreteTable discretize_table(const Matrix &X, const Vector &y, int n_bins, DiscretizationMethod method, Labels *target_out) {
  if (X.rows() != y.size()) throw DimensionMismatch("discretize_table: target length", X.rows(), y.size());
  const Labels target = discretize(y, n_bins);
  DiscreteTable t;
  t.n_rows = X.rows();
  for (Index j = 0; j < X.cols(); ++j) {
    Labels col = discretize(Vector(X.col(j)), n_bins, method, &target);
    t.n_bins.push_back(col.empty() ? 1 : *std::max_element(col.begin(), col.end()) + 1);
    t.columns.push_back(std::move(col));
  }
  if (target_out) *target_out = target;
  return t;
}

inline double entropy(const Labels &a) {
  if (a.empty()) return 0.0;
  std::map<int, std::size_t> counts;
  for (int v : a) ++counts[v];
  const double n = static_cast<double>(a.size());
  std::vector<double> terms;
  for (const auto &[v, k] : counts) {
    const double p = static_cast<double>(k) / n;
    terms.push_back(-p * std::log(p));
  }
  std::sort(terms.begin(), terms.end());
  return std::accumulate(terms.begin(), terms.end(), 0.0);
}

// Plug-in estimate in nats. Terms are summed in sorted order so I(a;b) == I(b;a) bitwise.
inline double mutual_information(const Labels &a, const Labels &b) {
  if (a.size() != b.size())
    throw DimensionMismatch("mutual_information: label lengths", static_cast<Index>(a.size()), static_cast<Index>(b.size()));
  if (a.empty()) return 0.0;
  std::map<std::pair<int, int>, std::size_t> joint;
  std::map<int, std::size_t> ca, cb;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ++joint[{a[i], b[i]}];
    ++ca[a[i]];
    ++cb[b[i]];
  }
  const double n = static_cast<double>(a.size());
  std::vector<double> terms;
  terms.reserve(joint.size());
  for (const auto &[key, k] : joint) {
    const double kab = static_cast<double>(k);
    const double prod = static_cast<double>(ca[key.first]) * static_cast<double>(cb[key.second]);
    terms.push_back(kab / n * std::log(kab * n / prod));
  }
  std::sort(terms.begin(), terms.end());
  const double mi = std::accumulate(terms.begin(), terms.end(), 0.0);
  return std::max(mi, 0.0);
}

// Greedy MID selection. Strict improvement keeps the lower index on ties.
inline FeatureRanking mrmr_rank(const DiscreteTable &table, const Labels &target) {
  const std::size_t p = table.columns.size();
  if (p == 0) throw InvalidArgument("mrmr_rank: no feature columns");
  for (const auto &c : table.columns)
    if (c.size() != target.size())
      throw DimensionMismatch("mrmr_rank: column length", static_cast<Index>(target.size()), static_cast<Index>(c.size()));

  std::vector<double> relevance(p);
  for (std::size_t j = 0; j < p; ++j) relevance[j] = mutual_information(table.columns[j], target);
  std::vector<double> redundancy_sum(p, 0.0);
  std::vector<bool> chosen(p, false);
  FeatureRanking out;
  for (std::size_t step = 0; step < p; ++step) {
    std::size_t best = p;
    double best_score = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < p; ++j) {
      if (chosen[j]) continue;
      const double score = step == 0 ? relevance[j] : relevance[j] - redundancy_sum[j] / static_cast<double>(step);
      if (best == p || score > best_score) {
        best = j;
        best_score = score;
      }
    }
    chosen[best] = true;
    out.order.push_back(static_cast<Index>(best));
    out.scores.push_back(best_score);
    for (std::size_t j = 0; j < p; ++j)
      if (!chosen[j]) redundancy_sum[j] += mutual_information(table.columns[j], table.columns[best]);
  }
  return out;
}

// Top-n features of the ranking, listed in original column order.
inline std::vector<Index> top_features(const FeatureRanking &ranking, Index n) {
  if (n < 1 || n > static_cast<Index>(ranking.order.size()))
    throw InvalidArgument("top_features: subset size out of range");
  std::vector<Index> cols(ranking.order.begin(), ranking.order.begin() + n);
  std::sort(cols.begin(), cols.end());
  return cols;
}

inline Matrix select_columns(const Matrix &X, const std::vector<Index> &cols) {
  Matrix out(X.rows(), static_cast<Index>(cols.size()));
  for (std::size_t j = 0; j < cols.size(); ++j) {
    if (cols[j] < 0 || cols[j] >= X.cols()) throw InvalidArgument("select_columns: column index out of range");
    out.col(static_cast<Index>(j)) = X.col(cols[j]);
  }
  return out;
}

} // namespace mfgp
