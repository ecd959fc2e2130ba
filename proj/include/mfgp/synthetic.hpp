#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <functional>
#include <numbers>
#include <string>
#include <vector>

#include "mfgp/data.hpp"
#include "mfgp/errors.hpp"
#include "mfgp/multifidelity.hpp"
#include "mfgp/random.hpp"

namespace mfgp {

enum class LinkType { Linear, Nonlinear };

// Two-level 1D benchmark on [lo, hi].
struct SyntheticTask {
  std::string name;
  std::function<double(double)> f_low;
  std::function<double(double)> f_high;
  double lo = 0.0, hi = 1.0;
  LinkType link = LinkType::Linear;
};

inline double linear_link_high(double x) { return (6 * x - 2) * (6 * x - 2) * std::sin(12 * x - 4); }
inline double linear_link_low(double x) { return 0.5 * linear_link_high(x) + 10 * (x - 0.5) - 5; }
inline double nonlinear_link_low(double x) { return std::sin(8 * std::numbers::pi * x); }
inline double nonlinear_link_high(double x) {
  const double f = nonlinear_link_low(x);
  return (x - std::numbers::sqrt2) * f * f;
}

inline std::vector<std::string> synthetic_task_names() { return {"linear_link", "nonlinear_link"}; }

// Names match case-insensitively; '-' and '_' are interchangeable.
inline SyntheticTask synthetic_task(const std::string &name) {
  std::string key;
  for (char c : name) key.push_back(c == '-' ? '_' : static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
  if (key == "linear_link") return {"linear_link", linear_link_low, linear_link_high, 0.0, 1.0, LinkType::Linear};
  if (key == "nonlinear_link")
    return {"nonlinear_link", nonlinear_link_low, nonlinear_link_high, 0.0, 1.0, LinkType::Nonlinear};
  throw UnknownTask(name);
}

inline Matrix uniform_grid(Index n, double lo = 0.0, double hi = 1.0) {
  if (n < 1) throw InvalidArgument("uniform_grid: need at least one point");
  Matrix X(n, 1);
  for (Index i = 0; i < n; ++i) X(i, 0) = n == 1 ? lo : lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(n - 1);
  return X;
}

inline Vector evaluate(const std::function<double(double)> &f, const Matrix &X) {
  Vector y(X.rows());
  for (Index i = 0; i < X.rows(); ++i) y[i] = f(X(i, 0));
  return y;
}

struct SyntheticNoise {
  double low_sd = 0.0;
  double high_sd = 0.0;
};

// Low inputs are a uniform grid; high inputs are a seeded subset of it, so the levels are nested.
inline std::vector<FidelityLevel> make_synthetic(const std::string &task_name, Index n_low, Index n_high, std::uint64_t seed,
                                                 SyntheticNoise noise = {}) {
  const auto task = synthetic_task(task_name);
  if (n_low < 2) throw InvalidArgument("make_synthetic: n_low must be >= 2");
  if (n_high < 1 || n_high > n_low) throw InvalidArgument("make_synthetic: n_high must be in [1, n_low]");
  if (noise.low_sd < 0 || noise.high_sd < 0) throw InvalidArgument("make_synthetic: noise sd must be >= 0");
  const Matrix Xl = uniform_grid(n_low, task.lo, task.hi);
  std::vector<Index> idx(static_cast<std::size_t>(n_low));
  for (Index i = 0; i < n_low; ++i) idx[static_cast<std::size_t>(i)] = i;
  Rng pick(derive_seed(seed, 0));
  pick.shuffle(idx);
  idx.resize(static_cast<std::size_t>(n_high));
  std::sort(idx.begin(), idx.end());
  const Matrix Xh = take_rows(Xl, idx);

  Vector yl = evaluate(task.f_low, Xl);
  Vector yh = evaluate(task.f_high, Xh);
  Rng nl(derive_seed(seed, 1)), nh(derive_seed(seed, 2));
  if (noise.low_sd > 0)
    for (Index i = 0; i < yl.size(); ++i) yl[i] += noise.low_sd * nl.normal();
  if (noise.high_sd > 0)
    for (Index i = 0; i < yh.size(); ++i) yh[i] += noise.high_sd * nh.normal();
  return {{1, Xl, yl}, {2, Xh, yh}};
}

// Stacks levels into one table with a "fidelity" column holding the level number.
inline Dataset levels_to_dataset(const std::vector<FidelityLevel> &levels, std::vector<std::string> feature_names = {}) {
  validate_levels(levels);
  const Index d = levels.front().X.cols();
  if (feature_names.empty()) {
    if (d == 1) {
      feature_names = {"x"};
    } else {
      for (Index j = 0; j < d; ++j) feature_names.push_back("x" + std::to_string(j + 1));
    }
  }
  Index n = 0;
  for (const auto &lv : levels) n += lv.X.rows();
  Dataset ds;
  ds.feature_names = std::move(feature_names);
  ds.target_name = "y";
  ds.fidelity_name = "fidelity";
  ds.source = "<synthetic>";
  ds.X.resize(n, d);
  ds.y.resize(n);
  Index r = 0;
  for (const auto &lv : levels) {
    ds.X.middleRows(r, lv.X.rows()) = lv.X;
    ds.y.segment(r, lv.y.size()) = lv.y;
    for (Index i = 0; i < lv.X.rows(); ++i) {
      ds.fidelity.push_back(lv.index);
      ds.row_ids.push_back(r + i + 1);
    }
    ds.fidelity_labels.push_back(std::to_string(lv.index));
    r += lv.X.rows();
  }
  validate(ds);
  return ds;
}

} // namespace mfgp
