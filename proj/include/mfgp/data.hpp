#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Eigenvalues>

#include "mfgp/errors.hpp"
#include "mfgp/log.hpp"
#include "mfgp/multifidelity.hpp"
#include "mfgp/numerics.hpp"
#include "mfgp/random.hpp"

namespace mfgp {

// ---------------------------------------------------------------------------
// Hashing and number formatting

inline std::uint64_t fnv1a(std::string_view bytes, std::uint64_t h = 0xcbf29ce484222325ULL) {
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::uint64_t fnv1a(const double *v, std::size_t n, std::uint64_t h = 0xcbf29ce484222325ULL) {
  return fnv1a(std::string_view(reinterpret_cast<const char *>(v), n * sizeof(double)), h);
}

inline std::string hex64(std::uint64_t v) {
  char buf[17];
  auto r = std::to_chars(buf, buf + 16, v, 16);
  std::string s(buf, r.ptr);
  return std::string(16 - s.size(), '0') + s;
}

// Shortest representation that parses back to the same double.
inline std::string format_double(double v) {
  char buf[32];
  auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

inline bool parse_double(std::string_view s, double &out) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t')) s.remove_suffix(1);
  if (!s.empty() && s.front() == '+') s.remove_prefix(1);
  if (s.empty()) return false;
  auto r = std::from_chars(s.data(), s.data() + s.size(), out);
  return r.ec == std::errc() && r.ptr == s.data() + s.size() && std::isfinite(out);
}

// ---------------------------------------------------------------------------
// Dataset

struct CsvSchema {
  std::string target_column;
  std::string fidelity_column;               // empty: single fidelity level
  std::vector<std::string> feature_columns;  // empty: every other column
  std::vector<std::string> fidelity_order;   // declared labels, lowest fidelity first
};

// Rows keep file order. fidelity holds 1-based levels; fidelity_labels[l-1] is the label of level l.
struct Dataset {
  std::vector<std::string> feature_names;
  std::string target_name = "y";
  std::string fidelity_name;
  Matrix X;
  Vector y;
  std::vector<int> fidelity;
  std::vector<std::string> fidelity_labels;
  std::string source;
  std::vector<Index> row_ids; // 1-based data row in the source file

  Index rows() const { return X.rows(); }
  Index cols() const { return X.cols(); }
  int n_levels() const { return fidelity.empty() ? 0 : *std::max_element(fidelity.begin(), fidelity.end()); }
  int top_level() const { return n_levels(); }
};

inline void validate(const Dataset &ds) {
  if (ds.y.size() != ds.X.rows()) throw DimensionMismatch("dataset: target length", ds.X.rows(), ds.y.size());
  if (static_cast<Index>(ds.fidelity.size()) != ds.X.rows())
    throw DimensionMismatch("dataset: fidelity length", ds.X.rows(), ds.fidelity.size());
  if (static_cast<Index>(ds.feature_names.size()) != ds.X.cols())
    throw DimensionMismatch("dataset: feature names", ds.X.cols(), ds.feature_names.size());
  std::vector<std::string> names = ds.feature_names;
  std::sort(names.begin(), names.end());
  if (std::adjacent_find(names.begin(), names.end()) != names.end())
    throw InvalidArgument("dataset: duplicate feature names");
}

namespace detail {

inline std::vector<std::string> split_csv_line(std::string_view line) {
  std::vector<std::string> out;
  std::string cell;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cell.push_back('"');
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        cell.push_back(c);
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      out.push_back(std::move(cell));
      cell.clear();
    } else {
      cell.push_back(c);
    }
  }
  out.push_back(std::move(cell));
  for (auto &s : out) {
    const auto b = s.find_first_not_of(" \t");
    const auto e = s.find_last_not_of(" \t");
    s = b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
  }
  return out;
}

inline std::string csv_escape(const std::string &s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out.push_back('"');
    out.push_back(c);
  }
  return out + "\"";
}

// Reads non-empty, non-comment lines. Carriage returns are dropped.
inline std::vector<std::string> read_lines(std::istream &in) {
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    if (line.front() == '#') continue;
    lines.push_back(line);
  }
  return lines;
}

} // namespace detail

inline Dataset parse_csv(std::istream &in, const CsvSchema &schema, const std::string &source = "<stream>") {
  const auto lines = detail::read_lines(in);
  if (lines.empty()) throw EmptyFile(source);
  const auto header = detail::split_csv_line(lines.front());
  std::map<std::string, std::size_t> col_of;
  for (std::size_t j = 0; j < header.size(); ++j) {
    if (!col_of.emplace(header[j], j).second) throw DataError("duplicate column name: " + header[j]);
  }
  auto find = [&](const std::string &name) {
    auto it = col_of.find(name);
    if (it == col_of.end()) throw MissingColumn(name);
    return it->second;
  };
  if (schema.target_column.empty()) throw InvalidArgument("csv schema: target column is required");
  const std::size_t target_col = find(schema.target_column);
  const bool has_fid = !schema.fidelity_column.empty();
  const std::size_t fid_col = has_fid ? find(schema.fidelity_column) : 0;

  Dataset ds;
  ds.source = source;
  ds.target_name = schema.target_column;
  ds.fidelity_name = schema.fidelity_column;
  std::vector<std::size_t> feature_cols;
  if (schema.feature_columns.empty()) {
    for (std::size_t j = 0; j < header.size(); ++j)
      if (j != target_col && !(has_fid && j == fid_col)) feature_cols.push_back(j);
  } else {
    for (const auto &name : schema.feature_columns) feature_cols.push_back(find(name));
  }
  for (auto j : feature_cols) ds.feature_names.push_back(header[j]);

  const std::size_t n = lines.size() - 1;
  ds.X.resize(static_cast<Index>(n), static_cast<Index>(feature_cols.size()));
  ds.y.resize(static_cast<Index>(n));
  std::vector<std::string> raw_fid(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto cells = detail::split_csv_line(lines[i + 1]);
    if (cells.size() != header.size())
      throw DataError("row " + std::to_string(i + 1) + ": expected " + std::to_string(header.size()) + " cells, got " +
                      std::to_string(cells.size()));
    auto number = [&](std::size_t j) {
      double v = 0.0;
      if (!parse_double(cells[j], v)) throw NonNumericCell(i + 1, header[j], cells[j]);
      return v;
    };
    for (std::size_t k = 0; k < feature_cols.size(); ++k)
      ds.X(static_cast<Index>(i), static_cast<Index>(k)) = number(feature_cols[k]);
    ds.y[static_cast<Index>(i)] = number(target_col);
    if (has_fid) raw_fid[i] = cells[fid_col];
    ds.row_ids.push_back(static_cast<Index>(i + 1));
  }

  if (!has_fid) {
    ds.fidelity.assign(n, 1);
    ds.fidelity_labels = {"1"};
  } else if (!schema.fidelity_order.empty()) {
    std::map<std::string, int> level_of;
    for (std::size_t l = 0; l < schema.fidelity_order.size(); ++l) level_of[schema.fidelity_order[l]] = static_cast<int>(l + 1);
    for (std::size_t i = 0; i < n; ++i) {
      auto it = level_of.find(raw_fid[i]);
      if (it == level_of.end())
        throw DataError("row " + std::to_string(i + 1) + ": undeclared fidelity label '" + raw_fid[i] + "'");
      ds.fidelity.push_back(it->second);
    }
    ds.fidelity_labels = schema.fidelity_order;
  } else {
    // Integer tags; levels follow their sorted distinct values.
    std::vector<long long> tags(n);
    for (std::size_t i = 0; i < n; ++i) {
      const auto &s = raw_fid[i];
      auto r = std::from_chars(s.data(), s.data() + s.size(), tags[i]);
      if (s.empty() || r.ec != std::errc() || r.ptr != s.data() + s.size())
        throw NonNumericCell(i + 1, schema.fidelity_column, s);
    }
    std::vector<long long> distinct = tags;
    std::sort(distinct.begin(), distinct.end());
    distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());
    for (auto t : tags)
      ds.fidelity.push_back(static_cast<int>(std::lower_bound(distinct.begin(), distinct.end(), t) - distinct.begin()) + 1);
    for (auto t : distinct) ds.fidelity_labels.push_back(std::to_string(t));
  }
  validate(ds);
  return ds;
}

inline Dataset load_csv(const std::string &path, const CsvSchema &schema) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open file: " + path);
  return parse_csv(in, schema, path);
}

struct FeatureTable {
  std::vector<std::string> names;
  Matrix X;
};

// Reads the named numeric columns, in the order given (empty: every column
// not listed in `exclude`). A header-only input gives zero rows.
inline FeatureTable parse_feature_table(std::istream &in, const std::vector<std::string> &columns,
                                        const std::vector<std::string> &exclude = {},
                                        const std::string &source = "<stream>") {
  const auto lines = detail::read_lines(in);
  if (lines.empty()) throw EmptyFile(source);
  const auto header = detail::split_csv_line(lines.front());
  FeatureTable t;
  std::vector<std::size_t> idx;
  if (columns.empty()) {
    for (std::size_t j = 0; j < header.size(); ++j)
      if (std::find(exclude.begin(), exclude.end(), header[j]) == exclude.end()) {
        t.names.push_back(header[j]);
        idx.push_back(j);
      }
    if (idx.empty()) throw DataError(source + ": no feature columns");
  } else {
    for (const auto &name : columns) {
      const auto it = std::find(header.begin(), header.end(), name);
      if (it == header.end()) throw MissingColumn(name);
      t.names.push_back(name);
      idx.push_back(static_cast<std::size_t>(it - header.begin()));
    }
  }
  t.X.resize(static_cast<Index>(lines.size() - 1), static_cast<Index>(idx.size()));
  for (std::size_t r = 1; r < lines.size(); ++r) {
    const auto cells = detail::split_csv_line(lines[r]);
    if (cells.size() != header.size())
      throw DataError(source + ": row " + std::to_string(r) + " has " + std::to_string(cells.size()) + " cells, expected " +
                      std::to_string(header.size()));
    for (std::size_t k = 0; k < idx.size(); ++k) {
      double v = 0;
      if (!parse_double(cells[idx[k]], v)) throw NonNumericCell(r, header[idx[k]], cells[idx[k]]);
      t.X(static_cast<Index>(r - 1), static_cast<Index>(k)) = v;
    }
  }
  return t;
}

inline FeatureTable load_feature_table(const std::string &path, const std::vector<std::string> &columns,
                                       const std::vector<std::string> &exclude = {}) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open file: " + path);
  return parse_feature_table(in, columns, exclude, path);
}

// Columns: features..., target, then fidelity labels when the dataset has a fidelity column.
inline void write_csv(std::ostream &out, const Dataset &ds) {
  validate(ds);
  const bool has_fid = !ds.fidelity_name.empty();
  for (const auto &name : ds.feature_names) out << detail::csv_escape(name) << ',';
  out << detail::csv_escape(ds.target_name);
  if (has_fid) out << ',' << detail::csv_escape(ds.fidelity_name);
  out << '\n';
  for (Index i = 0; i < ds.rows(); ++i) {
    for (Index j = 0; j < ds.cols(); ++j) out << format_double(ds.X(i, j)) << ',';
    out << format_double(ds.y[i]);
    if (has_fid) out << ',' << detail::csv_escape(ds.fidelity_labels.at(static_cast<std::size_t>(ds.fidelity[static_cast<std::size_t>(i)] - 1)));
    out << '\n';
  }
}

inline std::vector<Index> level_rows(const Dataset &ds, int level) {
  std::vector<Index> rows;
  for (std::size_t i = 0; i < ds.fidelity.size(); ++i)
    if (ds.fidelity[i] == level) rows.push_back(static_cast<Index>(i));
  return rows;
}

inline Matrix take_rows(const Matrix &X, const std::vector<Index> &rows) {
  Matrix out(static_cast<Index>(rows.size()), X.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) out.row(static_cast<Index>(i)) = X.row(rows[i]);
  return out;
}

inline Vector take_rows(const Vector &y, const std::vector<Index> &rows) {
  Vector out(static_cast<Index>(rows.size()));
  for (std::size_t i = 0; i < rows.size(); ++i) out[static_cast<Index>(i)] = y[rows[i]];
  return out;
}

inline Dataset subset_rows(const Dataset &ds, const std::vector<Index> &rows) {
  Dataset out = ds;
  out.X = take_rows(ds.X, rows);
  out.y = take_rows(ds.y, rows);
  out.fidelity.clear();
  out.row_ids.clear();
  for (auto r : rows) {
    out.fidelity.push_back(ds.fidelity[static_cast<std::size_t>(r)]);
    out.row_ids.push_back(ds.row_ids.empty() ? r + 1 : ds.row_ids[static_cast<std::size_t>(r)]);
  }
  return out;
}

// One FidelityLevel per level present, ordered by level.
inline std::vector<FidelityLevel> to_levels(const Dataset &ds) {
  std::vector<FidelityLevel> levels;
  for (int l = 1; l <= ds.n_levels(); ++l) {
    const auto rows = level_rows(ds, l);
    if (rows.empty()) throw InvalidLevelOrder("dataset has no rows at fidelity level " + std::to_string(l));
    levels.push_back({l, take_rows(ds.X, rows), take_rows(ds.y, rows)});
  }
  return levels;
}

inline std::uint64_t dataset_hash(const Dataset &ds) {
  std::ostringstream s;
  write_csv(s, ds);
  return fnv1a(s.str());
}

// ---------------------------------------------------------------------------
// Splits

// Row indices refer to the dataset. Rows below the top level are always training rows.
struct SplitPlan {
  std::uint64_t seed = 0;
  Index n_train = 0;
  std::vector<Index> train;
  std::vector<Index> test;
};

namespace detail {

// High rows in content order, so draws do not depend on file row order.
inline std::vector<Index> canonical_high_rows(const Dataset &ds) {
  auto rows = level_rows(ds, ds.top_level());
  std::stable_sort(rows.begin(), rows.end(), [&](Index a, Index b) {
    for (Index j = 0; j < ds.cols(); ++j)
      if (ds.X(a, j) != ds.X(b, j)) return ds.X(a, j) < ds.X(b, j);
    return ds.y[a] < ds.y[b];
  });
  return rows;
}

} // namespace detail

inline std::vector<SplitPlan> make_splits(const Dataset &ds, Index n_train, int n_repeats, std::uint64_t seed) {
  const auto high = detail::canonical_high_rows(ds);
  const Index n_high = static_cast<Index>(high.size());
  if (n_train < 1 || n_train >= n_high)
    throw InvalidArgument("make_splits: N_t must satisfy 1 <= N_t < " + std::to_string(n_high) + ", got " +
                          std::to_string(n_train));
  if (n_repeats < 1) throw InvalidArgument("make_splits: n_repeats must be >= 1");
  std::vector<SplitPlan> plans;
  for (int r = 0; r < n_repeats; ++r) {
    SplitPlan p;
    p.seed = derive_seed(seed, static_cast<std::uint64_t>(r));
    p.n_train = n_train;
    auto order = high;
    Rng rng(p.seed);
    rng.shuffle(order);
    p.train.assign(order.begin(), order.begin() + n_train);
    p.test.assign(order.begin() + n_train, order.end());
    std::sort(p.train.begin(), p.train.end());
    std::sort(p.test.begin(), p.test.end());
    plans.push_back(std::move(p));
  }
  return plans;
}

inline std::vector<SplitPlan> loo_splits(const Dataset &ds) {
  const auto high = level_rows(ds, ds.top_level());
  if (high.size() < 2) throw InvalidArgument("loo_splits: need at least 2 high-fidelity rows");
  std::vector<SplitPlan> plans;
  for (std::size_t i = 0; i < high.size(); ++i) {
    SplitPlan p;
    p.seed = static_cast<std::uint64_t>(i);
    p.n_train = static_cast<Index>(high.size() - 1);
    for (std::size_t j = 0; j < high.size(); ++j) (i == j ? p.test : p.train).push_back(high[j]);
    plans.push_back(std::move(p));
  }
  return plans;
}

// Every row used for training under `plan`: all lower-level rows plus the high training rows.
inline std::vector<Index> training_rows(const Dataset &ds, const SplitPlan &plan) {
  std::vector<Index> rows;
  const int top = ds.top_level();
  for (std::size_t i = 0; i < ds.fidelity.size(); ++i)
    if (ds.fidelity[i] != top) rows.push_back(static_cast<Index>(i));
  rows.insert(rows.end(), plan.train.begin(), plan.train.end());
  std::sort(rows.begin(), rows.end());
  return rows;
}

// ---------------------------------------------------------------------------
// Normalization

struct NormalizationStats {
  Vector x_min, x_max;
  double y_min = 0.0, y_max = 1.0;

  bool zero_range(Index j) const { return !(x_max[j] > x_min[j]); }
  bool target_zero_range() const { return !(y_max > y_min); }
};

inline NormalizationStats fit_normalize(const Matrix &X, const Vector &y) {
  if (X.rows() == 0) throw InvalidArgument("fit_normalize: empty reference subset");
  if (X.rows() != y.size()) throw DimensionMismatch("fit_normalize: target length", X.rows(), y.size());
  NormalizationStats s;
  s.x_min = X.colwise().minCoeff().transpose();
  s.x_max = X.colwise().maxCoeff().transpose();
  s.y_min = y.minCoeff();
  s.y_max = y.maxCoeff();
  return s;
}

inline NormalizationStats fit_normalize(const Dataset &ds) { return fit_normalize(ds.X, ds.y); }

inline NormalizationStats fit_normalize(const Dataset &ds, const SplitPlan &plan) {
  const auto rows = training_rows(ds, plan);
  return fit_normalize(take_rows(ds.X, rows), take_rows(ds.y, rows));
}

inline Matrix normalize_features(const Matrix &X, const NormalizationStats &s) {
  if (X.cols() != s.x_min.size()) throw DimensionMismatch("normalize: feature count", s.x_min.size(), X.cols());
  Matrix out(X.rows(), X.cols());
  for (Index j = 0; j < X.cols(); ++j) {
    if (s.zero_range(j)) {
      out.col(j).setZero();
      continue;
    }
    const double range = s.x_max[j] - s.x_min[j];
    for (Index i = 0; i < X.rows(); ++i) out(i, j) = (X(i, j) - s.x_min[j]) / range;
  }
  return out;
}

inline Vector normalize_target(const Vector &y, const NormalizationStats &s) {
  if (s.target_zero_range()) return Vector::Zero(y.size());
  return ((y.array() - s.y_min) / (s.y_max - s.y_min)).matrix();
}

inline Vector denormalize_target(const Vector &y, const NormalizationStats &s) {
  if (s.target_zero_range()) return Vector::Constant(y.size(), s.y_min);
  return (y.array() * (s.y_max - s.y_min) + s.y_min).matrix();
}

inline Matrix denormalize_features(const Matrix &X, const NormalizationStats &s) {
  Matrix out(X.rows(), X.cols());
  for (Index j = 0; j < X.cols(); ++j)
    out.col(j) = s.zero_range(j) ? Vector::Constant(X.rows(), s.x_min[j])
                                 : Vector((X.col(j).array() * (s.x_max[j] - s.x_min[j]) + s.x_min[j]).matrix());
  return out;
}

inline Dataset apply_normalize(const Dataset &ds, const NormalizationStats &s) {
  for (Index j = 0; j < ds.cols(); ++j)
    if (s.zero_range(j)) logger()->warn("normalize: column '{}' has zero range, mapped to 0", ds.feature_names[static_cast<std::size_t>(j)]);
  if (s.target_zero_range()) logger()->warn("normalize: target has zero range, mapped to 0");
  Dataset out = ds;
  out.X = normalize_features(ds.X, s);
  out.y = normalize_target(ds.y, s);
  return out;
}

// ---------------------------------------------------------------------------
// PCA

struct PcaResult {
  Matrix projected;        // n x k
  Vector explained_ratio;  // k, nonincreasing
  Matrix components;       // d x k, unit columns
  Vector mean;             // d
};

inline PcaResult pca_project(const Matrix &X, Index k) {
  require_finite(X, "pca_project: X");
  const Index n = X.rows(), d = X.cols();
  if (k < 1 || k > std::min(n - 1, d))
    throw InvalidArgument("pca_project: k must be in [1, min(rows-1, cols)], got " + std::to_string(k));
  PcaResult r;
  r.mean = X.colwise().mean().transpose();
  const Matrix C = X.rowwise() - r.mean.transpose();
  const Matrix cov = (C.transpose() * C) / static_cast<double>(n - 1);
  Eigen::SelfAdjointEigenSolver<Matrix> eig(cov);
  if (eig.info() != Eigen::Success) throw NumericalError("pca_project: eigendecomposition failed");
  const Vector values = eig.eigenvalues().reverse().cwiseMax(0.0);
  const Matrix vectors = eig.eigenvectors().rowwise().reverse();
  const double total = values.sum();
  r.components = vectors.leftCols(k);
  for (Index c = 0; c < k; ++c) {
    Index arg = 0;
    r.components.col(c).cwiseAbs().maxCoeff(&arg);
    if (r.components(arg, c) < 0) r.components.col(c) *= -1.0;
  }
  r.explained_ratio = total > 0 ? Vector(values.head(k) / total) : Vector(Vector::Zero(k));
  r.projected = C * r.components;
  return r;
}

} // namespace mfgp
