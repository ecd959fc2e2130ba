#pragma once

#include <algorithm>
#include <atomic>
#include <cctype>
#include <cmath>
#include <exception>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "json.hpp"

#include "mfgp/data.hpp"
#include "mfgp/featsel.hpp"
#include "mfgp/gp.hpp"
#include "mfgp/model.hpp"
#include "mfgp/multifidelity.hpp"
#include "mfgp/synthetic.hpp"
#include "mfgp/version.hpp"

namespace mfgp {

enum class NormalizationReference { AllRows, TrainOnly };

struct FeatureSelectionConfig {
  Index n_features = 0; // 0 keeps every feature
  bool per_split = false;
  int n_bins = 5;
  DiscretizationMethod method = DiscretizationMethod::EqualFrequency;
};

inline FitConfig default_bench_fit() {
  FitConfig c;
  c.estimate_mean = true;
  return c;
}

struct BenchConfig {
  std::vector<Method> methods = all_methods();
  std::vector<Index> n_train = {6, 10, 14};
  int repeats = 30;
  std::uint64_t seed = 1;
  FitConfig gp = default_bench_fit();
  ImputationMode imputation = ImputationMode::PosteriorMean;
  std::vector<double> aug_indicator; // one value per level; empty: (level-1)/(L-1)
  NormalizationReference normalization = NormalizationReference::AllRows;
  bool original_units = false;
  std::vector<Index> feature_subset; // explicit column subset; empty: all columns
  FeatureSelectionConfig feature_selection;
  int jobs = 1;
};

// Dense-grid evaluation of a two-level synthetic task. Every low grid point
// also has a high value; splits pick the high training rows and the test set
// is a separate grid of noise-free high values.
struct SyntheticExperiment {
  std::string task = "linear_link";
  Index n_low = 20; // also the size of the high pool, so N_t < n_low
  Index test_points = 100;
  SyntheticNoise noise;
};

struct CellResult {
  Method method = Method::GpHigh;
  Index n_train = 0;
  int repeat = 0;
  std::uint64_t seed = 0;
  bool ok = false;
  double rmse = std::numeric_limits<double>::quiet_NaN();
  double rmse_original = std::numeric_limits<double>::quiet_NaN();
  std::string error;
  std::uint64_t train_hash = 0;      // hash of the exact training inputs and targets
  std::vector<Index> train_rows;     // dataset rows used for training
};

struct SummaryRow {
  Method method = Method::GpHigh;
  Index n_train = 0;
  double mean_rmse = std::numeric_limits<double>::quiet_NaN();
  double std_rmse = std::numeric_limits<double>::quiet_NaN();
  int n_ok = 0;
  int n_failures = 0;
  std::vector<double> rmses; // successful repeats in repeat order
};

struct ExperimentReport {
  std::string source;
  std::uint64_t dataset_hash = 0;
  BenchConfig config;
  std::vector<double> indicator; // GP-AUG value per level
  std::vector<Index> features;   // columns used (before any per-split selection)
  std::vector<CellResult> cells; // ordered by method, N_t, repeat
  std::vector<SummaryRow> summary;
};

inline double rmse(const Vector &pred, const Vector &truth) {
  if (pred.size() != truth.size()) throw DimensionMismatch("rmse: lengths", truth.size(), pred.size());
  if (pred.size() == 0) throw InvalidArgument("rmse: empty input");
  return std::sqrt((pred - truth).squaredNorm() / static_cast<double>(pred.size()));
}

// Population mean and standard deviation (ddof 0).
inline std::pair<double, double> mean_std(const std::vector<double> &v) {
  if (v.empty()) return {std::numeric_limits<double>::quiet_NaN(), std::numeric_limits<double>::quiet_NaN()};
  double m = 0.0;
  for (double x : v) m += x;
  m /= static_cast<double>(v.size());
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return {m, std::sqrt(s / static_cast<double>(v.size()))};
}

namespace detail {

// Runs fn(i) for i in [0, n) on up to `jobs` threads. The first exception by index is rethrown.
template <class F> void parallel_for(std::size_t n, int jobs, F &&fn) {
  std::vector<std::exception_ptr> errors(n);
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < n; i = next++) {
      try {
        fn(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const std::size_t workers = std::min<std::size_t>(n, static_cast<std::size_t>(std::max(jobs, 1)));
  if (workers <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < workers; ++t) pool.emplace_back(worker);
    for (auto &th : pool) th.join();
  }
  for (auto &e : errors)
    if (e) std::rethrow_exception(e);
}

inline std::vector<double> indicator_values(const BenchConfig &cfg, int n_levels) {
  if (!cfg.aug_indicator.empty()) {
    if (static_cast<int>(cfg.aug_indicator.size()) != n_levels)
      throw InvalidArgument("aug indicator needs one value per fidelity level");
    return cfg.aug_indicator;
  }
  std::vector<double> v;
  for (int l = 1; l <= n_levels; ++l) v.push_back(n_levels == 1 ? 0.0 : static_cast<double>(l - 1) / (n_levels - 1));
  return v;
}

inline std::uint64_t training_hash(const Matrix &X, const Vector &y, std::uint64_t h = 0xcbf29ce484222325ULL) {
  const Matrix Xc = X; // column-major contiguous copy
  return fnv1a(y.data(), static_cast<std::size_t>(y.size()), fnv1a(Xc.data(), static_cast<std::size_t>(Xc.size()), h));
}

struct PreparedSplit {
  std::vector<FidelityLevel> levels; // training data by level, top level restricted to the split
  std::vector<std::vector<Index>> rows; // dataset rows per level
  Matrix X_test;
  Vector y_test;
  NormalizationStats stats;
};

inline std::vector<Index> resolve_features(const Dataset &ds, const BenchConfig &cfg) {
  if (!cfg.feature_subset.empty()) {
    for (auto c : cfg.feature_subset)
      if (c < 0 || c >= ds.cols()) throw InvalidArgument("feature subset index out of range");
    return cfg.feature_subset;
  }
  std::vector<Index> all(static_cast<std::size_t>(ds.cols()));
  for (Index j = 0; j < ds.cols(); ++j) all[static_cast<std::size_t>(j)] = j;
  return all;
}

inline std::vector<Index> select_by_mrmr(const Matrix &X, const Vector &y, const FeatureSelectionConfig &fs,
                                         const std::vector<Index> &candidates) {
  if (fs.n_features < 1 || fs.n_features > static_cast<Index>(candidates.size()))
    throw InvalidArgument("feature selection: n_features out of range");
  Labels target;
  const auto table = discretize_table(select_columns(X, candidates), y, fs.n_bins, fs.method, &target);
  const auto ranking = mrmr_rank(table, target);
  std::vector<Index> out;
  for (auto c : top_features(ranking, fs.n_features)) out.push_back(candidates[static_cast<std::size_t>(c)]);
  return out;
}

} // namespace detail

// Fits `method` on the split's training levels and predicts at X_test.
inline PredictiveDistribution fit_predict_method(Method method, const std::vector<FidelityLevel> &levels, const Matrix &X_test,
                                                 const FitConfig &gp, std::uint64_t seed, ImputationMode imputation,
                                                 const std::vector<double> &indicator, bool observation_variance = false,
                                                 std::uint64_t *train_hash = nullptr) {
  if (train_hash) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    switch (method) {
    case Method::GpLow: h = detail::training_hash(levels.front().X, levels.front().y); break;
    case Method::GpHigh: h = detail::training_hash(levels.back().X, levels.back().y); break;
    default:
      for (const auto &lv : levels) h = detail::training_hash(lv.X, lv.y, h);
    }
    *train_hash = h;
  }
  const auto tm = train_model(method, levels, gp, seed, imputation, method == Method::GpAug ? indicator : std::vector<double>{});
  return predict_model(tm, X_test, observation_variance);
}

namespace detail {

inline PreparedSplit prepare_split(const Dataset &raw, const Dataset &normalized_all, const NormalizationStats &stats_all,
                                   const SplitPlan &plan, const BenchConfig &cfg, const std::vector<Index> &features) {
  PreparedSplit s;
  const Dataset *ds = &normalized_all;
  Dataset local;
  s.stats = stats_all;
  if (cfg.normalization == NormalizationReference::TrainOnly) {
    s.stats = fit_normalize(raw, plan);
    local = raw;
    local.X = normalize_features(raw.X, s.stats);
    local.y = normalize_target(raw.y, s.stats);
    ds = &local;
  }
  std::vector<Index> cols = features;
  const int L = ds->n_levels();
  for (int l = 1; l <= L; ++l) s.rows.push_back(l == L ? plan.train : level_rows(*ds, l));
  if (cfg.feature_selection.n_features > 0 && cfg.feature_selection.per_split) {
    const auto rows = training_rows(*ds, plan);
    cols = select_by_mrmr(take_rows(ds->X, rows), take_rows(ds->y, rows), cfg.feature_selection, features);
  }
  const Matrix Xc = select_columns(ds->X, cols);
  for (int l = 1; l <= L; ++l) {
    const auto &rows = s.rows[static_cast<std::size_t>(l - 1)];
    s.levels.push_back({l, take_rows(Xc, rows), take_rows(ds->y, rows)});
  }
  s.X_test = take_rows(Xc, plan.test);
  s.y_test = take_rows(ds->y, plan.test);
  return s;
}

inline void summarize(ExperimentReport &rep) {
  rep.summary.clear();
  for (auto m : rep.config.methods) {
    for (auto nt : rep.config.n_train) {
      SummaryRow row;
      row.method = m;
      row.n_train = nt;
      for (const auto &c : rep.cells) {
        if (c.method != m || c.n_train != nt) continue;
        if (c.ok) {
          row.rmses.push_back(c.rmse);
          ++row.n_ok;
        } else {
          ++row.n_failures;
        }
      }
      std::tie(row.mean_rmse, row.std_rmse) = mean_std(row.rmses);
      rep.summary.push_back(std::move(row));
    }
  }
}

struct ExperimentInputs {
  const Dataset *raw = nullptr;
  Dataset normalized;
  NormalizationStats stats;
  std::optional<Matrix> X_test_override;
  std::optional<Vector> y_test_override; // normalized
  std::optional<Vector> y_test_original;
};

inline ExperimentReport run_cells(const ExperimentInputs &in, const BenchConfig &cfg) {
  if (cfg.methods.empty()) throw InvalidArgument("run_experiment: no methods");
  if (cfg.n_train.empty()) throw InvalidArgument("run_experiment: no N_t values");
  if (cfg.repeats < 1) throw InvalidArgument("run_experiment: repeats must be >= 1");
  const Dataset &raw = *in.raw;
  ExperimentReport rep;
  rep.source = raw.source;
  rep.dataset_hash = dataset_hash(raw);
  rep.config = cfg;
  rep.indicator = indicator_values(cfg, raw.n_levels());
  rep.features = resolve_features(raw, cfg);
  if (cfg.feature_selection.n_features > 0 && !cfg.feature_selection.per_split)
    rep.features = select_by_mrmr(in.normalized.X, in.normalized.y, cfg.feature_selection, rep.features);

  std::vector<std::vector<SplitPlan>> plans;
  for (auto nt : cfg.n_train) plans.push_back(make_splits(raw, nt, cfg.repeats, cfg.seed));

  const std::size_t per_method = cfg.n_train.size() * static_cast<std::size_t>(cfg.repeats);
  rep.cells.resize(cfg.methods.size() * per_method);
  parallel_for(rep.cells.size(), cfg.jobs, [&](std::size_t i) {
    const std::size_t mi = i / per_method;
    const std::size_t ni = (i % per_method) / static_cast<std::size_t>(cfg.repeats);
    const int r = static_cast<int>(i % static_cast<std::size_t>(cfg.repeats));
    const SplitPlan &plan = plans[ni][static_cast<std::size_t>(r)];
    CellResult &cell = rep.cells[i];
    cell.method = cfg.methods[mi];
    cell.n_train = cfg.n_train[ni];
    cell.repeat = r;
    cell.seed = plan.seed;
    auto split = prepare_split(raw, in.normalized, in.stats, plan, cfg, rep.features);
    if (in.X_test_override) {
      split.X_test = select_columns(*in.X_test_override, rep.features);
      split.y_test = *in.y_test_override;
    }
    if (cell.method == Method::GpLow) {
      cell.train_rows = split.rows.front();
    } else if (cell.method == Method::GpHigh) {
      cell.train_rows = split.rows.back();
    } else {
      for (const auto &rows : split.rows) cell.train_rows.insert(cell.train_rows.end(), rows.begin(), rows.end());
      std::sort(cell.train_rows.begin(), cell.train_rows.end());
    }
    try {
      const auto pd = fit_predict_method(cell.method, split.levels, split.X_test, cfg.gp, plan.seed, cfg.imputation,
                                         rep.indicator, false, &cell.train_hash);
      if (!pd.mean.allFinite()) throw NumericalError("non-finite prediction");
      cell.rmse = rmse(pd.mean, split.y_test);
      if (cfg.original_units) {
        const Vector truth = in.y_test_original ? *in.y_test_original : take_rows(raw.y, plan.test);
        cell.rmse_original = rmse(denormalize_target(pd.mean, split.stats), truth);
      }
      cell.ok = true;
    } catch (const NumericalError &e) {
      cell.ok = false;
      cell.error = e.what();
    }
  });
  summarize(rep);
  return rep;
}

} // namespace detail

// Repeated random splits over a multi-fidelity (or single-fidelity) dataset.
inline ExperimentReport run_experiment(const Dataset &ds, const BenchConfig &cfg) {
  validate(ds);
  detail::ExperimentInputs in;
  in.raw = &ds;
  in.stats = fit_normalize(ds);
  in.normalized = ds;
  in.normalized.X = normalize_features(ds.X, in.stats);
  in.normalized.y = normalize_target(ds.y, in.stats);
  return detail::run_cells(in, cfg);
}

// Builds the synthetic pool, then evaluates on a dense grid of noise-free high values.
// Targets are scaled by the min and max of the true high function on that grid.
inline Dataset synthetic_pool(const SyntheticExperiment &exp, std::uint64_t seed) {
  return levels_to_dataset(make_synthetic(exp.task, exp.n_low, exp.n_low, seed, exp.noise));
}

inline ExperimentReport run_experiment(const SyntheticExperiment &exp, const BenchConfig &cfg) {
  const auto task = synthetic_task(exp.task);
  if (exp.test_points < 1) throw InvalidArgument("synthetic experiment: test_points must be >= 1");
  const Dataset ds = synthetic_pool(exp, cfg.seed);
  const Matrix X_test = uniform_grid(exp.test_points, task.lo, task.hi);
  const Vector truth = evaluate(task.f_high, X_test);
  detail::ExperimentInputs in;
  in.raw = &ds;
  in.stats.x_min = Vector::Constant(1, task.lo);
  in.stats.x_max = Vector::Constant(1, task.hi);
  in.stats.y_min = truth.minCoeff();
  in.stats.y_max = truth.maxCoeff();
  in.normalized = ds;
  in.normalized.X = normalize_features(ds.X, in.stats);
  in.normalized.y = normalize_target(ds.y, in.stats);
  in.X_test_override = normalize_features(X_test, in.stats);
  in.y_test_override = normalize_target(truth, in.stats);
  in.y_test_original = truth;
  BenchConfig c = cfg;
  if (c.normalization == NormalizationReference::TrainOnly) {
    logger()->warn("synthetic experiments use fixed normalization from the true high function");
    c.normalization = NormalizationReference::AllRows;
  }
  auto rep = detail::run_cells(in, c);
  rep.source = "synthetic:" + task.name;
  return rep;
}

// ---------------------------------------------------------------------------
// Leave-one-out with 2-sigma bands

struct LooPoint {
  Method method = Method::GpHigh;
  Index row = 0; // dataset row
  double truth = 0, mean = 0, variance = 0, lo2sd = 0, hi2sd = 0;
  bool covered = false;
  bool ok = false;
  std::string error;
};

struct LooSummary {
  Method method = Method::GpHigh;
  double rmse = std::numeric_limits<double>::quiet_NaN();
  double coverage = std::numeric_limits<double>::quiet_NaN();
  int n_ok = 0;
  int n_failures = 0;
};

struct LooReport {
  std::string source;
  std::uint64_t dataset_hash = 0;
  std::vector<LooPoint> points;
  std::vector<LooSummary> summary;
};

// Bands use the observation variance, so coverage is measured against noisy targets.
inline LooReport loo_report(const Dataset &ds, const std::vector<Method> &methods, const BenchConfig &cfg = {}) {
  validate(ds);
  if (methods.empty()) throw InvalidArgument("loo_report: no methods");
  const auto stats = fit_normalize(ds);
  Dataset norm = ds;
  norm.X = normalize_features(ds.X, stats);
  norm.y = normalize_target(ds.y, stats);
  const auto plans = loo_splits(ds);
  const auto features = detail::resolve_features(ds, cfg);
  const auto indicator = detail::indicator_values(cfg, ds.n_levels());
  LooReport rep;
  rep.source = ds.source;
  rep.dataset_hash = dataset_hash(ds);
  rep.points.resize(methods.size() * plans.size());
  detail::parallel_for(rep.points.size(), cfg.jobs, [&](std::size_t i) {
    const Method m = methods[i / plans.size()];
    const auto &plan = plans[i % plans.size()];
    auto split = detail::prepare_split(ds, norm, stats, plan, cfg, features);
    LooPoint &p = rep.points[i];
    p.method = m;
    p.row = plan.test.front();
    p.truth = split.y_test[0];
    try {
      const auto pd = fit_predict_method(m, split.levels, split.X_test, cfg.gp, derive_seed(cfg.seed, plan.seed),
                                         cfg.imputation, indicator, true);
      p.mean = pd.mean[0];
      p.variance = pd.variance[0];
      const double sd = std::sqrt(p.variance);
      p.lo2sd = p.mean - 2 * sd;
      p.hi2sd = p.mean + 2 * sd;
      p.covered = p.truth >= p.lo2sd && p.truth <= p.hi2sd;
      p.ok = true;
    } catch (const NumericalError &e) {
      p.error = e.what();
    }
  });
  for (auto m : methods) {
    LooSummary s;
    s.method = m;
    Vector pred, truth;
    std::vector<double> pv, tv;
    int covered = 0;
    for (const auto &p : rep.points) {
      if (p.method != m) continue;
      if (!p.ok) {
        ++s.n_failures;
        continue;
      }
      ++s.n_ok;
      pv.push_back(p.mean);
      tv.push_back(p.truth);
      covered += p.covered ? 1 : 0;
    }
    if (s.n_ok > 0) {
      s.rmse = rmse(Eigen::Map<const Vector>(pv.data(), static_cast<Index>(pv.size())),
                    Eigen::Map<const Vector>(tv.data(), static_cast<Index>(tv.size())));
      s.coverage = static_cast<double>(covered) / s.n_ok;
    }
    rep.summary.push_back(s);
  }
  return rep;
}

// ---------------------------------------------------------------------------
// Subset-size sweep

struct SweepPoint {
  Index n_features = 0;
  std::vector<Index> features;
  double mean_rmse = std::numeric_limits<double>::quiet_NaN();
  double std_rmse = std::numeric_limits<double>::quiet_NaN();
  int n_failures = 0;
};

// For each size, restricts every level to the top-ranked features and reruns
// the split evaluation with seed cfg.seed + size. cfg.n_train must hold one value.
inline std::vector<SweepPoint> sweep_subset_size(const Dataset &ds, const FeatureRanking &ranking, Method method,
                                                 const BenchConfig &cfg, std::vector<Index> sizes = {}) {
  if (static_cast<Index>(ranking.order.size()) != ds.cols())
    throw InvalidArgument("sweep_subset_size: ranking must cover every feature");
  if (cfg.n_train.size() != 1) throw InvalidArgument("sweep_subset_size: exactly one N_t value is required");
  if (sizes.empty())
    for (Index k = 1; k <= ds.cols(); ++k) sizes.push_back(k);
  std::vector<SweepPoint> out;
  for (auto k : sizes) {
    BenchConfig c = cfg;
    c.methods = {method};
    c.seed = cfg.seed + static_cast<std::uint64_t>(k);
    c.feature_subset = top_features(ranking, k);
    c.feature_selection = {};
    const auto rep = run_experiment(ds, c);
    SweepPoint p;
    p.n_features = k;
    p.features = c.feature_subset;
    p.mean_rmse = rep.summary.front().mean_rmse;
    p.std_rmse = rep.summary.front().std_rmse;
    p.n_failures = rep.summary.front().n_failures;
    out.push_back(std::move(p));
  }
  return out;
}

// Smallest size attaining the minimum mean RMSE; failed sizes are skipped.
inline Index best_subset_size(const std::vector<SweepPoint> &sweep) {
  Index best = 0;
  double best_rmse = std::numeric_limits<double>::infinity();
  for (const auto &p : sweep)
    if (std::isfinite(p.mean_rmse) && p.mean_rmse < best_rmse) {
      best_rmse = p.mean_rmse;
      best = p.n_features;
    }
  return best;
}

// ---------------------------------------------------------------------------
// Report output

inline nlohmann::json config_json(const BenchConfig &cfg) {
  nlohmann::json j;
  std::vector<std::string> methods;
  for (auto m : cfg.methods) methods.push_back(to_string(m));
  j["methods"] = methods;
  j["n_train"] = cfg.n_train;
  j["repeats"] = cfg.repeats;
  j["seed"] = cfg.seed;
  j["restarts"] = cfg.gp.restarts;
  j["estimate_mean"] = cfg.gp.estimate_mean;
  j["noise_floor"] = cfg.gp.noise_floor;
  j["lengthscale_mode"] = cfg.gp.lengthscale_mode == LengthscaleMode::Ard ? "ard" : "shared";
  j["imputation"] = cfg.imputation == ImputationMode::PosteriorMean ? "mean" : "sample";
  j["normalization"] = cfg.normalization == NormalizationReference::AllRows ? "all-rows" : "train-only";
  j["aug_indicator"] = cfg.aug_indicator;
  j["feature_subset"] = cfg.feature_subset;
  j["feature_selection"] = {{"n_features", cfg.feature_selection.n_features},
                            {"per_split", cfg.feature_selection.per_split},
                            {"n_bins", cfg.feature_selection.n_bins},
                            {"method", to_string(cfg.feature_selection.method)}};
  j["original_units"] = cfg.original_units;
  return j;
}

inline nlohmann::json report_json(const ExperimentReport &rep) {
  nlohmann::json j;
  j["format"] = "mfgp-experiment";
  j["toolkit_version"] = version;
  j["source"] = rep.source;
  j["dataset_hash"] = hex64(rep.dataset_hash);
  j["config"] = config_json(rep.config);
  j["aug_indicator_values"] = rep.indicator;
  j["features"] = rep.features;
  auto &cells = j["cells"] = nlohmann::json::array();
  for (const auto &c : rep.cells) {
    nlohmann::json e{{"method", to_string(c.method)}, {"n_train", c.n_train}, {"repeat", c.repeat},
                     {"seed", c.seed},                {"ok", c.ok},           {"train_hash", hex64(c.train_hash)}};
    if (c.ok) {
      e["rmse"] = c.rmse;
      if (rep.config.original_units) e["rmse_original"] = c.rmse_original;
    } else {
      e["error"] = c.error;
    }
    cells.push_back(std::move(e));
  }
  auto &summary = j["summary"] = nlohmann::json::array();
  for (const auto &s : rep.summary) {
    nlohmann::json e{{"method", to_string(s.method)}, {"n_train", s.n_train}, {"n_ok", s.n_ok},
                     {"n_failures", s.n_failures},    {"rmses", s.rmses}};
    e["mean_rmse"] = s.n_ok ? nlohmann::json(s.mean_rmse) : nlohmann::json(nullptr);
    e["std_rmse"] = s.n_ok ? nlohmann::json(s.std_rmse) : nlohmann::json(nullptr);
    summary.push_back(std::move(e));
  }
  return j;
}

inline std::string summary_csv(const ExperimentReport &rep) {
  std::ostringstream s;
  s << "method,N_t,mean_rmse,std_rmse,n_failures\n";
  for (const auto &r : rep.summary) {
    s << to_string(r.method) << ',' << r.n_train << ',' << (r.n_ok ? format_double(r.mean_rmse) : "nan") << ','
      << (r.n_ok ? format_double(r.std_rmse) : "nan") << ',' << r.n_failures << '\n';
  }
  return s.str();
}

} // namespace mfgp
