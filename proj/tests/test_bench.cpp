#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <numbers>

#include "mfgp/bench.hpp"
#include "test_helpers.hpp"

using namespace mfgp;

namespace {

Dataset single_level(const Matrix &X, const Vector &y) {
  Dataset ds;
  for (Index j = 0; j < X.cols(); ++j) ds.feature_names.push_back("x" + std::to_string(j));
  ds.X = X;
  ds.y = y;
  ds.fidelity.assign(static_cast<std::size_t>(X.rows()), 1);
  ds.fidelity_labels = {"1"};
  for (Index i = 0; i < X.rows(); ++i) ds.row_ids.push_back(i + 1);
  return ds;
}

BenchConfig quick(std::vector<Method> methods, std::vector<Index> nt, int repeats) {
  BenchConfig c;
  c.methods = std::move(methods);
  c.n_train = std::move(nt);
  c.repeats = repeats;
  c.gp.restarts = 3;
  return c;
}

} // namespace

// --------------------------------------------------------------------------
// rmse and summaries

TEST(Rmse, Examples) {
  EXPECT_EQ(rmse(Vector{{1.0, 2.0}}, Vector{{1.0, 2.0}}), 0.0);
  EXPECT_NEAR(rmse(Vector{{3.0, 4.0}}, Vector{{0.0, 0.0}}), 3.5355339, 1e-7);
  EXPECT_THROW(rmse(Vector(2), Vector(3)), DimensionMismatch);
  EXPECT_THROW(rmse(Vector(0), Vector(0)), InvalidArgument);
}

TEST(Rmse, MatchesTwoPassOracle) {
  Rng rng(1);
  for (int t = 0; t < 20; ++t) {
    const Index n = 1 + static_cast<Index>(rng.index(50));
    const Vector a = testutil::random_vector(rng, n), b = testutil::random_vector(rng, n);
    std::vector<double> sq;
    for (Index i = 0; i < n; ++i) sq.push_back((a[i] - b[i]) * (a[i] - b[i]));
    double total = 0;
    for (double v : sq) total += v;
    EXPECT_NEAR(rmse(a, b), std::sqrt(total / static_cast<double>(n)), 1e-12);
  }
}

TEST(Methods, ParseNames) {
  EXPECT_EQ(parse_method("GP_LOW"), Method::GpLow);
  EXPECT_EQ(parse_method("gp-high"), Method::GpHigh);
  EXPECT_EQ(parse_method("gp-vol"), Method::GpAug);
  EXPECT_EQ(parse_method("NARGP"), Method::Nargp);
  EXPECT_THROW(parse_method("mlp"), InvalidArgument);
  for (auto m : all_methods()) EXPECT_EQ(parse_method(to_string(m)), m);
}

// --------------------------------------------------------------------------
// Synthetic tasks

TEST(Synthetic, LinearLinkFigureShape) {
  const auto lv = make_synthetic("LINEAR_LINK", 12, 6, 3);
  ASSERT_EQ(lv.size(), 2u);
  EXPECT_EQ(lv[0].X.rows(), 12);
  EXPECT_EQ(lv[1].X.rows(), 6);
  EXPECT_TRUE(is_nested(lv));
  EXPECT_DOUBLE_EQ(lv[0].y[0], 0.5 * linear_link_high(0.0) + 10 * (0.0 - 0.5) - 5);
  EXPECT_NEAR(linear_link_high(1.0), 16 * std::sin(8.0), 1e-12);
}

TEST(Synthetic, NoiseFreeIsBitwiseReproducible) {
  const auto a = make_synthetic("nonlinear_link", 20, 8, 5);
  const auto b = make_synthetic("nonlinear_link", 20, 8, 5);
  for (std::size_t l = 0; l < 2; ++l) {
    EXPECT_EQ(a[l].X, b[l].X);
    EXPECT_EQ(std::memcmp(a[l].y.data(), b[l].y.data(), sizeof(double) * static_cast<std::size_t>(a[l].y.size())), 0);
  }
  const auto noisy1 = make_synthetic("nonlinear_link", 20, 8, 5, {0.1, 0.05});
  const auto noisy2 = make_synthetic("nonlinear_link", 20, 8, 5, {0.1, 0.05});
  EXPECT_EQ(noisy1[0].y, noisy2[0].y);
  EXPECT_NE(noisy1[0].y, a[0].y);
}

TEST(Synthetic, NonlinearLinkDefeatsLinearFit) {
  const Matrix X = uniform_grid(2001);
  const Vector lo = evaluate(nonlinear_link_low, X), hi = evaluate(nonlinear_link_high, X);
  const double ml = lo.mean(), mh = hi.mean();
  const double sxy = ((lo.array() - ml) * (hi.array() - mh)).sum();
  const double sxx = (lo.array() - ml).square().sum();
  const double syy = (hi.array() - mh).square().sum();
  const double r2 = sxy * sxy / (sxx * syy);
  EXPECT_LT(r2, 0.2);
  EXPECT_LT(std::abs(sxy / std::sqrt(sxx * syy)), 0.2);
}

TEST(Synthetic, Errors) {
  EXPECT_THROW(make_synthetic("branin", 10, 5, 1), UnknownTask);
  EXPECT_THROW(make_synthetic("linear_link", 5, 6, 1), InvalidArgument);
  EXPECT_THROW(make_synthetic("linear_link", 1, 1, 1), InvalidArgument);
}

// --------------------------------------------------------------------------
// run_experiment

TEST(Experiment, MemorizesDuplicatedTestPoint) {
  Rng rng(2);
  Matrix X(12, 1);
  Vector y(12);
  for (Index i = 0; i < 6; ++i) {
    X(2 * i, 0) = X(2 * i + 1, 0) = 0.1 + 0.15 * static_cast<double>(i);
    y[2 * i] = y[2 * i + 1] = std::sin(5 * X(2 * i, 0));
  }
  auto cfg = quick({Method::GpHigh}, {11}, 12);
  const auto rep = run_experiment(single_level(X, y), cfg);
  ASSERT_EQ(rep.summary.front().n_failures, 0);
  for (const auto &c : rep.cells) EXPECT_LT(c.rmse, 1e-4);
}

TEST(Experiment, ReportsAreBitwiseDeterministicAcrossJobs) {
  SyntheticExperiment exp{"linear_link", 12, 50, {}};
  auto cfg = quick(all_methods(), {4, 8}, 3);
  const auto a = run_experiment(exp, cfg);
  const auto b = run_experiment(exp, cfg);
  cfg.jobs = 3;
  const auto c = run_experiment(exp, cfg);
  EXPECT_EQ(summary_csv(a), summary_csv(b));
  EXPECT_EQ(summary_csv(a), summary_csv(c));
  EXPECT_EQ(report_json(a).dump(), report_json(b).dump());
  auto ja = report_json(a), jc = report_json(c);
  EXPECT_EQ(ja.dump(), jc.dump());
}

TEST(Experiment, SummaryRecomputableFromCells) {
  SyntheticExperiment exp{"nonlinear_link", 16, 40, {}};
  const auto rep = run_experiment(exp, quick({Method::GpHigh, Method::Largp}, {5, 9}, 4));
  for (const auto &s : rep.summary) {
    ASSERT_EQ(s.rmses.size(), 4u);
    double m = 0;
    for (double v : s.rmses) m += v;
    m /= 4;
    double var = 0;
    for (double v : s.rmses) var += (v - m) * (v - m);
    EXPECT_NEAR(s.mean_rmse, m, 1e-12);
    EXPECT_NEAR(s.std_rmse, std::sqrt(var / 4), 1e-12);
  }
}

TEST(Experiment, SingleRepeatHasZeroStd) {
  SyntheticExperiment exp{"linear_link", 12, 20, {}};
  const auto rep = run_experiment(exp, quick({Method::GpHigh}, {6}, 1));
  EXPECT_EQ(rep.summary.front().std_rmse, 0.0);
  EXPECT_NE(summary_csv(rep).find("gp-high,6,"), std::string::npos);
}

TEST(Experiment, GpLowTrainingSetIdenticalAcrossNt) {
  SyntheticExperiment exp{"linear_link", 16, 30, {}};
  const auto rep = run_experiment(exp, quick({Method::GpLow}, {4, 8, 12}, 5));
  for (const auto &c : rep.cells) {
    EXPECT_EQ(c.train_hash, rep.cells.front().train_hash);
    EXPECT_EQ(c.train_rows, rep.cells.front().train_rows);
  }
}

TEST(Experiment, FailedSeedsAreRecordedNotImputed) {
  // Fixed zero-noise hyperparameters: any split holding two copies of x = 0.5 is singular.
  Matrix X(8, 1);
  Vector y(8);
  for (Index i = 0; i < 8; ++i) {
    X(i, 0) = i < 4 ? 0.5 : 0.1 * static_cast<double>(i - 3);
    y[i] = static_cast<double>(i);
  }
  auto cfg = quick({Method::GpHigh}, {4}, 12);
  cfg.gp.optimize = false;
  cfg.gp.noise_floor = 0.0;
  cfg.gp.jitter.cap = 1e-12;
  Hyperparameters h;
  h.kernel = KernelSpec::make_rbf(RbfKernel::ard(Vector::Constant(1, 0.3), 1.0));
  h.noise_variance = 0.0;
  cfg.gp.initial = h;
  const auto rep = run_experiment(single_level(X, y), cfg);
  const auto &s = rep.summary.front();
  EXPECT_GT(s.n_failures, 0);
  EXPECT_GT(s.n_ok, 0);
  EXPECT_EQ(s.n_ok + s.n_failures, 12);
  EXPECT_EQ(static_cast<int>(s.rmses.size()), s.n_ok);
  for (const auto &c : rep.cells)
    if (!c.ok) EXPECT_FALSE(c.error.empty());
}

TEST(Experiment, ConfigurationErrorsThrow) {
  SyntheticExperiment exp{"linear_link", 12, 20, {}};
  EXPECT_THROW(run_experiment(exp, quick({}, {6}, 1)), InvalidArgument);
  EXPECT_THROW(run_experiment(exp, quick({Method::GpHigh}, {12}, 1)), InvalidArgument);
  EXPECT_THROW(run_experiment(exp, quick({Method::GpHigh}, {}, 1)), InvalidArgument);
  auto bad = quick({Method::GpAug}, {6}, 1);
  bad.aug_indicator = {0.0};
  EXPECT_THROW(run_experiment(exp, bad), InvalidArgument);
  EXPECT_THROW(run_experiment(SyntheticExperiment{"nope", 12, 20, {}}, quick({Method::GpHigh}, {6}, 1)), UnknownTask);
}

TEST(Experiment, DatasetModeWithOriginalUnits) {
  const auto lv = make_synthetic("linear_link", 14, 10, 4);
  auto ds = levels_to_dataset(lv);
  auto cfg = quick({Method::GpHigh, Method::GpAug, Method::Largp}, {6}, 3);
  cfg.original_units = true;
  const auto rep = run_experiment(ds, cfg);
  const double range = ds.y.maxCoeff() - ds.y.minCoeff();
  for (const auto &c : rep.cells) {
    ASSERT_TRUE(c.ok) << c.error;
    EXPECT_NEAR(c.rmse_original, c.rmse * range, 1e-9 * range);
  }
  cfg.normalization = NormalizationReference::TrainOnly;
  const auto rep2 = run_experiment(ds, cfg);
  for (const auto &c : rep2.cells) EXPECT_TRUE(c.ok) << c.error;
}

// --------------------------------------------------------------------------
// Leave-one-out

TEST(Loo, NoiseFreeInterpolationCoversEverything) {
  const Matrix X = uniform_grid(24);
  const Vector y = evaluate([](double x) { return std::sin(4 * x); }, X);
  BenchConfig cfg;
  cfg.gp.restarts = 3;
  const auto rep = loo_report(single_level(X, y), {Method::GpHigh}, cfg);
  ASSERT_EQ(rep.points.size(), 24u);
  EXPECT_EQ(rep.summary.front().coverage, 1.0);
  for (const auto &p : rep.points) {
    EXPECT_EQ(p.lo2sd, p.mean - 2 * std::sqrt(p.variance));
    EXPECT_EQ(p.hi2sd, p.mean + 2 * std::sqrt(p.variance));
  }
}

TEST(Loo, WellSpecifiedNoiseHasNominalCoverage) {
  double total = 0;
  for (std::uint64_t draw = 0; draw < 4; ++draw) {
    Rng rng(100 + draw);
    Matrix X(24, 1);
    Vector y(24);
    for (Index i = 0; i < 24; ++i) {
      X(i, 0) = rng.uniform();
      y[i] = std::sin(6 * X(i, 0)) + 0.1 * rng.normal();
    }
    BenchConfig cfg;
    cfg.gp.restarts = 3;
    const auto rep = loo_report(single_level(X, y), {Method::GpHigh}, cfg);
    EXPECT_GE(rep.summary.front().coverage, 0.75);
    total += rep.summary.front().coverage;
  }
  EXPECT_GE(total / 4, 0.85);
}

// --------------------------------------------------------------------------
// Subset-size sweep

namespace {

// Six features; only the first two drive the target at both fidelities.
Dataset planted(std::uint64_t seed) {
  Rng rng(seed);
  const Index n_low = 60, n_high = 14, d = 6;
  const Matrix X = testutil::random_matrix(rng, n_low + n_high, d, 0.0, 1.0);
  Vector y(n_low + n_high);
  for (Index i = 0; i < X.rows(); ++i) {
    const double f = std::sin(2 * std::numbers::pi * X(i, 0)) + std::sin(2 * std::numbers::pi * X(i, 1));
    y[i] = (i < n_low ? 0.8 * f - 0.2 : f) + 0.02 * rng.normal();
  }
  Dataset ds;
  for (Index j = 0; j < d; ++j) ds.feature_names.push_back("f" + std::to_string(j));
  ds.fidelity_name = "level";
  ds.fidelity_labels = {"1", "2"};
  ds.X = X;
  ds.y = y;
  for (Index i = 0; i < X.rows(); ++i) {
    ds.fidelity.push_back(i < n_low ? 1 : 2);
    ds.row_ids.push_back(i + 1);
  }
  return ds;
}

FeatureRanking rank_dataset(const Dataset &ds) {
  Labels target;
  const auto table = discretize_table(ds.X, ds.y, 5, DiscretizationMethod::EqualFrequency, &target);
  return mrmr_rank(table, target);
}

} // namespace

TEST(Sweep, AllFeaturesReproducesBaseline) {
  const auto ds = planted(1);
  const auto ranking = rank_dataset(ds);
  auto cfg = quick({Method::Largp}, {10}, 3);
  cfg.seed = 50;
  const auto sweep = sweep_subset_size(ds, ranking, Method::Largp, cfg, {6});
  cfg.seed = 56;
  const auto base = run_experiment(ds, cfg);
  ASSERT_EQ(sweep.size(), 1u);
  EXPECT_EQ(sweep.front().mean_rmse, base.summary.front().mean_rmse);
  EXPECT_EQ(sweep.front().std_rmse, base.summary.front().std_rmse);
}

TEST(Sweep, CurveCoversEverySizeAndIsDeterministic) {
  const auto ds = planted(2);
  const auto ranking = rank_dataset(ds);
  auto cfg = quick({Method::Largp}, {10}, 2);
  const auto a = sweep_subset_size(ds, ranking, Method::Largp, cfg);
  const auto b = sweep_subset_size(ds, ranking, Method::Largp, cfg);
  ASSERT_EQ(a.size(), 6u);
  for (std::size_t k = 0; k < a.size(); ++k) {
    EXPECT_EQ(a[k].n_features, static_cast<Index>(k + 1));
    EXPECT_EQ(a[k].mean_rmse, b[k].mean_rmse);
  }
  EXPECT_THROW(sweep_subset_size(ds, ranking, Method::Largp, quick({Method::Largp}, {6, 8}, 1)), InvalidArgument);
}

// With per-dimension lengthscales the irrelevant inputs are switched off and
// the curve is flat beyond the planted size, so the shared mode is used here.
TEST(Sweep, PlantedRelevanceMinimumAtTwo) {
  int hits = 0;
  for (std::uint64_t meta = 0; meta < 10; ++meta) {
    const auto ds = planted(100 + meta);
    const auto ranking = rank_dataset(ds);
    auto cfg = quick({Method::Largp}, {10}, 8);
    cfg.gp.lengthscale_mode = LengthscaleMode::Shared;
    cfg.seed = meta;
    const auto sweep = sweep_subset_size(ds, ranking, Method::Largp, cfg);
    hits += best_subset_size(sweep) == 2;
  }
  EXPECT_GE(hits, 8);
}
