#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "mfgp/multifidelity.hpp"
#include "test_helpers.hpp"

using namespace mfgp;

namespace {

Matrix grid(Index n, double lo = 0.0, double hi = 1.0) {
  Matrix X(n, 1);
  for (Index i = 0; i < n; ++i) X(i, 0) = lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(n - 1);
  return X;
}

template <class F> Vector apply(const Matrix &X, F f) {
  Vector y(X.rows());
  for (Index i = 0; i < X.rows(); ++i) y[i] = f(X(i, 0));
  return y;
}

Matrix take_rows(const Matrix &X, const std::vector<Index> &rows) {
  Matrix out(static_cast<Index>(rows.size()), X.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) out.row(static_cast<Index>(i)) = X.row(rows[i]);
  return out;
}

double rmse(const Vector &a, const Vector &b) { return std::sqrt((a - b).squaredNorm() / static_cast<double>(a.size())); }

Hyperparameters rbf_hyper(double l, double v, double noise) {
  Hyperparameters h;
  h.kernel = KernelSpec::make_rbf(RbfKernel::ard(Vector::Constant(1, l), v));
  h.noise_variance = noise;
  return h;
}

double sq(double v) { return v * v; }

} // namespace

// --------------------------------------------------------------------------
// ensure_nested
// --------------------------------------------------------------------------

TEST(EnsureNested, AlreadyNestedIsUnchanged) {
  const Matrix Xl = grid(6);
  std::vector<FidelityLevel> lv{{1, Xl, apply(Xl, [](double x) { return x; })},
                                {2, take_rows(Xl, {1, 3}), Vector{{0.5, 0.7}}}};
  const auto out = ensure_nested(lv);
  EXPECT_TRUE(out.log.empty());
  EXPECT_EQ(out.levels[0].X, lv[0].X);
  EXPECT_EQ(out.levels[0].y, lv[0].y);
  EXPECT_TRUE(is_nested(out.levels));
}

TEST(EnsureNested, ScaleUpShapeDisjointInputs) {
  Rng rng(1);
  const Matrix Xl = testutil::random_matrix(rng, 24, 8);
  const Matrix Xh = testutil::random_matrix(rng, 16, 8);
  std::vector<FidelityLevel> lv{{1, Xl, Xl.col(0) + 0.1 * Xl.col(1)}, {2, Xh, Xh.col(0)}};
  NestingConfig cfg;
  cfg.gp.restarts = 3;
  const auto out = ensure_nested(lv, cfg);
  EXPECT_EQ(out.levels[0].X.rows(), 40);
  EXPECT_EQ(out.log.size(), 16u);
  EXPECT_TRUE(is_nested(out.levels));
  for (const auto &p : out.log) {
    EXPECT_EQ(p.level, 1);
    EXPECT_GE(p.row, 24);
    EXPECT_EQ(out.levels[0].y[p.row], p.value);
  }
  EXPECT_EQ(out.levels[1].X, Xh);
}

TEST(EnsureNested, ImputesPosteriorMeanOfLowerLevel) {
  const Matrix Xl = grid(11);
  Matrix Xlow(10, 1);
  Index k = 0;
  for (Index i = 0; i < 11; ++i)
    if (i != 5) Xlow(k++, 0) = Xl(i, 0);
  const Vector ylow = Xlow.col(0);
  std::vector<FidelityLevel> lv{{1, Xlow, ylow}, {2, Matrix::Constant(1, 1, 0.5), Vector::Constant(1, 0.0)}};
  const auto out = ensure_nested(lv);
  ASSERT_EQ(out.log.size(), 1u);
  const double imputed = out.levels[0].y[10];
  // Same value as the lower-level GP posterior mean.
  const auto gp = fit(Xlow, ylow, FitConfig{});
  EXPECT_EQ(imputed, predict(gp, Matrix::Constant(1, 1, 0.5)).mean[0]);
  EXPECT_NEAR(imputed, 0.5, 1e-3);
}

TEST(EnsureNested, PropagatesThroughThreeLevels) {
  const Matrix X1 = grid(8);
  const Matrix X2 = grid(5, 0.05, 0.95);
  const Matrix X3 = grid(3, 0.11, 0.77);
  std::vector<FidelityLevel> lv{{1, X1, apply(X1, [](double x) { return x; })},
                                {2, X2, apply(X2, [](double x) { return 2 * x; })},
                                {3, X3, apply(X3, [](double x) { return 3 * x; })}};
  const auto out = ensure_nested(lv);
  EXPECT_TRUE(is_nested(out.levels));
  EXPECT_EQ(out.levels[1].X.rows(), 8);
  EXPECT_EQ(out.levels[0].X.rows(), 16);
  EXPECT_EQ(out.log.size(), 11u);
}

TEST(EnsureNested, DuplicateMissingRowsAppendedOnce) {
  const Matrix Xl = grid(5);
  Matrix Xh(3, 1);
  Xh << 0.33, 0.33, 0.5;
  std::vector<FidelityLevel> lv{{1, Xl, Xl.col(0)}, {2, Xh, Vector::Zero(3)}};
  EXPECT_EQ(ensure_nested(lv).log.size(), 1u);
}

TEST(EnsureNested, SampleModeIsSeededAndDiffersFromMean) {
  Rng rng(2);
  const Matrix Xl = testutil::random_matrix(rng, 8, 1);
  const Matrix Xh = testutil::random_matrix(rng, 3, 1);
  std::vector<FidelityLevel> lv{{1, Xl, Vector(Xl.col(0).array().sin())}, {2, Xh, Vector::Zero(3)}};
  NestingConfig cfg;
  cfg.gp.noise_floor = 1e-2; // keep posterior variance visible
  cfg.mode = ImputationMode::PosteriorSample;
  cfg.seed = 5;
  const auto a = ensure_nested(lv, cfg);
  const auto b = ensure_nested(lv, cfg);
  EXPECT_EQ(a.levels[0].y, b.levels[0].y);
  cfg.mode = ImputationMode::PosteriorMean;
  const auto c = ensure_nested(lv, cfg);
  EXPECT_NE(a.levels[0].y, c.levels[0].y);
}

TEST(EnsureNested, RejectsSingleLevelAndBadOrder) {
  const Matrix X = grid(4);
  EXPECT_THROW(ensure_nested({{1, X, X.col(0)}}), InvalidArgument);
  EXPECT_THROW(ensure_nested({{2, X, X.col(0)}, {1, X, X.col(0)}}), InvalidLevelOrder);
}

// --------------------------------------------------------------------------
// LARGP
// --------------------------------------------------------------------------

TEST(Largp, LearnsExactLinearLink) {
  const Matrix X = grid(10);
  const Vector ylow = apply(X, [](double x) { return std::sin(6 * x); });
  std::vector<FidelityLevel> lv{{1, X, ylow}, {2, X, Vector(2.0 * ylow)}};
  const auto model = fit_largp(lv);
  EXPECT_NEAR(model.levels[1].rho, 2.0, 0.05);
  EXPECT_LT(model.levels[1].gp.hyper.kernel.rbf.variance, 1e-3);
}

TEST(Largp, ZeroLinkEqualsHighOnlyGp) {
  const Matrix Xl = grid(12);
  const Matrix Xh = take_rows(Xl, {0, 3, 5, 8, 11});
  auto f_hi = [](double x) { return sq(6 * x - 2) * std::sin(12 * x - 4); };
  std::vector<FidelityLevel> lv{{1, Xl, apply(Xl, [&](double x) { return 0.5 * f_hi(x) + 10 * (x - 0.5) - 5; })},
                                {2, Xh, apply(Xh, f_hi)}};
  MfgpConfig cfg;
  cfg.gp.seed = 17;
  cfg.fixed_rho = 0.0;
  cfg.fixed_mu = 0.0;
  const auto model = fit_largp(lv, cfg);
  const auto high = fit(Xh, lv[1].y, cfg.gp);
  const Matrix Xs = grid(40);
  const auto a = predict_largp(model, Xs);
  const auto b = predict(high, Xs);
  EXPECT_EQ(a.mean, b.mean);
  EXPECT_EQ(a.variance, b.variance);
}

TEST(Largp, ForresterPairTrains) {
  const Matrix Xl = grid(12);
  const Matrix Xh = take_rows(Xl, {0, 2, 4, 7, 9, 11});
  auto f_hi = [](double x) { return sq(6 * x - 2) * std::sin(12 * x - 4); };
  std::vector<FidelityLevel> lv{{1, Xl, apply(Xl, [&](double x) { return 0.5 * f_hi(x) + 10 * (x - 0.5) - 5; })},
                                {2, Xh, apply(Xh, f_hi)}};
  const auto model = fit_largp(lv);
  ASSERT_EQ(model.levels.size(), 2u);
  const auto pd = predict_largp(model, grid(100));
  EXPECT_TRUE(pd.mean.allFinite());
  EXPECT_NEAR(model.levels[1].rho, 2.0, 0.2);
}

TEST(Largp, SingleLevelEqualsPlainGp) {
  Rng rng(3);
  const Matrix X = testutil::random_matrix(rng, 7, 2);
  const Vector y = testutil::random_vector(rng, 7);
  const auto model = fit_largp({{1, X, y}});
  const auto gp = fit(X, y);
  const Matrix Xs = testutil::random_matrix(rng, 10, 2);
  EXPECT_EQ(predict_largp(model, Xs).mean, predict(gp, Xs).mean);
  EXPECT_EQ(predict_largp(model, Xs).variance, predict(gp, Xs).variance);
}

TEST(Largp, IdentityLinkReproducesLowLevel) {
  const Matrix Xl = grid(9);
  const Vector yl = apply(Xl, [](double x) { return std::cos(4 * x); });
  const Matrix Xh = take_rows(Xl, {1, 4, 7});
  const auto low = fit(Xl, yl);
  std::vector<FidelityLevel> lv{{1, Xl, yl}, {2, Xh, predict(low, Xh).mean}};
  MfgpConfig cfg;
  cfg.fixed_rho = 1.0;
  cfg.fixed_mu = 0.0;
  const auto model = fit_largp(lv, cfg);
  const Matrix Xs = grid(30);
  EXPECT_LT((predict_largp(model, Xs).mean - predict(low, Xs).mean).lpNorm<Eigen::Infinity>(), 1e-8);
}

TEST(Largp, MatchesDirectRecursionWithNaiveInversion) {
  const Matrix Xl = grid(5);
  const Matrix Xh = take_rows(Xl, {0, 2, 4});
  const Vector yl{{0.1, 0.4, 0.35, 0.8, 0.9}};
  const Vector yh{{0.3, 0.9, 1.7}};
  const auto h1 = rbf_hyper(0.3, 0.8, 0.01);
  const auto h2 = rbf_hyper(0.5, 0.2, 0.02);
  const double rho = 1.7, mu = 0.15;

  // Level 1 with fixed hyperparameters, then level 2 with fixed link.
  MfgpModel model;
  model.kind = MfgpKind::Largp;
  model.levels.push_back({condition(h1, Xl, yl), 0.0, 0.0});
  const Vector m_h = predict(model.levels[0].gp, Xh).mean;
  model.levels.push_back({condition(h2, Xh, Vector(yh - ((rho * m_h).array() + mu).matrix())), rho, mu});

  const Matrix Xs = grid(9, -0.1, 1.1);
  const auto pd = predict_largp(model, Xs);

  auto k1 = [&](const oracle::Vec &a, const oracle::Vec &b) { return oracle::rbf(a, b, {0.3}, 0.8); };
  auto k2 = [&](const oracle::Vec &a, const oracle::Vec &b) { return oracle::rbf(a, b, {0.5}, 0.2); };
  const auto lvl1_train = oracle::gp_posterior(testutil::to_rows(Xl), testutil::to_vec(yl), testutil::to_rows(Xh), k1, 0.01, 0.0);
  const auto lvl1_test = oracle::gp_posterior(testutil::to_rows(Xl), testutil::to_vec(yl), testutil::to_rows(Xs), k1, 0.01, 0.0);
  oracle::Vec resid(3);
  for (std::size_t i = 0; i < 3; ++i) resid[i] = yh[static_cast<Index>(i)] - rho * lvl1_train.mean[i] - mu;
  const auto lvl2 = oracle::gp_posterior(testutil::to_rows(Xh), resid, testutil::to_rows(Xs), k2, 0.02, 0.0);
  for (Index i = 0; i < Xs.rows(); ++i) {
    const auto u = static_cast<std::size_t>(i);
    EXPECT_NEAR(pd.mean[i], rho * lvl1_test.mean[u] + mu + lvl2.mean[u], 1e-8);
    EXPECT_NEAR(pd.variance[i], rho * rho * lvl1_test.variance[u] + lvl2.variance[u], 1e-8);
  }
}

TEST(Largp, FixedHyperparameterPathUsesInitial) {
  const Matrix Xl = grid(5);
  const Matrix Xh = take_rows(Xl, {0, 2, 4});
  MfgpConfig cfg;
  cfg.gp.optimize = false;
  cfg.gp.initial = rbf_hyper(0.3, 0.8, 0.01);
  cfg.fixed_rho = 1.5;
  cfg.fixed_mu = 0.0;
  const auto model = fit_largp({{1, Xl, Xl.col(0)}, {2, Xh, Xh.col(0)}}, cfg);
  EXPECT_EQ(model.levels[1].gp.hyper.kernel.rbf.lengthscales[0], 0.3);
  EXPECT_EQ(model.levels[1].rho, 1.5);
}

TEST(Largp, ReproducesHighTrainingTargets) {
  const Matrix Xl = grid(15);
  const Matrix Xh = take_rows(Xl, {0, 3, 6, 9, 12, 14});
  auto f_hi = [](double x) { return sq(6 * x - 2) * std::sin(12 * x - 4); };
  std::vector<FidelityLevel> lv{{1, Xl, apply(Xl, [&](double x) { return 0.5 * f_hi(x) + 10 * (x - 0.5) - 5; })},
                                {2, Xh, apply(Xh, f_hi)}};
  const auto model = fit_largp(lv);
  EXPECT_LT((predict_largp(model, Xh).mean - lv[1].y).lpNorm<Eigen::Infinity>(), 1e-4);
}

TEST(Largp, VarianceDecomposition) {
  Rng rng(4);
  for (int trial = 0; trial < 10; ++trial) {
    const Matrix Xl = testutil::random_matrix(rng, 10, 1);
    const Matrix Xh = take_rows(Xl, {0, 2, 4, 6});
    std::vector<FidelityLevel> lv{{1, Xl, testutil::random_vector(rng, 10)},
                                  {2, Xh, testutil::random_vector(rng, 4)}};
    MfgpConfig cfg;
    cfg.gp.restarts = 2;
    cfg.gp.seed = static_cast<std::uint64_t>(trial);
    const auto model = fit_largp(lv, cfg);
    const Matrix Xs = testutil::random_matrix(rng, 20, 1, -0.2, 1.2);
    const auto top = predict_largp(model, Xs);
    const auto low = predict(model.levels[0].gp, Xs);
    const double rho = model.levels[1].rho;
    for (Index i = 0; i < Xs.rows(); ++i) {
      EXPECT_GE(top.variance[i], rho * rho * low.variance[i] - 1e-10);
      EXPECT_GE(top.variance[i], 0.0);
    }
  }
}

TEST(Largp, Errors) {
  const Matrix X = grid(4);
  const Matrix Xh = Matrix::Constant(2, 1, 0.123);
  EXPECT_THROW(fit_largp({{1, X, X.col(0)}, {2, Xh, Vector::Zero(2)}}), NotNested);
  EXPECT_THROW(fit_largp({{1, X, X.col(0)}, {2, X.topRows(1), Vector::Zero(1)}}), InvalidArgument);
  EXPECT_THROW(fit_largp({{2, X, X.col(0)}, {1, X, X.col(0)}}), InvalidLevelOrder);
  const auto model = fit_largp({{1, X, X.col(0)}, {2, X.topRows(2), Vector::Zero(2)}});
  EXPECT_THROW(predict_largp(model, Matrix::Zero(1, 2)), DimensionMismatch);
  EXPECT_THROW(predict_nargp(model, Matrix::Zero(1, 1)), InvalidArgument);
}

// --------------------------------------------------------------------------
// NARGP
// --------------------------------------------------------------------------

namespace {

std::vector<FidelityLevel> quadratic_link() {
  const Matrix Xl = grid(20);
  const Matrix Xh = take_rows(Xl, {0, 3, 6, 9, 11, 14, 17, 19});
  auto f_lo = [](double x) { return std::sin(2 * std::numbers::pi * x); };
  return {{1, Xl, apply(Xl, f_lo)}, {2, Xh, apply(Xh, [&](double x) { return sq(f_lo(x)); })}};
}

} // namespace

TEST(Nargp, QuadraticLinkBeatsLargp) {
  const auto lv = quadratic_link();
  const Matrix Xs = grid(50);
  const Vector truth = apply(Xs, [](double x) { return sq(std::sin(2 * std::numbers::pi * x)); });
  const double e_n = rmse(predict_nargp(fit_nargp(lv), Xs).mean, truth);
  const double e_l = rmse(predict_largp(fit_largp(lv), Xs).mean, truth);
  EXPECT_LT(e_n, 0.05);
  EXPECT_GT(e_l, e_n);
}

TEST(Nargp, MatchesDirectCompositeKernelOracle) {
  const auto lv = quadratic_link();
  const auto model = fit_nargp(lv);
  const Matrix Xs = grid(13, -0.05, 1.05);
  const auto pd = predict_nargp(model, Xs);

  const auto &g1 = model.levels[0].gp.hyper;
  const auto &g2 = model.levels[1].gp.hyper;
  auto k1 = [&](const oracle::Vec &a, const oracle::Vec &b) {
    return oracle::rbf(a, b, testutil::lengthscales_of(g1.kernel.rbf), g1.kernel.rbf.variance);
  };
  const auto low_h = oracle::gp_posterior(testutil::to_rows(lv[0].X), testutil::to_vec(lv[0].y),
                                          testutil::to_rows(lv[1].X), k1, g1.noise_variance, g1.mean_constant);
  const auto low_s = oracle::gp_posterior(testutil::to_rows(lv[0].X), testutil::to_vec(lv[0].y),
                                          testutil::to_rows(Xs), k1, g1.noise_variance, g1.mean_constant);
  auto aug = [](const Matrix &X, const oracle::Vec &f) {
    oracle::Mat Z;
    for (Index i = 0; i < X.rows(); ++i) Z.push_back({X(i, 0), f[static_cast<std::size_t>(i)]});
    return Z;
  };
  const auto &kd = g2.kernel.interaction;
  const auto &kb = g2.kernel.bias;
  const double lf = g2.kernel.output_lengthscale;
  auto k2 = [&](const oracle::Vec &a, const oracle::Vec &b) {
    const double kx = oracle::rbf({a[0]}, {b[0]}, testutil::lengthscales_of(kd), kd.variance);
    const double kf = std::exp(-0.5 * sq(a[1] - b[1]) / (lf * lf));
    return kx * kf + oracle::rbf({a[0]}, {b[0]}, testutil::lengthscales_of(kb), kb.variance);
  };
  const auto ref = oracle::gp_posterior(aug(lv[1].X, low_h.mean), testutil::to_vec(lv[1].y), aug(Xs, low_s.mean), k2,
                                        g2.noise_variance, g2.mean_constant);
  for (Index i = 0; i < Xs.rows(); ++i) EXPECT_NEAR(pd.mean[i], ref.mean[static_cast<std::size_t>(i)], 1e-6);
}

TEST(Nargp, ConstantLowLevelReducesToSumKernel) {
  const Matrix Xl = grid(10);
  const Matrix Xh = take_rows(Xl, {1, 3, 5, 8});
  std::vector<FidelityLevel> lv{{1, Xl, Vector::Zero(10)}, {2, Xh, apply(Xh, [](double x) { return std::sin(5 * x); })}};
  const auto model = fit_nargp(lv);
  const Matrix Xs = grid(21);
  const auto pd = predict_nargp(model, Xs);
  const auto &g2 = model.levels[1].gp.hyper;
  const auto &kd = g2.kernel.interaction;
  const auto &kb = g2.kernel.bias;
  auto reduced = [&](const oracle::Vec &a, const oracle::Vec &b) {
    return oracle::rbf(a, b, testutil::lengthscales_of(kd), kd.variance) +
           oracle::rbf(a, b, testutil::lengthscales_of(kb), kb.variance);
  };
  const auto ref = oracle::gp_posterior(testutil::to_rows(Xh), testutil::to_vec(lv[1].y), testutil::to_rows(Xs), reduced,
                                        g2.noise_variance, g2.mean_constant);
  for (Index i = 0; i < Xs.rows(); ++i) {
    EXPECT_NEAR(pd.mean[i], ref.mean[static_cast<std::size_t>(i)], 1e-8);
    EXPECT_NEAR(pd.variance[i], ref.variance[static_cast<std::size_t>(i)], 1e-8);
  }
}

TEST(Nargp, CellLineShapeTrains) {
  Rng rng(5);
  const Matrix Xl = testutil::random_matrix(rng, 30, 3);
  const Matrix Xh = testutil::random_matrix(rng, 9, 3);
  std::vector<FidelityLevel> lv{{1, Xl, Vector(Xl.rowwise().sum())},
                                {2, Xh, Vector(Xh.rowwise().sum().array().square())}};
  NestingConfig ncfg;
  const auto nested = ensure_nested(lv, ncfg);
  const auto model = fit_nargp(nested.levels);
  EXPECT_TRUE(predict_nargp(model, Xh).mean.allFinite());
}

TEST(Nargp, SingleLevelEqualsPlainGp) {
  Rng rng(6);
  const Matrix X = testutil::random_matrix(rng, 6, 1);
  const Vector y = testutil::random_vector(rng, 6);
  const Matrix Xs = testutil::random_matrix(rng, 9, 1);
  EXPECT_EQ(predict_nargp(fit_nargp({{1, X, y}}), Xs).mean, predict(fit(X, y), Xs).mean);
}

TEST(Nargp, MonteCarloAgreesWhenLowerVarianceVanishes) {
  const auto lv = quadratic_link();
  const auto model = fit_nargp(lv);
  NargpPredictOptions mc;
  mc.monte_carlo = true;
  mc.samples = 100;
  mc.seed = 3;
  const auto det = predict_nargp(model, lv[0].X); // level-1 training inputs
  const auto sto = predict_nargp(model, lv[0].X, mc);
  const auto low = predict(model.levels[0].gp, lv[0].X);
  for (Index i = 0; i < lv[0].X.rows(); ++i) {
    ASSERT_LT(low.variance[i], 1e-6);
    const double se = std::sqrt(std::max(sto.variance[i] - det.variance[i], 0.0) / mc.samples);
    EXPECT_LE(std::abs(sto.mean[i] - det.mean[i]), 3 * se + 1e-6);
  }
}

TEST(Nargp, MonteCarloIsSeeded) {
  const auto lv = quadratic_link();
  const auto model = fit_nargp(lv);
  NargpPredictOptions mc;
  mc.monte_carlo = true;
  mc.samples = 20;
  mc.seed = 9;
  const Matrix Xs = grid(7, 0.02, 0.93);
  EXPECT_EQ(predict_nargp(model, Xs, mc).mean, predict_nargp(model, Xs, mc).mean);
}

TEST(Nargp, CompositeGramIsPositiveDefinite) {
  Rng rng(7);
  for (int trial = 0; trial < 50; ++trial) {
    const Index d = 1 + static_cast<Index>(rng.index(3));
    const Index n = 3 + static_cast<Index>(rng.index(12));
    Matrix Z = testutil::random_matrix(rng, n, d + 1);
    for (Index i = 0; i < n; ++i) Z(i, 0) = static_cast<double>(i) / static_cast<double>(n);
    const auto k = KernelSpec::make_nargp(RbfKernel::ard(testutil::random_vector(rng, d, 1e-3, 0.1), rng.log_uniform(0.1, 5)),
                                          rng.log_uniform(0.01, 2.0),
                                          RbfKernel::ard(testutil::random_vector(rng, d, 1e-3, 0.1), rng.log_uniform(0.01, 1)));
    EXPECT_LE(cholesky(gram_matrix(k, Z)).jitter, 1e-8);
  }
}
