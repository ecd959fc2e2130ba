#pragma once

// Single-fidelity Gaussian-process regression: marginal likelihood and its
// gradient, ML-II fitting with restarts, and posterior prediction.

#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <optional>
#include <vector>

#include "mfgp/errors.hpp"
#include "mfgp/log.hpp"
#include "mfgp/numerics.hpp"
#include "mfgp/optimize.hpp"
#include "mfgp/random.hpp"

namespace mfgp {

struct Hyperparameters {
  KernelSpec kernel;
  double noise_variance = 1e-2;
  double mean_constant = 0.0;
};

struct FitConfig {
  std::uint64_t seed = 0;
  int restarts = 10; // total starts, the canonical one included
  bool optimize = true;
  bool estimate_mean = false;
  double noise_floor = 1e-8;
  LengthscaleMode lengthscale_mode = LengthscaleMode::Ard;
  JitterPolicy jitter;
  OptimizeOptions optimizer;
  /// Replaces the canonical starting point (and is used verbatim when
  /// `optimize` is false).
  std::optional<Hyperparameters> initial;
};

/// Diagnostics recorded by `fit`.
struct FitInfo {
  std::vector<double> initial_mll; // NaN for restarts whose start point failed
  std::vector<double> final_mll;
  int best_restart = -1;
  int failed_restarts = 0;
  int iterations = 0;
  bool optimized = false;
};

struct GpModel {
  Hyperparameters hyper;
  Matrix X_train;
  Vector y_train;
  CholeskyFactor factor; // of K + noise * I
  Vector alpha;          // (K + noise * I)^{-1} (y - mean)
  double mll_at_fit = 0.0;
  FitInfo info;
};

struct PredictiveDistribution {
  Vector mean;
  Vector variance;
};

struct PredictOptions {
  /// Add the noise variance to the latent variance.
  bool observation_variance = false;
};

namespace detail {

constexpr double log_2pi = 1.8378770664093454835606594728112; // log(2 pi)

/// Marginal log likelihood of y - H beta under a zero-mean GP with
/// covariance K + noise * I. Optionally writes the gradient with respect to
/// [kernel log params..., log noise, beta...].
inline double mll_linear_mean(const KernelSpec &kernel, double noise, const Matrix &X,
                              const Vector &y, const Matrix &H, const Vector &beta,
                              const JitterPolicy &jitter, Vector *grad) {
  const Index n = X.rows();
  Matrix Ky = gram_matrix(kernel, X);
  Ky.diagonal().array() += noise;
  const CholeskyFactor L = cholesky(Ky, 0.0, jitter);
  const Vector r = H.cols() > 0 ? Vector(y - H * beta) : y;
  const Vector alpha = cho_solve(L, r);
  const double value =
      -0.5 * (r.dot(alpha) + log_det(L) + static_cast<double>(n) * log_2pi);
  if (grad != nullptr) {
    const auto dK = gram_gradients(kernel, X);
    const Matrix Kinv = cho_solve(L, Matrix(Matrix::Identity(n, n)));
    const Matrix W = alpha * alpha.transpose() - Kinv;
    grad->resize(static_cast<Index>(dK.size()) + 1 + H.cols());
    Index p = 0;
    for (const auto &G : dK) {
      (*grad)[p++] = 0.5 * W.cwiseProduct(G).sum();
    }
    (*grad)[p++] = 0.5 * noise * W.trace();
    for (Index k = 0; k < H.cols(); ++k) {
      (*grad)[p++] = alpha.dot(H.col(k));
    }
  }
  return value;
}

inline double variance_of(const Vector &y) {
  if (y.size() < 2) {
    return 0.0;
  }
  const double m = y.mean();
  return (y.array() - m).square().sum() / static_cast<double>(y.size());
}

/// Marginal log likelihood of y - H beta with beta at its generalized least
/// squares optimum for the given covariance, so the linear-mean coefficients
/// never enter the optimizer. Optionally writes the gradient with respect to
/// [kernel log params..., log noise]; beta's own gradient is zero at the optimum.
inline double profile_mll(const KernelSpec &kernel, double noise, const Matrix &X, const Vector &y,
                          const Matrix &H, const JitterPolicy &jitter, Vector *grad, Vector *beta_out) {
  const Index n = X.rows();
  Matrix Ky = gram_matrix(kernel, X);
  Ky.diagonal().array() += noise;
  const CholeskyFactor L = cholesky(Ky, 0.0, jitter);
  Vector beta(H.cols());
  if (H.cols() > 0) {
    const Matrix KiH = cho_solve(L, H);
    const Matrix A = H.transpose() * KiH;
    // Minimum-norm solution when columns of H are collinear.
    beta = A.completeOrthogonalDecomposition().solve(Vector(KiH.transpose() * y));
  }
  const Vector r = H.cols() > 0 ? Vector(y - H * beta) : y;
  const Vector alpha = cho_solve(L, r);
  const double value = -0.5 * (r.dot(alpha) + log_det(L) + static_cast<double>(n) * log_2pi);
  if (grad != nullptr) {
    const auto dK = gram_gradients(kernel, X);
    const Matrix Kinv = cho_solve(L, Matrix(Matrix::Identity(n, n)));
    const Matrix W = alpha * alpha.transpose() - Kinv;
    grad->resize(static_cast<Index>(dK.size()) + 1);
    Index p = 0;
    for (const auto &G : dK) (*grad)[p++] = 0.5 * W.cwiseProduct(G).sum();
    (*grad)[p] = 0.5 * noise * W.trace();
  }
  if (beta_out != nullptr) *beta_out = std::move(beta);
  return value;
}

/// Problem handed to the restart driver: maximize over kernel params and
/// noise the MLL of y - H beta, beta profiled out.
struct HyperProblem {
  const Matrix *X = nullptr;
  Vector y;            // target with fixed mean contributions already removed
  Matrix H;            // n x (free linear-mean coefficients), possibly 0 columns
  KernelSpec kernel_start;
  double noise_start = 1e-2;
  double reference_variance = 1.0; // scale for random noise starts
};

struct HyperSolution {
  KernelSpec kernel;
  double noise = 0.0;
  Vector beta;
  double mll = 0.0;
  FitInfo info;
};

inline HyperSolution solve_hyperparameters(const HyperProblem &prob, const FitConfig &cfg) {
  const Matrix &X = *prob.X;
  const auto kinds = kernel_param_kinds(prob.kernel_start);
  const Index nk = static_cast<Index>(kinds.size());
  const Index np = nk + 1;
  const double noise_floor = cfg.noise_floor;

  Bounds bounds{Vector(np), Vector(np)};
  for (Index i = 0; i < nk; ++i) {
    if (kinds[static_cast<std::size_t>(i)] == ParamKind::Lengthscale) {
      bounds.lower[i] = std::log(1e-3);
      bounds.upper[i] = std::log(1e3);
    } else {
      bounds.lower[i] = std::log(1e-8);
      bounds.upper[i] = std::log(1e6);
    }
  }
  bounds.lower[nk] = std::log(noise_floor);
  bounds.upper[nk] = std::log(1e6);

  auto objective = [&](const Vector &theta, Vector &grad) {
    const KernelSpec k = with_kernel_params(prob.kernel_start, theta);
    return profile_mll(k, std::exp(theta[nk]), X, prob.y, prob.H, cfg.jitter, &grad, nullptr);
  };

  Vector canonical(np);
  canonical.head(nk) = kernel_params(prob.kernel_start);
  canonical[nk] = std::log(std::max(prob.noise_start, noise_floor));

  Rng rng(cfg.seed);
  const double vref = prob.reference_variance > 0.0 ? prob.reference_variance : 1.0;
  const int restarts = std::max(1, cfg.restarts);

  HyperSolution best;
  best.mll = -std::numeric_limits<double>::infinity();
  FitInfo info;
  info.optimized = true;
  Vector best_theta;
  for (int r = 0; r < restarts; ++r) {
    Vector start = canonical;
    if (r > 0) {
      // Variance starts span [0.05, 5] widened to the target's own scale.
      for (Index i = 0; i < nk; ++i) {
        start[i] = kinds[static_cast<std::size_t>(i)] == ParamKind::Lengthscale
                       ? std::log(rng.log_uniform(0.05, 2.0))
                       : std::log(rng.log_uniform(0.05 * std::min(1.0, vref), 5.0 * std::max(1.0, vref)));
      }
      start[nk] = std::log(std::max(rng.log_uniform(1e-6 * vref, 0.5 * vref), noise_floor));
    }
    start = bounds.clamp(start);
    Vector g0(np);
    double f0 = std::numeric_limits<double>::quiet_NaN();
    try {
      f0 = objective(start, g0);
    } catch (const NumericalError &) {
      info.initial_mll.push_back(f0);
      info.final_mll.push_back(f0);
      ++info.failed_restarts;
      continue;
    }
    info.initial_mll.push_back(f0);
    OptimizeResult res;
    try {
      res = maximize(objective, start, bounds, cfg.optimizer);
    } catch (const NumericalError &) {
      info.final_mll.push_back(std::numeric_limits<double>::quiet_NaN());
      ++info.failed_restarts;
      continue;
    }
    info.final_mll.push_back(res.value);
    info.iterations += res.iterations;
    if (res.value > best.mll) {
      best.mll = res.value;
      best_theta = res.x;
      info.best_restart = r;
    }
  }
  if (info.best_restart < 0) {
    throw AllRestartsFailed("all " + std::to_string(restarts) +
                            " ML-II restarts failed to factorize the kernel matrix");
  }
  best.kernel = with_kernel_params(prob.kernel_start, best_theta);
  best.noise = std::exp(best_theta[nk]);
  best.mll = profile_mll(best.kernel, best.noise, X, prob.y, prob.H, cfg.jitter, nullptr, &best.beta);
  best.info = std::move(info);
  return best;
}

inline void check_training_inputs(const Matrix &X, const Vector &y) {
  if (X.rows() != y.size()) {
    throw DimensionMismatch("training targets", static_cast<std::size_t>(X.rows()),
                            static_cast<std::size_t>(y.size()));
  }
  if (X.rows() < 1) {
    throw InvalidArgument("GP fit needs at least one training point");
  }
  require_finite(X, "training inputs");
  require_finite(y, "training targets");
}

inline KernelSpec canonical_rbf(Index dim, LengthscaleMode mode) {
  return KernelSpec::make_rbf(mode == LengthscaleMode::Shared
                                  ? RbfKernel::shared(0.5, 1.0, dim)
                                  : RbfKernel::ard(Vector::Constant(dim, 0.5), 1.0));
}

} // namespace detail

/// Conditions a GP with fixed hyperparameters on training data.
/// `start_jitter` is the first diagonal inflation tried; reloading a stored
/// model passes the jitter it was fitted with to reproduce its factor.
inline GpModel condition(const Hyperparameters &hyper, const Matrix &X, const Vector &y,
                         const JitterPolicy &jitter = {}, double start_jitter = 0.0) {
  detail::check_training_inputs(X, y);
  hyper.kernel.validate();
  if (!(hyper.noise_variance >= 0.0) || !std::isfinite(hyper.noise_variance)) {
    throw InvalidHyperparameter("noise variance must be non-negative and finite");
  }
  if (X.cols() != hyper.kernel.input_dim()) {
    throw DimensionMismatch("training inputs", static_cast<std::size_t>(hyper.kernel.input_dim()),
                            static_cast<std::size_t>(X.cols()));
  }
  GpModel m;
  m.hyper = hyper;
  m.X_train = X;
  m.y_train = y;
  Matrix Ky = gram_matrix(hyper.kernel, X);
  Ky.diagonal().array() += hyper.noise_variance;
  m.factor = cholesky(Ky, start_jitter, jitter);
  const Vector r = (y.array() - hyper.mean_constant).matrix();
  m.alpha = cho_solve(m.factor, r);
  m.mll_at_fit = -0.5 * (r.dot(m.alpha) + log_det(m.factor) +
                         static_cast<double>(X.rows()) * detail::log_2pi);
  return m;
}

/// Marginal log likelihood of y under the GP defined by `hyper`.
inline double mll(const Hyperparameters &hyper, const Matrix &X, const Vector &y,
                  const JitterPolicy &jitter = {}) {
  detail::check_training_inputs(X, y);
  const Matrix H = Matrix::Ones(X.rows(), 1);
  const Vector beta = Vector::Constant(1, hyper.mean_constant);
  return detail::mll_linear_mean(hyper.kernel, hyper.noise_variance, X, y, H, beta, jitter,
                                 nullptr);
}

/// Gradient of `mll` with respect to
/// [kernel log params..., log noise variance, mean constant].
inline Vector mll_gradient(const Hyperparameters &hyper, const Matrix &X, const Vector &y,
                           const JitterPolicy &jitter = {}) {
  detail::check_training_inputs(X, y);
  const Matrix H = Matrix::Ones(X.rows(), 1);
  const Vector beta = Vector::Constant(1, hyper.mean_constant);
  Vector g;
  detail::mll_linear_mean(hyper.kernel, hyper.noise_variance, X, y, H, beta, jitter, &g);
  return g;
}

/// Same-layout parameter vector as `mll_gradient`.
inline Vector pack_hyperparameters(const Hyperparameters &hyper) {
  const Vector k = kernel_params(hyper.kernel);
  Vector p(k.size() + 2);
  p.head(k.size()) = k;
  p[k.size()] = std::log(hyper.noise_variance);
  p[k.size() + 1] = hyper.mean_constant;
  return p;
}

inline Hyperparameters unpack_hyperparameters(const Hyperparameters &like, const Vector &p) {
  Hyperparameters h = like;
  h.kernel = with_kernel_params(like.kernel, p);
  const Index nk = kernel_params(like.kernel).size();
  h.noise_variance = std::exp(p[nk]);
  h.mean_constant = p[nk + 1];
  return h;
}

/// Fits a GP with `kernel_start` as the canonical starting kernel. Used by
/// `fit` and by the NARGP levels.
inline GpModel fit_with_kernel(const Matrix &X, const Vector &y, const KernelSpec &kernel_start,
                               const FitConfig &cfg) {
  detail::check_training_inputs(X, y);
  const double vy = detail::variance_of(y);
  if (!std::isfinite(vy)) throw NumericalError("target variance overflows; rescale the target");

  Hyperparameters start;
  start.kernel = kernel_start;
  start.noise_variance = std::max(0.01 * vy, cfg.noise_floor);
  start.mean_constant = cfg.estimate_mean ? y.mean() : 0.0;
  if (cfg.initial) {
    start = *cfg.initial;
    start.noise_variance = std::max(start.noise_variance, cfg.noise_floor);
  }

  if (!cfg.optimize || X.rows() < 2) {
    GpModel m = condition(start, X, y, cfg.jitter);
    m.info.initial_mll = {m.mll_at_fit};
    m.info.final_mll = {m.mll_at_fit};
    m.info.best_restart = 0;
    return m;
  }

  detail::HyperProblem prob;
  prob.X = &X;
  prob.kernel_start = start.kernel;
  prob.noise_start = start.noise_variance;
  prob.reference_variance = vy;
  if (cfg.estimate_mean) {
    prob.y = y;
    prob.H = Matrix::Ones(X.rows(), 1);
  } else {
    prob.y = (y.array() - start.mean_constant).matrix();
    prob.H = Matrix(X.rows(), 0);
  }
  auto sol = detail::solve_hyperparameters(prob, cfg);

  Hyperparameters h;
  h.kernel = sol.kernel;
  h.noise_variance = sol.noise;
  h.mean_constant = cfg.estimate_mean ? sol.beta[0] : start.mean_constant;
  GpModel m = condition(h, X, y, cfg.jitter);
  m.info = std::move(sol.info);
  return m;
}

/// ML-II fit of an RBF-kernel GP.
inline GpModel fit(const Matrix &X, const Vector &y, const FitConfig &cfg = {}) {
  detail::check_training_inputs(X, y);
  if (X.minCoeff() < -1e-9 || X.maxCoeff() > 1.0 + 1e-9) {
    logger()->warn("GP inputs fall outside [0, 1]; features are expected to be normalized");
  }
  return fit_with_kernel(X, y, detail::canonical_rbf(X.cols(), cfg.lengthscale_mode), cfg);
}

/// Posterior mean and (latent or observation) variance at the rows of X_star.
inline PredictiveDistribution predict(const GpModel &model, const Matrix &X_star,
                                      const PredictOptions &opts = {}) {
  if (X_star.cols() != model.X_train.cols()) {
    throw DimensionMismatch("prediction inputs", static_cast<std::size_t>(model.X_train.cols()),
                            static_cast<std::size_t>(X_star.cols()));
  }
  require_finite(X_star, "prediction inputs");
  PredictiveDistribution out;
  const Index m = X_star.rows();
  if (m == 0) {
    out.mean = Vector(0);
    out.variance = Vector(0);
    return out;
  }
  const Matrix Ks = cross_covariance(model.hyper.kernel, model.X_train, X_star);
  out.mean = (Ks.transpose() * model.alpha).array() + model.hyper.mean_constant;
  const Matrix V = model.factor.lower.triangularView<Eigen::Lower>().solve(Ks);
  const double prior = model.hyper.kernel.prior_variance();
  out.variance.resize(m);
  for (Index i = 0; i < m; ++i) {
    double v = prior - V.col(i).squaredNorm();
    if (v < 0.0) {
      if (v < -1e-10) {
        logger()->warn("clamping negative predictive variance {}", v);
      }
      v = 0.0;
    }
    out.variance[i] = opts.observation_variance ? v + model.hyper.noise_variance : v;
  }
  return out;
}

} // namespace mfgp
