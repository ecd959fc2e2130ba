#pragma once

// Multi-fidelity GP models over an ordered fidelity hierarchy.
//
// Both models are fitted level by level, lowest fidelity first. Level 1 is a
// plain GP. For level t >= 2:
//   LARGP  f_t(x) = rho_t * f*_{t-1}(x) + mu_t + delta_t(x)
//   NARGP  f_t(x) = F_t(x, f*_{t-1}(x)) with kernel k_d(x,x') k_f(f,f') + k_b(x,x')
// where f*_{t-1} is the posterior of the level below.

#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "mfgp/errors.hpp"
#include "mfgp/gp.hpp"
#include "mfgp/numerics.hpp"
#include "mfgp/random.hpp"

namespace mfgp {

/// Training data for one fidelity level; `index` is 1-based (1 = lowest).
struct FidelityLevel {
  int index = 1;
  Matrix X;
  Vector y;
};

enum class MfgpKind { Largp, Nargp };

inline const char *to_string(MfgpKind k) { return k == MfgpKind::Largp ? "largp" : "nargp"; }

/// Trained state of one level. For LARGP levels t >= 2, `gp` models the
/// residual delta_t with zero mean; `rho` and `mu` hold the linear link.
/// For NARGP levels t >= 2, `gp` is defined over (x, f*_{t-1}(x)).
struct MfgpLevel {
  GpModel gp;
  double rho = 0.0;
  double mu = 0.0;
};

struct MfgpModel {
  MfgpKind kind = MfgpKind::Largp;
  std::vector<MfgpLevel> levels;

  Index input_dim() const { return levels.front().gp.X_train.cols(); }
};

struct MfgpConfig {
  FitConfig gp;
  /// LARGP only: pin the link coefficients instead of estimating them.
  std::optional<double> fixed_rho;
  std::optional<double> fixed_mu;
};

enum class ImputationMode { PosteriorMean, PosteriorSample };

struct NestingConfig {
  FitConfig gp;
  ImputationMode mode = ImputationMode::PosteriorMean;
  std::uint64_t seed = 0; // sampling mode only
  double tolerance = 1e-12;
};

/// One synthetic row appended by `ensure_nested`.
struct ImputedPoint {
  int level = 0;    // 1-based level that received the row
  Index row = 0;    // row index within that level after augmentation
  double value = 0; // imputed target
};

struct NestedLevels {
  std::vector<FidelityLevel> levels;
  std::vector<ImputedPoint> log;
};

struct NargpPredictOptions {
  bool monte_carlo = false;
  int samples = 100;
  std::uint64_t seed = 0;
  bool observation_variance = false;
};

// ---------------------------------------------------------------------------

inline void validate_levels(const std::vector<FidelityLevel> &levels) {
  if (levels.empty()) {
    throw InvalidArgument("at least one fidelity level is required");
  }
  const Index d = levels.front().X.cols();
  for (std::size_t i = 0; i < levels.size(); ++i) {
    const auto &lv = levels[i];
    if (lv.index != static_cast<int>(i) + 1) {
      throw InvalidLevelOrder("fidelity levels must be ordered 1..L; position " +
                              std::to_string(i + 1) + " holds level " + std::to_string(lv.index));
    }
    if (lv.X.cols() != d) {
      throw DimensionMismatch("fidelity level " + std::to_string(lv.index) + " inputs",
                              static_cast<std::size_t>(d), static_cast<std::size_t>(lv.X.cols()));
    }
    if (lv.X.rows() != lv.y.size()) {
      throw DimensionMismatch("fidelity level " + std::to_string(lv.index) + " targets",
                              static_cast<std::size_t>(lv.X.rows()),
                              static_cast<std::size_t>(lv.y.size()));
    }
    require_finite(lv.X, "level inputs");
    require_finite(lv.y, "level targets");
  }
}

/// Index of the row of X matching `x` coordinatewise within `tol`, or -1.
inline Index find_row(const Matrix &X, const Eigen::Ref<const Eigen::RowVectorXd> &x,
                      double tol = 1e-12) {
  for (Index i = 0; i < X.rows(); ++i) {
    if ((X.row(i) - x).cwiseAbs().maxCoeff() <= tol) {
      return i;
    }
  }
  return -1;
}

inline bool is_nested(const std::vector<FidelityLevel> &levels, double tol = 1e-12) {
  for (std::size_t t = 1; t < levels.size(); ++t) {
    for (Index i = 0; i < levels[t].X.rows(); ++i) {
      if (find_row(levels[t - 1].X, levels[t].X.row(i), tol) < 0) {
        return false;
      }
    }
  }
  return true;
}

/// Makes X_{t+1} a subset of X_t for every adjacent pair by appending the
/// missing rows to level t, with targets imputed from a GP fitted to level
/// t's original data. Pairs are processed from the top down so rows
/// propagate to every lower level.
inline NestedLevels ensure_nested(const std::vector<FidelityLevel> &levels,
                                  const NestingConfig &cfg = {}) {
  validate_levels(levels);
  if (levels.size() < 2) {
    throw InvalidArgument("ensure_nested needs at least two levels");
  }
  NestedLevels out;
  out.levels = levels;
  for (std::size_t t = levels.size() - 1; t-- > 0;) {
    const FidelityLevel &upper = out.levels[t + 1];
    FidelityLevel &lower = out.levels[t];
    std::vector<Index> missing;
    Matrix seen = lower.X;
    for (Index i = 0; i < upper.X.rows(); ++i) {
      if (find_row(seen, upper.X.row(i), cfg.tolerance) < 0) {
        missing.push_back(i);
        seen.conservativeResize(seen.rows() + 1, Eigen::NoChange);
        seen.row(seen.rows() - 1) = upper.X.row(i);
      }
    }
    if (missing.empty()) {
      continue;
    }
    const FidelityLevel &original = levels[t];
    const GpModel gp = fit(original.X, original.y, cfg.gp);
    Matrix Xm(static_cast<Index>(missing.size()), upper.X.cols());
    for (std::size_t k = 0; k < missing.size(); ++k) {
      Xm.row(static_cast<Index>(k)) = upper.X.row(missing[k]);
    }
    const auto pd = predict(gp, Xm);
    Vector values = pd.mean;
    if (cfg.mode == ImputationMode::PosteriorSample) {
      Rng rng(derive_seed(cfg.seed, t));
      for (Index k = 0; k < values.size(); ++k) {
        values[k] += std::sqrt(pd.variance[k]) * rng.normal();
      }
    }
    const Index n0 = lower.X.rows();
    lower.X.conservativeResize(n0 + Xm.rows(), Eigen::NoChange);
    lower.X.bottomRows(Xm.rows()) = Xm;
    lower.y.conservativeResize(n0 + Xm.rows());
    lower.y.tail(Xm.rows()) = values;
    for (Index k = 0; k < Xm.rows(); ++k) {
      out.log.push_back(ImputedPoint{lower.index, n0 + k, values[k]});
    }
  }
  return out;
}

namespace detail {

inline void check_fit_levels(const std::vector<FidelityLevel> &levels) {
  validate_levels(levels);
  for (const auto &lv : levels) {
    if (lv.X.rows() < 2) {
      throw InvalidArgument("every fidelity level needs at least two points (level " +
                            std::to_string(lv.index) + ")");
    }
  }
  for (std::size_t t = 1; t < levels.size(); ++t) {
    for (Index i = 0; i < levels[t].X.rows(); ++i) {
      if (find_row(levels[t - 1].X, levels[t].X.row(i)) < 0) {
        throw NotNested("level " + std::to_string(levels[t].index) + " row " + std::to_string(i) +
                        " has no counterpart in level " + std::to_string(levels[t - 1].index) +
                        "; call ensure_nested first");
      }
    }
  }
}

inline Matrix augment(const Matrix &X, const Vector &f) {
  Matrix Z(X.rows(), X.cols() + 1);
  Z.leftCols(X.cols()) = X;
  Z.col(X.cols()) = f;
  return Z;
}

inline PredictiveDistribution predict_largp_levels(const std::vector<MfgpLevel> &levels,
                                                   std::size_t top, const Matrix &X_star) {
  PredictiveDistribution acc = predict(levels[0].gp, X_star);
  for (std::size_t t = 1; t <= top; ++t) {
    const auto &lv = levels[t];
    const auto r = predict(lv.gp, X_star);
    acc.mean = ((lv.rho * acc.mean).array() + lv.mu).matrix() + r.mean;
    acc.variance = (lv.rho * lv.rho) * acc.variance + r.variance;
    acc.variance = acc.variance.cwiseMax(0.0);
  }
  return acc;
}

inline PredictiveDistribution predict_nargp_levels(const std::vector<MfgpLevel> &levels,
                                                   std::size_t top, const Matrix &X_star) {
  PredictiveDistribution acc = predict(levels[0].gp, X_star);
  for (std::size_t t = 1; t <= top; ++t) {
    acc = predict(levels[t].gp, augment(X_star, acc.mean));
  }
  return acc;
}

} // namespace detail

/// Recursive linear autoregressive model. The level-t link (rho_t, mu_t) is
/// estimated jointly with the residual GP hyperparameters by maximizing the
/// level-t marginal likelihood of y_t - rho_t m_{t-1}(X_t) - mu_t, where
/// m_{t-1} is the posterior mean of the level below at the training inputs.
inline MfgpModel fit_largp(const std::vector<FidelityLevel> &levels, const MfgpConfig &cfg = {}) {
  detail::check_fit_levels(levels);
  MfgpModel model;
  model.kind = MfgpKind::Largp;
  model.levels.push_back(MfgpLevel{fit(levels[0].X, levels[0].y, cfg.gp), 0.0, 0.0});

  for (std::size_t t = 1; t < levels.size(); ++t) {
    const Matrix &X = levels[t].X;
    const Vector &y = levels[t].y;
    const Index n = X.rows();
    const Vector m = detail::predict_largp_levels(model.levels, t - 1, X).mean;
    const bool rho_free = !cfg.fixed_rho.has_value();
    const bool mu_free = !cfg.fixed_mu.has_value();

    // Link used without optimization: least squares of y on [m, 1] over the free coefficients.
    double rho0 = cfg.fixed_rho.value_or(0.0);
    double mu0 = cfg.fixed_mu.value_or(0.0);
    if (rho_free && mu_free) {
      const double mm = m.mean(), ym = y.mean();
      const double sxx = (m.array() - mm).square().sum();
      rho0 = sxx > 1e-14 ? ((m.array() - mm) * (y.array() - ym)).sum() / sxx : 1.0;
      mu0 = ym - rho0 * mm;
    } else if (rho_free) {
      const double mm2 = m.squaredNorm();
      rho0 = mm2 > 1e-14 ? m.dot((y.array() - mu0).matrix()) / mm2 : 1.0;
    } else if (mu_free) {
      mu0 = (y - rho0 * m).mean();
    }

    detail::HyperProblem prob;
    prob.X = &X;
    prob.kernel_start = detail::canonical_rbf(X.cols(), cfg.gp.lengthscale_mode);
    const double vy = detail::variance_of(y);
    prob.noise_start = std::max(0.01 * vy, cfg.gp.noise_floor);
    prob.reference_variance = vy;
    const Index nb = (rho_free ? 1 : 0) + (mu_free ? 1 : 0);
    prob.H = Matrix(n, nb);
    Vector fixed_part = Vector::Zero(n);
    Index c = 0;
    if (rho_free) {
      prob.H.col(c) = m;
      ++c;
    } else {
      fixed_part += rho0 * m;
    }
    if (mu_free) {
      prob.H.col(c) = Vector::Ones(n);
    } else {
      fixed_part = (fixed_part.array() + mu0).matrix();
    }
    prob.y = y - fixed_part;

    double rho = rho0, mu = mu0;
    Hyperparameters h;
    FitInfo info;
    if (cfg.gp.optimize) {
      auto sol = detail::solve_hyperparameters(prob, cfg.gp);
      c = 0;
      if (rho_free) rho = sol.beta[c++];
      if (mu_free) mu = sol.beta[c];
      h.kernel = sol.kernel;
      h.noise_variance = sol.noise;
      info = std::move(sol.info);
    } else {
      h.kernel = cfg.gp.initial ? cfg.gp.initial->kernel : prob.kernel_start;
      h.noise_variance = cfg.gp.initial ? cfg.gp.initial->noise_variance : prob.noise_start;
    }
    h.mean_constant = 0.0;
    const Vector residual = y - ((rho * m).array() + mu).matrix();
    GpModel residual_gp = condition(h, X, residual, cfg.gp.jitter);
    if (cfg.gp.optimize) residual_gp.info = std::move(info);
    model.levels.push_back(MfgpLevel{std::move(residual_gp), rho, mu});
  }
  return model;
}

/// Nonlinear autoregressive model: level t is a GP over (x, m_{t-1}(x)) with
/// the composite kernel, m_{t-1} being the level-(t-1) posterior mean.
inline MfgpModel fit_nargp(const std::vector<FidelityLevel> &levels, const MfgpConfig &cfg = {}) {
  detail::check_fit_levels(levels);
  MfgpModel model;
  model.kind = MfgpKind::Nargp;
  model.levels.push_back(MfgpLevel{fit(levels[0].X, levels[0].y, cfg.gp), 0.0, 0.0});
  for (std::size_t t = 1; t < levels.size(); ++t) {
    const Matrix &X = levels[t].X;
    const Vector m = detail::predict_nargp_levels(model.levels, t - 1, X).mean;
    const Matrix Z = detail::augment(X, m);
    const Index d = X.cols();
    const bool shared = cfg.gp.lengthscale_mode == LengthscaleMode::Shared;
    auto block = [&](double variance) {
      return shared ? RbfKernel::shared(0.5, variance, d)
                    : RbfKernel::ard(Vector::Constant(d, 0.5), variance);
    };
    const KernelSpec start = KernelSpec::make_nargp(block(1.0), 0.5, block(0.1));
    FitConfig level_cfg = cfg.gp;
    if (level_cfg.initial && level_cfg.initial->kernel.family != KernelFamily::NargpComposite) {
      level_cfg.initial.reset();
    }
    model.levels.push_back(MfgpLevel{fit_with_kernel(Z, levels[t].y, start, level_cfg), 0.0, 0.0});
  }
  return model;
}

inline MfgpModel fit_mfgp(MfgpKind kind, const std::vector<FidelityLevel> &levels,
                          const MfgpConfig &cfg = {}) {
  return kind == MfgpKind::Largp ? fit_largp(levels, cfg) : fit_nargp(levels, cfg);
}

inline PredictiveDistribution predict_largp(const MfgpModel &model, const Matrix &X_star,
                                            const PredictOptions &opts = {}) {
  if (model.kind != MfgpKind::Largp) {
    throw InvalidArgument("predict_largp called on a NARGP model");
  }
  if (X_star.cols() != model.input_dim()) {
    throw DimensionMismatch("prediction inputs", static_cast<std::size_t>(model.input_dim()),
                            static_cast<std::size_t>(X_star.cols()));
  }
  auto pd = detail::predict_largp_levels(model.levels, model.levels.size() - 1, X_star);
  if (opts.observation_variance) {
    pd.variance = (pd.variance.array() + model.levels.back().gp.hyper.noise_variance).matrix();
  }
  return pd;
}

inline PredictiveDistribution predict_nargp(const MfgpModel &model, const Matrix &X_star,
                                            const NargpPredictOptions &opts = {}) {
  if (model.kind != MfgpKind::Nargp) {
    throw InvalidArgument("predict_nargp called on a LARGP model");
  }
  if (X_star.cols() != model.input_dim()) {
    throw DimensionMismatch("prediction inputs", static_cast<std::size_t>(model.input_dim()),
                            static_cast<std::size_t>(X_star.cols()));
  }
  const std::size_t top = model.levels.size() - 1;
  PredictiveDistribution pd;
  if (!opts.monte_carlo || top == 0) {
    pd = detail::predict_nargp_levels(model.levels, top, X_star);
  } else {
    // Propagate samples of each intermediate level through the level above
    // and report the moments of the resulting mixture at the top level.
    if (opts.samples < 1) {
      throw InvalidArgument("Monte Carlo prediction needs at least one sample");
    }
    const Index m = X_star.rows();
    const int S = opts.samples;
    Rng rng(opts.seed);
    pd.mean = Vector::Zero(m);
    pd.variance = Vector::Zero(m);
    const auto base = predict(model.levels[0].gp, X_star);
    Matrix means(m, S), vars(m, S);
    for (int s = 0; s < S; ++s) {
      Vector f(m);
      for (Index i = 0; i < m; ++i) {
        f[i] = base.mean[i] + std::sqrt(base.variance[i]) * rng.normal();
      }
      for (std::size_t t = 1; t <= top; ++t) {
        const auto lv = predict(model.levels[t].gp, detail::augment(X_star, f));
        if (t == top) {
          means.col(s) = lv.mean;
          vars.col(s) = lv.variance;
        } else {
          for (Index i = 0; i < m; ++i) {
            f[i] = lv.mean[i] + std::sqrt(lv.variance[i]) * rng.normal();
          }
        }
      }
    }
    for (Index i = 0; i < m; ++i) {
      const double mu = means.row(i).mean();
      pd.mean[i] = mu;
      pd.variance[i] = vars.row(i).mean() + (means.row(i).array() - mu).square().mean();
    }
  }
  if (opts.observation_variance) {
    pd.variance = (pd.variance.array() + model.levels.back().gp.hyper.noise_variance).matrix();
  }
  return pd;
}

inline PredictiveDistribution predict_mfgp(const MfgpModel &model, const Matrix &X_star,
                                           bool observation_variance = false) {
  if (model.kind == MfgpKind::Largp) {
    PredictOptions o;
    o.observation_variance = observation_variance;
    return predict_largp(model, X_star, o);
  }
  NargpPredictOptions o;
  o.observation_variance = observation_variance;
  return predict_nargp(model, X_star, o);
}

} // namespace mfgp
