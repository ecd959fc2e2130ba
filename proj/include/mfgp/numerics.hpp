#pragma once

// Dense linear algebra and kernel evaluation shared by all model code.

#include <cmath>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "mfgp/errors.hpp"

namespace mfgp {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Index = Eigen::Index;

inline void require_finite(const Matrix &m, const std::string &what) {
  if (!m.allFinite()) {
    throw InvalidArgument(what + " contains NaN or Inf");
  }
}

inline void require_finite(const Vector &v, const std::string &what) {
  if (!v.allFinite()) {
    throw InvalidArgument(what + " contains NaN or Inf");
  }
}

// ---------------------------------------------------------------------------
// Kernels
// ---------------------------------------------------------------------------

enum class LengthscaleMode { Ard, Shared };

/// Squared-exponential kernel v * exp(-sum_d (a_d - b_d)^2 / (2 l_d^2)).
/// In Shared mode `lengthscales` holds a single value used for every dimension.
struct RbfKernel {
  Vector lengthscales;
  double variance = 1.0;
  LengthscaleMode mode = LengthscaleMode::Ard;
  Index dim = 0;

  static RbfKernel ard(Vector lengthscales, double variance) {
    RbfKernel k;
    k.dim = lengthscales.size();
    k.lengthscales = std::move(lengthscales);
    k.variance = variance;
    k.mode = LengthscaleMode::Ard;
    k.validate();
    return k;
  }

  static RbfKernel shared(double lengthscale, double variance, Index dim) {
    RbfKernel k;
    k.dim = dim;
    k.lengthscales = Vector::Constant(1, lengthscale);
    k.variance = variance;
    k.mode = LengthscaleMode::Shared;
    k.validate();
    return k;
  }

  double lengthscale(Index d) const {
    return mode == LengthscaleMode::Shared ? lengthscales[0] : lengthscales[d];
  }

  void validate() const {
    if (dim < 1) {
      throw InvalidHyperparameter("RBF kernel needs at least one input dimension");
    }
    const Index expected = mode == LengthscaleMode::Shared ? 1 : dim;
    if (lengthscales.size() != expected) {
      throw DimensionMismatch("RBF lengthscales", static_cast<std::size_t>(expected),
                              static_cast<std::size_t>(lengthscales.size()));
    }
    for (Index i = 0; i < lengthscales.size(); ++i) {
      if (!(lengthscales[i] > 0.0) || !std::isfinite(lengthscales[i])) {
        throw InvalidHyperparameter("RBF lengthscale must be positive and finite");
      }
    }
    if (!(variance > 0.0) || !std::isfinite(variance)) {
      throw InvalidHyperparameter("RBF signal variance must be positive and finite");
    }
  }

  /// Weighted squared distance sum_d (a_d - b_d)^2 / l_d^2 over the first `dim`
  /// coordinates of a and b.
  template <class A, class B>
  double scaled_sqdist(const A &a, const B &b) const {
    double s = 0.0;
    for (Index d = 0; d < dim; ++d) {
      const double r = (a[d] - b[d]) / lengthscale(d);
      s += r * r;
    }
    return s;
  }

  template <class A, class B> double operator()(const A &a, const B &b) const {
    return variance * std::exp(-0.5 * scaled_sqdist(a, b));
  }
};

enum class KernelFamily { Rbf, NargpComposite };

/// Kernel used by a single GP level.
///
/// `Rbf` uses `rbf` over all input columns. `NargpComposite` expects inputs of
/// the form (x, f) where f is the lower-fidelity posterior mean appended as the
/// last column, and evaluates
///   k((x, f), (x', f')) = k_d(x, x') * k_f(f, f') + k_b(x, x'),
/// where k_f has unit variance (its amplitude is absorbed by k_d).
struct KernelSpec {
  KernelFamily family = KernelFamily::Rbf;
  RbfKernel rbf;         // Rbf family
  RbfKernel interaction; // k_d over x
  double output_lengthscale = 1.0; // k_f over f
  RbfKernel bias;        // k_b over x

  static KernelSpec make_rbf(RbfKernel k) {
    k.validate();
    KernelSpec s;
    s.family = KernelFamily::Rbf;
    s.rbf = std::move(k);
    return s;
  }

  static KernelSpec make_nargp(RbfKernel interaction, double output_lengthscale,
                               RbfKernel bias) {
    interaction.validate();
    bias.validate();
    if (interaction.dim != bias.dim) {
      throw DimensionMismatch("NARGP bias kernel", static_cast<std::size_t>(interaction.dim),
                              static_cast<std::size_t>(bias.dim));
    }
    if (!(output_lengthscale > 0.0) || !std::isfinite(output_lengthscale)) {
      throw InvalidHyperparameter("NARGP output lengthscale must be positive and finite");
    }
    KernelSpec s;
    s.family = KernelFamily::NargpComposite;
    s.interaction = std::move(interaction);
    s.output_lengthscale = output_lengthscale;
    s.bias = std::move(bias);
    return s;
  }

  /// Number of input columns the kernel consumes.
  Index input_dim() const {
    return family == KernelFamily::Rbf ? rbf.dim : interaction.dim + 1;
  }

  /// k(x, x) for any x.
  double prior_variance() const {
    return family == KernelFamily::Rbf ? rbf.variance
                                       : interaction.variance + bias.variance;
  }

  void validate() const {
    if (family == KernelFamily::Rbf) {
      rbf.validate();
    } else {
      (void)make_nargp(interaction, output_lengthscale, bias);
    }
  }

  template <class A, class B> double operator()(const A &a, const B &b) const {
    if (family == KernelFamily::Rbf) {
      return rbf(a, b);
    }
    const Index d = interaction.dim;
    const double df = (a[d] - b[d]) / output_lengthscale;
    return interaction(a, b) * std::exp(-0.5 * df * df) + bias(a, b);
  }
};

inline double kernel_eval(const KernelSpec &spec, const Vector &a, const Vector &b) {
  const auto d = static_cast<std::size_t>(spec.input_dim());
  if (static_cast<std::size_t>(a.size()) != d) {
    throw DimensionMismatch("kernel_eval first argument", d, static_cast<std::size_t>(a.size()));
  }
  if (static_cast<std::size_t>(b.size()) != d) {
    throw DimensionMismatch("kernel_eval second argument", d, static_cast<std::size_t>(b.size()));
  }
  return spec(a, b);
}

/// Covariance between the rows of A and the rows of B.
inline Matrix cross_covariance(const KernelSpec &spec, const Matrix &A, const Matrix &B) {
  const auto d = static_cast<std::size_t>(spec.input_dim());
  if (static_cast<std::size_t>(A.cols()) != d) {
    throw DimensionMismatch("cross_covariance left input", d, static_cast<std::size_t>(A.cols()));
  }
  if (static_cast<std::size_t>(B.cols()) != d) {
    throw DimensionMismatch("cross_covariance right input", d, static_cast<std::size_t>(B.cols()));
  }
  Matrix K(A.rows(), B.rows());
  for (Index i = 0; i < A.rows(); ++i) {
    for (Index j = 0; j < B.rows(); ++j) {
      K(i, j) = spec(A.row(i), B.row(j));
    }
  }
  return K;
}

/// Symmetric gram matrix; only the lower triangle is evaluated and mirrored,
/// so K(i,j) == K(j,i) holds exactly.
inline Matrix gram_matrix(const KernelSpec &spec, const Matrix &X) {
  if (X.rows() < 1) {
    throw InvalidArgument("gram_matrix needs at least one row");
  }
  const auto d = static_cast<std::size_t>(spec.input_dim());
  if (static_cast<std::size_t>(X.cols()) != d) {
    throw DimensionMismatch("gram_matrix input", d, static_cast<std::size_t>(X.cols()));
  }
  const Index n = X.rows();
  Matrix K(n, n);
  for (Index i = 0; i < n; ++i) {
    for (Index j = 0; j < i; ++j) {
      const double v = spec(X.row(i), X.row(j));
      K(i, j) = v;
      K(j, i) = v;
    }
    K(i, i) = spec.prior_variance();
  }
  return K;
}

// ---------------------------------------------------------------------------
// Kernel hyperparameter packing (log space) and gram-matrix derivatives
// ---------------------------------------------------------------------------

enum class ParamKind { Lengthscale, Variance };

namespace detail {

inline void append_rbf_params(const RbfKernel &k, std::vector<double> &out) {
  for (Index i = 0; i < k.lengthscales.size(); ++i) {
    out.push_back(std::log(k.lengthscales[i]));
  }
  out.push_back(std::log(k.variance));
}

inline void append_rbf_kinds(const RbfKernel &k, std::vector<ParamKind> &out) {
  for (Index i = 0; i < k.lengthscales.size(); ++i) {
    out.push_back(ParamKind::Lengthscale);
  }
  out.push_back(ParamKind::Variance);
}

inline void append_rbf_names(const RbfKernel &k, const std::string &prefix,
                             std::vector<std::string> &out) {
  for (Index i = 0; i < k.lengthscales.size(); ++i) {
    out.push_back(prefix + "log_lengthscale[" + std::to_string(i) + "]");
  }
  out.push_back(prefix + "log_variance");
}

inline Index read_rbf_params(RbfKernel &k, const Vector &theta, Index pos) {
  for (Index i = 0; i < k.lengthscales.size(); ++i) {
    k.lengthscales[i] = std::exp(theta[pos++]);
  }
  k.variance = std::exp(theta[pos++]);
  return pos;
}

/// dK/dlog(l) and dK/dlog(v) of an RBF block over the first `k.dim` columns.
inline void rbf_gram_gradients(const RbfKernel &k, const Matrix &X, const Matrix &K,
                               std::vector<Matrix> &out) {
  const Index n = X.rows();
  if (k.mode == LengthscaleMode::Shared) {
    Matrix G(n, n);
    for (Index i = 0; i < n; ++i) {
      for (Index j = 0; j < n; ++j) {
        G(i, j) = K(i, j) * k.scaled_sqdist(X.row(i), X.row(j));
      }
    }
    out.push_back(std::move(G));
  } else {
    for (Index d = 0; d < k.dim; ++d) {
      const double l2 = k.lengthscales[d] * k.lengthscales[d];
      Matrix G(n, n);
      for (Index i = 0; i < n; ++i) {
        for (Index j = 0; j < n; ++j) {
          const double r = X(i, d) - X(j, d);
          G(i, j) = K(i, j) * r * r / l2;
        }
      }
      out.push_back(std::move(G));
    }
  }
  out.push_back(K);
}

inline Matrix rbf_block(const RbfKernel &k, const Matrix &X) {
  const Index n = X.rows();
  Matrix K(n, n);
  for (Index i = 0; i < n; ++i) {
    for (Index j = 0; j < n; ++j) {
      K(i, j) = k(X.row(i), X.row(j));
    }
  }
  return K;
}

} // namespace detail

/// Log-space hyperparameter vector of a kernel.
/// Rbf: [log l..., log v].
/// NargpComposite: [log l_d..., log v_d, log l_f, log l_b..., log v_b].
inline Vector kernel_params(const KernelSpec &spec) {
  std::vector<double> p;
  if (spec.family == KernelFamily::Rbf) {
    detail::append_rbf_params(spec.rbf, p);
  } else {
    detail::append_rbf_params(spec.interaction, p);
    p.push_back(std::log(spec.output_lengthscale));
    detail::append_rbf_params(spec.bias, p);
  }
  return Eigen::Map<Vector>(p.data(), static_cast<Index>(p.size()));
}

inline std::vector<ParamKind> kernel_param_kinds(const KernelSpec &spec) {
  std::vector<ParamKind> kinds;
  if (spec.family == KernelFamily::Rbf) {
    detail::append_rbf_kinds(spec.rbf, kinds);
  } else {
    detail::append_rbf_kinds(spec.interaction, kinds);
    kinds.push_back(ParamKind::Lengthscale);
    detail::append_rbf_kinds(spec.bias, kinds);
  }
  return kinds;
}

inline std::vector<std::string> kernel_param_names(const KernelSpec &spec) {
  std::vector<std::string> names;
  if (spec.family == KernelFamily::Rbf) {
    detail::append_rbf_names(spec.rbf, "", names);
  } else {
    detail::append_rbf_names(spec.interaction, "interaction.", names);
    names.push_back("output.log_lengthscale");
    detail::append_rbf_names(spec.bias, "bias.", names);
  }
  return names;
}

/// Same structure as `spec`, with values taken from the first entries of `theta`.
inline KernelSpec with_kernel_params(KernelSpec spec, const Vector &theta) {
  Index pos = 0;
  if (spec.family == KernelFamily::Rbf) {
    detail::read_rbf_params(spec.rbf, theta, pos);
  } else {
    pos = detail::read_rbf_params(spec.interaction, theta, pos);
    spec.output_lengthscale = std::exp(theta[pos++]);
    detail::read_rbf_params(spec.bias, theta, pos);
  }
  return spec;
}

/// Derivatives of the gram matrix with respect to each log-space parameter,
/// in `kernel_params` order.
inline std::vector<Matrix> gram_gradients(const KernelSpec &spec, const Matrix &X) {
  std::vector<Matrix> grads;
  if (spec.family == KernelFamily::Rbf) {
    detail::rbf_gram_gradients(spec.rbf, X, gram_matrix(spec, X), grads);
    return grads;
  }
  const Index n = X.rows();
  const Index d = spec.interaction.dim;
  const Matrix Kd = detail::rbf_block(spec.interaction, X);
  Matrix Kf(n, n);
  Matrix Df(n, n); // squared scaled distance in the output coordinate
  for (Index i = 0; i < n; ++i) {
    for (Index j = 0; j < n; ++j) {
      const double r = (X(i, d) - X(j, d)) / spec.output_lengthscale;
      Df(i, j) = r * r;
      Kf(i, j) = std::exp(-0.5 * r * r);
    }
  }
  std::vector<Matrix> kd_grads;
  detail::rbf_gram_gradients(spec.interaction, X, Kd, kd_grads);
  for (auto &G : kd_grads) {
    grads.push_back(G.cwiseProduct(Kf));
  }
  grads.push_back(Kd.cwiseProduct(Kf).cwiseProduct(Df));
  detail::rbf_gram_gradients(spec.bias, X, detail::rbf_block(spec.bias, X), grads);
  return grads;
}

// ---------------------------------------------------------------------------
// Cholesky with jitter escalation
// ---------------------------------------------------------------------------

/// Diagonal inflation schedule: first try the requested jitter, then start at
/// `initial` and multiply by `factor` until `cap` is exceeded.
struct JitterPolicy {
  double initial = 1e-10;
  double cap = 1e-4;
  double factor = 10.0;
};

struct CholeskyFactor {
  Matrix lower;
  double jitter = 0.0; // diagonal inflation that made the factorization succeed

  Index dim() const { return lower.rows(); }
};

inline CholeskyFactor cholesky(const Matrix &A, double jitter = 0.0,
                               const JitterPolicy &policy = {}) {
  if (A.rows() != A.cols()) {
    throw DimensionMismatch("cholesky requires a square matrix",
                            static_cast<std::size_t>(A.rows()),
                            static_cast<std::size_t>(A.cols()));
  }
  require_finite(A, "cholesky input");
  const double scale = std::max(1.0, A.cwiseAbs().maxCoeff());
  if ((A - A.transpose()).cwiseAbs().maxCoeff() > 1e-12 * scale) {
    throw InvalidArgument("cholesky requires a symmetric matrix");
  }
  const Index n = A.rows();
  double j = std::max(jitter, 0.0);
  while (true) {
    Matrix M = A;
    M.diagonal().array() += j;
    Eigen::LLT<Matrix> llt(M);
    if (llt.info() == Eigen::Success) {
      Matrix L = llt.matrixL();
      bool ok = true;
      for (Index i = 0; i < n; ++i) {
        if (!(L(i, i) > 0.0) || !std::isfinite(L(i, i))) {
          ok = false;
          break;
        }
      }
      if (ok) {
        return CholeskyFactor{std::move(L), j};
      }
    }
    const double next = j <= 0.0 ? policy.initial : std::max(j * policy.factor, policy.initial);
    if (next > policy.cap * (1.0 + 1e-12)) {
      throw NotPositiveDefinite(j);
    }
    j = next;
  }
}

/// Solves (L L^T) x = b.
inline Vector cho_solve(const CholeskyFactor &L, const Vector &b) {
  if (b.size() != L.dim()) {
    throw DimensionMismatch("cho_solve right-hand side", static_cast<std::size_t>(L.dim()),
                            static_cast<std::size_t>(b.size()));
  }
  Vector x = L.lower.triangularView<Eigen::Lower>().solve(b);
  L.lower.triangularView<Eigen::Lower>().transpose().solveInPlace(x);
  return x;
}

inline Matrix cho_solve(const CholeskyFactor &L, const Matrix &B) {
  if (B.rows() != L.dim()) {
    throw DimensionMismatch("cho_solve right-hand side", static_cast<std::size_t>(L.dim()),
                            static_cast<std::size_t>(B.rows()));
  }
  Matrix X = L.lower.triangularView<Eigen::Lower>().solve(B);
  L.lower.triangularView<Eigen::Lower>().transpose().solveInPlace(X);
  return X;
}

inline double log_det(const CholeskyFactor &L) {
  return 2.0 * L.lower.diagonal().array().log().sum();
}

} // namespace mfgp
