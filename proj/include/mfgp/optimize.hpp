#pragma once

// Box-constrained quasi-Newton maximizer used for ML-II fitting.
//
// Limited-memory BFGS directions with projection onto the box and an Armijo
// backtracking line search. The objective may throw NumericalError at a trial
// point; such points are treated as failed steps.

#include <algorithm>
#include <cmath>
#include <deque>
#include <limits>

#include "mfgp/errors.hpp"
#include "mfgp/numerics.hpp"

namespace mfgp {

struct OptimizeOptions {
  int max_iterations = 300;
  double gradient_tolerance = 1e-7;
  double relative_tolerance = 1e-15;
  int history = 10;
  double max_step = 3.0; // per-iteration cap on the infinity norm of the step
};

struct Bounds {
  Vector lower;
  Vector upper;

  Vector clamp(const Vector &x) const { return x.cwiseMax(lower).cwiseMin(upper); }
};

struct OptimizeResult {
  Vector x;
  double value = -std::numeric_limits<double>::infinity();
  int iterations = 0;
  bool converged = false;
};

namespace detail {

/// Gradient of the ascent problem with components that point out of the box
/// zeroed.
inline Vector projected_ascent_gradient(const Vector &x, const Vector &g, const Bounds &b) {
  Vector pg = g;
  for (Index i = 0; i < x.size(); ++i) {
    if ((x[i] <= b.lower[i] && g[i] < 0.0) || (x[i] >= b.upper[i] && g[i] > 0.0)) {
      pg[i] = 0.0;
    }
  }
  return pg;
}

} // namespace detail

/// Maximizes `objective(x, grad) -> value` inside `bounds`, starting at `x0`.
/// `objective` writes the gradient into `grad` and may throw NumericalError.
template <class Objective>
OptimizeResult maximize(Objective &&objective, const Vector &x0, const Bounds &bounds,
                        const OptimizeOptions &opts = {}) {
  OptimizeResult res;
  res.x = bounds.clamp(x0);
  Vector g(res.x.size());
  res.value = objective(res.x, g); // exceptions from the start point propagate

  struct Pair {
    Vector s;
    Vector y;
    double rho;
  };
  std::deque<Pair> memory;

  for (int iter = 0; iter < opts.max_iterations; ++iter) {
    res.iterations = iter + 1;
    const Vector pg = detail::projected_ascent_gradient(res.x, g, bounds);
    if (pg.lpNorm<Eigen::Infinity>() < opts.gradient_tolerance) {
      res.converged = true;
      break;
    }

    // Two-loop recursion on the ascent gradient restricted to free variables.
    Vector q = pg;
    std::vector<double> alpha(memory.size());
    for (std::size_t k = memory.size(); k-- > 0;) {
      alpha[k] = memory[k].rho * memory[k].s.dot(q);
      q -= alpha[k] * memory[k].y;
    }
    if (!memory.empty()) {
      const auto &last = memory.back();
      q *= last.s.dot(last.y) / last.y.dot(last.y);
    } else {
      q /= std::max(1.0, pg.lpNorm<Eigen::Infinity>());
    }
    for (std::size_t k = 0; k < memory.size(); ++k) {
      const double beta = memory[k].rho * memory[k].y.dot(q);
      q += (alpha[k] - beta) * memory[k].s;
    }
    Vector dir = q;
    for (Index i = 0; i < dir.size(); ++i) {
      if (pg[i] == 0.0 && g[i] != 0.0) {
        dir[i] = 0.0;
      }
    }
    if (!(dir.dot(pg) > 0.0) || !dir.allFinite()) {
      memory.clear();
      dir = pg / std::max(1.0, pg.lpNorm<Eigen::Infinity>());
    }
    const double dnorm = dir.lpNorm<Eigen::Infinity>();
    if (dnorm > opts.max_step) {
      dir *= opts.max_step / dnorm;
    }

    bool accepted = false;
    Vector x_new;
    Vector g_new(g.size());
    double f_new = 0.0;
    double t = 1.0;
    for (int ls = 0; ls < 40; ++ls, t *= 0.5) {
      x_new = bounds.clamp(res.x + t * dir);
      const Vector step = x_new - res.x;
      if (step.lpNorm<Eigen::Infinity>() == 0.0) {
        break;
      }
      try {
        f_new = objective(x_new, g_new);
      } catch (const NumericalError &) {
        continue;
      }
      if (std::isfinite(f_new) && f_new >= res.value + 1e-4 * g.dot(step)) {
        accepted = true;
        break;
      }
    }
    if (!accepted) {
      if (memory.empty()) {
        break;
      }
      memory.clear();
      continue;
    }

    const Vector s = x_new - res.x;
    const Vector y = g - g_new; // curvature pair for the minimization of -f
    const double sy = s.dot(y);
    if (sy > 1e-12 * std::max(1.0, s.squaredNorm())) {
      memory.push_back(Pair{s, y, 1.0 / sy});
      if (static_cast<int>(memory.size()) > opts.history) {
        memory.pop_front();
      }
    }
    const double improvement = f_new - res.value;
    res.x = x_new;
    g = g_new;
    res.value = f_new;
    if (improvement <= opts.relative_tolerance * std::max(1.0, std::abs(f_new))) {
      const Vector pg2 = detail::projected_ascent_gradient(res.x, g, bounds);
      res.converged = pg2.lpNorm<Eigen::Infinity>() < 1e3 * opts.gradient_tolerance;
      break;
    }
  }
  return res;
}

} // namespace mfgp
