#pragma once

#include <cstdint>
#include <vector>

#include "mfgp/numerics.hpp"
#include "mfgp/random.hpp"
#include "oracles.hpp"

namespace testutil {

inline mfgp::Matrix random_matrix(mfgp::Rng &rng, mfgp::Index rows, mfgp::Index cols,
                                  double lo = 0.0, double hi = 1.0) {
  mfgp::Matrix M(rows, cols);
  for (mfgp::Index i = 0; i < rows; ++i)
    for (mfgp::Index j = 0; j < cols; ++j) M(i, j) = rng.uniform(lo, hi);
  return M;
}

inline mfgp::Vector random_vector(mfgp::Rng &rng, mfgp::Index n, double lo = -1.0,
                                  double hi = 1.0) {
  mfgp::Vector v(n);
  for (mfgp::Index i = 0; i < n; ++i) v[i] = rng.uniform(lo, hi);
  return v;
}

inline oracle::Mat to_rows(const mfgp::Matrix &M) {
  oracle::Mat out(static_cast<std::size_t>(M.rows()),
                  oracle::Vec(static_cast<std::size_t>(M.cols())));
  for (mfgp::Index i = 0; i < M.rows(); ++i)
    for (mfgp::Index j = 0; j < M.cols(); ++j)
      out[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] = M(i, j);
  return out;
}

inline oracle::Vec to_vec(const mfgp::Vector &v) { return oracle::Vec(v.data(), v.data() + v.size()); }

inline oracle::Vec lengthscales_of(const mfgp::RbfKernel &k) { return to_vec(k.lengthscales); }

/// Random SPD matrix B^T B + I.
inline mfgp::Matrix random_spd(mfgp::Rng &rng, mfgp::Index n) {
  const mfgp::Matrix B = random_matrix(rng, n, n, -1.0, 1.0);
  return B.transpose() * B + mfgp::Matrix::Identity(n, n);
}

} // namespace testutil
