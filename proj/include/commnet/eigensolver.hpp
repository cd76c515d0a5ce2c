#pragma once

#include <cmath>
#include <stdexcept>
#include <utility>
#include <vector>

#include "commnet/tensor.hpp"

namespace commnet {

struct EigenResult {
  Tensor values;   // [k], descending
  Tensor vectors;  // [d x k], unit columns, mutually orthogonal
};

inline void normalize(std::vector<double>& v) {
  double n = 0.0;
  for (double x : v) n += x * x;
  n = std::sqrt(n);
  if (n > 0.0)
    for (double& x : v) x /= n;
}

/// Top-k eigenpairs of a symmetric matrix by power iteration with deflation.
/// Iteration cap 10000, convergence when the sign-aligned vector change drops
/// below 1e-10; matrices here are at most hidden-width sized so this is
/// plenty. Non-convergence signals a (near-)degenerate spectrum and throws.
inline EigenResult top_eigvecs(const Tensor& cov, std::size_t k,
                               std::size_t max_iters = 10000, double tol = 1e-10) {
  require_matrix(cov, "top_eigvecs");
  const std::size_t d = cov.rows();
  if (cov.cols() != d) throw std::invalid_argument("top_eigvecs: matrix not square");
  if (k < 1 || k > d) throw std::invalid_argument("top_eigvecs: need 1 <= k <= d");
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t j = i + 1; j < d; ++j)
      if (std::abs(cov.at(i, j) - cov.at(j, i)) > 1e-10)
        throw std::invalid_argument("top_eigvecs: matrix not symmetric within 1e-10");

  Tensor work = cov;  // deflated in place
  EigenResult res{Tensor({k}), Tensor({d, k})};
  std::vector<double> v(d), next(d);

  for (std::size_t comp = 0; comp < k; ++comp) {
    // Deterministic start: spread weight over all coordinates so the start
    // is never orthogonal to the dominant eigenvector by accident.
    for (std::size_t i = 0; i < d; ++i)
      v[i] = 1.0 + 0.01 * static_cast<double>((i * 7 + comp * 3) % 13);
    normalize(v);

    bool converged = false;
    for (std::size_t it = 0; it < max_iters; ++it) {
      for (std::size_t i = 0; i < d; ++i) {
        double acc = 0.0;
        for (std::size_t j = 0; j < d; ++j) acc += work.at(i, j) * v[j];
        next[i] = acc;
      }
      double norm = 0.0;
      for (double x : next) norm += x * x;
      norm = std::sqrt(norm);
      if (norm == 0.0) {
        // Null direction: the remaining spectrum is zero; keep v as is.
        converged = true;
        break;
      }
      double sign = 0.0;
      for (std::size_t i = 0; i < d; ++i) sign += next[i] * v[i];
      sign = sign >= 0.0 ? 1.0 : -1.0;
      double diff = 0.0;
      for (std::size_t i = 0; i < d; ++i) {
        next[i] /= norm;
        diff = std::max(diff, std::abs(sign * next[i] - v[i]));
      }
      v = next;
      if (diff < tol) {
        converged = true;
        break;
      }
    }
    if (!converged)
      throw std::runtime_error(
          "top_eigvecs: power iteration did not converge (degenerate spectrum?)");

    // Rayleigh quotient on the original matrix direction of the deflated one.
    double lambda = 0.0;
    for (std::size_t i = 0; i < d; ++i) {
      double acc = 0.0;
      for (std::size_t j = 0; j < d; ++j) acc += work.at(i, j) * v[j];
      lambda += v[i] * acc;
    }
    res.values[comp] = lambda;
    for (std::size_t i = 0; i < d; ++i) res.vectors.at(i, comp) = v[i];

    // Deflate: work -= lambda v v^T.
    for (std::size_t i = 0; i < d; ++i)
      for (std::size_t j = 0; j < d; ++j) work.at(i, j) -= lambda * v[i] * v[j];
  }
  return res;
}

}  // namespace commnet
