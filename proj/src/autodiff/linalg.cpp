#include "mopsan/autodiff/linalg.hpp"

#include <cmath>

namespace mopsan::ad {

std::optional<Matrix> cholesky(const Matrix& a) {
  const Eigen::Index n = a.rows();
  if (a.cols() != n) return std::nullopt;
  Matrix l = Matrix::Zero(n, n);
  for (Eigen::Index j = 0; j < n; ++j) {
    double diag = a(j, j);
    for (Eigen::Index p = 0; p < j; ++p) diag -= l(j, p) * l(j, p);
    if (!(diag > 0.0) || !std::isfinite(diag)) return std::nullopt;
    const double ljj = std::sqrt(diag);
    l(j, j) = ljj;
    for (Eigen::Index i = j + 1; i < n; ++i) {
      double s = a(i, j);
      for (Eigen::Index p = 0; p < j; ++p) s -= l(i, p) * l(j, p);
      l(i, j) = s / ljj;
    }
  }
  return l;
}

double logdet_from_cholesky(const Matrix& lower) {
  double s = 0.0;
  for (Eigen::Index i = 0; i < lower.rows(); ++i) s += std::log(lower(i, i));
  return 2.0 * s;
}

Matrix inverse_from_cholesky(const Matrix& lower) {
  const Eigen::Index n = lower.rows();
  // Solve L Y = I, then L^T X = Y.
  Matrix y = Matrix::Identity(n, n);
  for (Eigen::Index c = 0; c < n; ++c) {
    for (Eigen::Index i = 0; i < n; ++i) {
      double s = y(i, c);
      for (Eigen::Index p = 0; p < i; ++p) s -= lower(i, p) * y(p, c);
      y(i, c) = s / lower(i, i);
    }
  }
  Matrix x(n, n);
  for (Eigen::Index c = 0; c < n; ++c) {
    for (Eigen::Index i = n - 1; i >= 0; --i) {
      double s = y(i, c);
      for (Eigen::Index p = i + 1; p < n; ++p) s -= lower(p, i) * x(p, c);
      x(i, c) = s / lower(i, i);
    }
  }
  return x;
}

}  // namespace mopsan::ad
