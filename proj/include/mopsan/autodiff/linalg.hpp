#pragma once

#include "mopsan/autodiff/tape.hpp"

#include <optional>

namespace mopsan::ad {

/// Lower-triangular Cholesky factor of a symmetric matrix, or nullopt when a
/// pivot is not strictly positive.
std::optional<Matrix> cholesky(const Matrix& a);

/// log det from a Cholesky factor: 2 * sum(log diag).
double logdet_from_cholesky(const Matrix& lower);

/// A^-1 given the Cholesky factor of A.
Matrix inverse_from_cholesky(const Matrix& lower);

}  // namespace mopsan::ad
