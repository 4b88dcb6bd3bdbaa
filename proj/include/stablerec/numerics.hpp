#ifndef STABLEREC_NUMERICS_HPP
#define STABLEREC_NUMERICS_HPP

#include "stablerec/types.hpp"

namespace stablerec {

struct SvdResult {
  Matrix U;   // rows x min(rows, cols), orthonormal columns
  Vector S;   // nonincreasing, nonnegative
  Matrix V;   // cols x min(rows, cols), orthonormal columns
};

// Thin SVD, m = U * diag(S) * V^T. Throws std::runtime_error if the
// decomposition does not converge.
SvdResult svd(const Matrix& m);

// Largest singular value.
double spectral_norm(const Matrix& m);

// Induced infinity norm: maximum absolute row sum.
double inf_induced_norm(const Matrix& m);

}  // namespace stablerec

#endif
