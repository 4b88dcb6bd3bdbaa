#include "stablerec/numerics.hpp"

#include <Eigen/SVD>

#include <stdexcept>

namespace stablerec {

SvdResult svd(const Matrix& m) {
  if (m.rows() < 1 || m.cols() < 1)
    throw std::invalid_argument("svd: empty matrix");
  if (!m.allFinite()) throw std::invalid_argument("svd: non-finite entries");
  Eigen::JacobiSVD<Matrix> solver(m, Eigen::ComputeThinU | Eigen::ComputeThinV);
  if (solver.info() != Eigen::Success)
    throw std::runtime_error("svd: Jacobi sweeps did not converge");
  return SvdResult{solver.matrixU(), solver.singularValues(), solver.matrixV()};
}

double spectral_norm(const Matrix& m) {
  if (m.rows() < 1 || m.cols() < 1)
    throw std::invalid_argument("spectral_norm: empty matrix");
  if (!m.allFinite())
    throw std::invalid_argument("spectral_norm: non-finite entries");
  Eigen::JacobiSVD<Matrix> solver(m);
  if (solver.info() != Eigen::Success)
    throw std::runtime_error("spectral_norm: svd did not converge");
  return solver.singularValues()[0];
}

double inf_induced_norm(const Matrix& m) {
  if (m.size() == 0) return 0.0;
  return m.cwiseAbs().rowwise().sum().maxCoeff();
}

}  // namespace stablerec
