#ifndef STABLEREC_TYPES_HPP
#define STABLEREC_TYPES_HPP

#include <Eigen/Core>

#include <cstdint>
#include <random>

namespace stablerec {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Index = Eigen::Index;

// Deterministic random stream. The engine is std::mt19937_64, whose output
// sequence is fixed by the C++ standard, so identical seeds give identical
// samples on every platform. Doubles are derived from the raw 64-bit output
// (53-bit mantissa ldexp trick) and Gaussians via Box-Muller, never through
// std::*_distribution, which is implementation-defined.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  // uniform on [0, 1)
  double uniform() {
    return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // standard normal via Box-Muller, one spare cached
  double gaussian() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * M_PI * u2;
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return r * std::cos(theta);
  }

  double gaussian(double stddev) { return stddev * gaussian(); }

  Vector gaussian_vector(Index n, double stddev = 1.0) {
    Vector v(n);
    for (Index i = 0; i < n; ++i) v[i] = gaussian(stddev);
    return v;
  }

  // row-major fill order, fixed for reproducibility
  Matrix gaussian_matrix(Index rows, Index cols, double stddev = 1.0) {
    Matrix m(rows, cols);
    for (Index i = 0; i < rows; ++i)
      for (Index j = 0; j < cols; ++j) m(i, j) = gaussian(stddev);
    return m;
  }

  Vector uniform_vector(Index n, double lo, double hi) {
    Vector v(n);
    for (Index i = 0; i < n; ++i) v[i] = uniform(lo, hi);
    return v;
  }

 private:
  std::mt19937_64 engine_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace stablerec

#endif
