#pragma once

#include <cmath>
#include <cstdint>

#include <Eigen/Cholesky>

#include "cmdf/types.hpp"

namespace cmdf {

/// SplitMix64 step. Used both as a generator and as a seed mixer; the output
/// stream is identical on every platform, which keeps scenario outputs
/// byte-reproducible.
inline std::uint64_t splitmix64(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9e3779b97f4a7c15ull);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

/// Deterministic pseudo-random source with Gaussian sampling (Box-Muller).
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}

  /// Derives an independent stream, e.g. one per Monte-Carlo run. The mapping
  /// (seed, stream) -> state is fixed, so run r always sees the same draws no
  /// matter how runs are batched or threaded.
  static Rng derive(std::uint64_t seed, std::uint64_t stream) {
    std::uint64_t s = seed;
    std::uint64_t a = splitmix64(s);
    s = a ^ (stream * 0xd1342543de82ef95ull + 0x2545f4914f6cdd1dull);
    splitmix64(s);
    return Rng(s);
  }

  std::uint64_t next_u64() { return splitmix64(state_); }

  /// Uniform draw in the open interval (0, 1).
  double uniform() {
    return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53;
  }

  /// Standard normal draw.
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    const double u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * M_PI * u2;
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return r * std::cos(theta);
  }

  template <typename Scalar>
  Vector<Scalar> normal_vector(int n) {
    Vector<Scalar> v(n);
    for (int i = 0; i < n; ++i) v(i) = static_cast<Scalar>(normal());
    return v;
  }

 private:
  std::uint64_t state_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

/// Cholesky factor of a (symmetric positive definite) covariance, cached for
/// repeated Gaussian sampling.
template <typename Scalar>
Matrix<Scalar> cholesky_factor(const Matrix<Scalar>& cov) {
  Eigen::LLT<Matrix<Scalar>> llt(cov);
  if (llt.info() != Eigen::Success) {
    throw NumericalError("cholesky_factor: covariance is not positive definite");
  }
  return llt.matrixL();
}

/// x = mean + L z with z ~ N(0, I), where L is a Cholesky factor of the
/// covariance.
template <typename Scalar>
Vector<Scalar> sample_gaussian(Rng& rng, const Vector<Scalar>& mean,
                               const Matrix<Scalar>& chol_factor) {
  return mean + chol_factor * rng.normal_vector<Scalar>(static_cast<int>(mean.size()));
}

}  // namespace cmdf
