#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

namespace nlch {

template <class Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

template <class Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

/// Points are stored in two coordinates; one-dimensional grids leave the
/// second coordinate at zero so Euclidean distances stay correct.
template <class Scalar>
using Point = Eigen::Matrix<Scalar, 2, 1>;

/// Invalid or mutually incompatible parameters.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A documented precondition of an operation was violated by its inputs.
class PreconditionError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Argument outside the mathematical domain of a function (e.g. K(x, x)).
class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// An iterative method failed; carries the last residual and iteration count.
class NumericalError : public std::runtime_error {
 public:
  NumericalError(const std::string& what, double residual = 0.0, int iterations = 0)
      : std::runtime_error(what), residual_(residual), iterations_(iterations) {}
  double residual() const noexcept { return residual_; }
  int iterations() const noexcept { return iterations_; }

 private:
  double residual_;
  int iterations_;
};

template <class Scalar>
constexpr Scalar infinity() {
  return std::numeric_limits<Scalar>::infinity();
}

template <class Scalar>
constexpr Scalar pi_v() {
  return Scalar(3.141592653589793238462643383279502884L);
}

template <class Scalar>
inline Scalar sqr(Scalar x) {
  return x * x;
}

/// |r|^(q-2) r, with the convention 0 at r = 0.
template <class Scalar>
inline Scalar signed_pow(Scalar r, Scalar q) {
  using std::abs;
  using std::pow;
  if (r == Scalar(0)) return Scalar(0);
  return pow(abs(r), q - Scalar(2)) * r;
}

}  // namespace nlch
