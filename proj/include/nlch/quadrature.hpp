#pragma once

#include "nlch/common.hpp"

#include <Eigen/Eigenvalues>

#include <functional>
#include <map>
#include <mutex>
#include <utility>

namespace nlch {

/// Gauss-Legendre rule on [-1, 1].
template <class Scalar>
struct GaussRule {
  Vector<Scalar> nodes;
  Vector<Scalar> weights;
};

/// Golub-Welsch construction; rules are cached per order.
template <class Scalar>
const GaussRule<Scalar>& gauss_legendre(int order) {
  static std::map<int, GaussRule<Scalar>> cache;
  static std::mutex mutex;
  std::lock_guard<std::mutex> lock(mutex);
  auto it = cache.find(order);
  if (it != cache.end()) return it->second;

  if (order < 1) throw ConfigError("gauss_legendre: order must be >= 1");
  Matrix<Scalar> jacobi = Matrix<Scalar>::Zero(order, order);
  for (int k = 1; k < order; ++k) {
    const Scalar kk = Scalar(k);
    const Scalar beta = kk / std::sqrt(Scalar(4) * kk * kk - Scalar(1));
    jacobi(k, k - 1) = beta;
    jacobi(k - 1, k) = beta;
  }
  Eigen::SelfAdjointEigenSolver<Matrix<Scalar>> eig(jacobi);
  GaussRule<Scalar> rule;
  rule.nodes = eig.eigenvalues();
  rule.weights = Scalar(2) * eig.eigenvectors().row(0).transpose().array().square();
  return cache.emplace(order, std::move(rule)).first->second;
}

/// Integrates f over [a, b] with a single Gauss-Legendre panel.
template <class Scalar, class F>
Scalar gauss_panel(F&& f, Scalar a, Scalar b, int order) {
  const auto& rule = gauss_legendre<Scalar>(order);
  const Scalar half = (b - a) / Scalar(2);
  const Scalar mid = (a + b) / Scalar(2);
  Scalar sum = 0;
  for (int k = 0; k < order; ++k) sum += rule.weights[k] * f(mid + half * rule.nodes[k]);
  return sum * half;
}

/// Integrates f over [0, upper] with panels graded geometrically towards 0
/// (ratio 2, `levels` levels below `first`), then geometrically outwards.
/// Intended for integrands with an algebraic singularity or kink at 0.
template <class Scalar, class F>
Scalar graded_integral(F&& f, Scalar first, Scalar upper, int order, int levels = 30) {
  Scalar sum = 0;
  Scalar hi = first;
  for (int k = 0; k < levels; ++k) {
    const Scalar lo = hi / Scalar(2);
    sum += gauss_panel<Scalar>(f, lo, hi, order);
    hi = lo;
  }
  Scalar lo = first;
  while (lo < upper) {
    const Scalar next = std::min(upper, lo * Scalar(2));
    sum += gauss_panel<Scalar>(f, lo, next, order);
    lo = next;
  }
  return sum;
}

}  // namespace nlch
