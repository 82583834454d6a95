#pragma once

#include "nlch/nlch.hpp"

#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <boost/math/quadrature/tanh_sinh.hpp>
#include <boost/math/tools/minima.hpp>
#include <boost/math/tools/roots.hpp>

#include <Eigen/QR>

#include <algorithm>
#include <functional>
#include <random>

namespace oracle {

using nlch::Matrix;
using nlch::Vector;

/// Gamma_lam(r) = min_z Gamma(z) + (z - r)^2 / (2 lam) by Brent over z = T(y),
/// y in [lo, hi]; T reparameterizes domains whose minimizer approaches an endpoint.
inline double moreau_brent(const std::function<double(double)>& gamma, double lo, double hi, double lam, double r,
                           const std::function<double(double)>& T = [](double y) { return y; }) {
  auto obj = [&](double y) {
    const double z = T(y);
    return gamma(z) + (z - r) * (z - r) / (2 * lam);
  };
  const auto [y, v] = boost::math::tools::brent_find_minima(obj, lo, hi, 60);
  (void)y;
  // Endpoints matter for indicator-type Gamma.
  return std::min({v, obj(lo), obj(hi)});
}

/// Dense (D + tau H) u = D g, H the Hessian of the quadratic nonlocal form
/// assembled directly from the pair weights and killing terms.
inline Matrix<double> quadratic_form_matrix(const nlch::KernelMatrix<double>& km) {
  const Eigen::Index n = km.size();
  Matrix<double> H = Matrix<double>::Zero(n, n);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j) {
      if (i == j) continue;
      const double w = km.pair_weights(i, j) + km.pair_weights(j, i);
      H(i, j) -= w;
      H(i, i) += w;
    }
  for (Eigen::Index i = 0; i < n; ++i) H(i, i) += km.killing[i] * km.cell_weights[i];
  return H;
}

/// |f|_*^2 = f^T A^+ f with the Moore-Penrose inverse of the operator matrix.
struct DualNorm {
  Matrix<double> pinv;
  explicit DualNorm(const Matrix<double>& A) : pinv(Eigen::CompleteOrthogonalDecomposition<Matrix<double>>(A).pseudoInverse()) {}
  double squared(const Vector<double>& f) const { return f.dot(pinv * f); }
};

/// Nelder-Mead simplex minimization with restarts around the incumbent.
inline Vector<double> nelder_mead(const std::function<double(const Vector<double>&)>& f, Vector<double> x0,
                                  double step, int restarts = 12, int max_iter = 20000) {
  const Eigen::Index n = x0.size();
  Vector<double> best = x0;
  double fbest = f(best);
  for (int r = 0; r < restarts; ++r) {
    std::vector<Vector<double>> S(n + 1, best);
    std::vector<double> F(n + 1);
    for (Eigen::Index k = 0; k < n; ++k) S[k + 1][k] += step;
    for (Eigen::Index k = 0; k <= n; ++k) F[k] = f(S[k]);
    for (int it = 0; it < max_iter; ++it) {
      std::vector<int> idx(n + 1);
      for (int k = 0; k <= n; ++k) idx[k] = k;
      std::sort(idx.begin(), idx.end(), [&](int a, int b) { return F[a] < F[b]; });
      std::vector<Vector<double>> S2;
      std::vector<double> F2;
      for (int k : idx) {
        S2.push_back(S[k]);
        F2.push_back(F[k]);
      }
      S = S2;
      F = F2;
      double size = 0;
      for (Eigen::Index k = 1; k <= n; ++k) size = std::max(size, (S[k] - S[0]).cwiseAbs().maxCoeff());
      if (size < 1e-13 * (1 + S[0].cwiseAbs().maxCoeff())) break;
      Vector<double> c = Vector<double>::Zero(n);
      for (Eigen::Index k = 0; k < n; ++k) c += S[k];
      c /= double(n);
      const Vector<double> xr = c + (c - S[n]);
      const double fr = f(xr);
      if (fr < F[0]) {
        const Vector<double> xe = c + 2 * (c - S[n]);
        const double fe = f(xe);
        if (fe < fr) {
          S[n] = xe;
          F[n] = fe;
        } else {
          S[n] = xr;
          F[n] = fr;
        }
      } else if (fr < F[n - 1]) {
        S[n] = xr;
        F[n] = fr;
      } else {
        const Vector<double> xc = fr < F[n] ? Vector<double>(c + 0.5 * (xr - c)) : Vector<double>(c + 0.5 * (S[n] - c));
        const double fc = f(xc);
        if (fc < std::min(fr, F[n])) {
          S[n] = xc;
          F[n] = fc;
        } else {
          for (Eigen::Index k = 1; k <= n; ++k) {
            S[k] = S[0] + 0.5 * (S[k] - S[0]);
            F[k] = f(S[k]);
          }
        }
      }
    }
    if (F[0] < fbest) {
      best = S[0];
      fbest = F[0];
    }
    step = std::max(step * 0.1, 1e-7);
  }
  return best;
}

/// Minimizes f from several random starts and returns the best point.
inline Vector<double> multistart(const std::function<double(const Vector<double>&)>& f, const Vector<double>& center,
                                 int starts, double radius, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unif(-radius, radius);
  Vector<double> best = nelder_mead(f, center, radius);
  double fbest = f(best);
  for (int k = 1; k < starts; ++k) {
    Vector<double> x0 = center;
    for (Eigen::Index i = 0; i < x0.size(); ++i) x0[i] += unif(rng);
    const Vector<double> x = nelder_mead(f, x0, radius);
    if (const double fx = f(x); fx < fbest) {
      best = x;
      fbest = fx;
    }
  }
  return best;
}

/// One-dimensional (K3) kernel on (a, b) by nested adaptive quadrature:
/// |x-y|^(-1-2s) + int_{R \ (a,b)} dz / (|x-z|^(1+2s) |y-z|^(1+2s) int_a^b |z-eta|^(-1-2s) d eta).
inline double k3_kernel_1d(double a, double b, double s, double x, double y) {
  const double e = 1 + 2 * s;
  auto inner = [&](double z) {
    // int_a^b |z - eta|^(-1-2s) d eta for z outside (a, b), in closed form.
    const double d0 = z < a ? a - z : z - b, d1 = d0 + (b - a);
    return (std::pow(d0, -2 * s) - std::pow(d1, -2 * s)) / (2 * s);
  };
  auto integrand = [&](double z) { return std::pow(std::abs(x - z), -e) * std::pow(std::abs(y - z), -e) / inner(z); };
  boost::math::quadrature::tanh_sinh<double> ts;
  // z = a - t and z = b + t, t in (0, inf) mapped through t = u / (1 - u).
  auto left = [&](double u) {
    const double t = u / (1 - u);
    return integrand(a - t) / ((1 - u) * (1 - u));
  };
  auto right = [&](double u) {
    const double t = u / (1 - u);
    return integrand(b + t) / ((1 - u) * (1 - u));
  };
  const double ext = ts.integrate(left, 0.0, 1.0) + ts.integrate(right, 0.0, 1.0);
  return std::pow(std::abs(x - y), -e) + ext;
}

}  // namespace oracle
