#pragma once

#include "nlch/common.hpp"
#include "nlch/grid.hpp"
#include "nlch/kernels.hpp"
#include "nlch/quadrature.hpp"

#include <Eigen/Cholesky>

#include <functional>
#include <memory>
#include <type_traits>

namespace nlch {

template <class Scalar>
using FieldArg = std::type_identity_t<Vector<Scalar>>;

// ---------------------------------------------------------------------------
// phi and its primitive Phi

enum class PhiForm { Power, HalfPower, Custom };

template <class Scalar>
struct PhiSpec {
  PhiForm form = PhiForm::Power;
  Scalar q = 2;
  Scalar Lambda = 1;
  bool strongly_monotone = true;
  std::function<Scalar(Scalar)> phi;   ///< Custom only
  std::function<Scalar(Scalar)> Phi;   ///< Custom, optional (quadrature otherwise)
  std::function<Scalar(Scalar)> dphi;  ///< Custom, optional (differences otherwise)

  /// phi(r) = |r|^(q-2) r.
  static PhiSpec power(Scalar q) {
    PhiSpec p;
    p.form = PhiForm::Power;
    p.q = q;
    p.Lambda = std::max(Scalar(1), std::pow(Scalar(2), q - 2));
    return p;
  }
  /// phi(r) = |r|^(q-2) r / 2.
  static PhiSpec half_power(Scalar q) {
    PhiSpec p = power(q);
    p.form = PhiForm::HalfPower;
    p.Lambda = std::pow(Scalar(2), q - 1);
    return p;
  }
  static PhiSpec custom(std::function<Scalar(Scalar)> phi, Scalar Lambda, Scalar q, bool strongly_monotone,
                        std::function<Scalar(Scalar)> Phi = {}, std::function<Scalar(Scalar)> dphi = {}) {
    PhiSpec p;
    p.form = PhiForm::Custom;
    p.q = q;
    p.Lambda = Lambda;
    p.strongly_monotone = strongly_monotone;
    p.phi = std::move(phi);
    p.Phi = std::move(Phi);
    p.dphi = std::move(dphi);
    return p;
  }
};

template <class Scalar>
Scalar phi_value(const PhiSpec<Scalar>& p, Scalar r) {
  switch (p.form) {
    case PhiForm::Power: return signed_pow(r, p.q);
    case PhiForm::HalfPower: return signed_pow(r, p.q) / 2;
    case PhiForm::Custom: return p.phi(r);
  }
  return 0;
}

template <class Scalar>
Scalar Phi_value(const PhiSpec<Scalar>& p, Scalar r) {
  switch (p.form) {
    case PhiForm::Power: return std::pow(std::abs(r), p.q) / p.q;
    case PhiForm::HalfPower: return std::pow(std::abs(r), p.q) / (2 * p.q);
    case PhiForm::Custom: {
      if (p.Phi) return p.Phi(r);
      if (r == 0) return 0;
      return gauss_panel<Scalar>([&](Scalar t) { return p.phi(t); }, Scalar(0), r, 16);
    }
  }
  return 0;
}

template <class Scalar>
Scalar phi_derivative(const PhiSpec<Scalar>& p, Scalar r) {
  auto power_derivative = [&](Scalar q) {
    if (q == 2) return Scalar(1);
    return (q - 1) * std::pow(std::abs(r), q - 2);
  };
  switch (p.form) {
    case PhiForm::Power: return power_derivative(p.q);
    case PhiForm::HalfPower: return power_derivative(p.q) / 2;
    case PhiForm::Custom: {
      if (p.dphi) return p.dphi(r);
      const Scalar h = Scalar(1e-6) * (1 + std::abs(r));
      return (p.phi(r + h) - p.phi(r - h)) / (2 * h);
    }
  }
  return 0;
}

/// Growth and monotonicity hypotheses on sampled r; throws ConfigError.
template <class Scalar>
void validate(const PhiSpec<Scalar>& p) {
  if (!(p.q >= 2)) throw ConfigError("phi.q must be >= 2");
  if (!(p.Lambda >= 1)) throw ConfigError("phi.Lambda must be >= 1");
  if (p.form == PhiForm::Custom && !p.phi) throw ConfigError("phi: custom form needs a phi oracle");
  if (std::abs(phi_value(p, Scalar(0))) > Scalar(1e-14)) throw ConfigError("phi(0) must be 0");
  std::vector<Scalar> r;
  for (int k = -200; k <= 200; ++k) r.push_back(Scalar(k) / Scalar(50));
  const Scalar slack = Scalar(1e-12);
  for (Scalar a : r) {
    const Scalar pr = phi_value(p, a) * a, m = std::pow(std::abs(a), p.q);
    if (pr < m / p.Lambda - slack * (1 + m) || pr > p.Lambda * m + slack * (1 + m))
      throw ConfigError("phi: growth bounds (1/Lambda)|r|^q <= phi(r) r <= Lambda |r|^q violated");
  }
  if (p.strongly_monotone)
    for (std::size_t i = 0; i < r.size(); i += 3)
      for (std::size_t j = i + 1; j < r.size(); j += 5) {
        const Scalar lhs = (phi_value(p, r[i]) - phi_value(p, r[j])) * (r[i] - r[j]);
        const Scalar m = std::pow(std::abs(r[i] - r[j]), p.q);
        if (lhs < m / p.Lambda - slack * (1 + m)) throw ConfigError("phi: strong monotonicity violated");
      }
}

// ---------------------------------------------------------------------------
// The nonlinear operator: energy, gradient, Hessian

/// Sum_{i!=j} Phi(u_i - u_j) W_ij + Sum_i (Phi(u_i) + Phi(-u_i))/2 omega_i w_i.
template <class Scalar>
Scalar energy_F(const KernelMatrix<Scalar>& km, const PhiSpec<Scalar>& p, const FieldArg<Scalar>& u) {
  const Eigen::Index n = km.size();
  if (u.size() != n) throw ConfigError("energy_F: field size does not match the kernel matrix");
  Scalar e = 0;
  for (Eigen::Index j = 0; j < n; ++j)
    for (Eigen::Index i = 0; i < n; ++i)
      if (i != j && km.pair_weights(i, j) != 0) e += Phi_value(p, u[i] - u[j]) * km.pair_weights(i, j);
  for (Eigen::Index i = 0; i < n; ++i)
    if (km.killing[i] != 0)
      e += (Phi_value(p, u[i]) + Phi_value(p, -u[i])) / 2 * km.killing[i] * km.cell_weights[i];
  return e;
}

/// First variation of energy_F: <grad_I(u), v> = action_I(u, v).
template <class Scalar>
Vector<Scalar> grad_I(const KernelMatrix<Scalar>& km, const PhiSpec<Scalar>& p, const FieldArg<Scalar>& u) {
  const Eigen::Index n = km.size();
  if (u.size() != n) throw ConfigError("grad_I: field size does not match the kernel matrix");
  Vector<Scalar> g = Vector<Scalar>::Zero(n);
  for (Eigen::Index j = 0; j < n; ++j)
    for (Eigen::Index i = 0; i < n; ++i) {
      if (i == j) continue;
      const Scalar w = km.pair_weights(i, j);
      if (w == 0) continue;
      const Scalar f = phi_value(p, u[i] - u[j]) * w;
      g[i] += f;
      g[j] -= f;
    }
  for (Eigen::Index i = 0; i < n; ++i)
    if (km.killing[i] != 0)
      g[i] += (phi_value(p, u[i]) - phi_value(p, -u[i])) / 2 * km.killing[i] * km.cell_weights[i];
  return g;
}

template <class Scalar>
Scalar action_I(const KernelMatrix<Scalar>& km, const PhiSpec<Scalar>& p, const FieldArg<Scalar>& u,
                const FieldArg<Scalar>& v) {
  if (v.size() != u.size()) throw ConfigError("action_I: field sizes differ");
  return grad_I(km, p, u).dot(v);
}

template <class Scalar>
Matrix<Scalar> hessian_I(const KernelMatrix<Scalar>& km, const PhiSpec<Scalar>& p, const FieldArg<Scalar>& u) {
  const Eigen::Index n = km.size();
  Matrix<Scalar> H = Matrix<Scalar>::Zero(n, n);
  for (Eigen::Index j = 0; j < n; ++j)
    for (Eigen::Index i = 0; i < n; ++i) {
      if (i == j) continue;
      const Scalar w = km.pair_weights(i, j);
      if (w == 0) continue;
      const Scalar c = phi_derivative(p, u[i] - u[j]) * w;
      H(i, i) += c;
      H(j, j) += c;
      H(i, j) -= c;
      H(j, i) -= c;
    }
  for (Eigen::Index i = 0; i < n; ++i)
    if (km.killing[i] != 0)
      H(i, i) += (phi_derivative(p, u[i]) + phi_derivative(p, -u[i])) / 2 * km.killing[i] * km.cell_weights[i];
  return H;
}

/// Discrete ||u||_{K,q}^q, killing part included.
template <class Scalar>
Scalar seminorm_q(const KernelMatrix<Scalar>& km, Scalar q, const FieldArg<Scalar>& u) {
  const Eigen::Index n = km.size();
  Scalar e = 0;
  for (Eigen::Index j = 0; j < n; ++j)
    for (Eigen::Index i = 0; i < n; ++i)
      if (i != j) e += std::pow(std::abs(u[i] - u[j]), q) * km.pair_weights(i, j);
  for (Eigen::Index i = 0; i < n; ++i) e += std::pow(std::abs(u[i]), q) * km.killing[i] * km.cell_weights[i];
  return e;
}

// ---------------------------------------------------------------------------
// The linear operator L and its inverse

enum class LKind { LaplacianDirichlet, FractionalDirichlet, IdentityRiesz, LaplacianNeumann, RegionalFractional, Sum };

inline const char* to_string(LKind k) {
  switch (k) {
    case LKind::LaplacianDirichlet: return "laplacian_dirichlet";
    case LKind::FractionalDirichlet: return "fractional_dirichlet";
    case LKind::IdentityRiesz: return "identity_riesz";
    case LKind::LaplacianNeumann: return "laplacian_neumann";
    case LKind::RegionalFractional: return "regional_fractional";
    case LKind::Sum: return "sum";
  }
  return "unknown";
}

/// Graph Laplacian diag(S 1) - S.
template <class Scalar>
Matrix<Scalar> graph_laplacian(const Matrix<Scalar>& S) {
  Matrix<Scalar> L = -S;
  L.diagonal() = S.rowwise().sum() - S.diagonal();
  return L;
}

/// Symmetric bilinear form B(u, v) = u^T A v on R^n with the cell weights
/// as the L^2 mass. Dual vectors are weak-form (tested) quantities, so
/// A u is the dual vector of u. Immutable after construction.
template <class Scalar>
class OperatorL {
 public:
  static OperatorL identity_riesz(const Grid<Scalar>& grid) {
    return OperatorL(LKind::IdentityRiesz, Matrix<Scalar>(grid.weights.asDiagonal()), grid.weights, false);
  }

  /// Cell-centred second-order stencil, reflecting closure.
  static OperatorL laplacian_neumann(const Grid<Scalar>& grid) {
    const Matrix<Scalar> A = grid.weights[0] * neumann_laplacian(grid);
    return OperatorL(LKind::LaplacianNeumann, A, grid.weights, true);
  }

  /// Cell-centred stencil with the zero value imposed on the faces (ghost
  /// reflection u_ghost = -u): the boundary diagonal gains 2 / h^2 per face.
  static OperatorL laplacian_dirichlet(const Grid<Scalar>& grid) {
    Matrix<Scalar> A = neumann_laplacian(grid);
    const int n = grid.n_per_axis;
    for (Eigen::Index idx = 0; idx < grid.size(); ++idx) {
      const int i = int(idx % n), j = int(idx / n);
      const Scalar hx = grid.h(0);
      if (i == 0 || i == n - 1) A(idx, idx) += 2 / (hx * hx);
      if (grid.dim == 2 && (j == 0 || j == n - 1)) A(idx, idx) += 2 / (grid.h(1) * grid.h(1));
    }
    A *= grid.weights[0];
    return OperatorL(LKind::LaplacianDirichlet, A, grid.weights, false);
  }

  /// B(u, v) = iint_{Q(Omega)} (u(x)-u(y))(v(x)-v(y)) K: graph Laplacian of
  /// W + W^T plus the killing diagonal. Equals the Hessian of energy_F for Power(2).
  static OperatorL fractional_dirichlet(const KernelMatrix<Scalar>& km) {
    if (km.mode != KernelMode::Dirichlet) throw ConfigError("operator.kind: fractional_dirichlet needs a dirichlet kernel");
    if (km.spec.q != 2) throw ConfigError("operator: fractional L requires a kernel with q = 2");
    Matrix<Scalar> A = graph_laplacian<Scalar>(km.pair_weights + km.pair_weights.transpose());
    A.diagonal() += km.killing.cwiseProduct(km.cell_weights);
    return OperatorL(LKind::FractionalDirichlet, A, km.cell_weights, false);
  }

  /// B(u, v) = (1/2) iint_{Omega^2} (u(x)-u(y))(v(x)-v(y)) K. Annihilates constants.
  static OperatorL regional_fractional(const KernelMatrix<Scalar>& km) {
    if (km.mode == KernelMode::Dirichlet) throw ConfigError("operator.kind: regional_fractional needs a regional or periodic kernel");
    if (km.spec.q != 2) throw ConfigError("operator: fractional L requires a kernel with q = 2");
    const Matrix<Scalar> A = graph_laplacian<Scalar>(km.pair_weights + km.pair_weights.transpose()) / 2;
    return OperatorL(LKind::RegionalFractional, A, km.cell_weights, true);
  }

  /// L = sum_k L_k; constants stay in the kernel only if every term annihilates them.
  static OperatorL sum(const std::vector<OperatorL>& terms) {
    if (terms.empty()) throw ConfigError("operator.sum: at least one term is required");
    Matrix<Scalar> A = terms.front().A_;
    bool split = terms.front().mass_split_;
    for (std::size_t k = 1; k < terms.size(); ++k) {
      if (terms[k].A_.rows() != A.rows()) throw ConfigError("operator.sum: terms live on different grids");
      A += terms[k].A_;
      split = split && terms[k].mass_split_;
    }
    OperatorL op(LKind::Sum, A, terms.front().weights_, split);
    op.terms_ = terms;
    return op;
  }

  LKind kind() const { return kind_; }
  bool mass_split() const { return mass_split_; }
  const Matrix<Scalar>& matrix() const { return A_; }
  const Vector<Scalar>& weights() const { return weights_; }
  const std::vector<OperatorL>& terms() const { return terms_; }
  Eigen::Index size() const { return A_.rows(); }

  Vector<Scalar> apply(const Vector<Scalar>& u) const {
    check_size(u);
    return A_ * u;
  }

  Scalar bilinear(const Vector<Scalar>& u, const Vector<Scalar>& v) const {
    check_size(u);
    check_size(v);
    return u.dot(A_ * v);
  }

  /// u with apply(u) = f; zero-mean u for mass-split kinds, which require
  /// sum_i f_i = 0 (tested against constants).
  Vector<Scalar> solve(const Vector<Scalar>& f_in) const {
    check_size(f_in);
    Vector<Scalar> f = f_in;
    if (mass_split_) {
      const Scalar total = f.sum();
      if (std::abs(total) > Scalar(1e-9) * std::max(f.template lpNorm<1>(), std::numeric_limits<Scalar>::min()))
        throw PreconditionError("solve_L: right-hand side must vanish on constants for this operator");
      f -= weights_ * (total / weights_.sum());
    }
    Vector<Scalar> u = factor_->solve(f);
    // One step of iterative refinement.
    u += factor_->solve(f - shifted_apply(u));
    if (mass_split_) u.array() -= weights_.dot(u) / weights_.sum();
    return u;
  }

  /// ||f||_{L^-1} = sqrt(<f, L^-1 f>).
  Scalar dual_norm(const Vector<Scalar>& f) const { return std::sqrt(std::max(Scalar(0), f.dot(solve(f)))); }

  Scalar norm(const Vector<Scalar>& u) const { return std::sqrt(std::max(Scalar(0), bilinear(u, u))); }

 private:
  OperatorL(LKind kind, Matrix<Scalar> A, Vector<Scalar> weights, bool mass_split)
      : kind_(kind), A_(std::move(A)), weights_(std::move(weights)), mass_split_(mass_split) {
    if (A_.rows() != weights_.size()) throw ConfigError("operator: matrix and weights sizes differ");
    A_ = ((A_ + A_.transpose()) / 2).eval();
    const Scalar scale = A_.diagonal().cwiseAbs().maxCoeff();
    if (mass_split_) {
      const Scalar defect = (A_ * Vector<Scalar>::Ones(A_.rows())).cwiseAbs().maxCoeff();
      if (defect > Scalar(1e-10) * std::max(scale, Scalar(1)))
        throw ConfigError("operator: mass-split operator does not annihilate constants");
      // Deflation: the constant mode is pinned by a rank-one term along the weights.
      rho_ = A_.diagonal().mean() / weights_.squaredNorm();
    }
    Matrix<Scalar> shifted = A_;
    if (mass_split_) shifted.noalias() += rho_ * weights_ * weights_.transpose();
    factor_ = std::make_shared<Eigen::LLT<Matrix<Scalar>>>(shifted);
    if (factor_->info() != Eigen::Success) throw NumericalError("operator: form matrix is not positive definite");
    // LLT accepts semidefinite pivots silently; reject numerically singular factors.
    const Vector<Scalar> pivots = Matrix<Scalar>(factor_->matrixL()).diagonal().array().square();
    if (!(pivots.minCoeff() > Scalar(1e3) * Scalar(A_.rows()) * std::numeric_limits<Scalar>::epsilon() * scale))
      throw NumericalError("operator: form matrix is numerically singular");
  }

  Vector<Scalar> shifted_apply(const Vector<Scalar>& u) const {
    Vector<Scalar> r = A_ * u;
    if (mass_split_) r += rho_ * weights_ * weights_.dot(u);
    return r;
  }

  void check_size(const Vector<Scalar>& u) const {
    if (u.size() != A_.rows()) throw ConfigError("operator: field size does not match the operator");
  }

  LKind kind_;
  Matrix<Scalar> A_;
  Vector<Scalar> weights_;
  bool mass_split_ = false;
  Scalar rho_ = 0;
  std::shared_ptr<const Eigen::LLT<Matrix<Scalar>>> factor_;
  std::vector<OperatorL> terms_;
};

template <class Scalar>
Vector<Scalar> apply_L(const OperatorL<Scalar>& op, const FieldArg<Scalar>& u) {
  return op.apply(u);
}

template <class Scalar>
Vector<Scalar> solve_L(const OperatorL<Scalar>& op, const FieldArg<Scalar>& f) {
  return op.solve(f);
}

template <class Scalar>
Scalar dual_norm(const OperatorL<Scalar>& op, const FieldArg<Scalar>& f) {
  return op.dual_norm(f);
}

}  // namespace nlch
