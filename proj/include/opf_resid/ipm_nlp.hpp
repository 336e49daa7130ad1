#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <string_view>

#include <Eigen/Core>
#include <Eigen/SparseCore>

namespace opf_resid {

using Eigen::VectorXd;
using SpMat = Eigen::SparseMatrix<double>;

/// Smooth NLP
///
///   min f(u; p)  s.t.  c(u; p) = 0,  g(u; p) <= 0
///
/// The solver turns every inequality into g(u) + s = 0 with s >= 0, so the
/// equality residual of the slack form is r(u, s) = [c(u); g(u) + s] and has
/// num_eq() + num_ineq() rows.
///
/// Callbacks must return matrices with a structure that does not depend on
/// the point (explicit zeros are fine); the solver factorizes with a fixed
/// symbolic analysis.
class NlpProblem {
 public:
  virtual ~NlpProblem() = default;

  virtual int num_vars() const = 0;
  virtual int num_eq() const = 0;
  virtual int num_ineq() const = 0;
  virtual int num_params() const { return 0; }

  virtual VectorXd initial_point() const = 0;

  virtual double objective(const VectorXd& u) const = 0;
  virtual VectorXd gradient(const VectorXd& u) const = 0;
  virtual VectorXd eq_constraints(const VectorXd& u) const = 0;
  virtual VectorXd ineq_constraints(const VectorXd& u) const = 0;
  virtual SpMat eq_jacobian(const VectorXd& u) const = 0;
  virtual SpMat ineq_jacobian(const VectorXd& u) const = 0;

  /// Lower triangle of the Hessian of
  /// obj_factor * f + lam_eq' c + lam_ineq' g.
  virtual SpMat lagrangian_hessian(const VectorXd& u, double obj_factor,
                                   const VectorXd& lam_eq,
                                   const VectorXd& lam_ineq) const = 0;

  /// d(grad f)/dp, num_vars x num_params.
  virtual SpMat gradient_param_jacobian(const VectorXd& u) const;
  /// d(J_c' lam_eq + J_g' lam_ineq)/dp, num_vars x num_params.
  virtual SpMat constraint_param_hessian(const VectorXd& u,
                                         const VectorXd& lam_eq,
                                         const VectorXd& lam_ineq) const;
  /// dc/dp and dg/dp.
  virtual SpMat eq_param_jacobian(const VectorXd& u) const;
  virtual SpMat ineq_param_jacobian(const VectorXd& u) const;
};

enum class NlpStatus { optimal, max_iter, infeasible, error };

std::string_view to_string(NlpStatus status);

struct NlpOptions {
  int max_iter = 200;
  double kkt_tol = 1e-6;
  double mu_init = 0.1;
  double mu_min = 1e-9;
  double mu_factor = 0.2;         ///< monotone reduction mu <- factor * mu
  double barrier_tol_factor = 10;  ///< reduce mu once E_mu <= factor * mu
  double tau = 0.995;              ///< fraction to the boundary
  int max_backtracks = 30;
  double armijo = 1e-4;
  bool scale_objective = true;  ///< gradient-based objective scaling
  double max_gradient = 100.0;
  double slack_floor = 1e-2;
  bool verbose = false;
};

/// Primal-dual point of the slack form. `lambda` has num_eq() + num_ineq()
/// entries (equalities first), `nu` one per slack. Multipliers refer to the
/// unscaled objective; `objective_scale` is the factor the solver applied
/// internally and is used by kkt_residual() to measure optimality in the
/// same units as the stopping test.
struct NlpSolution {
  VectorXd u;
  VectorXd s;
  VectorXd lambda;
  VectorXd nu;
  double objective = 0.0;
  NlpStatus status = NlpStatus::error;
  double kkt_residual = 0.0;
  int iterations = 0;
  double mu = 0.0;
  double objective_scale = 1.0;
  double seconds = 0.0;
  std::string message;
};

NlpSolution solve(const NlpProblem& problem,
                  const std::optional<VectorXd>& start = std::nullopt,
                  const NlpOptions& options = {});

/// max of the scaled stationarity, primal feasibility and complementarity
/// infinity norms at `candidate`.
double kkt_residual(const NlpProblem& problem, const NlpSolution& candidate);

/// Convex QP with a parameterized linear term
///
///   min 1/2 u'Qu + (c + P p)'u  s.t.  A u = b,  G u <= h.
///
/// Q is given by its lower triangle.
class QuadraticProblem final : public NlpProblem {
 public:
  QuadraticProblem(SpMat q_lower, VectorXd c, SpMat a, VectorXd b, SpMat g,
                   VectorXd h, SpMat p_matrix = {}, VectorXd params = {},
                   VectorXd start = {});

  int num_vars() const override { return static_cast<int>(c_.size()); }
  int num_eq() const override { return static_cast<int>(b_.size()); }
  int num_ineq() const override { return static_cast<int>(h_.size()); }
  int num_params() const override { return static_cast<int>(params_.size()); }
  VectorXd initial_point() const override;
  double objective(const VectorXd& u) const override;
  VectorXd gradient(const VectorXd& u) const override;
  VectorXd eq_constraints(const VectorXd& u) const override;
  VectorXd ineq_constraints(const VectorXd& u) const override;
  SpMat eq_jacobian(const VectorXd&) const override { return a_; }
  SpMat ineq_jacobian(const VectorXd&) const override { return g_; }
  SpMat lagrangian_hessian(const VectorXd& u, double obj_factor,
                           const VectorXd& lam_eq,
                           const VectorXd& lam_ineq) const override;
  SpMat gradient_param_jacobian(const VectorXd& u) const override;

 private:
  SpMat q_lower_;
  SpMat q_full_;
  VectorXd c_;
  SpMat a_;
  VectorXd b_;
  SpMat g_;
  VectorXd h_;
  SpMat p_;
  VectorXd params_;
  VectorXd start_;
  VectorXd linear_;
};

/// Finite-difference audit of a problem's derivative callbacks.
struct DerivativeCheck {
  double gradient = 0.0;
  double eq_jacobian = 0.0;
  double ineq_jacobian = 0.0;
  double hessian = 0.0;
  double max() const;
};

/// Relative errors (max |analytic - fd| / max(1, |fd|)) of the callbacks at
/// `u` against central differences; multipliers for the Hessian check are
/// drawn from `seed`.
DerivativeCheck check_derivatives(const NlpProblem& problem, const VectorXd& u,
                                  std::uint64_t seed, double step = 1e-6);

/// Expands a lower-triangular symmetric matrix to full storage.
SpMat symmetric_from_lower(const SpMat& lower);

}  // namespace opf_resid
