#pragma once

#include <memory>
#include <vector>

#include <Eigen/Core>
#include <Eigen/SparseCore>

#include "opf_resid/ipm_nlp.hpp"

namespace opf_resid {

/// Block sizes of the square KKT system in (u, s, lambda, nu), where lambda
/// stacks the equality and slack-row multipliers.
struct KktDims {
  int nu = 0;
  int ns = 0;
  int neq = 0;  ///< equality rows of the slack form (num_eq + num_ineq)
  int np = 0;
  int size() const { return nu + ns + neq + ns; }
};

/// Jacobians of the KKT map K(u, s, lambda, nu; p) at a solution. Rows are
/// stationarity in u, stationarity in s, feasibility, complementarity.
struct KktSystem {
  SpMat j;   ///< dK/d(u, s, lambda, nu)
  SpMat jp;  ///< dK/dp
  KktDims dims;
  /// Complementarity pairs whose diagonal received the degeneracy
  /// perturbation.
  std::vector<int> perturbed;
};

struct KktOptions {
  double degeneracy_eps = 1e-6;
  double perturbation = 1e-8;
  /// Reciprocal condition number below which the system counts as singular.
  double min_rcond = 1e-14;
};

KktSystem assemble_kkt(const NlpProblem& problem, const NlpSolution& sol,
                       const KktOptions& options = {});

/// Factorized KKT matrix for repeated forward or adjoint solves.
class KktSolver {
 public:
  /// Throws DegeneracyError when J cannot be factorized reliably.
  explicit KktSolver(KktSystem system, const KktOptions& options = {});
  ~KktSolver();
  KktSolver(KktSolver&&) noexcept;
  KktSolver& operator=(KktSolver&&) noexcept;

  /// dL/dp = -(dK/dp)' J^{-T} [dL/du; 0; 0; 0].
  Eigen::VectorXd backward(const Eigen::VectorXd& grad_u) const;
  /// du/dp * direction.
  Eigen::VectorXd forward(const Eigen::VectorXd& direction) const;
  /// Full du/dp (nu x np); one solve per parameter.
  Eigen::MatrixXd sensitivity() const;

  double rcond() const { return rcond_; }
  const KktSystem& system() const { return system_; }

 private:
  struct Factor;
  KktSystem system_;
  std::unique_ptr<Factor> factor_;
  Eigen::VectorXd row_scale_;
  double rcond_ = 0.0;
};

/// Convenience wrapper: assemble, factorize and run one adjoint solve.
Eigen::VectorXd backward(const NlpProblem& problem, const NlpSolution& sol,
                         const Eigen::VectorXd& grad_u,
                         const KktOptions& options = {});

}  // namespace opf_resid
