#pragma once

#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "opf_resid/ac_pf.hpp"
#include "opf_resid/grid_model.hpp"
#include "opf_resid/ipm_nlp.hpp"

namespace opf_resid {

/// Objective weights of the restoration model
///
///   w_p sum (Pg - Pg_y)^2 + w_v sum (V - V_y)^2 + w_o sum c(Pg).
struct Weights {
  double wp = 0.1;
  double wv = 100.0;
  double wo = 1.0;

  /// Throws ValidationError on negative or all-zero weights.
  void validate() const;

  static Weights training() { return {0.1, 100.0, 1.0}; }
  static Weights testing() { return {0.1, 100.0, 1e4}; }
  static Weights closest_feasible() { return {1.0, 100.0, 0.0}; }
  /// w_p = w_v = 0: the projection terms vanish and the cost remains.
  static Weights cost_only() { return {0.0, 0.0, 1.0}; }
  /// w_p = w_o = 0: only the voltage projection remains.
  static Weights voltage_only() { return {0.0, 100.0, 0.0}; }
};

/// Variable and row offsets of the polar AC model.
///
/// u = [Pg; Qg; V; theta (non-reference); Pf; Qf; Pt; Qt; Sf2; St2] with the
/// flow blocks indexed by in-service branch.
struct AcIndex {
  int nb = 0;
  int ng = 0;
  int na = 0;
  int pg = 0, qg = 0, v = 0, theta = 0;
  int pf = 0, qf = 0, pt = 0, qt = 0, sf = 0, st = 0;
  int num_vars = 0;
  std::vector<int> theta_var;   ///< bus -> variable, -1 at the reference
  std::vector<int> active;      ///< in-service branch indices
  std::vector<int> branch_pos;  ///< branch -> position in `active`, or -1

  static AcIndex from(const GridCase& grid);
};

enum class ParamKind {
  none,       ///< no differentiation parameters
  load,       ///< p = [Pd; Qd]
  setpoints,  ///< p = y = [Pg; Vg; Vref]
};

/// AC-OPF (weights (0, 0, 1), no setpoint targets) or the restoration model
/// around setpoints y. Equalities: nodal P/Q balance, the four end-flow
/// definitions and S^2 = P^2 + Q^2 per in-service branch, plus fixed
/// variables whose bounds coincide. Inequalities: bounds on V, Pg, Qg and
/// S^2 <= Smax^2 on limited branches.
class AcOpfProblem final : public NlpProblem {
 public:
  AcOpfProblem(GridCase grid, Weights weights, std::optional<Setpoints> target,
               ParamKind params);

  int num_vars() const override { return index_.num_vars; }
  int num_eq() const override { return num_eq_; }
  int num_ineq() const override { return static_cast<int>(ineq_var_.size()); }
  int num_params() const override;

  VectorXd initial_point() const override;
  double objective(const VectorXd& u) const override;
  VectorXd gradient(const VectorXd& u) const override;
  VectorXd eq_constraints(const VectorXd& u) const override;
  VectorXd ineq_constraints(const VectorXd& u) const override;
  SpMat eq_jacobian(const VectorXd& u) const override;
  SpMat ineq_jacobian(const VectorXd& u) const override;
  SpMat lagrangian_hessian(const VectorXd& u, double obj_factor,
                           const VectorXd& lam_eq,
                           const VectorXd& lam_ineq) const override;
  SpMat gradient_param_jacobian(const VectorXd& u) const override;
  SpMat eq_param_jacobian(const VectorXd& u) const override;

  /// Full variable vector for a network state; flow variables are computed
  /// so that the flow definitions hold exactly.
  VectorXd point_from_state(const VectorXd& pg, const VectorXd& qg,
                            const VectorXd& v, const VectorXd& theta) const;

  /// Generation cost only.
  double generation_cost(const VectorXd& u) const;

  const GridCase& grid() const { return grid_; }
  const AcIndex& index() const { return index_; }
  const SetpointLayout& layout() const { return layout_; }
  const Weights& weights() const { return weights_; }
  const std::optional<Setpoints>& target() const { return target_; }

 private:
  void add_box(int var, double lo, double hi);

  GridCase grid_;
  Weights weights_;
  std::optional<Setpoints> target_;
  ParamKind params_;
  SetpointLayout layout_;
  AcIndex index_;
  std::vector<BranchAdmittance> adm_;  ///< per active branch
  std::vector<int> pg_target_;  ///< gen -> position in target Pg, or -1
  std::vector<int> v_target_;   ///< bus -> position in target voltages, or -1
  VectorXd target_pg_;
  VectorXd target_v_;
  // Inequality j reads sign_j * (u[var_j] - bound_j) <= 0.
  std::vector<int> ineq_var_;
  std::vector<double> ineq_bound_;
  std::vector<double> ineq_sign_;
  std::vector<int> fixed_var_;
  std::vector<double> fixed_value_;
  int num_eq_ = 0;
  int eq_flow_ = 0;
  int eq_s_ = 0;
  int eq_fixed_ = 0;
};

AcOpfProblem build_acopf(const GridCase& grid,
                         ParamKind params = ParamKind::none);
AcOpfProblem build_restoration(const GridCase& grid, const Setpoints& y,
                               const Weights& weights);

/// Structured view of a solved AC model.
struct OpfSolution {
  Eigen::VectorXd pg, qg;  ///< every generator, reference included
  Eigen::VectorXd v, theta;
  BranchFlows flows;       ///< per branch, zero when out of service
  Setpoints y;             ///< controllable part of the solution
  double cost = 0.0;       ///< generation cost
  double objective = 0.0;  ///< full model objective
  NlpStatus status = NlpStatus::error;
  int iterations = 0;
  double kkt_residual = 0.0;
  double seconds = 0.0;
  std::string message;
};

OpfSolution extract_solution(const AcOpfProblem& problem, const NlpSolution& sol);

/// Start point from a converged power flow of the target setpoints, or
/// nullopt when the power flow fails.
std::optional<VectorXd> pf_warm_start(const AcOpfProblem& problem);

struct SolvedModel {
  NlpSolution nlp;
  OpfSolution opf;
};

struct RestorationOptions {
  NlpOptions nlp;
  bool pf_warm_start = true;
  /// Initial barrier parameter used when the warm start is available.
  double warm_mu_init = 1e-3;
  /// Retry from the flat start when the warm-started solve is not optimal.
  bool flat_retry = true;
};

SolvedModel solve_acopf(const GridCase& grid, const NlpOptions& options = {});

/// Solves a restoration problem, warm-started from the power flow of its
/// target setpoints when that converges.
NlpSolution solve_restoration_problem(const AcOpfProblem& problem,
                                      const RestorationOptions& options = {});
SolvedModel solve_restoration(const GridCase& grid, const Setpoints& y,
                              const Weights& weights,
                              const RestorationOptions& options = {});

}  // namespace opf_resid
