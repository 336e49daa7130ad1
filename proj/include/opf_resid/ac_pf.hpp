#pragma once

#include <optional>
#include <vector>

#include <Eigen/Core>
#include <Eigen/SparseCore>

#include "opf_resid/grid_model.hpp"

namespace opf_resid {

/// Which generators and buses the controllable vector y = [Pg; Vg; Vref]
/// refers to. Generators on the reference bus are not part of y; their
/// output is recovered by the power flow.
struct SetpointLayout {
  std::vector<int> pg_gens;   ///< non-reference generators, in generator order
  std::vector<int> vg_buses;  ///< non-reference generator buses, ascending
  std::vector<int> ref_gens;  ///< generators on the reference bus
  int ref_bus = 0;

  int num_pg() const { return static_cast<int>(pg_gens.size()); }
  int num_vg() const { return static_cast<int>(vg_buses.size()); }
  int size() const { return num_pg() + num_vg() + 1; }
  /// Buses whose voltage is a setpoint: vg_buses then the reference.
  std::vector<int> voltage_buses() const;

  static SetpointLayout from(const GridCase& grid);
};

/// y = [Pg; Vg; Vref] in per-unit.
struct Setpoints {
  Eigen::VectorXd pg;
  Eigen::VectorXd vg;
  double vref = 1.0;

  Eigen::VectorXd to_vector() const;
  /// Vg followed by Vref.
  Eigen::VectorXd voltages() const;
  static Setpoints from_vector(const SetpointLayout& layout,
                               const Eigen::VectorXd& y);
  /// The setpoints stored in the case file (gen Pg, Vg).
  static Setpoints from_case(const GridCase& grid, const SetpointLayout& layout);
};

/// Per-branch flows measured at both ends; zero for out-of-service branches.
struct BranchFlows {
  Eigen::VectorXd pf, qf, pt, qt;
  Eigen::VectorXd sf2, st2;
};

struct PfResult {
  Eigen::VectorXd v;
  Eigen::VectorXd theta;
  Eigen::VectorXd pg_all;
  Eigen::VectorXd qg_all;
  BranchFlows flows;
  bool converged = false;
  int iterations = 0;
  double max_mismatch = 0.0;
  std::vector<double> residual_history;
  /// Reciprocal 1-norm condition estimate of the final Jacobian.
  double jacobian_rcond = 0.0;
};

struct PfOptions {
  int max_iter = 30;
  double tol = 1e-8;
  bool estimate_condition = false;
};

struct PfWarmStart {
  Eigen::VectorXd v;
  Eigen::VectorXd theta;
};

/// Bus indices in the order used by mismatch vectors and the Jacobian:
/// angle unknowns are all non-reference buses, magnitude unknowns are the
/// load buses.
struct PfIndexing {
  std::vector<int> angle_buses;
  std::vector<int> magnitude_buses;
  std::vector<int> angle_pos;      ///< bus -> position, -1 if fixed
  std::vector<int> magnitude_pos;  ///< bus -> position, -1 if fixed

  static PfIndexing from(const GridCase& grid);
  int size() const {
    return static_cast<int>(angle_buses.size() + magnitude_buses.size());
  }
};

/// Net injections P_i, Q_i leaving every bus into the network (incl. shunts).
void bus_injections(const GridCase& grid, const AdmittanceMatrix& y,
                    const Eigen::VectorXd& v, const Eigen::VectorXd& theta,
                    Eigen::VectorXd& p, Eigen::VectorXd& q);

/// [dP at non-reference buses; dQ at load buses], scheduled minus computed.
Eigen::VectorXd pf_mismatch(const GridCase& grid, const AdmittanceMatrix& y,
                            const Eigen::VectorXd& v,
                            const Eigen::VectorXd& theta, const Setpoints& sp);
Eigen::VectorXd pf_mismatch(const GridCase& grid, const Eigen::VectorXd& v,
                            const Eigen::VectorXd& theta, const Setpoints& sp);

/// Jacobian of pf_mismatch w.r.t. [theta(angle_buses); V(magnitude_buses)].
Eigen::SparseMatrix<double> pf_jacobian(const GridCase& grid,
                                        const AdmittanceMatrix& y,
                                        const PfIndexing& idx,
                                        const Eigen::VectorXd& v,
                                        const Eigen::VectorXd& theta);

BranchFlows compute_branch_flows(const GridCase& grid,
                                 const AdmittanceMatrix& y,
                                 const Eigen::VectorXd& v,
                                 const Eigen::VectorXd& theta);
BranchFlows compute_branch_flows(const GridCase& grid, const Eigen::VectorXd& v,
                                 const Eigen::VectorXd& theta);

/// Newton-Raphson power flow for fixed setpoints. Throws SolverError on a
/// singular Jacobian; non-convergence is reported through `converged`.
PfResult solve_pf(const GridCase& grid, const Setpoints& sp,
                  const PfOptions& options = {},
                  const std::optional<PfWarmStart>& warm = std::nullopt);
PfResult solve_pf(const GridCase& grid, const AdmittanceMatrix& y,
                  const Setpoints& sp, const PfOptions& options = {},
                  const std::optional<PfWarmStart>& warm = std::nullopt);

}  // namespace opf_resid
