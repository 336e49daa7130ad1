#pragma once

#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "json.hpp"

#include "opf_resid/ac_pf.hpp"
#include "opf_resid/acopf_models.hpp"
#include "opf_resid/grid_model.hpp"
#include "opf_resid/neural.hpp"
#include "opf_resid/trainer.hpp"

namespace opf_resid {

/// Elementwise distance outside [lower, upper] with its max and mean.
struct Violation {
  Eigen::VectorXd l;
  double max = 0.0;
  double mean = 0.0;
};

Violation violation(const Eigen::VectorXd& values, const Eigen::VectorXd& lower,
                    const Eigen::VectorXd& upper);

struct GroupStats {
  double max = 0.0;
  double mean = 0.0;
  int count = 0;
};

/// Violations of a network state grouped as generator P, generator Q, bus
/// voltage and squared branch flow (per limited branch end), plus the
/// concatenation of all four.
struct ViolationReport {
  GroupStats p_gr, q_gr, v, s2, combined;
};

ViolationReport state_violation(const GridCase& grid, const Eigen::VectorXd& pg_all,
                                const Eigen::VectorXd& qg_all,
                                const Eigen::VectorXd& v, const BranchFlows& flows);

/// 100 (C - C_ref) / C_ref; throws ValidationError when C_ref <= 0.
double optimality_gap(double cost, double reference_cost);

/// Generation cost of a full dispatch.
double dispatch_cost(const GridCase& grid, const Eigen::VectorXd& pg_all);

struct Baseline {
  bool ok = false;
  double cost = 0.0;
  double seconds = 0.0;  ///< median over the timing repeats
};

struct EvalOptions {
  Weights weights = Weights::testing();
  RestorationOptions restoration;
  PfOptions pf;
  int timing_repeats = 3;
  int threads = 1;
};

std::vector<Baseline> solve_baselines(const GridCase& grid,
                                      const std::vector<Sample>& samples,
                                      const EvalOptions& options = {});

struct SampleEval {
  int sample_id = 0;
  bool ok = false;
  std::string failure;
  ViolationReport violation;
  double balance_mismatch = 0.0;  ///< max nodal P/Q mismatch of the state
  double cost = 0.0;
  double gap = 0.0;               ///< NaN without a solved baseline
  double seconds = 0.0;           ///< median per-sample time
  double baseline_seconds = 0.0;
};

/// Two readings of a per-sample statistic across samples.
struct Aggregate {
  double max_of_max = 0.0;
  double mean_of_max = 0.0;
  double mean_of_mean = 0.0;
};

struct EvalSummary {
  std::string mode;
  int samples = 0;
  int failures = 0;
  Aggregate p_gr, q_gr, v, s2, combined;
  double max_balance_mismatch = 0.0;
  double mean_gap = 0.0;
  double max_gap = 0.0;
  double median_seconds = 0.0;
  double median_baseline_seconds = 0.0;
  double time_ratio = 0.0;  ///< baseline over method
  std::vector<SampleEval> per_sample;
};

/// Network forward followed by the restoration solve with `options.weights`.
EvalSummary evaluate_restoration_mode(const GridCase& grid, const MlpParams& params,
                                      const std::vector<Sample>& samples,
                                      const EvalOptions& options = {},
                                      const std::vector<Baseline>* baselines = nullptr);

/// Network forward followed by a Newton power flow of the predicted setpoints.
EvalSummary evaluate_pf_mode(const GridCase& grid, const MlpParams& params,
                             const std::vector<Sample>& samples,
                             const EvalOptions& options = {},
                             const std::vector<Baseline>* baselines = nullptr);

/// One PF-mode evaluation on a case that already carries the sample's loads.
struct PfModeResult {
  Setpoints y;
  PfResult pf;
  ViolationReport violation;
  double cost = 0.0;
};

PfModeResult run_pf_mode(const GridCase& sample_grid, const MlpParams& params,
                         const Eigen::VectorXd& input,
                         const Eigen::VectorXd& pg_dc,
                         const PfOptions& options = {});

struct ClosestFeasible {
  OpfSolution solution;
  double pg_distance = 0.0;  ///< ||Pg - Pg~||
  double v_distance = 0.0;   ///< ||V_gr - V~_gr||
  double mean_abs_pg = 0.0;
  double mean_abs_v = 0.0;
};

ClosestFeasible closest_feasible(const GridCase& grid, const Setpoints& y,
                                 const RestorationOptions& options = {});

struct OutageResult {
  int branch = 0;
  bool islanding = false;
  bool retained = false;  ///< not islanding and at least one valid sample
  int valid = 0;
  int dc_excluded = 0;
  int pf_excluded = 0;    ///< power flow did not converge
  int cond_excluded = 0;  ///< Jacobian rcond below the threshold
  double mean_violation = 0.0;  ///< mean of per-sample combined means
  double max_violation = 0.0;
};

struct ContingencyOptions {
  PfOptions pf;
  double min_rcond = 1e-12;
  int threads = 1;
};

struct ContingencyReport {
  std::vector<OutageResult> outages;
  double baseline_mean_violation = 0.0;  ///< no-outage reference
  double mean_violation = 0.0;           ///< over valid (outage, sample) pairs
  double max_violation = 0.0;
  double outage_retention = 0.0;
  double pair_retention = 0.0;
  int islanding = 0;
};

ContingencyReport contingency_sweep(const GridCase& grid, const MlpParams& params,
                                    const std::vector<Sample>& samples,
                                    const std::vector<int>& branches,
                                    const ContingencyOptions& options = {});

nlohmann::json to_json(const ViolationReport& r);
nlohmann::json to_json(const EvalSummary& s, bool include_samples = false);
nlohmann::json to_json(const ContingencyReport& r);

/// Human-readable table of the group aggregates.
std::string format_table(const EvalSummary& s);

}  // namespace opf_resid
