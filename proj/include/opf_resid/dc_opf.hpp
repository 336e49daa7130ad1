#pragma once

#include <string>

#include <Eigen/Core>

#include "opf_resid/grid_model.hpp"
#include "opf_resid/ipm_nlp.hpp"

namespace opf_resid {

enum class DcStatus { optimal, infeasible, error };

std::string_view to_string(DcStatus status);

/// Lossless B-theta dispatch. `pg` covers every generator, `theta` every bus
/// with the reference angle at zero.
struct DcOpfSolution {
  Eigen::VectorXd pg;
  Eigen::VectorXd theta;
  Eigen::VectorXd flow;  ///< per-branch from-side flow, zero when out of service
  double objective = 0.0;
  DcStatus status = DcStatus::error;
  int iterations = 0;
  double seconds = 0.0;
  std::string message;
};

struct DcOpfOptions {
  NlpOptions nlp;
  bool enforce_flow_limits = true;
};

/// Minimizes total generation cost subject to the DC power balance at every
/// bus (shunt conductance counted as load, phase shifts as fixed injections),
/// generator limits and |flow| <= Smax on limited branches.
DcOpfSolution solve_dc_opf(const GridCase& grid, const DcOpfOptions& options = {});

}  // namespace opf_resid
