#pragma once

#include <string>

#include <Eigen/Core>

#include "json.hpp"

#include "opf_resid/ac_pf.hpp"
#include "opf_resid/acopf_models.hpp"
#include "opf_resid/dc_opf.hpp"
#include "opf_resid/grid_model.hpp"

namespace opf_resid {

std::vector<double> to_std(const Eigen::VectorXd& v);

/// Canonical per-unit dump with external bus numbers.
nlohmann::json to_json(const GridCase& grid);
nlohmann::json to_json(const DcOpfSolution& sol, const GridCase& grid);
nlohmann::json to_json(const OpfSolution& sol);
nlohmann::json to_json(const PfResult& pf);
nlohmann::json to_json(const Setpoints& y);
nlohmann::json to_json(const BranchFlows& flows);

/// {"pg": [...], "vg": [...], "vref": x}; errors name the offending field.
Setpoints setpoints_from_json(const nlohmann::json& j, const SetpointLayout& layout);
Setpoints load_setpoints(const std::string& path, const SetpointLayout& layout);

nlohmann::json read_json_file(const std::string& path);

}  // namespace opf_resid
