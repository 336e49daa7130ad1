#include "opf_resid/json_io.hpp"

#include <cmath>
#include <fstream>

#include "opf_resid/error.hpp"

namespace opf_resid {

using nlohmann::json;

std::vector<double> to_std(const Eigen::VectorXd& v) {
  return {v.data(), v.data() + v.size()};
}

json to_json(const GridCase& grid) {
  json buses = json::array();
  for (const auto& b : grid.buses) {
    buses.push_back({{"id", b.id},
                     {"kind", to_string(b.kind)},
                     {"pd", b.pd},
                     {"qd", b.qd},
                     {"gs", b.gs},
                     {"bs", b.bs},
                     {"vmin", b.vmin},
                     {"vmax", b.vmax}});
  }
  json gens = json::array();
  for (const auto& g : grid.gens) {
    gens.push_back({{"bus", grid.buses[g.bus].id},
                    {"pmin", g.pmin},
                    {"pmax", g.pmax},
                    {"qmin", g.qmin},
                    {"qmax", g.qmax},
                    {"cost", {g.cost.c2, g.cost.c1, g.cost.c0}}});
  }
  json branches = json::array();
  for (const auto& br : grid.branches) {
    branches.push_back({{"from", grid.buses[br.from].id},
                        {"to", grid.buses[br.to].id},
                        {"r", br.r},
                        {"x", br.x},
                        {"b", br.b},
                        {"tap", br.tap},
                        {"shift", br.shift},
                        {"smax", br.smax},
                        {"status", br.in_service ? 1 : 0}});
  }
  return {{"name", grid.name},
          {"base_mva", grid.base_mva},
          {"counts",
           {{"buses", grid.num_buses()},
            {"gens", grid.num_gens()},
            {"branches", grid.num_branches()},
            {"active_branches", grid.num_active_branches()}}},
          {"buses", std::move(buses)},
          {"gens", std::move(gens)},
          {"branches", std::move(branches)}};
}

json to_json(const DcOpfSolution& sol, const GridCase& grid) {
  return {{"case", grid.name},
          {"status", to_string(sol.status)},
          {"objective", sol.objective},
          {"pg", to_std(sol.pg)},
          {"theta", to_std(sol.theta)},
          {"flow", to_std(sol.flow)},
          {"iterations", sol.iterations},
          {"seconds", sol.seconds},
          {"message", sol.message}};
}

json to_json(const BranchFlows& f) {
  return {{"pf", to_std(f.pf)}, {"qf", to_std(f.qf)},   {"pt", to_std(f.pt)},
          {"qt", to_std(f.qt)}, {"sf2", to_std(f.sf2)}, {"st2", to_std(f.st2)}};
}

json to_json(const Setpoints& y) {
  return {{"pg", to_std(y.pg)}, {"vg", to_std(y.vg)}, {"vref", y.vref}};
}

json to_json(const OpfSolution& sol) {
  return {{"status", to_string(sol.status)},
          {"cost", sol.cost},
          {"objective", sol.objective},
          {"iterations", sol.iterations},
          {"kkt_residual", sol.kkt_residual},
          {"seconds", sol.seconds},
          {"message", sol.message},
          {"pg", to_std(sol.pg)},
          {"qg", to_std(sol.qg)},
          {"v", to_std(sol.v)},
          {"theta", to_std(sol.theta)},
          {"flows", to_json(sol.flows)},
          {"setpoints", to_json(sol.y)}};
}

json to_json(const PfResult& pf) {
  return {{"converged", pf.converged},
          {"iterations", pf.iterations},
          {"max_mismatch", pf.max_mismatch},
          {"residual_history", pf.residual_history},
          {"jacobian_rcond", pf.jacobian_rcond},
          {"v", to_std(pf.v)},
          {"theta", to_std(pf.theta)},
          {"pg", to_std(pf.pg_all)},
          {"qg", to_std(pf.qg_all)},
          {"flows", to_json(pf.flows)}};
}

namespace {

Eigen::VectorXd field_vector(const json& j, const char* key, int expected) {
  if (!j.contains(key)) {
    throw ParseError(std::string("setpoints: missing field '") + key + "'");
  }
  const json& v = j.at(key);
  if (!v.is_array()) {
    throw ParseError(std::string("setpoints: field '") + key +
                     "' must be an array of numbers");
  }
  if (static_cast<int>(v.size()) != expected) {
    throw ParseError(std::string("setpoints: field '") + key + "' has " +
                     std::to_string(v.size()) + " entries, expected " +
                     std::to_string(expected));
  }
  Eigen::VectorXd out(expected);
  for (int i = 0; i < expected; ++i) {
    if (!v[i].is_number() || !std::isfinite(v[i].get<double>())) {
      throw ParseError(std::string("setpoints: field '") + key + "' entry " +
                       std::to_string(i) + " is not a finite number");
    }
    out(i) = v[i].get<double>();
  }
  return out;
}

}  // namespace

Setpoints setpoints_from_json(const json& j, const SetpointLayout& layout) {
  if (!j.is_object()) {
    throw ParseError("setpoints: expected a JSON object");
  }
  Setpoints y;
  y.pg = field_vector(j, "pg", layout.num_pg());
  y.vg = field_vector(j, "vg", layout.num_vg());
  if (!j.contains("vref")) {
    throw ParseError("setpoints: missing field 'vref'");
  }
  if (!j.at("vref").is_number() || !std::isfinite(j.at("vref").get<double>())) {
    throw ParseError("setpoints: field 'vref' must be a finite number");
  }
  y.vref = j.at("vref").get<double>();
  return y;
}

json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) {
    throw Error("cannot read " + path);
  }
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw ParseError(path + ": " + e.what());
  }
}

Setpoints load_setpoints(const std::string& path, const SetpointLayout& layout) {
  return setpoints_from_json(read_json_file(path), layout);
}

}  // namespace opf_resid
