#include "opf_resid/dc_opf.hpp"

#include <chrono>
#include <vector>

#include "opf_resid/error.hpp"

namespace opf_resid {

std::string_view to_string(DcStatus status) {
  switch (status) {
    case DcStatus::optimal:
      return "optimal";
    case DcStatus::infeasible:
      return "infeasible";
    case DcStatus::error:
      return "error";
  }
  return "unknown";
}

namespace {

constexpr double kFixedWidth = 1e-9;

}  // namespace

DcOpfSolution solve_dc_opf(const GridCase& grid, const DcOpfOptions& options) {
  using Triplet = Eigen::Triplet<double>;
  const auto t0 = std::chrono::steady_clock::now();
  DcOpfSolution out;
  auto done = [&]() {
    out.seconds = std::chrono::duration<double>(
                      std::chrono::steady_clock::now() - t0)
                      .count();
    return out;
  };

  const int nb = grid.num_buses();
  const int ng = grid.num_gens();
  const int ref = grid.reference_bus();
  if (ng == 0) {
    throw ValidationError("DC-OPF needs at least one generator");
  }
  if (!is_connected(grid)) {
    out.status = DcStatus::error;
    out.message = "network is not connected";
    return done();
  }

  double demand = 0.0;
  for (const auto& bus : grid.buses) {
    demand += bus.pd + bus.gs;
  }
  double pmin_total = 0.0;
  double pmax_total = 0.0;
  for (const auto& gen : grid.gens) {
    pmin_total += gen.pmin;
    pmax_total += gen.pmax;
  }
  if (demand > pmax_total + 1e-9 || demand < pmin_total - 1e-9) {
    out.status = DcStatus::infeasible;
    out.message = "total demand outside the aggregate generation range";
    return done();
  }

  std::vector<int> theta_pos(nb, -1);
  int count = 0;
  for (int i = 0; i < nb; ++i) {
    if (i != ref) {
      theta_pos[i] = ng + count++;
    }
  }
  const int n = ng + nb - 1;

  std::vector<Triplet> a_t;
  Eigen::VectorXd rhs = Eigen::VectorXd::Zero(nb);
  for (int i = 0; i < nb; ++i) {
    rhs(i) = grid.buses[i].pd + grid.buses[i].gs;
  }
  for (int k = 0; k < ng; ++k) {
    a_t.emplace_back(grid.gens[k].bus, k, 1.0);
  }
  std::vector<Triplet> g_t;
  std::vector<double> h;
  std::vector<double> fixed_value;
  std::vector<int> fixed_gen;
  auto add_angle_row = [&](std::vector<Triplet>& t, int row, int bus,
                           double value) {
    if (theta_pos[bus] >= 0) {
      t.emplace_back(row, theta_pos[bus], value);
    }
  };
  for (const auto& br : grid.branches) {
    if (!br.in_service) {
      continue;
    }
    const double b = 1.0 / (br.x * br.tap);
    const double inj = -b * br.shift;
    // Injection into the network at f: b (th_f - th_t) + inj; at t the negative.
    add_angle_row(a_t, br.from, br.from, -b);
    add_angle_row(a_t, br.from, br.to, b);
    add_angle_row(a_t, br.to, br.from, b);
    add_angle_row(a_t, br.to, br.to, -b);
    rhs(br.from) += inj;
    rhs(br.to) -= inj;
    if (options.enforce_flow_limits && br.limited()) {
      const int r = static_cast<int>(h.size());
      add_angle_row(g_t, r, br.from, b);
      add_angle_row(g_t, r, br.to, -b);
      h.push_back(br.smax - inj);
      add_angle_row(g_t, r + 1, br.from, -b);
      add_angle_row(g_t, r + 1, br.to, b);
      h.push_back(br.smax + inj);
    }
  }
  int eq_rows = nb;
  for (int k = 0; k < ng; ++k) {
    const auto& gen = grid.gens[k];
    if (gen.pmax - gen.pmin < kFixedWidth) {
      a_t.emplace_back(eq_rows, k, 1.0);
      fixed_value.push_back(gen.pmax);
      ++eq_rows;
      continue;
    }
    const int r = static_cast<int>(h.size());
    g_t.emplace_back(r, k, 1.0);
    h.push_back(gen.pmax);
    g_t.emplace_back(r + 1, k, -1.0);
    h.push_back(-gen.pmin);
  }
  Eigen::VectorXd b_vec(eq_rows);
  b_vec.head(nb) = rhs;
  for (size_t i = 0; i < fixed_value.size(); ++i) {
    b_vec(nb + static_cast<int>(i)) = fixed_value[i];
  }

  SpMat a(eq_rows, n);
  a.setFromTriplets(a_t.begin(), a_t.end());
  SpMat g(static_cast<int>(h.size()), n);
  g.setFromTriplets(g_t.begin(), g_t.end());
  SpMat q(n, n);
  Eigen::VectorXd c = Eigen::VectorXd::Zero(n);
  std::vector<Triplet> q_t;
  Eigen::VectorXd start = Eigen::VectorXd::Zero(n);
  for (int k = 0; k < ng; ++k) {
    const auto& gen = grid.gens[k];
    q_t.emplace_back(k, k, 2.0 * gen.cost.c2);
    c(k) = gen.cost.c1;
    start(k) = 0.5 * (gen.pmin + gen.pmax);
  }
  q.setFromTriplets(q_t.begin(), q_t.end());
  const Eigen::VectorXd h_vec =
      Eigen::Map<const Eigen::VectorXd>(h.data(), static_cast<int>(h.size()));

  const QuadraticProblem qp(q, c, a, b_vec, g, h_vec, {}, {}, start);
  const NlpSolution sol = solve(qp, std::nullopt, options.nlp);
  out.iterations = sol.iterations;
  out.message = sol.message;
  out.pg = sol.u.head(ng);
  out.theta = Eigen::VectorXd::Zero(nb);
  for (int i = 0; i < nb; ++i) {
    if (theta_pos[i] >= 0) {
      out.theta(i) = sol.u(theta_pos[i]);
    }
  }
  out.flow = Eigen::VectorXd::Zero(grid.num_branches());
  for (int l = 0; l < grid.num_branches(); ++l) {
    const auto& br = grid.branches[l];
    if (br.in_service) {
      const double b = 1.0 / (br.x * br.tap);
      out.flow(l) = b * (out.theta(br.from) - out.theta(br.to) - br.shift);
    }
  }
  out.objective = 0.0;
  for (int k = 0; k < ng; ++k) {
    out.objective += grid.gens[k].cost(out.pg(k));
  }
  switch (sol.status) {
    case NlpStatus::optimal:
      out.status = DcStatus::optimal;
      break;
    case NlpStatus::infeasible:
      out.status = DcStatus::infeasible;
      break;
    default:
      out.status = DcStatus::error;
      if (out.message.empty()) {
        out.message = std::string(to_string(sol.status));
      }
      break;
  }
  return done();
}

}  // namespace opf_resid
