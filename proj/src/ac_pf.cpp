#include "opf_resid/ac_pf.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "opf_resid/error.hpp"
#include "opf_resid/power_equations.hpp"
#include "opf_resid/sparse_util.hpp"

namespace opf_resid {

std::vector<int> SetpointLayout::voltage_buses() const {
  std::vector<int> out = vg_buses;
  out.push_back(ref_bus);
  return out;
}

SetpointLayout SetpointLayout::from(const GridCase& grid) {
  SetpointLayout layout;
  layout.ref_bus = grid.reference_bus();
  std::set<int> buses;
  for (int g = 0; g < grid.num_gens(); ++g) {
    if (grid.gens[g].bus == layout.ref_bus) {
      layout.ref_gens.push_back(g);
    } else {
      layout.pg_gens.push_back(g);
      buses.insert(grid.gens[g].bus);
    }
  }
  layout.vg_buses.assign(buses.begin(), buses.end());
  return layout;
}

Eigen::VectorXd Setpoints::to_vector() const {
  Eigen::VectorXd y(pg.size() + vg.size() + 1);
  y << pg, vg, vref;
  return y;
}

Eigen::VectorXd Setpoints::voltages() const {
  Eigen::VectorXd v(vg.size() + 1);
  v << vg, vref;
  return v;
}

Setpoints Setpoints::from_vector(const SetpointLayout& layout,
                                 const Eigen::VectorXd& y) {
  if (y.size() != layout.size()) {
    throw ValidationError("setpoint vector has " + std::to_string(y.size()) +
                          " entries, expected " +
                          std::to_string(layout.size()));
  }
  Setpoints sp;
  sp.pg = y.head(layout.num_pg());
  sp.vg = y.segment(layout.num_pg(), layout.num_vg());
  sp.vref = y(y.size() - 1);
  return sp;
}

Setpoints Setpoints::from_case(const GridCase& grid,
                               const SetpointLayout& layout) {
  Setpoints sp;
  sp.pg.resize(layout.num_pg());
  for (int k = 0; k < layout.num_pg(); ++k) {
    sp.pg(k) = grid.gens[layout.pg_gens[k]].pg0;
  }
  const auto by_bus = grid.gens_by_bus();
  sp.vg.resize(layout.num_vg());
  for (int k = 0; k < layout.num_vg(); ++k) {
    sp.vg(k) = grid.gens[by_bus[layout.vg_buses[k]].front()].vg0;
  }
  sp.vref = layout.ref_gens.empty() ? grid.buses[layout.ref_bus].vm0
                                    : grid.gens[layout.ref_gens.front()].vg0;
  return sp;
}

PfIndexing PfIndexing::from(const GridCase& grid) {
  PfIndexing idx;
  const int n = grid.num_buses();
  idx.angle_pos.assign(n, -1);
  idx.magnitude_pos.assign(n, -1);
  for (int i = 0; i < n; ++i) {
    if (grid.buses[i].kind != BusKind::reference) {
      idx.angle_pos[i] = static_cast<int>(idx.angle_buses.size());
      idx.angle_buses.push_back(i);
    }
    if (grid.buses[i].kind == BusKind::load) {
      idx.magnitude_pos[i] = static_cast<int>(idx.magnitude_buses.size());
      idx.magnitude_buses.push_back(i);
    }
  }
  return idx;
}

void bus_injections(const GridCase& grid, const AdmittanceMatrix& y,
                    const Eigen::VectorXd& v, const Eigen::VectorXd& theta,
                    Eigen::VectorXd& p, Eigen::VectorXd& q) {
  const int n = grid.num_buses();
  p.resize(n);
  q.resize(n);
  for (int i = 0; i < n; ++i) {
    p(i) = grid.buses[i].gs * v(i) * v(i);
    q(i) = -grid.buses[i].bs * v(i) * v(i);
  }
  for (int k = 0; k < grid.num_branches(); ++k) {
    const auto& br = grid.branches[k];
    if (!br.in_service) {
      continue;
    }
    const auto& ya = y.branch[k];
    const int f = br.from;
    const int t = br.to;
    const auto ef = end_flow(v(f), v(t), theta(f) - theta(t), ya.yff, ya.yft, false);
    const auto et = end_flow(v(t), v(f), theta(t) - theta(f), ya.ytt, ya.ytf, false);
    p(f) += ef.p;
    q(f) += ef.q;
    p(t) += et.p;
    q(t) += et.q;
  }
}

namespace {

// Scheduled net injections given the setpoints (generation minus load).
void scheduled_injections(const GridCase& grid, const SetpointLayout& layout,
                          const Setpoints& sp, Eigen::VectorXd& p,
                          Eigen::VectorXd& q) {
  const int n = grid.num_buses();
  p.resize(n);
  q.resize(n);
  for (int i = 0; i < n; ++i) {
    p(i) = -grid.buses[i].pd;
    q(i) = -grid.buses[i].qd;
  }
  for (int k = 0; k < layout.num_pg(); ++k) {
    p(grid.gens[layout.pg_gens[k]].bus) += sp.pg(k);
  }
}

void check_setpoints(const SetpointLayout& layout, const Setpoints& sp) {
  if (sp.pg.size() != layout.num_pg() || sp.vg.size() != layout.num_vg()) {
    throw ValidationError("setpoints do not match the case: expected " +
                          std::to_string(layout.num_pg()) + " Pg and " +
                          std::to_string(layout.num_vg()) + " Vg entries");
  }
}

// Splits a bus total among units as lo_g + share_g (total - sum lo), with
// shares proportional to each unit's range width.
void distribute(double total, const std::vector<int>& units,
                const std::vector<double>& lo, const std::vector<double>& hi,
                Eigen::VectorXd& out) {
  if (units.empty()) {
    return;
  }
  if (units.size() == 1) {
    out(units.front()) = total;
    return;
  }
  double width = 0.0;
  double base = 0.0;
  for (int g : units) {
    width += hi[g] - lo[g];
    base += lo[g];
  }
  for (int g : units) {
    if (width > 0.0 && std::isfinite(width)) {
      out(g) = lo[g] + (total - base) * (hi[g] - lo[g]) / width;
    } else {
      out(g) = total / static_cast<double>(units.size());
    }
  }
}

}  // namespace

Eigen::VectorXd pf_mismatch(const GridCase& grid, const AdmittanceMatrix& y,
                            const Eigen::VectorXd& v,
                            const Eigen::VectorXd& theta, const Setpoints& sp) {
  const auto layout = SetpointLayout::from(grid);
  check_setpoints(layout, sp);
  const auto idx = PfIndexing::from(grid);
  Eigen::VectorXd p_calc, q_calc, p_sched, q_sched;
  bus_injections(grid, y, v, theta, p_calc, q_calc);
  scheduled_injections(grid, layout, sp, p_sched, q_sched);
  Eigen::VectorXd mis(idx.size());
  const int na = static_cast<int>(idx.angle_buses.size());
  for (int k = 0; k < na; ++k) {
    const int i = idx.angle_buses[k];
    mis(k) = p_sched(i) - p_calc(i);
  }
  for (size_t k = 0; k < idx.magnitude_buses.size(); ++k) {
    const int i = idx.magnitude_buses[k];
    mis(na + static_cast<int>(k)) = q_sched(i) - q_calc(i);
  }
  return mis;
}

Eigen::VectorXd pf_mismatch(const GridCase& grid, const Eigen::VectorXd& v,
                            const Eigen::VectorXd& theta, const Setpoints& sp) {
  return pf_mismatch(grid, build_admittance(grid), v, theta, sp);
}

Eigen::SparseMatrix<double> pf_jacobian(const GridCase& grid,
                                        const AdmittanceMatrix& y,
                                        const PfIndexing& idx,
                                        const Eigen::VectorXd& v,
                                        const Eigen::VectorXd& theta) {
  const int na = static_cast<int>(idx.angle_buses.size());
  const int m = idx.size();
  std::vector<Eigen::Triplet<double>> trips;
  trips.reserve(16 * grid.branches.size() + 2 * grid.buses.size());

  // Column of a (kind, bus) unknown; kind 0 = magnitude, 1 = angle.
  auto vcol = [&](int bus) {
    const int p = idx.magnitude_pos[bus];
    return p < 0 ? -1 : na + p;
  };
  auto tcol = [&](int bus) { return idx.angle_pos[bus]; };
  auto prow = [&](int bus) { return idx.angle_pos[bus]; };
  auto qrow = [&](int bus) {
    const int p = idx.magnitude_pos[bus];
    return p < 0 ? -1 : na + p;
  };
  auto add_end = [&](int a, int b, const EndFlow& e) {
    const int cols[4] = {vcol(a), vcol(b), tcol(a), tcol(b)};
    const int pr = prow(a);
    const int qr = qrow(a);
    for (int c = 0; c < 4; ++c) {
      if (cols[c] < 0) {
        continue;
      }
      if (pr >= 0) {
        trips.emplace_back(pr, cols[c], -e.dp[c]);
      }
      if (qr >= 0) {
        trips.emplace_back(qr, cols[c], -e.dq[c]);
      }
    }
  };

  for (int k = 0; k < grid.num_branches(); ++k) {
    const auto& br = grid.branches[k];
    if (!br.in_service) {
      continue;
    }
    const auto& ya = y.branch[k];
    const int f = br.from;
    const int t = br.to;
    add_end(f, t, end_flow(v(f), v(t), theta(f) - theta(t), ya.yff, ya.yft, false));
    add_end(t, f, end_flow(v(t), v(f), theta(t) - theta(f), ya.ytt, ya.ytf, false));
  }
  for (int i = 0; i < grid.num_buses(); ++i) {
    const int c = vcol(i);
    if (c < 0) {
      continue;
    }
    if (prow(i) >= 0) {
      trips.emplace_back(prow(i), c, -2.0 * grid.buses[i].gs * v(i));
    }
    trips.emplace_back(qrow(i), c, 2.0 * grid.buses[i].bs * v(i));
  }
  Eigen::SparseMatrix<double> jac(m, m);
  jac.setFromTriplets(trips.begin(), trips.end());
  return jac;
}

BranchFlows compute_branch_flows(const GridCase& grid,
                                 const AdmittanceMatrix& y,
                                 const Eigen::VectorXd& v,
                                 const Eigen::VectorXd& theta) {
  const int m = grid.num_branches();
  BranchFlows fl;
  fl.pf = fl.qf = fl.pt = fl.qt = fl.sf2 = fl.st2 = Eigen::VectorXd::Zero(m);
  for (int k = 0; k < m; ++k) {
    const auto& br = grid.branches[k];
    if (!br.in_service) {
      continue;
    }
    const auto& ya = y.branch[k];
    const int f = br.from;
    const int t = br.to;
    const auto ef = end_flow(v(f), v(t), theta(f) - theta(t), ya.yff, ya.yft, false);
    const auto et = end_flow(v(t), v(f), theta(t) - theta(f), ya.ytt, ya.ytf, false);
    fl.pf(k) = ef.p;
    fl.qf(k) = ef.q;
    fl.pt(k) = et.p;
    fl.qt(k) = et.q;
    fl.sf2(k) = ef.p * ef.p + ef.q * ef.q;
    fl.st2(k) = et.p * et.p + et.q * et.q;
  }
  return fl;
}

BranchFlows compute_branch_flows(const GridCase& grid, const Eigen::VectorXd& v,
                                 const Eigen::VectorXd& theta) {
  return compute_branch_flows(grid, build_admittance(grid), v, theta);
}

PfResult solve_pf(const GridCase& grid, const Setpoints& sp,
                  const PfOptions& options,
                  const std::optional<PfWarmStart>& warm) {
  return solve_pf(grid, build_admittance(grid), sp, options, warm);
}

PfResult solve_pf(const GridCase& grid, const AdmittanceMatrix& y,
                  const Setpoints& sp, const PfOptions& options,
                  const std::optional<PfWarmStart>& warm) {
  const auto layout = SetpointLayout::from(grid);
  check_setpoints(layout, sp);
  const auto idx = PfIndexing::from(grid);
  const int n = grid.num_buses();
  const int na = static_cast<int>(idx.angle_buses.size());

  PfResult res;
  if (warm) {
    res.v = warm->v;
    res.theta = warm->theta;
  } else {
    res.v = Eigen::VectorXd::Ones(n);
    res.theta = Eigen::VectorXd::Zero(n);
  }
  for (int k = 0; k < layout.num_vg(); ++k) {
    res.v(layout.vg_buses[k]) = sp.vg(k);
  }
  res.v(layout.ref_bus) = sp.vref;
  res.theta(layout.ref_bus) = 0.0;

  SparseLu lu;
  bool analyzed = false;
  Eigen::SparseMatrix<double> jac;
  for (int iter = 0;; ++iter) {
    const Eigen::VectorXd mis = pf_mismatch(grid, y, res.v, res.theta, sp);
    const double norm = mis.size() ? mis.cwiseAbs().maxCoeff() : 0.0;
    res.max_mismatch = norm;
    res.residual_history.push_back(norm);
    res.iterations = iter;
    if (!std::isfinite(norm)) {
      res.converged = false;
      break;
    }
    if (norm <= options.tol) {
      res.converged = true;
      break;
    }
    if (iter >= options.max_iter) {
      res.converged = false;
      break;
    }
    jac = pf_jacobian(grid, y, idx, res.v, res.theta);
    jac.makeCompressed();
    if (!analyzed) {
      lu.analyzePattern(jac);
      analyzed = true;
    }
    lu.factorize(jac);
    if (lu.info() != Eigen::Success) {
      throw SolverError("singular power-flow Jacobian at iteration " +
                        std::to_string(iter));
    }
    const Eigen::VectorXd dx = lu.solve(-mis);
    for (int k = 0; k < na; ++k) {
      res.theta(idx.angle_buses[k]) += dx(k);
    }
    for (size_t k = 0; k < idx.magnitude_buses.size(); ++k) {
      res.v(idx.magnitude_buses[k]) += dx(na + static_cast<int>(k));
    }
  }

  if (options.estimate_condition && res.converged && idx.size() > 0) {
    jac = pf_jacobian(grid, y, idx, res.v, res.theta);
    jac.makeCompressed();
    SparseLu lu2;
    lu2.compute(jac);
    res.jacobian_rcond =
        lu2.info() == Eigen::Success ? reciprocal_condition(jac, lu2) : 0.0;
  }

  // Recover generator outputs and branch flows.
  Eigen::VectorXd p, q;
  bus_injections(grid, y, res.v, res.theta, p, q);
  res.pg_all = Eigen::VectorXd::Zero(grid.num_gens());
  res.qg_all = Eigen::VectorXd::Zero(grid.num_gens());
  for (int k = 0; k < layout.num_pg(); ++k) {
    res.pg_all(layout.pg_gens[k]) = sp.pg(k);
  }
  std::vector<double> pmin, pmax, qmin, qmax;
  for (const auto& g : grid.gens) {
    pmin.push_back(g.pmin);
    pmax.push_back(g.pmax);
    qmin.push_back(g.qmin);
    qmax.push_back(g.qmax);
  }
  const int ref = layout.ref_bus;
  distribute(p(ref) + grid.buses[ref].pd, layout.ref_gens, pmin, pmax,
             res.pg_all);
  const auto by_bus = grid.gens_by_bus();
  for (int i = 0; i < n; ++i) {
    if (!by_bus[i].empty()) {
      distribute(q(i) + grid.buses[i].qd, by_bus[i], qmin, qmax, res.qg_all);
    }
  }
  res.flows = compute_branch_flows(grid, y, res.v, res.theta);
  return res;
}

}  // namespace opf_resid
