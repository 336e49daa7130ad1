#include "opf_resid/acopf_models.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>

#include "opf_resid/error.hpp"
#include "opf_resid/power_equations.hpp"

namespace opf_resid {

namespace {

constexpr double kFixedWidth = 1e-9;

using Triplet = Eigen::Triplet<double>;

struct Ends {
  EndFlow from;
  EndFlow to;
  std::array<int, 4> from_vars;  ///< Vf, Vt, th_f, th_t (-1 if fixed)
  std::array<int, 4> to_vars;    ///< Vt, Vf, th_t, th_f
};

}  // namespace

void Weights::validate() const {
  if (!(wp >= 0.0) || !(wv >= 0.0) || !(wo >= 0.0)) {
    throw ValidationError("weights must be non-negative");
  }
  if (wp == 0.0 && wv == 0.0 && wo == 0.0) {
    throw ValidationError("weights must not all be zero");
  }
}

AcIndex AcIndex::from(const GridCase& grid) {
  AcIndex ix;
  ix.nb = grid.num_buses();
  ix.ng = grid.num_gens();
  ix.branch_pos.assign(grid.num_branches(), -1);
  for (int l = 0; l < grid.num_branches(); ++l) {
    if (grid.branches[l].in_service) {
      ix.branch_pos[l] = static_cast<int>(ix.active.size());
      ix.active.push_back(l);
    }
  }
  ix.na = static_cast<int>(ix.active.size());
  ix.pg = 0;
  ix.qg = ix.pg + ix.ng;
  ix.v = ix.qg + ix.ng;
  ix.theta = ix.v + ix.nb;
  ix.theta_var.assign(ix.nb, -1);
  const int ref = grid.reference_bus();
  int next = ix.theta;
  for (int i = 0; i < ix.nb; ++i) {
    if (i != ref) {
      ix.theta_var[i] = next++;
    }
  }
  ix.pf = next;
  ix.qf = ix.pf + ix.na;
  ix.pt = ix.qf + ix.na;
  ix.qt = ix.pt + ix.na;
  ix.sf = ix.qt + ix.na;
  ix.st = ix.sf + ix.na;
  ix.num_vars = ix.st + ix.na;
  return ix;
}

AcOpfProblem::AcOpfProblem(GridCase grid, Weights weights,
                           std::optional<Setpoints> target, ParamKind params)
    : grid_(std::move(grid)),
      weights_(weights),
      target_(std::move(target)),
      params_(params) {
  weights_.validate();
  grid_.validate();
  layout_ = SetpointLayout::from(grid_);
  index_ = AcIndex::from(grid_);
  for (const int l : index_.active) {
    adm_.push_back(branch_admittance(grid_.branches[l]));
  }
  pg_target_.assign(index_.ng, -1);
  v_target_.assign(index_.nb, -1);
  if (target_) {
    if (target_->pg.size() != layout_.num_pg() ||
        target_->vg.size() != layout_.num_vg()) {
      throw ValidationError("setpoint dimensions do not match the case");
    }
    target_pg_ = target_->pg;
    target_v_ = target_->voltages();
    for (int j = 0; j < layout_.num_pg(); ++j) {
      pg_target_[layout_.pg_gens[j]] = j;
    }
    const auto vb = layout_.voltage_buses();
    for (size_t j = 0; j < vb.size(); ++j) {
      v_target_[vb[j]] = static_cast<int>(j);
    }
  } else if (params_ == ParamKind::setpoints) {
    throw ValidationError("setpoint parameters need target setpoints");
  }

  for (int i = 0; i < index_.nb; ++i) {
    add_box(index_.v + i, grid_.buses[i].vmin, grid_.buses[i].vmax);
  }
  for (int k = 0; k < index_.ng; ++k) {
    const auto& gen = grid_.gens[k];
    add_box(index_.pg + k, gen.pmin, gen.pmax);
    add_box(index_.qg + k, gen.qmin, gen.qmax);
  }
  for (int a = 0; a < index_.na; ++a) {
    const auto& br = grid_.branches[index_.active[a]];
    if (br.limited()) {
      const double cap = br.smax * br.smax;
      ineq_var_.push_back(index_.sf + a);
      ineq_bound_.push_back(cap);
      ineq_sign_.push_back(1.0);
      ineq_var_.push_back(index_.st + a);
      ineq_bound_.push_back(cap);
      ineq_sign_.push_back(1.0);
    }
  }
  eq_flow_ = 2 * index_.nb;
  eq_s_ = eq_flow_ + 4 * index_.na;
  eq_fixed_ = eq_s_ + 2 * index_.na;
  num_eq_ = eq_fixed_ + static_cast<int>(fixed_var_.size());
}

void AcOpfProblem::add_box(int var, double lo, double hi) {
  if (std::isfinite(lo) && std::isfinite(hi) && hi - lo < kFixedWidth) {
    fixed_var_.push_back(var);
    fixed_value_.push_back(0.5 * (lo + hi));
    return;
  }
  if (std::isfinite(hi)) {
    ineq_var_.push_back(var);
    ineq_bound_.push_back(hi);
    ineq_sign_.push_back(1.0);
  }
  if (std::isfinite(lo)) {
    ineq_var_.push_back(var);
    ineq_bound_.push_back(lo);
    ineq_sign_.push_back(-1.0);
  }
}

int AcOpfProblem::num_params() const {
  switch (params_) {
    case ParamKind::none:
      return 0;
    case ParamKind::load:
      return 2 * index_.nb;
    case ParamKind::setpoints:
      return layout_.size();
  }
  return 0;
}

namespace {

double angle(const AcIndex& ix, const VectorXd& u, int bus) {
  const int var = ix.theta_var[bus];
  return var < 0 ? 0.0 : u(var);
}

Ends branch_ends(const AcIndex& ix, const GridCase& grid,
                 const BranchAdmittance& y, int branch, const VectorXd& u,
                 bool hessian) {
  const auto& br = grid.branches[branch];
  const double vf = u(ix.v + br.from);
  const double vt = u(ix.v + br.to);
  const double tf = angle(ix, u, br.from);
  const double tt = angle(ix, u, br.to);
  Ends e;
  e.from = end_flow(vf, vt, tf - tt, y.yff, y.yft, hessian);
  e.to = end_flow(vt, vf, tt - tf, y.ytt, y.ytf, hessian);
  e.from_vars = {ix.v + br.from, ix.v + br.to, ix.theta_var[br.from],
                 ix.theta_var[br.to]};
  e.to_vars = {ix.v + br.to, ix.v + br.from, ix.theta_var[br.to],
               ix.theta_var[br.from]};
  return e;
}

}  // namespace

VectorXd AcOpfProblem::point_from_state(const VectorXd& pg, const VectorXd& qg,
                                        const VectorXd& v,
                                        const VectorXd& theta) const {
  const auto& ix = index_;
  VectorXd u = VectorXd::Zero(ix.num_vars);
  u.segment(ix.pg, ix.ng) = pg;
  u.segment(ix.qg, ix.ng) = qg;
  u.segment(ix.v, ix.nb) = v;
  const double ref_angle = theta(grid_.reference_bus());
  for (int i = 0; i < ix.nb; ++i) {
    if (ix.theta_var[i] >= 0) {
      u(ix.theta_var[i]) = theta(i) - ref_angle;
    }
  }
  for (int a = 0; a < ix.na; ++a) {
    const Ends e = branch_ends(ix, grid_, adm_[a], ix.active[a], u, false);
    u(ix.pf + a) = e.from.p;
    u(ix.qf + a) = e.from.q;
    u(ix.pt + a) = e.to.p;
    u(ix.qt + a) = e.to.q;
    u(ix.sf + a) = e.from.p * e.from.p + e.from.q * e.from.q;
    u(ix.st + a) = e.to.p * e.to.p + e.to.q * e.to.q;
  }
  return u;
}

VectorXd AcOpfProblem::initial_point() const {
  const auto& ix = index_;
  VectorXd pg(ix.ng);
  VectorXd qg(ix.ng);
  for (int k = 0; k < ix.ng; ++k) {
    const auto& gen = grid_.gens[k];
    pg(k) = 0.5 * (gen.pmin + gen.pmax);
    qg(k) = 0.5 * (gen.qmin + gen.qmax);
  }
  VectorXd v(ix.nb);
  for (int i = 0; i < ix.nb; ++i) {
    v(i) = std::clamp(1.0, grid_.buses[i].vmin, grid_.buses[i].vmax);
  }
  return point_from_state(pg, qg, v, VectorXd::Zero(ix.nb));
}

double AcOpfProblem::generation_cost(const VectorXd& u) const {
  double c = 0.0;
  for (int k = 0; k < index_.ng; ++k) {
    c += grid_.gens[k].cost(u(index_.pg + k));
  }
  return c;
}

double AcOpfProblem::objective(const VectorXd& u) const {
  double f = weights_.wo == 0.0 ? 0.0 : weights_.wo * generation_cost(u);
  if (target_) {
    for (int k = 0; k < index_.ng; ++k) {
      if (pg_target_[k] >= 0) {
        const double d = u(index_.pg + k) - target_pg_(pg_target_[k]);
        f += weights_.wp * d * d;
      }
    }
    for (int i = 0; i < index_.nb; ++i) {
      if (v_target_[i] >= 0) {
        const double d = u(index_.v + i) - target_v_(v_target_[i]);
        f += weights_.wv * d * d;
      }
    }
  }
  return f;
}

VectorXd AcOpfProblem::gradient(const VectorXd& u) const {
  VectorXd g = VectorXd::Zero(index_.num_vars);
  for (int k = 0; k < index_.ng; ++k) {
    const double p = u(index_.pg + k);
    g(index_.pg + k) = weights_.wo * grid_.gens[k].cost.derivative(p);
    if (target_ && pg_target_[k] >= 0) {
      g(index_.pg + k) += 2.0 * weights_.wp * (p - target_pg_(pg_target_[k]));
    }
  }
  if (target_) {
    for (int i = 0; i < index_.nb; ++i) {
      if (v_target_[i] >= 0) {
        g(index_.v + i) =
            2.0 * weights_.wv * (u(index_.v + i) - target_v_(v_target_[i]));
      }
    }
  }
  return g;
}

VectorXd AcOpfProblem::eq_constraints(const VectorXd& u) const {
  const auto& ix = index_;
  VectorXd r = VectorXd::Zero(num_eq_);
  for (int i = 0; i < ix.nb; ++i) {
    const auto& bus = grid_.buses[i];
    const double v2 = u(ix.v + i) * u(ix.v + i);
    r(i) = -bus.pd - bus.gs * v2;
    r(ix.nb + i) = -bus.qd + bus.bs * v2;
  }
  for (int k = 0; k < ix.ng; ++k) {
    const int bus = grid_.gens[k].bus;
    r(bus) += u(ix.pg + k);
    r(ix.nb + bus) += u(ix.qg + k);
  }
  for (int a = 0; a < ix.na; ++a) {
    const auto& br = grid_.branches[ix.active[a]];
    r(br.from) -= u(ix.pf + a);
    r(ix.nb + br.from) -= u(ix.qf + a);
    r(br.to) -= u(ix.pt + a);
    r(ix.nb + br.to) -= u(ix.qt + a);
    const Ends e = branch_ends(ix, grid_, adm_[a], ix.active[a], u, false);
    const int row = eq_flow_ + 4 * a;
    r(row) = u(ix.pf + a) - e.from.p;
    r(row + 1) = u(ix.qf + a) - e.from.q;
    r(row + 2) = u(ix.pt + a) - e.to.p;
    r(row + 3) = u(ix.qt + a) - e.to.q;
    const double pf = u(ix.pf + a);
    const double qf = u(ix.qf + a);
    const double pt = u(ix.pt + a);
    const double qt = u(ix.qt + a);
    r(eq_s_ + 2 * a) = u(ix.sf + a) - pf * pf - qf * qf;
    r(eq_s_ + 2 * a + 1) = u(ix.st + a) - pt * pt - qt * qt;
  }
  for (size_t j = 0; j < fixed_var_.size(); ++j) {
    r(eq_fixed_ + static_cast<int>(j)) = u(fixed_var_[j]) - fixed_value_[j];
  }
  return r;
}

VectorXd AcOpfProblem::ineq_constraints(const VectorXd& u) const {
  VectorXd g(num_ineq());
  for (int j = 0; j < num_ineq(); ++j) {
    g(j) = ineq_sign_[j] * (u(ineq_var_[j]) - ineq_bound_[j]);
  }
  return g;
}

SpMat AcOpfProblem::eq_jacobian(const VectorXd& u) const {
  const auto& ix = index_;
  std::vector<Triplet> t;
  t.reserve(4 * ix.nb + 2 * ix.ng + 30 * ix.na + fixed_var_.size());
  for (int i = 0; i < ix.nb; ++i) {
    const auto& bus = grid_.buses[i];
    const double v = u(ix.v + i);
    t.emplace_back(i, ix.v + i, -2.0 * bus.gs * v);
    t.emplace_back(ix.nb + i, ix.v + i, 2.0 * bus.bs * v);
  }
  for (int k = 0; k < ix.ng; ++k) {
    const int bus = grid_.gens[k].bus;
    t.emplace_back(bus, ix.pg + k, 1.0);
    t.emplace_back(ix.nb + bus, ix.qg + k, 1.0);
  }
  for (int a = 0; a < ix.na; ++a) {
    const auto& br = grid_.branches[ix.active[a]];
    t.emplace_back(br.from, ix.pf + a, -1.0);
    t.emplace_back(ix.nb + br.from, ix.qf + a, -1.0);
    t.emplace_back(br.to, ix.pt + a, -1.0);
    t.emplace_back(ix.nb + br.to, ix.qt + a, -1.0);
    const Ends e = branch_ends(ix, grid_, adm_[a], ix.active[a], u, false);
    const int row = eq_flow_ + 4 * a;
    t.emplace_back(row, ix.pf + a, 1.0);
    t.emplace_back(row + 1, ix.qf + a, 1.0);
    t.emplace_back(row + 2, ix.pt + a, 1.0);
    t.emplace_back(row + 3, ix.qt + a, 1.0);
    for (int j = 0; j < 4; ++j) {
      if (e.from_vars[j] >= 0) {
        t.emplace_back(row, e.from_vars[j], -e.from.dp[j]);
        t.emplace_back(row + 1, e.from_vars[j], -e.from.dq[j]);
      }
      if (e.to_vars[j] >= 0) {
        t.emplace_back(row + 2, e.to_vars[j], -e.to.dp[j]);
        t.emplace_back(row + 3, e.to_vars[j], -e.to.dq[j]);
      }
    }
    const int srow = eq_s_ + 2 * a;
    t.emplace_back(srow, ix.sf + a, 1.0);
    t.emplace_back(srow, ix.pf + a, -2.0 * u(ix.pf + a));
    t.emplace_back(srow, ix.qf + a, -2.0 * u(ix.qf + a));
    t.emplace_back(srow + 1, ix.st + a, 1.0);
    t.emplace_back(srow + 1, ix.pt + a, -2.0 * u(ix.pt + a));
    t.emplace_back(srow + 1, ix.qt + a, -2.0 * u(ix.qt + a));
  }
  for (size_t j = 0; j < fixed_var_.size(); ++j) {
    t.emplace_back(eq_fixed_ + static_cast<int>(j), fixed_var_[j], 1.0);
  }
  SpMat jac(num_eq_, ix.num_vars);
  jac.setFromTriplets(t.begin(), t.end());
  return jac;
}

SpMat AcOpfProblem::ineq_jacobian(const VectorXd&) const {
  std::vector<Triplet> t;
  t.reserve(ineq_var_.size());
  for (int j = 0; j < num_ineq(); ++j) {
    t.emplace_back(j, ineq_var_[j], ineq_sign_[j]);
  }
  SpMat jac(num_ineq(), index_.num_vars);
  jac.setFromTriplets(t.begin(), t.end());
  return jac;
}

SpMat AcOpfProblem::lagrangian_hessian(const VectorXd& u, double obj_factor,
                                       const VectorXd& lam_eq,
                                       const VectorXd&) const {
  const auto& ix = index_;
  std::vector<Triplet> t;
  t.reserve(ix.ng + 2 * ix.nb + 50 * ix.na);
  auto lower = [&](int r, int c, double value) {
    if (r >= c) {
      t.emplace_back(r, c, value);
    } else {
      t.emplace_back(c, r, value);
    }
  };
  for (int k = 0; k < ix.ng; ++k) {
    double h = 2.0 * weights_.wo * grid_.gens[k].cost.c2;
    if (target_ && pg_target_[k] >= 0) {
      h += 2.0 * weights_.wp;
    }
    t.emplace_back(ix.pg + k, ix.pg + k, obj_factor * h);
  }
  for (int i = 0; i < ix.nb; ++i) {
    const auto& bus = grid_.buses[i];
    double h = -2.0 * bus.gs * lam_eq(i) + 2.0 * bus.bs * lam_eq(ix.nb + i);
    if (target_ && v_target_[i] >= 0) {
      h += obj_factor * 2.0 * weights_.wv;
    }
    t.emplace_back(ix.v + i, ix.v + i, h);
  }
  for (int a = 0; a < ix.na; ++a) {
    const Ends e = branch_ends(ix, grid_, adm_[a], ix.active[a], u, true);
    const int row = eq_flow_ + 4 * a;
    const double lp_f = lam_eq(row);
    const double lq_f = lam_eq(row + 1);
    const double lp_t = lam_eq(row + 2);
    const double lq_t = lam_eq(row + 3);
    for (int j = 0; j < 4; ++j) {
      for (int k = 0; k <= j; ++k) {
        if (e.from_vars[j] >= 0 && e.from_vars[k] >= 0) {
          lower(e.from_vars[j], e.from_vars[k],
                -lp_f * e.from.hp[j][k] - lq_f * e.from.hq[j][k]);
        }
        if (e.to_vars[j] >= 0 && e.to_vars[k] >= 0) {
          lower(e.to_vars[j], e.to_vars[k],
                -lp_t * e.to.hp[j][k] - lq_t * e.to.hq[j][k]);
        }
      }
    }
    const double ls_f = lam_eq(eq_s_ + 2 * a);
    const double ls_t = lam_eq(eq_s_ + 2 * a + 1);
    t.emplace_back(ix.pf + a, ix.pf + a, -2.0 * ls_f);
    t.emplace_back(ix.qf + a, ix.qf + a, -2.0 * ls_f);
    t.emplace_back(ix.pt + a, ix.pt + a, -2.0 * ls_t);
    t.emplace_back(ix.qt + a, ix.qt + a, -2.0 * ls_t);
  }
  SpMat h(ix.num_vars, ix.num_vars);
  h.setFromTriplets(t.begin(), t.end());
  return h;
}

SpMat AcOpfProblem::gradient_param_jacobian(const VectorXd&) const {
  SpMat m(index_.num_vars, num_params());
  if (params_ != ParamKind::setpoints) {
    return m;
  }
  std::vector<Triplet> t;
  for (int k = 0; k < index_.ng; ++k) {
    if (pg_target_[k] >= 0) {
      t.emplace_back(index_.pg + k, pg_target_[k], -2.0 * weights_.wp);
    }
  }
  for (int i = 0; i < index_.nb; ++i) {
    if (v_target_[i] >= 0) {
      t.emplace_back(index_.v + i, layout_.num_pg() + v_target_[i],
                     -2.0 * weights_.wv);
    }
  }
  m.setFromTriplets(t.begin(), t.end());
  return m;
}

SpMat AcOpfProblem::eq_param_jacobian(const VectorXd&) const {
  SpMat m(num_eq_, num_params());
  if (params_ != ParamKind::load) {
    return m;
  }
  std::vector<Triplet> t;
  for (int i = 0; i < index_.nb; ++i) {
    t.emplace_back(i, i, -1.0);
    t.emplace_back(index_.nb + i, index_.nb + i, -1.0);
  }
  m.setFromTriplets(t.begin(), t.end());
  return m;
}

AcOpfProblem build_acopf(const GridCase& grid, ParamKind params) {
  if (params == ParamKind::setpoints) {
    throw ValidationError("the AC-OPF model has no setpoint parameters");
  }
  return AcOpfProblem(grid, Weights::cost_only(), std::nullopt, params);
}

AcOpfProblem build_restoration(const GridCase& grid, const Setpoints& y,
                               const Weights& weights) {
  return AcOpfProblem(grid, weights, y, ParamKind::setpoints);
}

OpfSolution extract_solution(const AcOpfProblem& problem, const NlpSolution& sol) {
  const auto& ix = problem.index();
  const auto& grid = problem.grid();
  const auto& u = sol.u;
  OpfSolution out;
  out.pg = u.segment(ix.pg, ix.ng);
  out.qg = u.segment(ix.qg, ix.ng);
  out.v = u.segment(ix.v, ix.nb);
  out.theta = VectorXd::Zero(ix.nb);
  for (int i = 0; i < ix.nb; ++i) {
    if (ix.theta_var[i] >= 0) {
      out.theta(i) = u(ix.theta_var[i]);
    }
  }
  const int nl = grid.num_branches();
  for (auto* vec : {&out.flows.pf, &out.flows.qf, &out.flows.pt, &out.flows.qt,
                    &out.flows.sf2, &out.flows.st2}) {
    *vec = VectorXd::Zero(nl);
  }
  for (int a = 0; a < ix.na; ++a) {
    const int l = ix.active[a];
    out.flows.pf(l) = u(ix.pf + a);
    out.flows.qf(l) = u(ix.qf + a);
    out.flows.pt(l) = u(ix.pt + a);
    out.flows.qt(l) = u(ix.qt + a);
    out.flows.sf2(l) = u(ix.sf + a);
    out.flows.st2(l) = u(ix.st + a);
  }
  const auto& layout = problem.layout();
  out.y.pg.resize(layout.num_pg());
  for (int j = 0; j < layout.num_pg(); ++j) {
    out.y.pg(j) = out.pg(layout.pg_gens[j]);
  }
  out.y.vg.resize(layout.num_vg());
  for (int j = 0; j < layout.num_vg(); ++j) {
    out.y.vg(j) = out.v(layout.vg_buses[j]);
  }
  out.y.vref = out.v(layout.ref_bus);
  out.cost = problem.generation_cost(u);
  out.objective = sol.objective;
  out.status = sol.status;
  out.iterations = sol.iterations;
  out.kkt_residual = sol.kkt_residual;
  out.seconds = sol.seconds;
  out.message = sol.message;
  return out;
}

std::optional<VectorXd> pf_warm_start(const AcOpfProblem& problem) {
  if (!problem.target()) {
    return std::nullopt;
  }
  try {
    const PfResult pf = solve_pf(problem.grid(), *problem.target());
    if (!pf.converged) {
      return std::nullopt;
    }
    return problem.point_from_state(pf.pg_all, pf.qg_all, pf.v, pf.theta);
  } catch (const SolverError&) {
    return std::nullopt;
  }
}

SolvedModel solve_acopf(const GridCase& grid, const NlpOptions& options) {
  const AcOpfProblem problem = build_acopf(grid);
  SolvedModel out;
  out.nlp = solve(problem, std::nullopt, options);
  out.opf = extract_solution(problem, out.nlp);
  return out;
}

NlpSolution solve_restoration_problem(const AcOpfProblem& problem,
                                      const RestorationOptions& options) {
  const auto t0 = std::chrono::steady_clock::now();
  std::optional<VectorXd> start;
  if (options.pf_warm_start) {
    start = pf_warm_start(problem);
  }
  NlpSolution sol;
  if (start) {
    NlpOptions warm = options.nlp;
    warm.mu_init = options.warm_mu_init;
    sol = solve(problem, start, warm);
  }
  if (!start || (options.flat_retry && sol.status != NlpStatus::optimal)) {
    sol = solve(problem, std::nullopt, options.nlp);
  }
  sol.seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
          .count();
  return sol;
}

SolvedModel solve_restoration(const GridCase& grid, const Setpoints& y,
                              const Weights& weights,
                              const RestorationOptions& options) {
  const AcOpfProblem problem = build_restoration(grid, y, weights);
  SolvedModel out;
  out.nlp = solve_restoration_problem(problem, options);
  out.opf = extract_solution(problem, out.nlp);
  return out;
}

}  // namespace opf_resid
