#include "opf_resid/evalkit.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <iomanip>
#include <limits>
#include <sstream>

#include "opf_resid/dc_opf.hpp"
#include "opf_resid/error.hpp"
#include "opf_resid/sparse_util.hpp"

namespace opf_resid {

using Eigen::VectorXd;

namespace {

using Clock = std::chrono::steady_clock;

double elapsed(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

double median(std::vector<double> v) {
  if (v.empty()) {
    return 0.0;
  }
  std::sort(v.begin(), v.end());
  const size_t m = v.size() / 2;
  return v.size() % 2 == 1 ? v[m] : 0.5 * (v[m - 1] + v[m]);
}

GroupStats stats(const VectorXd& l) {
  GroupStats g;
  g.count = static_cast<int>(l.size());
  if (l.size() > 0) {
    g.max = l.maxCoeff();
    g.mean = l.mean();
  }
  return g;
}

/// Largest nodal power mismatch of a full state.
double balance_mismatch(const GridCase& grid, const VectorXd& pg_all,
                        const VectorXd& qg_all, const VectorXd& v,
                        const VectorXd& theta) {
  const AdmittanceMatrix y = build_admittance(grid);
  VectorXd p, q;
  bus_injections(grid, y, v, theta, p, q);
  for (int i = 0; i < grid.num_buses(); ++i) {
    p(i) += grid.buses[i].pd;
    q(i) += grid.buses[i].qd;
  }
  for (int k = 0; k < grid.num_gens(); ++k) {
    p(grid.gens[k].bus) -= pg_all(k);
    q(grid.gens[k].bus) -= qg_all(k);
  }
  return std::max(p.cwiseAbs().maxCoeff(), q.cwiseAbs().maxCoeff());
}

Aggregate aggregate(const std::vector<const GroupStats*>& groups) {
  Aggregate a;
  if (groups.empty()) {
    return a;
  }
  for (const GroupStats* g : groups) {
    a.max_of_max = std::max(a.max_of_max, g->max);
    a.mean_of_max += g->max;
    a.mean_of_mean += g->mean;
  }
  a.mean_of_max /= static_cast<double>(groups.size());
  a.mean_of_mean /= static_cast<double>(groups.size());
  return a;
}

void summarize(EvalSummary& s) {
  s.samples = static_cast<int>(s.per_sample.size());
  std::vector<const GroupStats*> p, q, v, s2, c;
  std::vector<double> times, base_times, gaps;
  for (const auto& e : s.per_sample) {
    if (!e.ok) {
      ++s.failures;
      continue;
    }
    p.push_back(&e.violation.p_gr);
    q.push_back(&e.violation.q_gr);
    v.push_back(&e.violation.v);
    s2.push_back(&e.violation.s2);
    c.push_back(&e.violation.combined);
    s.max_balance_mismatch = std::max(s.max_balance_mismatch, e.balance_mismatch);
    times.push_back(e.seconds);
    if (std::isfinite(e.gap)) {
      gaps.push_back(e.gap);
      base_times.push_back(e.baseline_seconds);
    }
  }
  s.p_gr = aggregate(p);
  s.q_gr = aggregate(q);
  s.v = aggregate(v);
  s.s2 = aggregate(s2);
  s.combined = aggregate(c);
  if (!gaps.empty()) {
    s.max_gap = -std::numeric_limits<double>::infinity();
    for (double g : gaps) {
      s.mean_gap += g;
      s.max_gap = std::max(s.max_gap, g);
    }
    s.mean_gap /= static_cast<double>(gaps.size());
  } else {
    s.mean_gap = s.max_gap = std::numeric_limits<double>::quiet_NaN();
  }
  s.median_seconds = median(times);
  s.median_baseline_seconds = median(base_times);
  s.time_ratio = s.median_seconds > 0.0
                     ? s.median_baseline_seconds / s.median_seconds
                     : 0.0;
}

std::vector<Baseline> baselines_or_solve(const GridCase& grid,
                                         const std::vector<Sample>& samples,
                                         const EvalOptions& options,
                                         const std::vector<Baseline>* given) {
  if (given) {
    if (given->size() != samples.size()) {
      throw ValidationError("baseline count does not match the samples");
    }
    return *given;
  }
  return solve_baselines(grid, samples, options);
}

nlohmann::json group_json(const GroupStats& g) {
  return {{"max", g.max}, {"mean", g.mean}, {"count", g.count}};
}

nlohmann::json aggregate_json(const Aggregate& a) {
  return {{"max_of_max", a.max_of_max},
          {"mean_of_max", a.mean_of_max},
          {"mean_of_mean", a.mean_of_mean}};
}

nlohmann::json number_or_null(double x) {
  return std::isfinite(x) ? nlohmann::json(x) : nlohmann::json(nullptr);
}

}  // namespace

Violation violation(const VectorXd& values, const VectorXd& lower,
                    const VectorXd& upper) {
  if (values.size() != lower.size() || values.size() != upper.size()) {
    throw ValidationError("violation: values and bounds differ in length");
  }
  Violation out;
  out.l = (values - upper).cwiseMax(0.0) + (lower - values).cwiseMax(0.0);
  if (out.l.size() > 0) {
    out.max = out.l.maxCoeff();
    out.mean = out.l.mean();
  }
  return out;
}

ViolationReport state_violation(const GridCase& grid, const VectorXd& pg_all,
                                const VectorXd& qg_all, const VectorXd& v,
                                const BranchFlows& flows) {
  const int ng = grid.num_gens();
  const int nb = grid.num_buses();
  VectorXd plo(ng), phi(ng), qlo(ng), qhi(ng);
  for (int k = 0; k < ng; ++k) {
    plo(k) = grid.gens[k].pmin;
    phi(k) = grid.gens[k].pmax;
    qlo(k) = grid.gens[k].qmin;
    qhi(k) = grid.gens[k].qmax;
  }
  VectorXd vlo(nb), vhi(nb);
  for (int i = 0; i < nb; ++i) {
    vlo(i) = grid.buses[i].vmin;
    vhi(i) = grid.buses[i].vmax;
  }
  std::vector<double> s2, s2max;
  for (int l = 0; l < grid.num_branches(); ++l) {
    const auto& br = grid.branches[l];
    if (!br.in_service || !br.limited()) {
      continue;
    }
    for (double s : {flows.sf2(l), flows.st2(l)}) {
      s2.push_back(s);
      s2max.push_back(br.smax * br.smax);
    }
  }
  const Eigen::Index ns = static_cast<Eigen::Index>(s2.size());
  const VectorXd s2v = Eigen::Map<const VectorXd>(s2.data(), ns);
  const VectorXd s2hi = Eigen::Map<const VectorXd>(s2max.data(), ns);
  const VectorXd s2lo = VectorXd::Constant(ns, -std::numeric_limits<double>::infinity());

  const Violation lp = violation(pg_all, plo, phi);
  const Violation lq = violation(qg_all, qlo, qhi);
  const Violation lv = violation(v, vlo, vhi);
  const Violation ls = violation(s2v, s2lo, s2hi);
  ViolationReport r;
  r.p_gr = stats(lp.l);
  r.q_gr = stats(lq.l);
  r.v = stats(lv.l);
  r.s2 = stats(ls.l);
  VectorXd all(lp.l.size() + lq.l.size() + lv.l.size() + ls.l.size());
  all << lp.l, lq.l, lv.l, ls.l;
  r.combined = stats(all);
  return r;
}

double optimality_gap(double cost, double reference_cost) {
  if (!(reference_cost > 0.0)) {
    throw ValidationError("optimality gap needs a positive reference cost");
  }
  return 100.0 * (cost - reference_cost) / reference_cost;
}

double dispatch_cost(const GridCase& grid, const VectorXd& pg_all) {
  double c = 0.0;
  for (int k = 0; k < grid.num_gens(); ++k) {
    c += grid.gens[k].cost(pg_all(k));
  }
  return c;
}

std::vector<Baseline> solve_baselines(const GridCase& grid,
                                      const std::vector<Sample>& samples,
                                      const EvalOptions& options) {
  std::vector<Baseline> out(samples.size());
  const int repeats = std::max(1, options.timing_repeats);
  parallel_for(static_cast<int>(samples.size()), options.threads, [&](int i) {
    const GridCase g = apply_sample(grid, samples[i]);
    std::vector<double> times;
    SolvedModel model;
    for (int r = 0; r < repeats; ++r) {
      const auto t0 = Clock::now();
      model = solve_acopf(g, options.restoration.nlp);
      times.push_back(elapsed(t0));
      if (model.nlp.status != NlpStatus::optimal) {
        break;
      }
    }
    out[i].ok = model.nlp.status == NlpStatus::optimal;
    out[i].cost = model.opf.cost;
    out[i].seconds = median(times);
  });
  return out;
}

EvalSummary evaluate_restoration_mode(const GridCase& grid,
                                      const MlpParams& params,
                                      const std::vector<Sample>& samples,
                                      const EvalOptions& options,
                                      const std::vector<Baseline>* baselines) {
  const SetpointLayout layout = SetpointLayout::from(grid);
  check_compatible(params, grid, layout);
  const OutputBounds bounds = OutputBounds::from(grid, layout);
  const std::vector<Baseline> base =
      baselines_or_solve(grid, samples, options, baselines);
  const int repeats = std::max(1, options.timing_repeats);
  EvalSummary s;
  s.mode = "restoration";
  s.per_sample.resize(samples.size());
  parallel_for(static_cast<int>(samples.size()), options.threads, [&](int i) {
    SampleEval& e = s.per_sample[i];
    e.sample_id = samples[i].id;
    const GridCase g = apply_sample(grid, samples[i]);
    const VectorXd input = sample_input(samples[i], layout);
    const VectorXd pg_dc = sample_pg_dc(samples[i], layout);
    std::vector<double> times;
    OpfSolution opf;
    for (int r = 0; r < repeats; ++r) {
      const auto t0 = Clock::now();
      const NetOutput fwd = forward(params, bounds, input, pg_dc);
      const AcOpfProblem problem = build_restoration(g, fwd.y, options.weights);
      const NlpSolution sol = solve_restoration_problem(problem, options.restoration);
      times.push_back(elapsed(t0));
      opf = extract_solution(problem, sol);
      if (sol.status != NlpStatus::optimal) {
        break;
      }
    }
    e.seconds = median(times);
    if (opf.status != NlpStatus::optimal) {
      e.failure = "restoration " + std::string(to_string(opf.status));
      return;
    }
    const BranchFlows flows = compute_branch_flows(g, opf.v, opf.theta);
    e.violation = state_violation(g, opf.pg, opf.qg, opf.v, flows);
    e.balance_mismatch = balance_mismatch(g, opf.pg, opf.qg, opf.v, opf.theta);
    e.cost = opf.cost;
    e.gap = base[i].ok ? optimality_gap(e.cost, base[i].cost)
                       : std::numeric_limits<double>::quiet_NaN();
    e.baseline_seconds = base[i].seconds;
    e.ok = true;
  });
  summarize(s);
  return s;
}

PfModeResult run_pf_mode(const GridCase& sample_grid, const MlpParams& params,
                         const VectorXd& input, const VectorXd& pg_dc,
                         const PfOptions& options) {
  const SetpointLayout layout = SetpointLayout::from(sample_grid);
  const OutputBounds bounds = OutputBounds::from(sample_grid, layout);
  PfModeResult out;
  out.y = forward(params, bounds, input, pg_dc).y;
  out.pf = solve_pf(sample_grid, out.y, options);
  if (out.pf.converged) {
    out.violation = state_violation(sample_grid, out.pf.pg_all, out.pf.qg_all,
                                    out.pf.v, out.pf.flows);
    out.cost = dispatch_cost(sample_grid, out.pf.pg_all);
  }
  return out;
}

EvalSummary evaluate_pf_mode(const GridCase& grid, const MlpParams& params,
                             const std::vector<Sample>& samples,
                             const EvalOptions& options,
                             const std::vector<Baseline>* baselines) {
  const SetpointLayout layout = SetpointLayout::from(grid);
  check_compatible(params, grid, layout);
  const std::vector<Baseline> base =
      baselines_or_solve(grid, samples, options, baselines);
  const int repeats = std::max(1, options.timing_repeats);
  EvalSummary s;
  s.mode = "pf";
  s.per_sample.resize(samples.size());
  parallel_for(static_cast<int>(samples.size()), options.threads, [&](int i) {
    SampleEval& e = s.per_sample[i];
    e.sample_id = samples[i].id;
    const GridCase g = apply_sample(grid, samples[i]);
    const VectorXd input = sample_input(samples[i], layout);
    const VectorXd pg_dc = sample_pg_dc(samples[i], layout);
    std::vector<double> times;
    PfModeResult res;
    try {
      for (int r = 0; r < repeats; ++r) {
        const auto t0 = Clock::now();
        res = run_pf_mode(g, params, input, pg_dc, options.pf);
        times.push_back(elapsed(t0));
      }
    } catch (const SolverError& err) {
      e.failure = err.what();
      return;
    }
    e.seconds = median(times);
    if (!res.pf.converged) {
      e.failure = "power flow did not converge";
      return;
    }
    e.violation = res.violation;
    e.balance_mismatch = res.pf.max_mismatch;
    e.cost = res.cost;
    e.gap = base[i].ok ? optimality_gap(e.cost, base[i].cost)
                       : std::numeric_limits<double>::quiet_NaN();
    e.baseline_seconds = base[i].seconds;
    e.ok = true;
  });
  summarize(s);
  return s;
}

ClosestFeasible closest_feasible(const GridCase& grid, const Setpoints& y,
                                 const RestorationOptions& options) {
  ClosestFeasible out;
  out.solution = solve_restoration(grid, y, Weights::closest_feasible(), options).opf;
  if (out.solution.status != NlpStatus::optimal) {
    return out;
  }
  const VectorXd dp = y.pg - out.solution.y.pg;
  const VectorXd dv = y.voltages() - out.solution.y.voltages();
  out.pg_distance = dp.norm();
  out.v_distance = dv.norm();
  out.mean_abs_pg = dp.size() > 0 ? dp.cwiseAbs().mean() : 0.0;
  out.mean_abs_v = dv.cwiseAbs().mean();
  return out;
}

ContingencyReport contingency_sweep(const GridCase& grid, const MlpParams& params,
                                    const std::vector<Sample>& samples,
                                    const std::vector<int>& branches,
                                    const ContingencyOptions& options) {
  const SetpointLayout layout = SetpointLayout::from(grid);
  check_compatible(params, grid, layout);
  for (int b : branches) {
    if (b < 0 || b >= grid.num_branches()) {
      throw ValidationError("contingency: branch index " + std::to_string(b) +
                            " out of range");
    }
  }
  ContingencyReport rep;
  PfOptions pf = options.pf;
  pf.estimate_condition = true;

  const int ns = static_cast<int>(samples.size());
  std::vector<double> base(ns, 0.0);
  std::vector<char> base_ok(ns, 0);
  parallel_for(ns, options.threads, [&](int i) {
    try {
      const PfModeResult r = run_pf_mode(apply_sample(grid, samples[i]), params,
                                         sample_input(samples[i], layout),
                                         sample_pg_dc(samples[i], layout), pf);
      if (r.pf.converged) {
        base[i] = r.violation.combined.mean;
        base_ok[i] = 1;
      }
    } catch (const SolverError&) {
    }
  });
  int nbase = 0;
  for (int i = 0; i < ns; ++i) {
    if (base_ok[i]) {
      rep.baseline_mean_violation += base[i];
      ++nbase;
    }
  }
  rep.baseline_mean_violation =
      nbase > 0 ? rep.baseline_mean_violation / nbase
                : std::numeric_limits<double>::quiet_NaN();

  const int no = static_cast<int>(branches.size());
  rep.outages.resize(no);
  std::vector<std::vector<double>> pair_viol(no);
  parallel_for(no, options.threads, [&](int k) {
    OutageResult& o = rep.outages[k];
    o.branch = branches[k];
    if (!grid.branches[o.branch].in_service) {
      return;
    }
    const GridCase outaged = apply_branch_outage(grid, o.branch);
    if (!is_connected(outaged)) {
      o.islanding = true;
      return;
    }
    for (const Sample& base_sample : samples) {
      Sample s = base_sample;
      s.outage.reset();
      GridCase g = apply_sample(outaged, s);
      const DcOpfSolution dc = solve_dc_opf(g);
      if (dc.status != DcStatus::optimal) {
        ++o.dc_excluded;
        continue;
      }
      s.pg_dc = dc.pg;
      PfModeResult r;
      try {
        r = run_pf_mode(g, params, sample_input(s, layout),
                        sample_pg_dc(s, layout), pf);
      } catch (const SolverError&) {
        ++o.pf_excluded;
        continue;
      }
      if (!r.pf.converged) {
        ++o.pf_excluded;
        continue;
      }
      if (!(r.pf.jacobian_rcond >= options.min_rcond)) {
        ++o.cond_excluded;
        continue;
      }
      ++o.valid;
      pair_viol[k].push_back(r.violation.combined.mean);
      o.max_violation = std::max(o.max_violation, r.violation.combined.max);
    }
    o.retained = o.valid > 0;
    if (o.valid > 0) {
      for (double x : pair_viol[k]) {
        o.mean_violation += x;
      }
      o.mean_violation /= o.valid;
    }
  });

  int retained = 0, pairs = 0, considered = 0;
  for (int k = 0; k < no; ++k) {
    const auto& o = rep.outages[k];
    if (!grid.branches[o.branch].in_service) {
      continue;
    }
    ++considered;
    rep.islanding += o.islanding ? 1 : 0;
    retained += o.retained ? 1 : 0;
    for (double x : pair_viol[k]) {
      rep.mean_violation += x;
      ++pairs;
    }
    rep.max_violation = std::max(rep.max_violation, o.max_violation);
  }
  rep.mean_violation = pairs > 0 ? rep.mean_violation / pairs
                                 : std::numeric_limits<double>::quiet_NaN();
  rep.outage_retention =
      considered > 0 ? static_cast<double>(retained) / considered : 0.0;
  rep.pair_retention =
      considered > 0 && ns > 0
          ? static_cast<double>(pairs) / (static_cast<double>(considered) * ns)
          : 0.0;
  return rep;
}

nlohmann::json to_json(const ViolationReport& r) {
  return {{"p_gr", group_json(r.p_gr)},
          {"q_gr", group_json(r.q_gr)},
          {"v", group_json(r.v)},
          {"s2", group_json(r.s2)},
          {"combined", group_json(r.combined)}};
}

nlohmann::json to_json(const EvalSummary& s, bool include_samples) {
  nlohmann::json j = {
      {"mode", s.mode},
      {"samples", s.samples},
      {"failures", s.failures},
      {"violation",
       {{"p_gr", aggregate_json(s.p_gr)},
        {"q_gr", aggregate_json(s.q_gr)},
        {"v", aggregate_json(s.v)},
        {"s2", aggregate_json(s.s2)},
        {"combined", aggregate_json(s.combined)}}},
      {"max_balance_mismatch", s.max_balance_mismatch},
      {"gap_percent", {{"mean", number_or_null(s.mean_gap)},
                       {"max", number_or_null(s.max_gap)}}},
      {"timing",
       {{"median_seconds", s.median_seconds},
        {"median_baseline_seconds", s.median_baseline_seconds},
        {"ratio", s.time_ratio}}}};
  if (include_samples) {
    nlohmann::json per = nlohmann::json::array();
    for (const auto& e : s.per_sample) {
      nlohmann::json row = {{"id", e.sample_id}, {"ok", e.ok}};
      if (e.ok) {
        row["violation"] = to_json(e.violation);
        row["balance_mismatch"] = e.balance_mismatch;
        row["cost"] = e.cost;
        row["gap_percent"] = number_or_null(e.gap);
        row["seconds"] = e.seconds;
        row["baseline_seconds"] = e.baseline_seconds;
      } else {
        row["failure"] = e.failure;
      }
      per.push_back(std::move(row));
    }
    j["per_sample"] = std::move(per);
  }
  return j;
}

nlohmann::json to_json(const ContingencyReport& r) {
  nlohmann::json outages = nlohmann::json::array();
  for (const auto& o : r.outages) {
    outages.push_back({{"branch", o.branch},
                       {"islanding", o.islanding},
                       {"retained", o.retained},
                       {"valid", o.valid},
                       {"dc_excluded", o.dc_excluded},
                       {"pf_excluded", o.pf_excluded},
                       {"cond_excluded", o.cond_excluded},
                       {"mean_violation", o.mean_violation},
                       {"max_violation", o.max_violation}});
  }
  return {{"baseline_mean_violation", number_or_null(r.baseline_mean_violation)},
          {"mean_violation", number_or_null(r.mean_violation)},
          {"max_violation", r.max_violation},
          {"outage_retention", r.outage_retention},
          {"pair_retention", r.pair_retention},
          {"islanding", r.islanding},
          {"outages", std::move(outages)}};
}

std::string format_table(const EvalSummary& s) {
  std::ostringstream out;
  out << "mode: " << s.mode << "  samples: " << s.samples
      << "  failures: " << s.failures << '\n';
  out << std::left << std::setw(10) << "group" << std::right << std::setw(14)
      << "max(max)" << std::setw(14) << "mean(max)" << std::setw(14)
      << "mean(mean)" << '\n';
  const std::pair<const char*, const Aggregate*> rows[] = {
      {"P_gr", &s.p_gr}, {"Q_gr", &s.q_gr}, {"V", &s.v},
      {"S^2", &s.s2},    {"v", &s.combined}};
  out << std::scientific << std::setprecision(3);
  for (const auto& [name, a] : rows) {
    out << std::left << std::setw(10) << name << std::right << std::setw(14)
        << a->max_of_max << std::setw(14) << a->mean_of_max << std::setw(14)
        << a->mean_of_mean << '\n';
  }
  out << std::fixed << std::setprecision(4);
  out << "C_gap mean " << s.mean_gap << " %, max " << s.max_gap << " %\n";
  out << std::setprecision(5) << "T_comp median " << s.median_seconds
      << " s, baseline " << s.median_baseline_seconds << " s, ratio "
      << std::setprecision(2) << s.time_ratio << '\n';
  return out.str();
}

}  // namespace opf_resid
