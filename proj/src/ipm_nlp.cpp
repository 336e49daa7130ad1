#include "opf_resid/ipm_nlp.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <limits>
#include <random>
#include <vector>

#include <Eigen/SparseCholesky>
#include <Eigen/SparseLU>

#include "opf_resid/error.hpp"

namespace opf_resid {

SpMat NlpProblem::gradient_param_jacobian(const VectorXd&) const {
  return SpMat(num_vars(), num_params());
}

SpMat NlpProblem::constraint_param_hessian(const VectorXd&, const VectorXd&,
                                           const VectorXd&) const {
  return SpMat(num_vars(), num_params());
}

SpMat NlpProblem::eq_param_jacobian(const VectorXd&) const {
  return SpMat(num_eq(), num_params());
}

SpMat NlpProblem::ineq_param_jacobian(const VectorXd&) const {
  return SpMat(num_ineq(), num_params());
}

std::string_view to_string(NlpStatus status) {
  switch (status) {
    case NlpStatus::optimal:
      return "optimal";
    case NlpStatus::max_iter:
      return "max_iter";
    case NlpStatus::infeasible:
      return "infeasible";
    case NlpStatus::error:
      return "error";
  }
  return "unknown";
}

SpMat symmetric_from_lower(const SpMat& lower) {
  SpMat full = lower.selfadjointView<Eigen::Lower>();
  return full;
}

namespace {

constexpr double kScaleMax = 100.0;

double inf_norm(const VectorXd& v) {
  return v.size() ? v.cwiseAbs().maxCoeff() : 0.0;
}

// IPOPT-style scaling of stationarity and complementarity errors so that
// large multipliers do not make the test unreachable.
struct ErrorScales {
  double dual = 1.0;
  double comp = 1.0;
};

ErrorScales error_scales(const VectorXd& lam, const VectorXd& nu) {
  const double m = static_cast<double>(lam.size() + nu.size());
  ErrorScales sc;
  if (m > 0) {
    sc.dual = std::max(kScaleMax, (lam.lpNorm<1>() + nu.lpNorm<1>()) / m) /
              kScaleMax;
  }
  if (nu.size() > 0) {
    sc.comp = std::max(kScaleMax, nu.lpNorm<1>() / static_cast<double>(nu.size())) /
              kScaleMax;
  }
  return sc;
}

// Fixed-pattern LDL' of the reduced KKT matrix with inertia bookkeeping.
class ReducedKkt {
 public:
  bool factorize(const SpMat& k_lower, int expected_pos, int expected_neg,
                 bool& singular) {
    if (!analyzed_ || !same_pattern(k_lower)) {
      ldlt_.analyzePattern(k_lower);
      outer_.assign(k_lower.outerIndexPtr(),
                    k_lower.outerIndexPtr() + k_lower.outerSize() + 1);
      inner_.assign(k_lower.innerIndexPtr(),
                    k_lower.innerIndexPtr() + k_lower.nonZeros());
      analyzed_ = true;
    }
    ldlt_.factorize(k_lower);
    singular = false;
    if (ldlt_.info() != Eigen::Success) {
      singular = true;
      return false;
    }
    const VectorXd d = ldlt_.vectorD();
    int pos = 0;
    int neg = 0;
    for (Eigen::Index i = 0; i < d.size(); ++i) {
      if (!std::isfinite(d(i))) {
        singular = true;
        return false;
      }
      if (d(i) > 0.0) {
        ++pos;
      } else if (d(i) < 0.0) {
        ++neg;
      }
    }
    if (pos + neg < d.size()) {
      singular = true;
    }
    return pos == expected_pos && neg == expected_neg;
  }

  /// LDL' solve with iterative refinement; falls back to a pivoted LU when
  /// the unpivoted factorization turns out to be unstable.
  VectorXd solve(const SpMat& k_lower, const VectorXd& rhs) {
    const SpMat k = symmetric_from_lower(k_lower);
    double k_norm = 0.0;
    for (int c = 0; c < k.outerSize(); ++c) {
      double sum = 0.0;
      for (SpMat::InnerIterator it(k, c); it; ++it) {
        sum += std::abs(it.value());
      }
      k_norm = std::max(k_norm, sum);
    }
    auto backward_error = [&](const VectorXd& x, const VectorXd& r) {
      const double denom = k_norm * inf_norm(x) + inf_norm(rhs);
      return denom > 0.0 ? inf_norm(r) / denom : 0.0;
    };
    constexpr double kAccept = 1e-12;
    VectorXd x = ldlt_.solve(rhs);
    VectorXd r = rhs - k * x;
    for (int it = 0; it < 3 && x.allFinite() && backward_error(x, r) > kAccept;
         ++it) {
      x += ldlt_.solve(r);
      r = rhs - k * x;
    }
    if (x.allFinite() && backward_error(x, r) <= 1e-9) {
      return x;
    }
    Eigen::SparseLU<SpMat, Eigen::COLAMDOrdering<int>> lu;
    lu.compute(k);
    if (lu.info() != Eigen::Success) {
      return x;
    }
    VectorXd y = lu.solve(rhs);
    r = rhs - k * y;
    if (y.allFinite() && backward_error(y, r) > kAccept) {
      y += lu.solve(r);
    }
    return y.allFinite() ? y : x;
  }

 private:
  bool same_pattern(const SpMat& m) const {
    if (static_cast<size_t>(m.outerSize() + 1) != outer_.size() ||
        static_cast<size_t>(m.nonZeros()) != inner_.size()) {
      return false;
    }
    return std::equal(outer_.begin(), outer_.end(), m.outerIndexPtr()) &&
           std::equal(inner_.begin(), inner_.end(), m.innerIndexPtr());
  }

  Eigen::SimplicialLDLT<SpMat, Eigen::Lower> ldlt_;
  bool analyzed_ = false;
  std::vector<SpMat::StorageIndex> outer_;
  std::vector<SpMat::StorageIndex> inner_;
};

struct Point {
  VectorXd u;
  double f = 0.0;
  VectorXd grad;
  VectorXd ce;
  VectorXd gi;
  SpMat je;
  SpMat ji;
};

bool evaluate_values(const NlpProblem& prob, Point& p) {
  p.f = prob.objective(p.u);
  p.ce = prob.eq_constraints(p.u);
  p.gi = prob.ineq_constraints(p.u);
  return std::isfinite(p.f) && p.ce.allFinite() && p.gi.allFinite();
}

bool evaluate_derivatives(const NlpProblem& prob, Point& p) {
  p.grad = prob.gradient(p.u);
  p.je = prob.eq_jacobian(p.u);
  p.ji = prob.ineq_jacobian(p.u);
  p.je.makeCompressed();
  p.ji.makeCompressed();
  return p.grad.allFinite();
}

struct Direction {
  VectorXd du;
  VectorXd dlam;
  VectorXd ds;
  VectorXd dz;
};

}  // namespace

NlpSolution solve(const NlpProblem& prob, const std::optional<VectorXd>& start,
                  const NlpOptions& opt) {
  using clock = std::chrono::steady_clock;
  const auto t0 = clock::now();
  const int n = prob.num_vars();
  const int me = prob.num_eq();
  const int mi = prob.num_ineq();

  NlpSolution sol;
  Point cur;
  cur.u = start ? *start : prob.initial_point();
  if (cur.u.size() != n) {
    throw ValidationError("start point has " + std::to_string(cur.u.size()) +
                          " entries, problem has " + std::to_string(n));
  }

  auto finish = [&](NlpStatus status, std::string message) {
    sol.status = status;
    sol.message = std::move(message);
    sol.seconds = std::chrono::duration<double>(clock::now() - t0).count();
    return sol;
  };

  if (!evaluate_values(prob, cur) || !evaluate_derivatives(prob, cur)) {
    sol.u = cur.u;
    return finish(NlpStatus::error, "non-finite value at the start point");
  }

  double scale = 1.0;
  if (opt.scale_objective) {
    const double gmax = inf_norm(cur.grad);
    if (gmax > opt.max_gradient) {
      scale = opt.max_gradient / gmax;
    }
  }

  VectorXd s(mi);
  for (int i = 0; i < mi; ++i) {
    s(i) = std::max(-cur.gi(i), opt.slack_floor);
  }
  // The floor must sit below the tolerance or complementarity cannot pass.
  const double mu_min =
      std::min(opt.mu_min, opt.kkt_tol / (opt.barrier_tol_factor + 1.0));
  double mu = std::max(opt.mu_init, mu_min);
  VectorXd z = mu * s.cwiseInverse();
  VectorXd lam = VectorXd::Zero(me);
  double rho = 1.0;
  double delta_w_last = 0.0;
  ReducedKkt kkt;

  auto store = [&]() {
    sol.u = cur.u;
    sol.s = s;
    sol.lambda.resize(me + mi);
    sol.lambda << lam / scale, z / scale;
    sol.nu = z / scale;
    sol.objective = cur.f;
    sol.mu = mu;
    sol.objective_scale = scale;
  };

  // Optimality error of the barrier problem for a given mu (mu = 0 gives the
  // overall KKT error).
  auto kkt_error = [&](double target_mu) {
    const VectorXd ru = scale * cur.grad + cur.je.transpose() * lam +
                        cur.ji.transpose() * z;
    const auto sc = error_scales(lam, z);
    const double stat = inf_norm(ru) / sc.dual;
    const double feas = std::max(inf_norm(cur.ce), inf_norm(cur.gi + s));
    double comp = 0.0;
    for (int i = 0; i < mi; ++i) {
      comp = std::max(comp, std::abs(s(i) * z(i) - target_mu));
    }
    return std::max({stat, feas, comp / sc.comp});
  };

  auto merit = [&](double f, const VectorXd& sv, const VectorXd& ce,
                   const VectorXd& gi) {
    double barrier = 0.0;
    for (int i = 0; i < mi; ++i) {
      barrier += std::log(sv(i));
    }
    return scale * f - mu * barrier +
           rho * (ce.lpNorm<1>() + (gi + sv).lpNorm<1>());
  };

  double last_dw = 0.0;
  double last_alpha = 0.0;
  double last_alpha_d = 0.0;
  int iter = 0;
  for (;; ++iter) {
    sol.iterations = iter;
    const double e0 = kkt_error(0.0);
    if (opt.verbose) {
      const VectorXd ru = scale * cur.grad + cur.je.transpose() * lam +
                          cur.ji.transpose() * z;
      std::fprintf(stderr,
                   "ipm %3d  f=% .10e  err=%.3e  stat=%.2e  feas=%.2e  "
                   "mu=%.1e  |lam|=%.1e  |z|=%.1e  dw=%.1e  a=%.2e/%.2e\n",
                   iter, cur.f, e0, inf_norm(ru),
                   std::max(inf_norm(cur.ce), inf_norm(cur.gi + s)), mu,
                   inf_norm(lam), inf_norm(z), last_dw, last_alpha,
                   last_alpha_d);
    }
    if (e0 <= opt.kkt_tol) {
      store();
      sol.kkt_residual = e0;
      return finish(NlpStatus::optimal, "");
    }
    if (iter >= opt.max_iter) {
      store();
      sol.kkt_residual = e0;
      const double feas = std::max(inf_norm(cur.ce), inf_norm(cur.gi + s));
      return finish(feas > 1e-4 ? NlpStatus::infeasible : NlpStatus::max_iter,
                    "iteration limit reached");
    }
    while (mu > mu_min && kkt_error(mu) <= opt.barrier_tol_factor * mu) {
      mu = std::max(mu_min, opt.mu_factor * mu);
    }

    // Reduced system  [W + Jg' S Jg + dw I, Jc'; Jc, -dc I].
    const SpMat w = prob.lagrangian_hessian(cur.u, scale, lam, z);
    const VectorXd sigma = z.cwiseQuotient(s);
    SpMat jts = cur.ji.transpose() * (sigma.asDiagonal() * cur.ji);
    auto assemble = [&](double dw, double dc) {
      std::vector<Eigen::Triplet<double>> t;
      t.reserve(w.nonZeros() + jts.nonZeros() + cur.je.nonZeros() + n + me);
      for (int c = 0; c < w.outerSize(); ++c) {
        for (SpMat::InnerIterator it(w, c); it; ++it) {
          if (it.row() >= it.col()) {
            t.emplace_back(it.row(), it.col(), it.value());
          }
        }
      }
      for (int c = 0; c < jts.outerSize(); ++c) {
        for (SpMat::InnerIterator it(jts, c); it; ++it) {
          if (it.row() >= it.col()) {
            t.emplace_back(it.row(), it.col(), it.value());
          }
        }
      }
      for (int c = 0; c < cur.je.outerSize(); ++c) {
        for (SpMat::InnerIterator it(cur.je, c); it; ++it) {
          t.emplace_back(n + it.row(), it.col(), it.value());
        }
      }
      for (int i = 0; i < n; ++i) {
        t.emplace_back(i, i, dw);
      }
      for (int i = 0; i < me; ++i) {
        t.emplace_back(n + i, n + i, -dc);
      }
      SpMat k(n + me, n + me);
      k.setFromTriplets(t.begin(), t.end());
      k.makeCompressed();
      return k;
    };

    double dw = 0.0;
    double dc = 0.0;
    bool singular = false;
    SpMat k_current;
    auto factor = [&](double w_, double c_) {
      k_current = assemble(w_, c_);
      return kkt.factorize(k_current, n, me, singular);
    };
    bool ok = factor(dw, dc);
    if (!ok && me > 0) {
      // Wrong inertia with an unperturbed constraint block usually means a
      // (nearly) dependent Jacobian.
      dc = 1e-8 * std::pow(mu, 0.25);
      ok = factor(dw, dc);
    }
    if (!ok) {
      dw = delta_w_last == 0.0 ? 1e-4 : std::max(1e-20, delta_w_last / 3.0);
      while (true) {
        ok = factor(dw, dc);
        if (ok) {
          break;
        }
        dw *= delta_w_last == 0.0 ? 100.0 : 8.0;
        if (dw > 1e40) {
          store();
          sol.kkt_residual = e0;
          return finish(NlpStatus::error, "inertia correction failed");
        }
      }
      delta_w_last = dw;
    }

    const VectorXd grad_s = scale * cur.grad;
    auto direction = [&](const VectorXd& ce_rhs, const VectorXd& ri_rhs) {
      // ri_rhs plays the role of g + s in the slack rows.
      const VectorXd ru = grad_s + cur.je.transpose() * lam +
                          cur.ji.transpose() * z;
      VectorXd tmp(mi);
      for (int i = 0; i < mi; ++i) {
        tmp(i) = sigma(i) * ri_rhs(i) - z(i) + mu / s(i);
      }
      VectorXd rhs(n + me);
      rhs.head(n) = -ru - cur.ji.transpose() * tmp;
      rhs.tail(me) = -ce_rhs;
      const VectorXd sol_vec = kkt.solve(k_current, rhs);
      Direction d;
      d.du = sol_vec.head(n);
      d.dlam = sol_vec.tail(me);
      const VectorXd jdu = cur.ji * d.du;
      d.ds = -ri_rhs - jdu;
      d.dz.resize(mi);
      for (int i = 0; i < mi; ++i) {
        d.dz(i) = sigma(i) * (jdu(i) + ri_rhs(i)) - z(i) + mu / s(i);
      }
      return d;
    };
    auto max_step = [&](const VectorXd& x, const VectorXd& dx) {
      double a = 1.0;
      for (Eigen::Index i = 0; i < x.size(); ++i) {
        if (dx(i) < 0.0) {
          a = std::min(a, -opt.tau * x(i) / dx(i));
        }
      }
      return a;
    };

    const VectorXd ri = cur.gi + s;
    const Direction d = direction(cur.ce, ri);
    if (!d.du.allFinite() || !d.dz.allFinite()) {
      store();
      sol.kkt_residual = e0;
      return finish(NlpStatus::error, "non-finite Newton direction");
    }
    const double alpha_p_max = max_step(s, d.ds);
    const double alpha_d_max = max_step(z, d.dz);

    // l1 merit penalty update.
    const double cnorm = cur.ce.lpNorm<1>() + ri.lpNorm<1>();
    double dphi_f = grad_s.dot(d.du);
    for (int i = 0; i < mi; ++i) {
      dphi_f -= mu * d.ds(i) / s(i);
    }
    if (cnorm > 0.0) {
      const VectorXd wdu = w.selfadjointView<Eigen::Lower>() * d.du;
      double quad = d.du.dot(wdu) + dw * d.du.squaredNorm();
      for (int i = 0; i < mi; ++i) {
        quad += sigma(i) * d.ds(i) * d.ds(i);
      }
      const double rho_trial =
          (dphi_f + 0.5 * std::max(0.0, quad)) / ((1.0 - 0.1) * cnorm);
      if (rho < rho_trial) {
        rho = 1.1 * rho_trial;
      }
    }
    const double dphi = dphi_f - rho * cnorm;
    const double phi0 = merit(cur.f, s, cur.ce, cur.gi);
    const double noise = 10.0 * std::numeric_limits<double>::epsilon() *
                         std::max(1.0, std::abs(phi0));

    Point trial;
    VectorXd s_trial;
    double alpha = alpha_p_max;
    bool accepted = false;
    Direction used = d;
    for (int bt = 0; bt <= opt.max_backtracks; ++bt) {
      trial.u = cur.u + alpha * d.du;
      s_trial = s + alpha * d.ds;
      if (evaluate_values(prob, trial)) {
        const double phi = merit(trial.f, s_trial, trial.ce, trial.gi);
        if (std::isfinite(phi) &&
            phi <= phi0 + opt.armijo * alpha * dphi + noise) {
          accepted = true;
          break;
        }
        if (bt == 0 && alpha == alpha_p_max && cnorm >= 0.0) {
          // Second-order correction against the Maratos effect.
          const VectorXd ce_soc = alpha * cur.ce + trial.ce;
          const VectorXd ri_soc = alpha * ri + (trial.gi + s_trial);
          const Direction dsoc = direction(ce_soc, ri_soc);
          const double a_soc = max_step(s, dsoc.ds);
          Point soc;
          soc.u = cur.u + a_soc * dsoc.du;
          const VectorXd s_soc = s + a_soc * dsoc.ds;
          if (dsoc.du.allFinite() && evaluate_values(prob, soc)) {
            const double phi_soc = merit(soc.f, s_soc, soc.ce, soc.gi);
            if (std::isfinite(phi_soc) &&
                phi_soc <= phi0 + opt.armijo * alpha * dphi + noise) {
              trial = std::move(soc);
              s_trial = s_soc;
              used = dsoc;
              alpha = a_soc;
              accepted = true;
              break;
            }
          }
        }
      }
      alpha *= 0.5;
    }
    if (!accepted) {
      store();
      sol.kkt_residual = e0;
      return finish(NlpStatus::error, "line search failed");
    }

    const double alpha_d = std::min(alpha_d_max, max_step(z, used.dz));
    last_dw = dw;
    last_alpha = alpha;
    last_alpha_d = alpha_d;
    cur.u = std::move(trial.u);
    cur.f = trial.f;
    cur.ce = std::move(trial.ce);
    cur.gi = std::move(trial.gi);
    s = s_trial;
    lam += alpha * used.dlam;
    z += alpha_d * used.dz;
    constexpr double kappa_sigma = 1e10;
    for (int i = 0; i < mi; ++i) {
      const double base = mu / s(i);
      z(i) = std::clamp(z(i), base / kappa_sigma, base * kappa_sigma);
    }
    if (!evaluate_derivatives(prob, cur)) {
      store();
      sol.kkt_residual = e0;
      return finish(NlpStatus::error, "non-finite derivative");
    }
  }
}

double kkt_residual(const NlpProblem& prob, const NlpSolution& c) {
  const int me = prob.num_eq();
  const int mi = prob.num_ineq();
  const double scale = c.objective_scale;
  const VectorXd lam_e = scale * c.lambda.head(me);
  const VectorXd lam_i = scale * c.lambda.tail(mi);
  const VectorXd nu = scale * c.nu;
  const VectorXd ru = scale * prob.gradient(c.u) +
                      prob.eq_jacobian(c.u).transpose() * lam_e +
                      prob.ineq_jacobian(c.u).transpose() * lam_i;
  const auto sc = error_scales(lam_e, nu);
  const double stat = std::max(inf_norm(ru), inf_norm(lam_i - nu)) / sc.dual;
  const double feas = std::max(inf_norm(prob.eq_constraints(c.u)),
                               inf_norm(prob.ineq_constraints(c.u) + c.s));
  const double comp = inf_norm(c.s.cwiseProduct(nu)) / sc.comp;
  double bound = 0.0;
  for (int i = 0; i < mi; ++i) {
    bound = std::max({bound, -c.s(i), -nu(i)});
  }
  return std::max({stat, feas, comp, bound});
}

QuadraticProblem::QuadraticProblem(SpMat q_lower, VectorXd c, SpMat a,
                                   VectorXd b, SpMat g, VectorXd h,
                                   SpMat p_matrix, VectorXd params,
                                   VectorXd start)
    : q_lower_(std::move(q_lower)),
      c_(std::move(c)),
      a_(std::move(a)),
      b_(std::move(b)),
      g_(std::move(g)),
      h_(std::move(h)),
      p_(std::move(p_matrix)),
      params_(std::move(params)),
      start_(std::move(start)) {
  const auto n = c_.size();
  if (a_.rows() == 0) {
    a_.resize(0, n);
  }
  if (g_.rows() == 0) {
    g_.resize(0, n);
  }
  if (p_.rows() == 0) {
    p_.resize(n, params_.size());
  }
  if (q_lower_.rows() != n || a_.cols() != n || g_.cols() != n ||
      a_.rows() != b_.size() || g_.rows() != h_.size() || p_.rows() != n ||
      p_.cols() != params_.size()) {
    throw ValidationError("QuadraticProblem: inconsistent dimensions");
  }
  q_lower_ = SpMat(q_lower_.triangularView<Eigen::Lower>());
  q_full_ = symmetric_from_lower(q_lower_);
  linear_ = c_;
  if (params_.size() > 0) {
    linear_ += p_ * params_;
  }
  a_.makeCompressed();
  g_.makeCompressed();
}

VectorXd QuadraticProblem::initial_point() const {
  return start_.size() == c_.size() ? start_ : VectorXd::Zero(c_.size());
}

double QuadraticProblem::objective(const VectorXd& u) const {
  return 0.5 * u.dot(q_full_ * u) + linear_.dot(u);
}

VectorXd QuadraticProblem::gradient(const VectorXd& u) const {
  return q_full_ * u + linear_;
}

VectorXd QuadraticProblem::eq_constraints(const VectorXd& u) const {
  return a_ * u - b_;
}

VectorXd QuadraticProblem::ineq_constraints(const VectorXd& u) const {
  return g_ * u - h_;
}

SpMat QuadraticProblem::lagrangian_hessian(const VectorXd&, double obj_factor,
                                           const VectorXd&,
                                           const VectorXd&) const {
  return obj_factor * q_lower_;
}

SpMat QuadraticProblem::gradient_param_jacobian(const VectorXd&) const {
  return p_;
}

double DerivativeCheck::max() const {
  return std::max({gradient, eq_jacobian, ineq_jacobian, hessian});
}

DerivativeCheck check_derivatives(const NlpProblem& prob, const VectorXd& u,
                                  std::uint64_t seed, double h) {
  const int n = prob.num_vars();
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> uni(-1.0, 1.0);
  VectorXd lam_e(prob.num_eq());
  VectorXd lam_i(prob.num_ineq());
  for (auto& v : lam_e) {
    v = uni(rng);
  }
  for (auto& v : lam_i) {
    v = uni(rng);
  }
  const double sigma = 0.5 + 0.5 * std::abs(uni(rng));

  const Eigen::MatrixXd je = Eigen::MatrixXd(prob.eq_jacobian(u));
  const Eigen::MatrixXd ji = Eigen::MatrixXd(prob.ineq_jacobian(u));
  const Eigen::MatrixXd hess = Eigen::MatrixXd(
      symmetric_from_lower(prob.lagrangian_hessian(u, sigma, lam_e, lam_i)));
  const VectorXd grad = prob.gradient(u);
  auto lag_grad = [&](const VectorXd& x) {
    return VectorXd(sigma * prob.gradient(x) +
                    prob.eq_jacobian(x).transpose() * lam_e +
                    prob.ineq_jacobian(x).transpose() * lam_i);
  };

  auto rel = [](double a, double b) {
    return std::abs(a - b) / std::max(1.0, std::abs(b));
  };
  DerivativeCheck out;
  for (int j = 0; j < n; ++j) {
    VectorXd up = u;
    VectorXd dn = u;
    up(j) += h;
    dn(j) -= h;
    const double fd_f = (prob.objective(up) - prob.objective(dn)) / (2 * h);
    out.gradient = std::max(out.gradient, rel(grad(j), fd_f));
    const VectorXd fd_ce =
        (prob.eq_constraints(up) - prob.eq_constraints(dn)) / (2 * h);
    for (int i = 0; i < fd_ce.size(); ++i) {
      out.eq_jacobian = std::max(out.eq_jacobian, rel(je(i, j), fd_ce(i)));
    }
    const VectorXd fd_gi =
        (prob.ineq_constraints(up) - prob.ineq_constraints(dn)) / (2 * h);
    for (int i = 0; i < fd_gi.size(); ++i) {
      out.ineq_jacobian = std::max(out.ineq_jacobian, rel(ji(i, j), fd_gi(i)));
    }
    const VectorXd fd_h = (lag_grad(up) - lag_grad(dn)) / (2 * h);
    for (int i = 0; i < n; ++i) {
      out.hessian = std::max(out.hessian, rel(hess(i, j), fd_h(i)));
    }
  }
  return out;
}

}  // namespace opf_resid
