#include "opf_resid/kkt_diff.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "opf_resid/error.hpp"
#include "opf_resid/sparse_util.hpp"

namespace opf_resid {

namespace {

using Triplet = Eigen::Triplet<double>;

void append(std::vector<Triplet>& t, const SpMat& m, int row0, int col0,
            double factor = 1.0) {
  for (int c = 0; c < m.outerSize(); ++c) {
    for (SpMat::InnerIterator it(m, c); it; ++it) {
      t.emplace_back(row0 + it.row(), col0 + it.col(), factor * it.value());
    }
  }
}

}  // namespace

KktSystem assemble_kkt(const NlpProblem& problem, const NlpSolution& sol,
                       const KktOptions& options) {
  const int n = problem.num_vars();
  const int me = problem.num_eq();
  const int mi = problem.num_ineq();
  const int np = problem.num_params();
  if (sol.u.size() != n || sol.s.size() != mi || sol.nu.size() != mi ||
      sol.lambda.size() != me + mi) {
    throw ValidationError("solution dimensions do not match the problem");
  }
  KktSystem sys;
  sys.dims = {n, mi, me + mi, np};
  const VectorXd lam_e = sol.lambda.head(me);
  const VectorXd lam_i = sol.lambda.tail(mi);

  // Column offsets.
  const int cu = 0;
  const int cs = n;
  const int cl = n + mi;
  const int cn = n + mi + me + mi;
  // Row offsets.
  const int r_stat_u = 0;
  const int r_stat_s = n;
  const int r_feas = n + mi;
  const int r_comp = n + mi + me + mi;

  const SpMat w = symmetric_from_lower(
      problem.lagrangian_hessian(sol.u, 1.0, lam_e, lam_i));
  const SpMat je = problem.eq_jacobian(sol.u);
  const SpMat ji = problem.ineq_jacobian(sol.u);

  std::vector<Triplet> t;
  t.reserve(w.nonZeros() + 2 * (je.nonZeros() + ji.nonZeros()) + 5 * mi);
  append(t, w, r_stat_u, cu);
  append(t, SpMat(je.transpose()), r_stat_u, cl);
  append(t, SpMat(ji.transpose()), r_stat_u, cl + me);
  for (int i = 0; i < mi; ++i) {
    t.emplace_back(r_stat_s + i, cl + me + i, 1.0);
    t.emplace_back(r_stat_s + i, cn + i, -1.0);
  }
  append(t, je, r_feas, cu);
  append(t, ji, r_feas + me, cu);
  for (int i = 0; i < mi; ++i) {
    t.emplace_back(r_feas + me + i, cs + i, 1.0);
  }
  for (int i = 0; i < mi; ++i) {
    double diag = sol.s(i);
    if (sol.s(i) < options.degeneracy_eps && sol.nu(i) < options.degeneracy_eps) {
      diag += options.perturbation;
      sys.perturbed.push_back(i);
    }
    t.emplace_back(r_comp + i, cs + i, sol.nu(i));
    t.emplace_back(r_comp + i, cn + i, diag);
  }
  const int size = sys.dims.size();
  sys.j.resize(size, size);
  sys.j.setFromTriplets(t.begin(), t.end());
  sys.j.makeCompressed();

  std::vector<Triplet> tp;
  if (np > 0) {
    append(tp, problem.gradient_param_jacobian(sol.u), r_stat_u, 0);
    append(tp, problem.constraint_param_hessian(sol.u, lam_e, lam_i), r_stat_u,
           0);
    append(tp, problem.eq_param_jacobian(sol.u), r_feas, 0);
    append(tp, problem.ineq_param_jacobian(sol.u), r_feas + me, 0);
  }
  sys.jp.resize(size, np);
  sys.jp.setFromTriplets(tp.begin(), tp.end());
  sys.jp.makeCompressed();
  return sys;
}

struct KktSolver::Factor {
  SparseLu lu;
};

KktSolver::KktSolver(KktSystem system, const KktOptions& options)
    : system_(std::move(system)), factor_(std::make_unique<Factor>()) {
  const SpMat& j = system_.j;
  row_scale_ = VectorXd::Ones(j.rows());
  VectorXd row_max = VectorXd::Zero(j.rows());
  for (int c = 0; c < j.outerSize(); ++c) {
    for (SpMat::InnerIterator it(j, c); it; ++it) {
      row_max(it.row()) = std::max(row_max(it.row()), std::abs(it.value()));
    }
  }
  for (int r = 0; r < j.rows(); ++r) {
    if (row_max(r) > 0.0) {
      row_scale_(r) = 1.0 / row_max(r);
    }
  }
  const SpMat scaled = row_scale_.asDiagonal() * j;
  factor_->lu.compute(scaled);
  auto fail = [&](const std::string& reason) {
    std::ostringstream msg;
    msg << "KKT matrix is singular (" << reason << ")";
    if (!system_.perturbed.empty()) {
      msg << "; weakly active complementarity pairs:";
      for (size_t i = 0; i < system_.perturbed.size() && i < 20; ++i) {
        msg << ' ' << system_.perturbed[i];
      }
      if (system_.perturbed.size() > 20) {
        msg << " ...";
      }
    }
    throw DegeneracyError(msg.str());
  };
  if (factor_->lu.info() != Eigen::Success) {
    fail("factorization failed");
  }
  rcond_ = reciprocal_condition(scaled, factor_->lu);
  if (!(rcond_ >= options.min_rcond)) {
    std::ostringstream r;
    r << "rcond " << rcond_;
    fail(r.str());
  }
}

KktSolver::~KktSolver() = default;
KktSolver::KktSolver(KktSolver&&) noexcept = default;
KktSolver& KktSolver::operator=(KktSolver&&) noexcept = default;

Eigen::VectorXd KktSolver::backward(const Eigen::VectorXd& grad_u) const {
  const auto& d = system_.dims;
  if (grad_u.size() != d.nu) {
    throw ValidationError("upstream gradient has wrong dimension");
  }
  if (grad_u.isZero(0.0)) {
    return VectorXd::Zero(d.np);
  }
  VectorXd rhs = VectorXd::Zero(d.size());
  rhs.head(d.nu) = grad_u;
  // (D J)' v = rhs  =>  J' (D v) = rhs.
  const VectorXd v = factor_->lu.transpose().solve(rhs);
  const VectorXd w = row_scale_.cwiseProduct(v);
  return -(system_.jp.transpose() * w);
}

Eigen::VectorXd KktSolver::forward(const Eigen::VectorXd& direction) const {
  const auto& d = system_.dims;
  if (direction.size() != d.np) {
    throw ValidationError("parameter direction has wrong dimension");
  }
  const VectorXd rhs = -(row_scale_.cwiseProduct(system_.jp * direction));
  const VectorXd dz = factor_->lu.solve(rhs);
  return dz.head(d.nu);
}

Eigen::MatrixXd KktSolver::sensitivity() const {
  const auto& d = system_.dims;
  Eigen::MatrixXd out(d.nu, d.np);
  for (int k = 0; k < d.np; ++k) {
    out.col(k) = forward(VectorXd::Unit(d.np, k));
  }
  return out;
}

Eigen::VectorXd backward(const NlpProblem& problem, const NlpSolution& sol,
                         const Eigen::VectorXd& grad_u,
                         const KktOptions& options) {
  const KktSolver solver(assemble_kkt(problem, sol, options), options);
  return solver.backward(grad_u);
}

}  // namespace opf_resid
