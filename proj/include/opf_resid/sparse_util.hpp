#pragma once

#include <functional>

#include <Eigen/SparseCore>
#include <Eigen/SparseLU>

namespace opf_resid {

using SparseMatrix = Eigen::SparseMatrix<double>;
using SparseLu = Eigen::SparseLU<SparseMatrix, Eigen::COLAMDOrdering<int>>;

/// Hager/Higham estimate of 1 / (||A||_1 ||A^{-1}||_1) from an existing LU.
double reciprocal_condition(const SparseMatrix& a, SparseLu& lu);

/// Runs `body(i)` for i in [0, n) on up to `threads` workers. Work is handed
/// out by index so results written to slot i are independent of scheduling.
void parallel_for(int n, int threads, const std::function<void(int)>& body);

/// Worker count: explicit value if positive, else OPF_RESID_THREADS, else
/// hardware concurrency.
int resolve_threads(int requested);

}  // namespace opf_resid
