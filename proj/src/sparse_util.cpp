#include "opf_resid/sparse_util.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace opf_resid {

double reciprocal_condition(const SparseMatrix& a, SparseLu& lu) {
  const auto n = a.cols();
  if (n == 0) {
    return 1.0;
  }
  double norm_a = 0.0;
  for (int j = 0; j < a.outerSize(); ++j) {
    double col = 0.0;
    for (SparseMatrix::InnerIterator it(a, j); it; ++it) {
      col += std::abs(it.value());
    }
    norm_a = std::max(norm_a, col);
  }
  if (norm_a == 0.0) {
    return 0.0;
  }

  Eigen::VectorXd x = Eigen::VectorXd::Constant(n, 1.0 / static_cast<double>(n));
  double estimate = 0.0;
  for (int iter = 0; iter < 5; ++iter) {
    const Eigen::VectorXd y = lu.solve(x);
    if (!y.allFinite()) {
      return 0.0;
    }
    estimate = y.lpNorm<1>();
    const Eigen::VectorXd xi = y.unaryExpr([](double v) { return v >= 0.0 ? 1.0 : -1.0; });
    const Eigen::VectorXd z = lu.transpose().solve(xi);
    Eigen::Index j = 0;
    const double zmax = z.cwiseAbs().maxCoeff(&j);
    if (zmax <= z.dot(x)) {
      break;
    }
    x.setZero();
    x(j) = 1.0;
  }
  if (!(estimate > 0.0) || !std::isfinite(estimate)) {
    return 0.0;
  }
  return 1.0 / (norm_a * estimate);
}

void parallel_for(int n, int threads, const std::function<void(int)>& body) {
  threads = std::max(1, std::min(threads, n));
  if (threads <= 1) {
    for (int i = 0; i < n; ++i) {
      body(i);
    }
    return;
  }
  std::atomic<int> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  std::vector<std::jthread> pool;
  pool.reserve(threads);
  for (int t = 0; t < threads; ++t) {
    pool.emplace_back([&] {
      for (int i = next++; i < n; i = next++) {
        try {
          body(i);
        } catch (...) {
          std::lock_guard lock(error_mutex);
          if (!error) {
            error = std::current_exception();
          }
        }
      }
    });
  }
  pool.clear();
  if (error) {
    std::rethrow_exception(error);
  }
}

int resolve_threads(int requested) {
  if (requested > 0) {
    return requested;
  }
  if (const char* env = std::getenv("OPF_RESID_THREADS")) {
    const int v = std::atoi(env);
    if (v > 0) {
      return v;
    }
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

}  // namespace opf_resid
