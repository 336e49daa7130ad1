#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "json.hpp"

#include "opf_resid/acopf_models.hpp"
#include "opf_resid/dc_opf.hpp"
#include "opf_resid/grid_model.hpp"
#include "opf_resid/neural.hpp"

namespace opf_resid {

/// One load scenario with its DC-OPF dispatch. `pg_dc` covers every
/// generator of the case.
struct Sample {
  int id = 0;
  Eigen::VectorXd pd, qd;
  Eigen::VectorXd pg_dc;
  std::optional<int> outage;
};

/// Copy of `grid` carrying the sample's loads and outage.
GridCase apply_sample(const GridCase& grid, const Sample& sample);

/// Network input and Pg_dc restricted to the layout's generators.
Eigen::VectorXd sample_input(const Sample& sample, const SetpointLayout& layout);
Eigen::VectorXd sample_pg_dc(const Sample& sample, const SetpointLayout& layout);

struct DatasetOptions {
  int count = 1;
  double lo = 0.8;
  double hi = 1.2;
  std::uint64_t seed = 7;
  int first_id = 0;
  DcOpfOptions dc;
};

/// Scales every bus's Pd and Qd by independent U[lo, hi] factors and keeps
/// draws whose DC-OPF is optimal. Throws SolverError after 10 * count draws
/// without enough successes.
std::vector<Sample> generate_dataset(const GridCase& grid,
                                     const DatasetOptions& options);

nlohmann::json sample_to_json(const Sample& sample);
Sample sample_from_json(const nlohmann::json& j);
void write_dataset(const std::vector<Sample>& samples, std::ostream& out);
std::vector<Sample> read_dataset(std::istream& in);
void save_dataset(const std::vector<Sample>& samples, const std::string& path);
std::vector<Sample> load_dataset(const std::string& path);

/// L = ||Pg - Pg~|| + w_v ||V - V~|| with the partial gradients w.r.t. both
/// arguments. A vanishing norm contributes a zero gradient.
struct ProjectionLoss {
  double value = 0.0;
  Eigen::VectorXd dy_pg, dy_v;  ///< w.r.t. the network setpoints
  Eigen::VectorXd dt_pg, dt_v;  ///< w.r.t. the restoration setpoints
};

ProjectionLoss projection_loss(const Setpoints& y, const Setpoints& y_tilde,
                               double wv_loss);

/// Fixed restoration target stored during an outer epoch.
struct BufferEntry {
  int sample_index = 0;  ///< position in the training set
  int sample_id = 0;
  int epoch = 0;
  Setpoints target;
};

struct SupervisedLoss {
  double value = 0.0;
  Eigen::VectorXd d_pg, d_v;
};

SupervisedLoss supervised_loss(const Setpoints& y, const BufferEntry& entry,
                               double wv_loss);

/// Per-outer-epoch store; reset at the start of every outer epoch.
class ReplayBuffer {
 public:
  void reset(int epoch);
  void add(BufferEntry entry);
  int epoch() const { return epoch_; }
  const std::vector<BufferEntry>& entries() const { return entries_; }
  bool empty() const { return entries_.empty(); }

 private:
  int epoch_ = 0;
  std::vector<BufferEntry> entries_;
};

struct TrainConfig {
  int n_o = 60;
  int n_i = 10;
  int batch_size = 32;
  double lr = 5e-4;
  double lr_late = 1e-4;
  int lr_switch_epoch = 50;  ///< epochs after this one use lr_late
  Weights restoration = Weights::training();
  double wv_loss = 100.0;
  std::uint64_t seed = 7;
  double budget_seconds = 12.0 * 3600.0;
  std::vector<int> hidden = {512, 512};
  ClipGradient clip_gradient = ClipGradient::zero;
  double restoration_tol = 1e-7;
  double max_failure_fraction = 0.5;
  int threads = 0;

  /// Throws ValidationError on out-of-range values.
  void validate() const;
  double learning_rate(int epoch) const;
};

nlohmann::json train_config_to_json(const TrainConfig& config);
/// Missing keys keep their defaults; unknown keys are rejected.
TrainConfig train_config_from_json(const nlohmann::json& j);
TrainConfig load_train_config(const std::string& path);

struct EpochLog {
  int epoch = 0;
  double mean_loss = 0.0;      ///< projection loss over solved samples
  double mean_cost = 0.0;      ///< generation cost of the restoration outputs
  int failures = 0;            ///< restoration solves that were not optimal
  int fallbacks = 0;           ///< degenerate KKT systems, fixed-target loss used
  double mean_distance = 0.0;  ///< ||y - y~|| over solved samples
  double val_loss = 0.0;       ///< NaN without a validation set
  double val_violation = 0.0;  ///< mean PF-mode violation on validation
  double seconds = 0.0;
};

struct TrainHooks {
  /// Called for every buffer entry consumed by an inner epoch.
  std::function<void(int outer_epoch, const BufferEntry&)> on_replay;
  /// Called after each outer epoch.
  std::function<void(const EpochLog&)> on_epoch;
};

struct TrainResult {
  Checkpoint best;
  Checkpoint last;
  std::vector<EpochLog> log;
  bool aborted = false;
  std::string message;
};

/// Outer/inner training loop with the restoration layer. `initial`, when
/// given, replaces the He-uniform initialization.
TrainResult train(const GridCase& grid, const std::vector<Sample>& training,
                  const std::vector<Sample>& validation,
                  const TrainConfig& config, const TrainHooks& hooks = {},
                  const std::optional<MlpParams>& initial = std::nullopt);

/// CSV with epoch, mean_loss, mean_cost, failures, seconds followed by the
/// extra columns of EpochLog.
void write_log_csv(const std::vector<EpochLog>& log, std::ostream& out,
                   bool include_seconds = true);

/// Result of one projected-gradient evaluation of a sample.
struct ProjectedGradient {
  bool solved = false;
  bool fallback = false;
  double loss = 0.0;
  double cost = 0.0;
  double distance = 0.0;
  Setpoints y;
  Setpoints y_tilde;
  Eigen::VectorXd d_pg, d_v;  ///< total dL/dy
  std::string message;
};

/// Restoration solve around `y` and the loss gradient w.r.t. y, including
/// the path through the KKT adjoint. Falls back to the fixed-target gradient
/// when the KKT system is degenerate.
ProjectedGradient projected_gradient(const GridCase& sample_grid,
                                     const Setpoints& y, const Weights& weights,
                                     double wv_loss,
                                     const RestorationOptions& options);

/// End-to-end check of projected_gradient: directional derivatives against
/// central differences of the loss with re-solved restorations.
struct GradCheckOptions {
  std::uint64_t seed = 1;
  int directions = 20;
  double step = 1e-4;
  Weights weights = Weights::training();
  double wv_loss = 100.0;
  double solve_tol = 1e-10;
  /// Denominator floor as a fraction of ||dL/dy|| ||d||.
  double relative_floor = 1e-2;
};

struct GradCheckResult {
  Setpoints y;
  double loss = 0.0;
  double gradient_norm = 0.0;
  bool fallback = false;
  std::vector<double> analytic, finite_difference, relative_error;
  double max_relative_error = 0.0;
};

/// Draws setpoints uniformly inside their boxes from `seed`.
Setpoints random_setpoints(const GridCase& grid, std::uint64_t seed);

GradCheckResult gradient_check(const GridCase& grid,
                               const GradCheckOptions& options = {});

}  // namespace opf_resid
