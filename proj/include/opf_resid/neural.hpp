#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "json.hpp"

#include "opf_resid/ac_pf.hpp"
#include "opf_resid/grid_model.hpp"

namespace opf_resid {

/// Fully connected ReLU network with all weights and biases stored in one
/// flat vector. Layer l maps dims[l] -> dims[l + 1]; W_l is column-major.
class MlpParams {
 public:
  MlpParams() = default;
  /// Zero-initialized parameters for the given layer widths.
  explicit MlpParams(std::vector<int> dims);

  const std::vector<int>& dims() const { return dims_; }
  int num_layers() const { return static_cast<int>(dims_.size()) - 1; }
  int input_dim() const { return dims_.front(); }
  int output_dim() const { return dims_.back(); }
  Eigen::Index size() const { return values_.size(); }

  Eigen::Map<Eigen::MatrixXd> weight(int l);
  Eigen::Map<const Eigen::MatrixXd> weight(int l) const;
  Eigen::Map<Eigen::VectorXd> bias(int l);
  Eigen::Map<const Eigen::VectorXd> bias(int l) const;

  Eigen::VectorXd& values() { return values_; }
  const Eigen::VectorXd& values() const { return values_; }

  /// He-uniform weights, zero biases; the last layer is scaled by
  /// `final_scale` so the network starts close to zero output.
  static MlpParams he_uniform(std::vector<int> dims, std::uint64_t seed,
                              double final_scale = 0.01);

 private:
  std::vector<int> dims_;
  std::vector<Eigen::Index> offsets_;
  Eigen::VectorXd values_;
};

/// Boxes the two output heads are mapped into.
struct OutputBounds {
  Eigen::VectorXd v_lo, v_hi;  ///< voltage setpoint buses: Vg then Vref
  Eigen::VectorXd p_lo, p_hi;  ///< non-reference generators

  int num_v() const { return static_cast<int>(v_lo.size()); }
  int num_p() const { return static_cast<int>(p_lo.size()); }
  static OutputBounds from(const GridCase& grid, const SetpointLayout& layout);
};

/// Layer widths [2N + n_pg, hidden..., n_v + n_p].
std::vector<int> network_dims(const GridCase& grid, const SetpointLayout& layout,
                              const std::vector<int>& hidden = {512, 512});

/// [Pd; Qd; Pg_dc of the non-reference generators].
Eigen::VectorXd network_input(const Eigen::VectorXd& pd, const Eigen::VectorXd& qd,
                              const Eigen::VectorXd& pg_dc_all,
                              const SetpointLayout& layout);

/// Affine map of [-1, 1] onto [lo, hi].
inline double lin_proj(double t, double lo, double hi) {
  return 0.5 * (lo + hi) + 0.5 * t * (hi - lo);
}

enum class ClipSide : std::int8_t { none, lower, upper };

/// How the Pg clip is differentiated.
enum class ClipGradient { zero, straight_through };

std::string_view to_string(ClipGradient mode);
ClipGradient clip_gradient_from_string(std::string_view text);

struct ForwardTrace {
  std::vector<Eigen::VectorXd> activations;  ///< input, then each hidden layer
  Eigen::VectorXd output;                    ///< raw last-layer output
  Eigen::VectorXd tanh_v;
  std::vector<ClipSide> clip;
};

struct NetOutput {
  Setpoints y;
  ForwardTrace trace;
};

/// Voltage head tanh -> lin_proj; power head Pg = clip(Pg_dc + dPg).
/// `pg_dc` holds the non-reference generators in layout order.
NetOutput forward(const MlpParams& params, const OutputBounds& bounds,
                  const Eigen::VectorXd& input, const Eigen::VectorXd& pg_dc);

/// Parameter gradient for upstream gradients w.r.t. Pg and the voltages
/// (Vg then Vref).
Eigen::VectorXd backward(const MlpParams& params, const OutputBounds& bounds,
                         const ForwardTrace& trace, const Eigen::VectorXd& d_pg,
                         const Eigen::VectorXd& d_v,
                         ClipGradient mode = ClipGradient::zero);

struct AdamState {
  Eigen::VectorXd m, v;
  long step = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  explicit AdamState(Eigen::Index n = 0)
      : m(Eigen::VectorXd::Zero(n)), v(Eigen::VectorXd::Zero(n)) {}
};

/// One bias-corrected Adam update of `theta` in place.
void adam_step(Eigen::VectorXd& theta, const Eigen::VectorXd& grad,
               AdamState& state, double lr);

/// Network together with the case it was built for.
struct Checkpoint {
  MlpParams params;
  std::string case_name;
  ClipGradient clip_gradient = ClipGradient::zero;
  int epoch = 0;
};

nlohmann::json checkpoint_to_json(const Checkpoint& ckpt);
Checkpoint checkpoint_from_json(const nlohmann::json& j);
void save_checkpoint(const Checkpoint& ckpt, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

/// Throws ValidationError unless the network dimensions fit the case.
void check_compatible(const MlpParams& params, const GridCase& grid,
                      const SetpointLayout& layout);

}  // namespace opf_resid
