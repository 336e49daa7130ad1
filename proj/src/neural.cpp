#include "opf_resid/neural.hpp"

#include <cmath>
#include <fstream>
#include <random>
#include <sstream>

#include "opf_resid/error.hpp"

namespace opf_resid {

using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

constexpr int kCheckpointVersion = 1;

}  // namespace

MlpParams::MlpParams(std::vector<int> dims) : dims_(std::move(dims)) {
  if (dims_.size() < 2) {
    throw ValidationError("a network needs at least an input and an output");
  }
  Eigen::Index total = 0;
  for (size_t l = 0; l + 1 < dims_.size(); ++l) {
    if (dims_[l] <= 0 || dims_[l + 1] <= 0) {
      throw ValidationError("layer widths must be positive");
    }
    offsets_.push_back(total);
    total += static_cast<Eigen::Index>(dims_[l + 1]) * (dims_[l] + 1);
  }
  values_ = VectorXd::Zero(total);
}

Eigen::Map<MatrixXd> MlpParams::weight(int l) {
  return {values_.data() + offsets_[l], dims_[l + 1], dims_[l]};
}

Eigen::Map<const MatrixXd> MlpParams::weight(int l) const {
  return {values_.data() + offsets_[l], dims_[l + 1], dims_[l]};
}

Eigen::Map<VectorXd> MlpParams::bias(int l) {
  return {values_.data() + offsets_[l] +
              static_cast<Eigen::Index>(dims_[l + 1]) * dims_[l],
          dims_[l + 1]};
}

Eigen::Map<const VectorXd> MlpParams::bias(int l) const {
  return {values_.data() + offsets_[l] +
              static_cast<Eigen::Index>(dims_[l + 1]) * dims_[l],
          dims_[l + 1]};
}

MlpParams MlpParams::he_uniform(std::vector<int> dims, std::uint64_t seed,
                                double final_scale) {
  MlpParams p(std::move(dims));
  std::mt19937_64 rng(seed);
  for (int l = 0; l < p.num_layers(); ++l) {
    const double limit = std::sqrt(6.0 / p.dims_[l]);
    std::uniform_real_distribution<double> dist(-limit, limit);
    auto w = p.weight(l);
    for (Eigen::Index k = 0; k < w.size(); ++k) {
      w.data()[k] = dist(rng);
    }
    if (l + 1 == p.num_layers()) {
      w *= final_scale;
    }
  }
  return p;
}

OutputBounds OutputBounds::from(const GridCase& grid,
                                const SetpointLayout& layout) {
  OutputBounds b;
  const auto vbuses = layout.voltage_buses();
  b.v_lo.resize(static_cast<Eigen::Index>(vbuses.size()));
  b.v_hi.resize(b.v_lo.size());
  for (size_t i = 0; i < vbuses.size(); ++i) {
    b.v_lo(i) = grid.buses[vbuses[i]].vmin;
    b.v_hi(i) = grid.buses[vbuses[i]].vmax;
  }
  b.p_lo.resize(layout.num_pg());
  b.p_hi.resize(layout.num_pg());
  for (int j = 0; j < layout.num_pg(); ++j) {
    b.p_lo(j) = grid.gens[layout.pg_gens[j]].pmin;
    b.p_hi(j) = grid.gens[layout.pg_gens[j]].pmax;
  }
  return b;
}

std::vector<int> network_dims(const GridCase& grid, const SetpointLayout& layout,
                              const std::vector<int>& hidden) {
  std::vector<int> dims{2 * grid.num_buses() + layout.num_pg()};
  dims.insert(dims.end(), hidden.begin(), hidden.end());
  dims.push_back(layout.num_vg() + 1 + layout.num_pg());
  return dims;
}

VectorXd network_input(const VectorXd& pd, const VectorXd& qd,
                       const VectorXd& pg_dc_all, const SetpointLayout& layout) {
  const Eigen::Index nb = pd.size();
  VectorXd x(2 * nb + layout.num_pg());
  x.head(nb) = pd;
  x.segment(nb, nb) = qd;
  for (int j = 0; j < layout.num_pg(); ++j) {
    x(2 * nb + j) = pg_dc_all(layout.pg_gens[j]);
  }
  return x;
}

std::string_view to_string(ClipGradient mode) {
  return mode == ClipGradient::zero ? "zero" : "straight_through";
}

ClipGradient clip_gradient_from_string(std::string_view text) {
  if (text == "zero") {
    return ClipGradient::zero;
  }
  if (text == "straight_through") {
    return ClipGradient::straight_through;
  }
  throw ValidationError("clip_gradient must be 'zero' or 'straight_through'");
}

NetOutput forward(const MlpParams& params, const OutputBounds& bounds,
                  const VectorXd& input, const VectorXd& pg_dc) {
  const int nv = bounds.num_v();
  const int np = bounds.num_p();
  if (input.size() != params.input_dim()) {
    std::ostringstream msg;
    msg << "network input has " << input.size() << " entries, expected "
        << params.input_dim();
    throw ValidationError(msg.str());
  }
  if (params.output_dim() != nv + np || pg_dc.size() != np) {
    throw ValidationError("network output does not match the setpoint layout");
  }
  NetOutput out;
  auto& tr = out.trace;
  tr.activations.reserve(params.num_layers());
  tr.activations.push_back(input);
  for (int l = 0; l < params.num_layers(); ++l) {
    VectorXd z = params.weight(l) * tr.activations.back() + params.bias(l);
    if (l + 1 < params.num_layers()) {
      tr.activations.push_back(z.cwiseMax(0.0));
    } else {
      tr.output = std::move(z);
    }
  }
  tr.tanh_v = tr.output.head(nv).array().tanh();
  VectorXd v(nv);
  for (int i = 0; i < nv; ++i) {
    v(i) = lin_proj(tr.tanh_v(i), bounds.v_lo(i), bounds.v_hi(i));
  }
  tr.clip.assign(np, ClipSide::none);
  VectorXd pg = pg_dc + tr.output.tail(np);
  for (int j = 0; j < np; ++j) {
    if (pg(j) < bounds.p_lo(j)) {
      pg(j) = bounds.p_lo(j);
      tr.clip[j] = ClipSide::lower;
    } else if (pg(j) > bounds.p_hi(j)) {
      pg(j) = bounds.p_hi(j);
      tr.clip[j] = ClipSide::upper;
    }
  }
  out.y.pg = std::move(pg);
  out.y.vg = v.head(nv - 1);
  out.y.vref = v(nv - 1);
  return out;
}

VectorXd backward(const MlpParams& params, const OutputBounds& bounds,
                  const ForwardTrace& trace, const VectorXd& d_pg,
                  const VectorXd& d_v, ClipGradient mode) {
  const int nv = bounds.num_v();
  const int np = bounds.num_p();
  if (d_pg.size() != np || d_v.size() != nv) {
    throw ValidationError("upstream gradient does not match the output heads");
  }
  VectorXd delta(nv + np);
  for (int i = 0; i < nv; ++i) {
    const double t = trace.tanh_v(i);
    delta(i) = d_v(i) * 0.5 * (bounds.v_hi(i) - bounds.v_lo(i)) * (1.0 - t * t);
  }
  for (int j = 0; j < np; ++j) {
    const bool pass = mode == ClipGradient::straight_through ||
                      trace.clip[j] == ClipSide::none;
    delta(nv + j) = pass ? d_pg(j) : 0.0;
  }
  MlpParams grad(params.dims());
  for (int l = params.num_layers() - 1; l >= 0; --l) {
    const VectorXd& a = trace.activations[l];
    grad.weight(l).noalias() = delta * a.transpose();
    grad.bias(l) = delta;
    if (l > 0) {
      VectorXd prev = params.weight(l).transpose() * delta;
      for (Eigen::Index k = 0; k < prev.size(); ++k) {
        if (!(a(k) > 0.0)) {
          prev(k) = 0.0;
        }
      }
      delta = std::move(prev);
    }
  }
  return std::move(grad.values());
}

void adam_step(VectorXd& theta, const VectorXd& grad, AdamState& state,
               double lr) {
  if (grad.size() != theta.size() || state.m.size() != theta.size() ||
      state.v.size() != theta.size()) {
    throw ValidationError("Adam state does not match the parameter vector");
  }
  ++state.step;
  state.m = state.beta1 * state.m + (1.0 - state.beta1) * grad;
  state.v = state.beta2 * state.v + (1.0 - state.beta2) * grad.cwiseAbs2();
  const double c1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  theta.array() -= lr * (state.m.array() / c1) /
                   ((state.v.array() / c2).sqrt() + state.eps);
}

nlohmann::json checkpoint_to_json(const Checkpoint& ckpt) {
  const auto& p = ckpt.params;
  nlohmann::json layers = nlohmann::json::array();
  for (int l = 0; l < p.num_layers(); ++l) {
    const auto w = p.weight(l);
    const auto b = p.bias(l);
    layers.push_back({{"rows", w.rows()},
                      {"cols", w.cols()},
                      {"weight", std::vector<double>(w.data(), w.data() + w.size())},
                      {"bias", std::vector<double>(b.data(), b.data() + b.size())}});
  }
  return {{"format", "opf-resid-mlp"},
          {"version", kCheckpointVersion},
          {"case", ckpt.case_name},
          {"epoch", ckpt.epoch},
          {"activation", "relu"},
          {"clip_gradient", to_string(ckpt.clip_gradient)},
          {"dims", p.dims()},
          {"layers", std::move(layers)}};
}

Checkpoint checkpoint_from_json(const nlohmann::json& j) {
  try {
    if (j.at("format").get<std::string>() != "opf-resid-mlp") {
      throw ParseError("checkpoint: unknown format");
    }
    if (j.at("version").get<int>() != kCheckpointVersion) {
      throw ParseError("checkpoint: unsupported version");
    }
    Checkpoint c;
    c.case_name = j.value("case", "");
    c.epoch = j.value("epoch", 0);
    c.clip_gradient =
        clip_gradient_from_string(j.value("clip_gradient", std::string("zero")));
    c.params = MlpParams(j.at("dims").get<std::vector<int>>());
    const auto& layers = j.at("layers");
    if (static_cast<int>(layers.size()) != c.params.num_layers()) {
      throw ParseError("checkpoint: layer count does not match dims");
    }
    for (int l = 0; l < c.params.num_layers(); ++l) {
      const auto w = layers[l].at("weight").get<std::vector<double>>();
      const auto b = layers[l].at("bias").get<std::vector<double>>();
      auto wm = c.params.weight(l);
      auto bm = c.params.bias(l);
      if (static_cast<Eigen::Index>(w.size()) != wm.size() ||
          static_cast<Eigen::Index>(b.size()) != bm.size()) {
        std::ostringstream msg;
        msg << "checkpoint: layer " << l << " has wrong array sizes";
        throw ParseError(msg.str());
      }
      wm = Eigen::Map<const MatrixXd>(w.data(), wm.rows(), wm.cols());
      bm = Eigen::Map<const VectorXd>(b.data(), bm.size());
    }
    if (!c.params.values().allFinite()) {
      throw ValidationError("checkpoint: non-finite parameters");
    }
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("checkpoint: ") + e.what());
  }
}

void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
  std::ofstream out(path);
  if (!out) {
    throw Error("cannot write " + path);
  }
  out << checkpoint_to_json(ckpt).dump() << '\n';
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path);
  if (!in) {
    throw Error("cannot read " + path);
  }
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(path + ": " + e.what());
  }
  return checkpoint_from_json(j);
}

void check_compatible(const MlpParams& params, const GridCase& grid,
                      const SetpointLayout& layout) {
  const auto dims = network_dims(grid, layout, {});
  if (params.input_dim() != dims.front() || params.output_dim() != dims.back()) {
    std::ostringstream msg;
    msg << "network " << params.input_dim() << " -> " << params.output_dim()
        << " does not fit case '" << grid.name << "' (" << dims.front()
        << " -> " << dims.back() << ")";
    throw ValidationError(msg.str());
  }
}

}  // namespace opf_resid
