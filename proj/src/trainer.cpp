#include "opf_resid/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <numeric>
#include <random>
#include <sstream>

#include "opf_resid/error.hpp"
#include "opf_resid/evalkit.hpp"
#include "opf_resid/kkt_diff.hpp"
#include "opf_resid/sparse_util.hpp"

namespace opf_resid {

using Eigen::VectorXd;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

VectorXd json_vector(const nlohmann::json& j, const char* key) {
  const auto v = j.at(key).get<std::vector<double>>();
  return Eigen::Map<const VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

std::vector<double> std_vector(const VectorXd& v) {
  return {v.data(), v.data() + v.size()};
}

/// Gradient of ||a - b|| w.r.t. a; zero when the norm vanishes.
VectorXd norm_gradient(const VectorXd& diff, double norm) {
  if (norm == 0.0) {
    return VectorXd::Zero(diff.size());
  }
  return diff / norm;
}

void check_same_layout(const Setpoints& a, const Setpoints& b) {
  if (a.pg.size() != b.pg.size() || a.vg.size() != b.vg.size()) {
    throw ValidationError("setpoint vectors have different dimensions");
  }
}

}  // namespace

GridCase apply_sample(const GridCase& grid, const Sample& sample) {
  const int nb = grid.num_buses();
  if (sample.pd.size() != nb || sample.qd.size() != nb) {
    std::ostringstream msg;
    msg << "sample " << sample.id << " has " << sample.pd.size()
        << " loads, case has " << nb << " buses";
    throw ValidationError(msg.str());
  }
  GridCase out = sample.outage ? apply_branch_outage(grid, *sample.outage) : grid;
  for (int i = 0; i < nb; ++i) {
    out.buses[i].pd = sample.pd(i);
    out.buses[i].qd = sample.qd(i);
  }
  return out;
}

VectorXd sample_pg_dc(const Sample& sample, const SetpointLayout& layout) {
  VectorXd out(layout.num_pg());
  for (int j = 0; j < layout.num_pg(); ++j) {
    out(j) = sample.pg_dc(layout.pg_gens[j]);
  }
  return out;
}

VectorXd sample_input(const Sample& sample, const SetpointLayout& layout) {
  return network_input(sample.pd, sample.qd, sample.pg_dc, layout);
}

std::vector<Sample> generate_dataset(const GridCase& grid,
                                     const DatasetOptions& options) {
  if (options.count < 0) {
    throw ValidationError("sample count must be non-negative");
  }
  if (!(options.lo > 0.0) || options.hi < options.lo) {
    throw ValidationError("load range must satisfy 0 < lo <= hi");
  }
  const int nb = grid.num_buses();
  VectorXd pd0(nb), qd0(nb);
  for (int i = 0; i < nb; ++i) {
    pd0(i) = grid.buses[i].pd;
    qd0(i) = grid.buses[i].qd;
  }
  std::mt19937_64 rng(options.seed);
  std::uniform_real_distribution<double> factor(options.lo, options.hi);
  std::vector<Sample> out;
  out.reserve(options.count);
  const long budget = 10L * options.count;
  long draws = 0;
  GridCase scenario = grid;
  while (static_cast<int>(out.size()) < options.count) {
    if (draws >= budget) {
      std::ostringstream msg;
      msg << "dataset generation: only " << out.size() << " of "
          << options.count << " samples had an optimal DC-OPF after " << draws
          << " draws";
      throw SolverError(msg.str());
    }
    ++draws;
    Sample s;
    s.id = options.first_id + static_cast<int>(out.size());
    s.pd.resize(nb);
    s.qd.resize(nb);
    for (int i = 0; i < nb; ++i) {
      s.pd(i) = pd0(i) * factor(rng);
    }
    for (int i = 0; i < nb; ++i) {
      s.qd(i) = qd0(i) * factor(rng);
    }
    for (int i = 0; i < nb; ++i) {
      scenario.buses[i].pd = s.pd(i);
      scenario.buses[i].qd = s.qd(i);
    }
    const DcOpfSolution dc = solve_dc_opf(scenario, options.dc);
    if (dc.status != DcStatus::optimal) {
      continue;
    }
    s.pg_dc = dc.pg;
    out.push_back(std::move(s));
  }
  return out;
}

nlohmann::json sample_to_json(const Sample& s) {
  nlohmann::json j = {{"id", s.id},
                      {"pd", std_vector(s.pd)},
                      {"qd", std_vector(s.qd)},
                      {"pg_dc", std_vector(s.pg_dc)}};
  j["outage"] = s.outage ? nlohmann::json(*s.outage) : nlohmann::json(nullptr);
  return j;
}

Sample sample_from_json(const nlohmann::json& j) {
  try {
    Sample s;
    s.id = j.at("id").get<int>();
    s.pd = json_vector(j, "pd");
    s.qd = json_vector(j, "qd");
    s.pg_dc = json_vector(j, "pg_dc");
    if (j.contains("outage") && !j.at("outage").is_null()) {
      s.outage = j.at("outage").get<int>();
    }
    if (s.pd.size() != s.qd.size()) {
      throw ParseError("sample " + std::to_string(s.id) +
                       ": pd and qd differ in length");
    }
    return s;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("sample: ") + e.what());
  }
}

void write_dataset(const std::vector<Sample>& samples, std::ostream& out) {
  for (const auto& s : samples) {
    out << sample_to_json(s).dump() << '\n';
  }
}

std::vector<Sample> read_dataset(std::istream& in) {
  std::vector<Sample> out;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) {
      continue;
    }
    try {
      out.push_back(sample_from_json(nlohmann::json::parse(line)));
    } catch (const nlohmann::json::exception& e) {
      throw ParseError("dataset line " + std::to_string(lineno) + ": " + e.what());
    } catch (const ParseError& e) {
      throw ParseError("dataset line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

void save_dataset(const std::vector<Sample>& samples, const std::string& path) {
  std::ofstream out(path);
  if (!out) {
    throw Error("cannot write " + path);
  }
  write_dataset(samples, out);
}

std::vector<Sample> load_dataset(const std::string& path) {
  std::ifstream in(path);
  if (!in) {
    throw Error("cannot read " + path);
  }
  return read_dataset(in);
}

ProjectionLoss projection_loss(const Setpoints& y, const Setpoints& y_tilde,
                               double wv_loss) {
  check_same_layout(y, y_tilde);
  const VectorXd dp = y.pg - y_tilde.pg;
  const VectorXd dv = y.voltages() - y_tilde.voltages();
  const double np = dp.norm();
  const double nv = dv.norm();
  ProjectionLoss out;
  out.value = np + wv_loss * nv;
  out.dy_pg = norm_gradient(dp, np);
  out.dy_v = wv_loss * norm_gradient(dv, nv);
  out.dt_pg = -out.dy_pg;
  out.dt_v = -out.dy_v;
  return out;
}

SupervisedLoss supervised_loss(const Setpoints& y, const BufferEntry& entry,
                               double wv_loss) {
  const ProjectionLoss p = projection_loss(y, entry.target, wv_loss);
  return {p.value, p.dy_pg, p.dy_v};
}

void ReplayBuffer::reset(int epoch) {
  epoch_ = epoch;
  entries_.clear();
}

void ReplayBuffer::add(BufferEntry entry) {
  if (entry.epoch != epoch_) {
    throw ValidationError("buffer entry from another epoch");
  }
  entries_.push_back(std::move(entry));
}

void TrainConfig::validate() const {
  if (n_o < 1 || n_i < 0) {
    throw ValidationError("train config: n_o must be >= 1 and n_i >= 0");
  }
  if (batch_size < 1) {
    throw ValidationError("train config: batch_size must be >= 1");
  }
  if (!(lr > 0.0) || !(lr_late > 0.0)) {
    throw ValidationError("train config: learning rates must be positive");
  }
  if (!(wv_loss >= 0.0)) {
    throw ValidationError("train config: wv_loss must be non-negative");
  }
  if (!(budget_seconds > 0.0)) {
    throw ValidationError("train config: budget_seconds must be positive");
  }
  if (!(restoration_tol > 0.0)) {
    throw ValidationError("train config: restoration_tol must be positive");
  }
  if (!(max_failure_fraction >= 0.0 && max_failure_fraction <= 1.0)) {
    throw ValidationError("train config: max_failure_fraction must be in [0, 1]");
  }
  for (int h : hidden) {
    if (h < 1) {
      throw ValidationError("train config: hidden widths must be positive");
    }
  }
  restoration.validate();
}

double TrainConfig::learning_rate(int epoch) const {
  return epoch > lr_switch_epoch ? lr_late : lr;
}

nlohmann::json train_config_to_json(const TrainConfig& c) {
  return {{"n_o", c.n_o},
          {"n_i", c.n_i},
          {"batch_size", c.batch_size},
          {"lr", c.lr},
          {"lr_late", c.lr_late},
          {"lr_switch_epoch", c.lr_switch_epoch},
          {"restoration",
           {{"wp", c.restoration.wp}, {"wv", c.restoration.wv}, {"wo", c.restoration.wo}}},
          {"wv_loss", c.wv_loss},
          {"seed", c.seed},
          {"budget_seconds", c.budget_seconds},
          {"hidden", c.hidden},
          {"clip_gradient", to_string(c.clip_gradient)},
          {"restoration_tol", c.restoration_tol},
          {"max_failure_fraction", c.max_failure_fraction},
          {"threads", c.threads}};
}

TrainConfig train_config_from_json(const nlohmann::json& j) {
  if (!j.is_object()) {
    throw ParseError("train config: expected a JSON object");
  }
  TrainConfig c;
  const nlohmann::json defaults = train_config_to_json(c);
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (!defaults.contains(it.key())) {
      throw ParseError("train config: unknown key '" + it.key() + "'");
    }
  }
  auto read = [&](const char* key, auto& field) {
    if (!j.contains(key)) {
      return;
    }
    try {
      j.at(key).get_to(field);
    } catch (const nlohmann::json::exception&) {
      throw ParseError(std::string("train config: bad value for '") + key + "'");
    }
  };
  read("n_o", c.n_o);
  read("n_i", c.n_i);
  read("batch_size", c.batch_size);
  read("lr", c.lr);
  read("lr_late", c.lr_late);
  read("lr_switch_epoch", c.lr_switch_epoch);
  read("wv_loss", c.wv_loss);
  read("seed", c.seed);
  read("budget_seconds", c.budget_seconds);
  read("hidden", c.hidden);
  read("restoration_tol", c.restoration_tol);
  read("max_failure_fraction", c.max_failure_fraction);
  read("threads", c.threads);
  if (j.contains("clip_gradient")) {
    std::string mode;
    read("clip_gradient", mode);
    c.clip_gradient = clip_gradient_from_string(mode);
  }
  if (j.contains("restoration")) {
    const auto& r = j.at("restoration");
    if (!r.is_object()) {
      throw ParseError("train config: 'restoration' must be an object");
    }
    for (auto it = r.begin(); it != r.end(); ++it) {
      if (it.key() != "wp" && it.key() != "wv" && it.key() != "wo") {
        throw ParseError("train config: unknown key 'restoration." + it.key() + "'");
      }
      if (!it->is_number()) {
        throw ParseError("train config: bad value for 'restoration." + it.key() + "'");
      }
    }
    c.restoration.wp = r.value("wp", c.restoration.wp);
    c.restoration.wv = r.value("wv", c.restoration.wv);
    c.restoration.wo = r.value("wo", c.restoration.wo);
  }
  c.validate();
  return c;
}

TrainConfig load_train_config(const std::string& path) {
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
  return train_config_from_json(j);
}

ProjectedGradient projected_gradient(const GridCase& sample_grid,
                                     const Setpoints& y, const Weights& weights,
                                     double wv_loss,
                                     const RestorationOptions& options) {
  ProjectedGradient out;
  out.y = y;
  const AcOpfProblem problem = build_restoration(sample_grid, y, weights);
  const NlpSolution sol = solve_restoration_problem(problem, options);
  if (sol.status != NlpStatus::optimal) {
    out.message = "restoration " + std::string(to_string(sol.status)) + ": " +
                  sol.message;
    return out;
  }
  const OpfSolution opf = extract_solution(problem, sol);
  out.solved = true;
  out.y_tilde = opf.y;
  out.cost = opf.cost;
  const ProjectionLoss pl = projection_loss(y, opf.y, wv_loss);
  out.loss = pl.value;
  out.distance = std::sqrt((y.pg - opf.y.pg).squaredNorm() +
                           (y.voltages() - opf.y.voltages()).squaredNorm());

  const auto& ix = problem.index();
  const auto& layout = problem.layout();
  const auto vbuses = layout.voltage_buses();
  VectorXd grad_u = VectorXd::Zero(problem.num_vars());
  for (int j = 0; j < layout.num_pg(); ++j) {
    grad_u(ix.pg + layout.pg_gens[j]) += pl.dt_pg(j);
  }
  for (size_t i = 0; i < vbuses.size(); ++i) {
    grad_u(ix.v + vbuses[i]) += pl.dt_v(static_cast<Eigen::Index>(i));
  }
  out.d_pg = pl.dy_pg;
  out.d_v = pl.dy_v;
  try {
    const VectorXd dp = backward(problem, sol, grad_u);
    out.d_pg += dp.head(layout.num_pg());
    out.d_v += dp.tail(static_cast<Eigen::Index>(vbuses.size()));
  } catch (const DegeneracyError& e) {
    out.fallback = true;
    out.message = e.what();
  }
  return out;
}

TrainResult train(const GridCase& grid, const std::vector<Sample>& training,
                  const std::vector<Sample>& validation,
                  const TrainConfig& config, const TrainHooks& hooks,
                  const std::optional<MlpParams>& initial) {
  config.validate();
  if (training.empty()) {
    throw ValidationError("training set is empty");
  }
  const auto t_start = Clock::now();
  const SetpointLayout layout = SetpointLayout::from(grid);
  const OutputBounds bounds = OutputBounds::from(grid, layout);
  const int threads = resolve_threads(config.threads);

  MlpParams params = initial ? *initial
                             : MlpParams::he_uniform(
                                   network_dims(grid, layout, config.hidden),
                                   config.seed);
  check_compatible(params, grid, layout);
  AdamState adam(params.size());

  struct Prepared {
    GridCase grid;
    VectorXd input;
    VectorXd pg_dc;
  };
  auto prepare = [&](const std::vector<Sample>& set) {
    std::vector<Prepared> out;
    out.reserve(set.size());
    for (const auto& s : set) {
      out.push_back({apply_sample(grid, s), sample_input(s, layout),
                     sample_pg_dc(s, layout)});
    }
    return out;
  };
  const std::vector<Prepared> train_set = prepare(training);
  const std::vector<Prepared> val_set = prepare(validation);

  RestorationOptions ropt;
  ropt.nlp.kkt_tol = config.restoration_tol;

  std::mt19937_64 rng(config.seed ^ 0x9e3779b97f4a7c15ULL);
  const int n = static_cast<int>(training.size());
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);

  TrainResult result;
  result.best.case_name = grid.name;
  result.best.clip_gradient = config.clip_gradient;
  double best_score = std::numeric_limits<double>::infinity();
  ReplayBuffer buffer;

  auto apply_mean = [&](const std::vector<VectorXd>& grads,
                        const std::vector<char>& used, double lr) {
    VectorXd sum = VectorXd::Zero(params.size());
    int count = 0;
    for (size_t k = 0; k < grads.size(); ++k) {
      if (used[k]) {
        sum += grads[k];
        ++count;
      }
    }
    if (count > 0) {
      adam_step(params.values(), sum / count, adam, lr);
    }
  };

  for (int epoch = 1; epoch <= config.n_o; ++epoch) {
    const auto t_epoch = Clock::now();
    const double lr = config.learning_rate(epoch);
    buffer.reset(epoch);
    std::shuffle(order.begin(), order.end(), rng);
    EpochLog log;
    log.epoch = epoch;
    int solved = 0;

    for (int start = 0; start < n; start += config.batch_size) {
      const int m = std::min(config.batch_size, n - start);
      std::vector<ProjectedGradient> pg(m);
      std::vector<VectorXd> grads(m);
      std::vector<char> used(m, 0);
      parallel_for(m, threads, [&](int k) {
        const Prepared& s = train_set[order[start + k]];
        const NetOutput fwd = forward(params, bounds, s.input, s.pg_dc);
        pg[k] = projected_gradient(s.grid, fwd.y, config.restoration,
                                   config.wv_loss, ropt);
        if (pg[k].solved) {
          grads[k] = backward(params, bounds, fwd.trace, pg[k].d_pg, pg[k].d_v,
                              config.clip_gradient);
          used[k] = 1;
        }
      });
      for (int k = 0; k < m; ++k) {
        if (!pg[k].solved) {
          ++log.failures;
          continue;
        }
        ++solved;
        log.fallbacks += pg[k].fallback ? 1 : 0;
        log.mean_loss += pg[k].loss;
        log.mean_cost += pg[k].cost;
        log.mean_distance += pg[k].distance;
        const int idx = order[start + k];
        buffer.add({idx, training[idx].id, epoch, pg[k].y_tilde});
      }
      apply_mean(grads, used, lr);
    }
    if (solved > 0) {
      log.mean_loss /= solved;
      log.mean_cost /= solved;
      log.mean_distance /= solved;
    }
    if (log.failures > config.max_failure_fraction * n) {
      log.seconds = seconds_since(t_epoch);
      result.log.push_back(log);
      std::ostringstream msg;
      msg << "epoch " << epoch << ": " << log.failures << " of " << n
          << " restoration solves failed";
      result.aborted = true;
      result.message = msg.str();
      break;
    }

    std::vector<int> replay(buffer.entries().size());
    std::iota(replay.begin(), replay.end(), 0);
    for (int inner = 0; inner < config.n_i && !replay.empty(); ++inner) {
      std::shuffle(replay.begin(), replay.end(), rng);
      const int r = static_cast<int>(replay.size());
      for (int start = 0; start < r; start += config.batch_size) {
        const int m = std::min(config.batch_size, r - start);
        std::vector<VectorXd> grads(m);
        std::vector<char> used(m, 1);
        parallel_for(m, threads, [&](int k) {
          const BufferEntry& e = buffer.entries()[replay[start + k]];
          const Prepared& s = train_set[e.sample_index];
          const NetOutput fwd = forward(params, bounds, s.input, s.pg_dc);
          const SupervisedLoss sl = supervised_loss(fwd.y, e, config.wv_loss);
          grads[k] = backward(params, bounds, fwd.trace, sl.d_pg, sl.d_v,
                              config.clip_gradient);
        });
        if (hooks.on_replay) {
          for (int k = 0; k < m; ++k) {
            hooks.on_replay(epoch, buffer.entries()[replay[start + k]]);
          }
        }
        apply_mean(grads, used, lr);
      }
    }

    if (val_set.empty()) {
      log.val_loss = std::numeric_limits<double>::quiet_NaN();
      log.val_violation = std::numeric_limits<double>::quiet_NaN();
    } else {
      const int nv = static_cast<int>(val_set.size());
      std::vector<double> loss(nv, 0.0), viol(nv, 0.0);
      std::vector<char> ok(nv, 0);
      parallel_for(nv, threads, [&](int k) {
        const Prepared& s = val_set[k];
        const NetOutput fwd = forward(params, bounds, s.input, s.pg_dc);
        const AcOpfProblem problem =
            build_restoration(s.grid, fwd.y, config.restoration);
        const NlpSolution sol = solve_restoration_problem(problem, ropt);
        if (sol.status == NlpStatus::optimal) {
          loss[k] = projection_loss(fwd.y, extract_solution(problem, sol).y,
                                    config.wv_loss)
                        .value;
          ok[k] = 1;
        }
        try {
          const PfModeResult pf = run_pf_mode(s.grid, params, s.input, s.pg_dc);
          viol[k] = pf.pf.converged ? pf.violation.combined.mean
                                    : std::numeric_limits<double>::infinity();
        } catch (const SolverError&) {
          viol[k] = std::numeric_limits<double>::infinity();
        }
      });
      int good = 0;
      for (int k = 0; k < nv; ++k) {
        if (ok[k]) {
          log.val_loss += loss[k];
          ++good;
        }
        log.val_violation += viol[k];
      }
      log.val_loss = good > 0 ? log.val_loss / good
                              : std::numeric_limits<double>::infinity();
      log.val_violation /= nv;
    }

    const double score = val_set.empty() ? -epoch : log.val_loss;
    if (score < best_score) {
      best_score = score;
      result.best.params = params;
      result.best.epoch = epoch;
    }
    log.seconds = seconds_since(t_epoch);
    result.log.push_back(log);
    if (hooks.on_epoch) {
      hooks.on_epoch(log);
    }
    if (seconds_since(t_start) > config.budget_seconds && epoch < config.n_o) {
      result.message = "stopped after epoch " + std::to_string(epoch) +
                       ": wall-clock budget exhausted";
      break;
    }
  }
  result.last.params = params;
  result.last.case_name = grid.name;
  result.last.clip_gradient = config.clip_gradient;
  result.last.epoch = result.log.empty() ? 0 : result.log.back().epoch;
  if (result.best.params.size() == 0) {
    result.best = result.last;
  }
  return result;
}

void write_log_csv(const std::vector<EpochLog>& log, std::ostream& out,
                   bool include_seconds) {
  out << "epoch,mean_loss,mean_cost,failures";
  if (include_seconds) {
    out << ",seconds";
  }
  out << ",fallbacks,mean_distance,val_loss,val_violation\n";
  std::ostringstream row;
  row << std::setprecision(12);
  for (const auto& e : log) {
    row.str("");
    row << e.epoch << ',' << e.mean_loss << ',' << e.mean_cost << ','
        << e.failures;
    if (include_seconds) {
      row << ',' << e.seconds;
    }
    row << ',' << e.fallbacks << ',' << e.mean_distance << ',' << e.val_loss
        << ',' << e.val_violation << '\n';
    out << row.str();
  }
}

Setpoints random_setpoints(const GridCase& grid, std::uint64_t seed) {
  const SetpointLayout layout = SetpointLayout::from(grid);
  const OutputBounds b = OutputBounds::from(grid, layout);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  Setpoints y;
  y.pg.resize(b.num_p());
  for (int j = 0; j < b.num_p(); ++j) {
    y.pg(j) = b.p_lo(j) + unit(rng) * (b.p_hi(j) - b.p_lo(j));
  }
  VectorXd v(b.num_v());
  for (int i = 0; i < b.num_v(); ++i) {
    v(i) = b.v_lo(i) + unit(rng) * (b.v_hi(i) - b.v_lo(i));
  }
  y.vg = v.head(b.num_v() - 1);
  y.vref = v(b.num_v() - 1);
  return y;
}

GradCheckResult gradient_check(const GridCase& grid,
                               const GradCheckOptions& options) {
  if (options.directions < 1 || !(options.step > 0.0)) {
    throw ValidationError("gradient check needs directions >= 1 and step > 0");
  }
  const SetpointLayout layout = SetpointLayout::from(grid);
  RestorationOptions ropt;
  ropt.nlp.kkt_tol = options.solve_tol;
  ropt.nlp.max_iter = 500;

  GradCheckResult out;
  out.y = random_setpoints(grid, options.seed);
  const ProjectedGradient pg = projected_gradient(
      grid, out.y, options.weights, options.wv_loss, ropt);
  if (!pg.solved) {
    throw SolverError("gradient check: " + pg.message);
  }
  out.loss = pg.loss;
  out.fallback = pg.fallback;
  VectorXd grad(layout.size());
  grad << pg.d_pg, pg.d_v;
  out.gradient_norm = grad.norm();

  auto loss_at = [&](const VectorXd& yv) {
    const Setpoints y = Setpoints::from_vector(layout, yv);
    const AcOpfProblem problem = build_restoration(grid, y, options.weights);
    const NlpSolution sol = solve_restoration_problem(problem, ropt);
    if (sol.status != NlpStatus::optimal) {
      throw SolverError("gradient check: perturbed restoration " +
                        std::string(to_string(sol.status)));
    }
    return projection_loss(y, extract_solution(problem, sol).y, options.wv_loss)
        .value;
  };

  std::mt19937_64 rng(options.seed + 0x5851f42d4c957f2dULL);
  std::normal_distribution<double> normal(0.0, 1.0);
  const VectorXd y0 = out.y.to_vector();
  for (int k = 0; k < options.directions; ++k) {
    VectorXd d(y0.size());
    for (Eigen::Index i = 0; i < d.size(); ++i) {
      d(i) = normal(rng);
    }
    d.normalize();
    const double analytic = grad.dot(d);
    const double fd = (loss_at(y0 + options.step * d) -
                       loss_at(y0 - options.step * d)) /
                      (2.0 * options.step);
    const double denom = std::max({std::abs(analytic), std::abs(fd),
                                   options.relative_floor * out.gradient_norm,
                                   std::numeric_limits<double>::min()});
    const double rel = std::abs(analytic - fd) / denom;
    out.analytic.push_back(analytic);
    out.finite_difference.push_back(fd);
    out.relative_error.push_back(rel);
    out.max_relative_error = std::max(out.max_relative_error, rel);
  }
  return out;
}

}  // namespace opf_resid
