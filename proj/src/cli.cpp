#include "opf_resid/cli.hpp"

#include <algorithm>
#include <chrono>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <thread>

#include "CLI11.hpp"
#include "json.hpp"

#include "opf_resid/ac_pf.hpp"
#include "opf_resid/acopf_models.hpp"
#include "opf_resid/dc_opf.hpp"
#include "opf_resid/error.hpp"
#include "opf_resid/evalkit.hpp"
#include "opf_resid/grid_model.hpp"
#include "opf_resid/json_io.hpp"
#include "opf_resid/neural.hpp"
#include "opf_resid/sparse_util.hpp"
#include "opf_resid/trainer.hpp"

namespace opf_resid {

using nlohmann::json;

namespace {

struct Common {
  std::string out_path;
  int threads = 0;
  std::uint64_t seed = 1;
  bool verbose = false;
};

void add_common(CLI::App* cmd, Common& c, bool with_seed = false) {
  cmd->add_option("--out,-o", c.out_path, "Write the result to this file");
  cmd->add_option("--threads", c.threads,
                  "Worker threads (default: OPF_RESID_THREADS, then all cores)");
  if (with_seed) {
    cmd->add_option("--seed", c.seed, "Random seed");
  }
  cmd->add_flag("--verbose,-v", c.verbose, "Print solver progress to stderr");
}

void emit(const json& j, const std::string& path, std::ostream& out) {
  if (path.empty() || path == "-") {
    out << j.dump(2) << '\n';
    return;
  }
  std::ofstream f(path);
  if (!f) {
    throw Error("cannot write " + path);
  }
  f << j.dump(2) << '\n';
}

std::string cpu_model() {
  std::ifstream in("/proc/cpuinfo");
  std::string line;
  while (std::getline(in, line)) {
    if (line.rfind("model name", 0) == 0) {
      const auto pos = line.find(':');
      if (pos != std::string::npos) {
        return line.substr(line.find_first_not_of(' ', pos + 1));
      }
    }
  }
  return "unknown";
}

json hardware(int threads) {
  return {{"cpu", cpu_model()},
          {"hardware_concurrency", std::thread::hardware_concurrency()},
          {"threads", threads}};
}

std::vector<Sample> take(std::vector<Sample> s, int max_count) {
  if (max_count > 0 && static_cast<int>(s.size()) > max_count) {
    s.resize(max_count);
  }
  return s;
}

std::vector<int> parse_branch_list(const std::string& text, const GridCase& grid) {
  std::vector<int> out;
  if (text.empty() || text == "all") {
    for (int l = 0; l < grid.num_branches(); ++l) {
      if (grid.branches[l].in_service) {
        out.push_back(l);
      }
    }
    return out;
  }
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      size_t used = 0;
      const int b = std::stoi(item, &used);
      if (used != item.size()) {
        throw std::invalid_argument(item);
      }
      out.push_back(b);
    } catch (const std::logic_error&) {
      throw ValidationError("--branches: '" + item + "' is not a branch index");
    }
  }
  return out;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out,
            std::ostream& err) {
  CLI::App app{"Residual learning for AC optimal power flow with a "
               "differentiable restoration layer",
               "opf-resid"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Show help for every subcommand");

  Common common;
  std::string case_path, setpoints_path, data_path, config_path, ckpt_path,
      val_path, log_path, init_path, mode = "both", branches;
  double wp = Weights::testing().wp, wv = Weights::testing().wv,
         wo = Weights::testing().wo;
  double tol = 1e-6;
  int max_iter = 200;
  int count = 100, first_id = 0, directions = 20, max_samples = 0,
      repeats = 3;
  double lo = 0.8, hi = 1.2, step = 1e-4, check_tol = 1e-4, min_rcond = 1e-12;
  bool per_sample = false, table = false, no_flow_limits = false;

  // case dump
  auto* case_cmd = app.add_subcommand("case", "Case file utilities");
  case_cmd->require_subcommand(1);
  auto* dump = case_cmd->add_subcommand("dump", "Print the parsed case as JSON");
  dump->add_option("case", case_path, "MATPOWER case file")->required();
  add_common(dump, common);

  auto* dcopf = app.add_subcommand("dcopf", "Solve the DC-OPF");
  dcopf->add_option("case", case_path)->required();
  dcopf->add_flag("--no-flow-limits", no_flow_limits, "Ignore branch ratings");
  add_common(dcopf, common);

  auto* acopf = app.add_subcommand("acopf", "Solve the AC-OPF");
  acopf->add_option("case", case_path)->required();
  acopf->add_option("--tol", tol, "KKT tolerance");
  acopf->add_option("--max-iter", max_iter, "Iteration limit");
  add_common(acopf, common);

  auto* pf = app.add_subcommand("pf", "Newton power flow of given setpoints");
  pf->add_option("case", case_path)->required();
  pf->add_option("--setpoints", setpoints_path,
                 "Setpoints JSON (default: the case file's values)");
  add_common(pf, common);

  auto* restore = app.add_subcommand("restore", "Solve the restoration model");
  restore->add_option("case", case_path)->required();
  restore->add_option("--setpoints", setpoints_path, "Setpoints JSON")->required();
  restore->add_option("--wp", wp, "Active-power projection weight");
  restore->add_option("--wv", wv, "Voltage projection weight");
  restore->add_option("--wo", wo, "Generation cost weight");
  restore->add_option("--tol", tol, "KKT tolerance");
  restore->add_option("--max-iter", max_iter, "Iteration limit");
  add_common(restore, common);

  auto* gen = app.add_subcommand("gen-data", "Sample load scenarios (JSON lines)");
  gen->add_option("case", case_path)->required();
  gen->add_option("--count,-n", count, "Number of samples")->check(CLI::NonNegativeNumber);
  gen->add_option("--lo", lo, "Lower load factor");
  gen->add_option("--hi", hi, "Upper load factor");
  gen->add_option("--first-id", first_id, "Id of the first sample");
  std::uint64_t gen_seed = 7;
  gen->add_option("--seed", gen_seed, "Random seed");
  add_common(gen, common);

  std::optional<std::uint64_t> train_seed;
  auto* train_cmd = app.add_subcommand("train", "Train the residual network");
  train_cmd->add_option("case", case_path)->required();
  train_cmd->add_option("--data", data_path, "Training samples")->required();
  train_cmd->add_option("--config", config_path, "Training config JSON");
  train_cmd->add_option("--val", val_path, "Validation samples");
  train_cmd->add_option("--log", log_path, "Epoch log CSV");
  train_cmd->add_option("--init", init_path, "Start from this checkpoint");
  train_cmd->add_option("--out,-o", ckpt_path, "Checkpoint to write")->required();
  train_cmd->add_option("--summary", common.out_path, "Write the summary here");
  train_cmd->add_option("--threads", common.threads, "Worker threads");
  train_cmd->add_option("--seed", train_seed, "Override the config seed");
  train_cmd->add_flag("--verbose,-v", common.verbose, "Print epoch progress");

  auto* eval = app.add_subcommand("eval", "Evaluate a trained network");
  eval->add_option("case", case_path)->required();
  eval->add_option("--ckpt", ckpt_path, "Checkpoint")->required();
  eval->add_option("--data", data_path, "Test samples")->required();
  eval->add_option("--mode", mode, "restoration, pf or both")
      ->check(CLI::IsMember({"restoration", "pf", "both"}));
  eval->add_option("--wp", wp);
  eval->add_option("--wv", wv);
  eval->add_option("--wo", wo);
  eval->add_option("--repeats", repeats, "Timing repeats")->check(CLI::PositiveNumber);
  eval->add_option("--max-samples", max_samples, "Use at most this many samples");
  eval->add_flag("--per-sample", per_sample, "Include per-sample rows");
  eval->add_flag("--table", table, "Print a table to stderr");
  add_common(eval, common);

  auto* cont = app.add_subcommand("contingency", "Single-branch outage sweep");
  cont->add_option("case", case_path)->required();
  cont->add_option("--ckpt", ckpt_path, "Checkpoint")->required();
  cont->add_option("--data", data_path, "Test samples")->required();
  cont->add_option("--branches", branches,
                   "Comma-separated 0-based branch indices (default: all)");
  cont->add_option("--max-samples", max_samples, "Use at most this many samples");
  cont->add_option("--min-rcond", min_rcond, "Jacobian conditioning threshold");
  add_common(cont, common);

  auto* grad = app.add_subcommand("gradcheck",
                                  "Adjoint gradient against finite differences");
  grad->add_option("case", case_path)->required();
  grad->add_option("--directions", directions, "Random directions")
      ->check(CLI::PositiveNumber);
  grad->add_option("--step", step, "Central-difference step");
  grad->add_option("--max-error", check_tol, "Pass threshold");
  add_common(grad, common, true);

  auto* nn = app.add_subcommand("nn", "Network utilities");
  nn->require_subcommand(1);
  auto* inspect = nn->add_subcommand("inspect", "Print checkpoint shapes and norms");
  inspect->add_option("ckpt", ckpt_path)->required();
  add_common(inspect, common);

  std::vector<std::string> argv_store{"opf-resid"};
  argv_store.insert(argv_store.end(), args.begin(), args.end());
  std::vector<char*> argv;
  for (auto& a : argv_store) {
    argv.push_back(a.data());
  }
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return exit_ok;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return exit_ok;
  } catch (const CLI::ParseError& e) {
    err << "opf-resid: " << e.what() << '\n';
    err << "Run 'opf-resid --help' for usage.\n";
    return exit_usage;
  }

  try {
    const int threads = resolve_threads(common.threads);
    NlpOptions nlp;
    nlp.kkt_tol = tol;
    nlp.max_iter = max_iter;
    nlp.verbose = common.verbose;

    if (dump->parsed()) {
      emit(to_json(load_matpower_case(case_path)), common.out_path, out);
      return exit_ok;
    }
    if (dcopf->parsed()) {
      const GridCase grid = load_matpower_case(case_path);
      DcOpfOptions opt;
      opt.enforce_flow_limits = !no_flow_limits;
      const DcOpfSolution sol = solve_dc_opf(grid, opt);
      emit(to_json(sol, grid), common.out_path, out);
      return sol.status == DcStatus::optimal ? exit_ok : exit_domain_error;
    }
    if (acopf->parsed()) {
      const GridCase grid = load_matpower_case(case_path);
      const SolvedModel m = solve_acopf(grid, nlp);
      json j = to_json(m.opf);
      j["case"] = grid.name;
      emit(j, common.out_path, out);
      return m.nlp.status == NlpStatus::optimal ? exit_ok : exit_domain_error;
    }
    if (pf->parsed()) {
      const GridCase grid = load_matpower_case(case_path);
      const SetpointLayout layout = SetpointLayout::from(grid);
      const Setpoints y = setpoints_path.empty()
                              ? Setpoints::from_case(grid, layout)
                              : load_setpoints(setpoints_path, layout);
      const auto t0 = std::chrono::steady_clock::now();
      const PfResult r = solve_pf(grid, y);
      json j = to_json(r);
      j["seconds"] =
          std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      j["setpoints"] = to_json(y);
      j["violation"] = to_json(state_violation(grid, r.pg_all, r.qg_all, r.v, r.flows));
      j["cost"] = dispatch_cost(grid, r.pg_all);
      emit(j, common.out_path, out);
      return r.converged ? exit_ok : exit_domain_error;
    }
    if (restore->parsed()) {
      const GridCase grid = load_matpower_case(case_path);
      const SetpointLayout layout = SetpointLayout::from(grid);
      const Setpoints y = load_setpoints(setpoints_path, layout);
      const Weights w{wp, wv, wo};
      w.validate();
      RestorationOptions ropt;
      ropt.nlp = nlp;
      const SolvedModel m = solve_restoration(grid, y, w, ropt);
      json j = to_json(m.opf);
      j["case"] = grid.name;
      j["weights"] = {{"wp", wp}, {"wv", wv}, {"wo", wo}};
      if (m.nlp.status == NlpStatus::optimal) {
        const BranchFlows flows = compute_branch_flows(grid, m.opf.v, m.opf.theta);
        j["violation"] =
            to_json(state_violation(grid, m.opf.pg, m.opf.qg, m.opf.v, flows));
      }
      emit(j, common.out_path, out);
      return m.nlp.status == NlpStatus::optimal ? exit_ok : exit_domain_error;
    }
    if (gen->parsed()) {
      const GridCase grid = load_matpower_case(case_path);
      DatasetOptions opt;
      opt.count = count;
      opt.lo = lo;
      opt.hi = hi;
      opt.seed = gen_seed;
      opt.first_id = first_id;
      const auto samples = generate_dataset(grid, opt);
      if (common.out_path.empty() || common.out_path == "-") {
        write_dataset(samples, out);
      } else {
        save_dataset(samples, common.out_path);
      }
      return exit_ok;
    }
    if (train_cmd->parsed()) {
      const GridCase grid = load_matpower_case(case_path);
      TrainConfig config =
          config_path.empty() ? TrainConfig{} : load_train_config(config_path);
      if (train_seed) {
        config.seed = *train_seed;
      }
      if (common.threads > 0) {
        config.threads = common.threads;
      }
      const auto training = load_dataset(data_path);
      const auto validation =
          val_path.empty() ? std::vector<Sample>{} : load_dataset(val_path);
      std::optional<MlpParams> initial;
      if (!init_path.empty()) {
        initial = load_checkpoint(init_path).params;
      }
      TrainHooks hooks;
      if (common.verbose) {
        hooks.on_epoch = [&err](const EpochLog& e) {
          err << "epoch " << e.epoch << " loss " << e.mean_loss << " failures "
              << e.failures << " val_loss " << e.val_loss << " ("
              << e.seconds << " s)\n";
        };
      }
      const TrainResult r = train(grid, training, validation, config, hooks, initial);
      save_checkpoint(r.best, ckpt_path);
      if (!log_path.empty()) {
        std::ofstream f(log_path);
        if (!f) {
          throw Error("cannot write " + log_path);
        }
        write_log_csv(r.log, f);
      }
      json epochs = json::array();
      for (const auto& e : r.log) {
        epochs.push_back({{"epoch", e.epoch},
                          {"mean_loss", e.mean_loss},
                          {"mean_cost", e.mean_cost},
                          {"failures", e.failures},
                          {"fallbacks", e.fallbacks}});
      }
      json j = {{"case", grid.name},
                {"checkpoint", ckpt_path},
                {"best_epoch", r.best.epoch},
                {"epochs_run", r.log.size()},
                {"aborted", r.aborted},
                {"message", r.message},
                {"config", train_config_to_json(config)},
                {"log", std::move(epochs)}};
      emit(j, common.out_path, out);
      if (r.aborted) {
        err << "opf-resid: training aborted: " << r.message << '\n';
        return exit_domain_error;
      }
      return exit_ok;
    }
    if (eval->parsed()) {
      const GridCase grid = load_matpower_case(case_path);
      const Checkpoint ckpt = load_checkpoint(ckpt_path);
      const auto samples = take(load_dataset(data_path), max_samples);
      EvalOptions opt;
      opt.weights = Weights{wp, wv, wo};
      opt.weights.validate();
      opt.restoration.nlp.verbose = common.verbose;
      opt.timing_repeats = repeats;
      opt.threads = threads;
      const auto base = solve_baselines(grid, samples, opt);
      json j = {{"case", grid.name}, {"hardware", hardware(threads)}};
      if (mode != "pf") {
        const EvalSummary s =
            evaluate_restoration_mode(grid, ckpt.params, samples, opt, &base);
        j["restoration"] = to_json(s, per_sample);
        if (table) {
          err << format_table(s);
        }
      }
      if (mode != "restoration") {
        const EvalSummary s = evaluate_pf_mode(grid, ckpt.params, samples, opt, &base);
        j["pf"] = to_json(s, per_sample);
        if (table) {
          err << format_table(s);
        }
      }
      emit(j, common.out_path, out);
      return exit_ok;
    }
    if (cont->parsed()) {
      const GridCase grid = load_matpower_case(case_path);
      const Checkpoint ckpt = load_checkpoint(ckpt_path);
      const auto samples = take(load_dataset(data_path), max_samples);
      ContingencyOptions opt;
      opt.min_rcond = min_rcond;
      opt.threads = threads;
      const ContingencyReport r = contingency_sweep(
          grid, ckpt.params, samples, parse_branch_list(branches, grid), opt);
      json j = to_json(r);
      j["case"] = grid.name;
      j["samples"] = samples.size();
      j["hardware"] = hardware(threads);
      emit(j, common.out_path, out);
      return exit_ok;
    }
    if (grad->parsed()) {
      const GridCase grid = load_matpower_case(case_path);
      GradCheckOptions opt;
      opt.seed = common.seed;
      opt.directions = directions;
      opt.step = step;
      const GradCheckResult r = gradient_check(grid, opt);
      json j = {{"case", grid.name},
                {"seed", common.seed},
                {"loss", r.loss},
                {"gradient_norm", r.gradient_norm},
                {"fallback", r.fallback},
                {"analytic", r.analytic},
                {"finite_difference", r.finite_difference},
                {"relative_error", r.relative_error},
                {"max_relative_error", r.max_relative_error},
                {"threshold", check_tol},
                {"pass", r.max_relative_error <= check_tol}};
      emit(j, common.out_path, out);
      err << "max relative error " << r.max_relative_error << '\n';
      return r.max_relative_error <= check_tol ? exit_ok : exit_domain_error;
    }
    if (inspect->parsed()) {
      const Checkpoint c = load_checkpoint(ckpt_path);
      json layers = json::array();
      for (int l = 0; l < c.params.num_layers(); ++l) {
        const auto w = c.params.weight(l);
        const auto b = c.params.bias(l);
        layers.push_back({{"weight_shape", {w.rows(), w.cols()}},
                          {"bias_size", b.size()},
                          {"weight_norm", w.norm()},
                          {"bias_norm", b.norm()},
                          {"weight_max_abs", w.cwiseAbs().maxCoeff()}});
      }
      json j = {{"case", c.case_name},
                {"epoch", c.epoch},
                {"dims", c.params.dims()},
                {"parameters", c.params.size()},
                {"norm", c.params.values().norm()},
                {"clip_gradient", to_string(c.clip_gradient)},
                {"layers", std::move(layers)}};
      emit(j, common.out_path, out);
      return exit_ok;
    }
  } catch (const Error& e) {
    err << "opf-resid: " << e.what() << '\n';
    return exit_domain_error;
  } catch (const nlohmann::json::exception& e) {
    err << "opf-resid: " << e.what() << '\n';
    return exit_domain_error;
  } catch (const std::exception& e) {
    err << "opf-resid: internal error: " << e.what() << '\n';
    return exit_domain_error;
  }
  err << "opf-resid: no subcommand\n";
  return exit_usage;
}

}  // namespace opf_resid
