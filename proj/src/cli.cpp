#include "sfml/cli.hpp"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "sfml/dataset.hpp"
#include "sfml/expression.hpp"
#include "sfml/predict.hpp"
#include "sfml/training.hpp"

namespace sfml::cli {

using nlohmann::json;

namespace {

[[noreturn]] void config_fail(const std::string& msg) { throw ConfigError(msg); }

const json& require_key(const json& j, const char* key) {
  if (!j.contains(key)) config_fail(std::string("missing config key \"") + key + "\"");
  return j.at(key);
}

template <typename T>
T as(const json& j, const char* key) {
  try {
    return require_key(j, key).get<T>();
  } catch (const json::exception& e) {
    config_fail(std::string("config key \"") + key + "\": " + e.what());
  }
}

template <typename T>
T get_or(const json& j, const char* key, T fallback) {
  if (!j.contains(key)) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    config_fail(std::string("config key \"") + key + "\": " + e.what());
  }
}

Eigen::VectorXd as_vector(const json& j, const char* key) {
  const auto v = as<std::vector<double>>(j, key);
  return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

Box box_from_json(const json& j, const char* key) {
  const json& b = require_key(j, key);
  const auto lo = as<std::vector<double>>(b, "lo");
  const auto hi = as<std::vector<double>>(b, "hi");
  if (lo.size() != hi.size()) config_fail(std::string(key) + ": lo/hi lengths differ");
  return Box(Eigen::Map<const Eigen::VectorXd>(lo.data(), static_cast<Eigen::Index>(lo.size())),
             Eigen::Map<const Eigen::VectorXd>(hi.data(), static_cast<Eigen::Index>(hi.size())));
}

std::uint64_t required_seed(const json& config, const Overrides& ov) {
  if (ov.seed) return *ov.seed;
  if (!config.contains("seed")) {
    config_fail("no seed given (set \"seed\" in the config or pass --seed)");
  }
  return as<std::uint64_t>(config, "seed");
}

std::string resolve_output(const std::string& path, const Overrides& ov) {
  namespace fs = std::filesystem;
  fs::path p(path);
  if (ov.out_dir && p.is_relative()) p = fs::path(*ov.out_dir) / p;
  if (p.has_parent_path()) {
    std::error_code ec;
    fs::create_directories(p.parent_path(), ec);
  }
  return p.string();
}

ExcitationSignal excitation_from_json(const json& spec) {
  if (spec.is_string()) {
    return ExcitationSignal::from_expressions({spec.get<std::string>()});
  }
  if (spec.is_array()) {
    return ExcitationSignal::from_expressions(spec.get<std::vector<std::string>>());
  }
  if (!spec.is_object()) config_fail("excitation must be a string, array, or object");
  if (spec.contains("expressions")) {
    return ExcitationSignal::from_expressions(
        spec.at("expressions").get<std::vector<std::string>>());
  }
  if (spec.contains("expression")) {
    return ExcitationSignal::from_expressions({spec.at("expression").get<std::string>()});
  }
  if (spec.contains("values")) {
    // rows [t, u_1, ..., u_nu]
    const auto rows = spec.at("values").get<std::vector<std::vector<double>>>();
    if (rows.empty() || rows.front().size() < 2) {
      config_fail("excitation values need rows [t, u...]");
    }
    const auto n_u = static_cast<int>(rows.front().size()) - 1;
    Eigen::VectorXd grid(rows.size());
    Eigen::MatrixXd values(n_u, rows.size());
    for (std::size_t r = 0; r < rows.size(); ++r) {
      if (static_cast<int>(rows[r].size()) != n_u + 1) {
        config_fail("excitation values rows have inconsistent lengths");
      }
      grid[static_cast<Eigen::Index>(r)] = rows[r][0];
      for (int c = 0; c < n_u; ++c) values(c, static_cast<Eigen::Index>(r)) = rows[r][1 + c];
    }
    return ExcitationSignal::sampled(std::move(grid), std::move(values));
  }
  if (spec.contains("file")) {
    const auto path = spec.at("file").get<std::string>();
    std::ifstream in(path);
    if (!in) config_fail("cannot open excitation file " + path);
    std::vector<std::vector<double>> rows;
    std::string line;
    while (std::getline(in, line)) {
      if (line.empty() || line[0] == '#') continue;
      std::istringstream ls(line);
      std::vector<double> row;
      double v;
      while (ls >> v) row.push_back(v);
      if (!row.empty()) rows.push_back(std::move(row));
    }
    if (rows.empty() || rows.front().size() < 2) {
      config_fail("excitation file " + path + " needs columns: t u1 [u2 ...]");
    }
    json inline_spec;
    inline_spec["values"] = rows;
    return excitation_from_json(inline_spec);
  }
  config_fail("excitation object needs \"expression(s)\", \"values\", or \"file\"");
}

Eigen::VectorXd initial_state_from_json(const json& config, const FlowModel& flow) {
  if (config.contains("x0_field_expression")) {
    // SPDE front end: evaluate the field on the collocation grid and project
    const BuiltinSystem sys = builtin_system(flow.meta.system_name);
    if (sys.kind != SystemKind::spde) {
      config_fail("x0_field_expression only applies to spectral systems");
    }
    const Expression expr =
        Expression::parse(config.at("x0_field_expression").get<std::string>(), "x");
    const Eigen::VectorXd xs = sys.spde->grid_points();
    Eigen::VectorXd field(xs.size());
    for (Eigen::Index i = 0; i < xs.size(); ++i) field[i] = expr.eval(xs[i]);
    return sys.spde->project(field);
  }
  return as_vector(config, "x0");
}

std::vector<double> snapshot_times_from_json(const json& config) {
  return get_or<std::vector<double>>(config, "snapshot_times", {});
}

void write_moments_text(const MomentCurvesNd& m, const std::string& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw FormatError("cannot open " + path + " for writing");
  out << "# t";
  for (int j = 0; j < m.mean.cols(); ++j) out << " mean_" << j;
  for (int j = 0; j < m.stddev.cols(); ++j) out << " std_" << j;
  out << "\n";
  out.precision(10);
  for (Eigen::Index s = 0; s < m.t.size(); ++s) {
    out << m.t[s];
    for (int j = 0; j < m.mean.cols(); ++j) out << " " << m.mean(s, j);
    for (int j = 0; j < m.stddev.cols(); ++j) out << " " << m.stddev(s, j);
    out << "\n";
  }
}

void write_histogram_text(const Histogram& h, const std::string& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw FormatError("cannot open " + path + " for writing");
  out << "# bin_lo bin_hi count\n";
  out.precision(10);
  for (Eigen::Index b = 0; b < h.counts.size(); ++b) {
    out << h.edges[b] << " " << h.edges[b + 1] << " " << h.counts[b] << "\n";
  }
}

}  // namespace

json load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path);
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError("config " + path + " is not valid JSON: " + e.what());
  }
}

int effective_threads(const json& config, const Overrides& ov) {
  if (ov.threads && *ov.threads > 0) return *ov.threads;
  if (const char* env = std::getenv("SFML_THREADS")) {
    const int t = std::atoi(env);
    if (t > 0) return t;
  }
  return resolve_threads(get_or<int>(config, "threads", 0));
}

// ---------------------------------------------------------------------------

int run_gen_data(const json& config, const Overrides& ov) {
  const auto system_name = as<std::string>(config, "system");
  const BuiltinSystem system = builtin_system(system_name);
  const auto M = as<std::uint64_t>(config, "M");
  const auto seed = required_seed(config, ov);
  const int threads = effective_threads(config, ov);
  const double delta = get_or<double>(config, "delta", system.delta);
  const int n_sub = get_or<int>(config, "n_sub", 1);
  const Box x_domain =
      config.contains("x_box") ? box_from_json(config, "x_box") : system.x_domain;
  const Box gamma_domain =
      config.contains("gamma_box") ? box_from_json(config, "gamma_box") : system.gamma_domain;

  const TrainingSet set =
      generate_training_set(system, M, x_domain, gamma_domain, delta, seed, threads, n_sub);

  const auto output = resolve_output(as<std::string>(config, "output"), ov);
  save(set, output, get_or<bool>(config, "json_sidecar", false));
  std::cout << "wrote " << output << ": M=" << set.meta.M << " d=" << set.meta.d
            << " n_gamma=" << set.meta.n_gamma << " delta=" << set.meta.delta
            << " system=" << set.meta.system_name << "\n";
  return exit_ok;
}

int run_train(const json& config, const Overrides& ov) {
  const auto dataset_path = as<std::string>(config, "dataset");
  const TrainingSet set = load(dataset_path);

  TrainConfig cfg;
  cfg.epochs = as<std::int64_t>(config, "epochs");
  cfg.batch_size = get_or<std::int64_t>(config, "batch_size", cfg.batch_size);
  cfg.base_rate = get_or<double>(config, "base_rate", cfg.base_rate);
  cfg.max_rate = get_or<double>(config, "max_rate", cfg.max_rate);
  cfg.gamma = get_or<double>(config, "gamma", cfg.gamma);
  cfg.step_size_iters = get_or<std::int64_t>(config, "step_size_iters", cfg.step_size_iters);
  cfg.cycle_epochs = get_or<std::int64_t>(config, "cycle_epochs", cfg.cycle_epochs);
  cfg.cycle_decay = get_or<double>(config, "cycle_decay", cfg.cycle_decay);
  cfg.weight_decay = get_or<double>(config, "weight_decay", cfg.weight_decay);
  cfg.seed = required_seed(config, ov);
  cfg.dequantize = get_or<bool>(config, "dequantize", set.meta.integer_state);
  cfg.checkpoint_interval = get_or<std::int64_t>(config, "checkpoint_interval", 0);
  cfg.threads = effective_threads(config, ov);
  cfg.validate();

  const auto output = resolve_output(as<std::string>(config, "output"), ov);
  cfg.checkpoint_path = output;

  const auto progress = get_or<std::int64_t>(config, "progress_interval", 50);
  cfg.on_epoch = [progress](const EpochStats& e) {
    if (progress > 0 && (e.epoch % progress == 0)) {
      std::cout << "epoch " << e.epoch << " nll " << e.mean_nll << " lr " << e.lr << "\n";
    }
  };

  TrainResult result;
  if (get_or<bool>(config, "resume", false)) {
    const auto from = get_or<std::string>(config, "resume_from", output);
    result = resume(from, set, cfg);
  } else {
    FlowConfig fc;
    fc.n_layers = get_or<int>(config, "layers", fc.n_layers);
    fc.hidden = get_or<std::vector<int>>(config, "hidden", fc.hidden);
    fc.log_scale_clamp = get_or<double>(config, "s_max", fc.log_scale_clamp);
    FlowModel flow = build_flow(set, fc, cfg.seed);
    result = train(std::move(flow), set, cfg);
  }

  // the checkpoint written by the trainer holds the current weights; keep the
  // best-NLL weights as the published model
  save_checkpoint(result.model, result.state, output);
  if (config.contains("history_output")) {
    save_history_text(result.history,
                      resolve_output(config.at("history_output").get<std::string>(), ov));
  }
  const double final_nll =
      result.history.epochs.empty() ? 0.0 : result.history.epochs.back().mean_nll;
  std::cout << "wrote " << output << ": epochs=" << result.state.epoch
            << " final_nll=" << final_nll << "\n";
  return exit_ok;
}

int run_predict(const json& config, const Overrides& ov) {
  const auto checkpoint = as<std::string>(config, "checkpoint");
  const FlowModel flow = load_flow(checkpoint);
  const auto seed = required_seed(config, ov);
  const int threads = effective_threads(config, ov);

  const Eigen::VectorXd x0 = initial_state_from_json(config, flow);
  const ExcitationSignal u = excitation_from_json(require_key(config, "excitation"));
  int n_steps = 0;
  if (config.contains("n_steps")) {
    n_steps = as<int>(config, "n_steps");
  } else {
    n_steps = static_cast<int>(std::llround(as<double>(config, "T") / flow.meta.delta));
  }
  const int n_ens = get_or<int>(config, "n_ens", 1);
  const double guard_factor = get_or<double>(config, "guard_factor", 1.5);

  const StepModel model = as_step_model(flow, guard_factor);
  int violations = 0;
  const TrajectoryEnsemble ens =
      ensemble(model, x0, u, n_steps, n_ens, seed, threads, &violations);
  if (violations > 0) {
    std::cout << "warning: " << violations << " of " << n_ens
              << " members left the guard box\n";
  }

  const auto prefix = resolve_output(as<std::string>(config, "output_prefix"), ov);
  save_ensemble(ens, prefix + ".ens");
  write_moments_text(moments(ens), prefix + "_moments.txt");
  for (double t : snapshot_times_from_json(config)) {
    const Eigen::MatrixXd snap = ens.slice(ens.step_of(t));
    for (int j = 0; j < ens.d; ++j) {
      std::ostringstream name;
      name << prefix << "_hist_t" << t << "_c" << j << ".txt";
      write_histogram_text(histogram_fd(snap.col(j)), name.str());
    }
  }
  std::cout << "wrote " << prefix << ".ens: n_ens=" << ens.n_ens
            << " n_steps=" << ens.n_steps << " d=" << ens.d << "\n";
  return exit_ok;
}

int run_validate(const json& config, const Overrides& ov) {
  const auto checkpoint = as<std::string>(config, "checkpoint");
  const FlowModel flow = load_flow(checkpoint);
  const auto seed = required_seed(config, ov);
  const int threads = effective_threads(config, ov);
  const auto system_name = get_or<std::string>(config, "system", flow.meta.system_name);
  const BuiltinSystem truth = builtin_system(system_name);

  const json& sc = require_key(config, "scenario");
  Scenario scenario;
  scenario.x0 = config.contains("x0_field_expression")
                    ? initial_state_from_json(config, flow)
                    : as_vector(sc, "x0");
  scenario.u = excitation_from_json(require_key(sc, "excitation"));
  scenario.T = as<double>(sc, "T");
  scenario.n_ens = as<int>(sc, "n_ens");

  const double guard_factor = get_or<double>(config, "guard_factor", 1.5);
  const int truth_n_sub = get_or<int>(config, "truth_n_sub", 1);
  const StepModel model = as_step_model(flow, guard_factor);
  const ValidationReport report = validate(model, truth, scenario,
                                           snapshot_times_from_json(config), seed,
                                           threads, truth_n_sub);

  const auto output = resolve_output(as<std::string>(config, "output"), ov);
  save_report_text(report, output);

  ValidationThresholds thr;
  if (config.contains("thresholds")) {
    const json& t = config.at("thresholds");
    if (t.contains("mean_abs_max")) thr.mean_abs_max = t.at("mean_abs_max").get<double>();
    if (t.contains("std_abs_max")) thr.std_abs_max = t.at("std_abs_max").get<double>();
    if (t.contains("w1_max")) thr.w1_max = t.at("w1_max").get<double>();
    if (t.contains("ks_max")) thr.ks_max = t.at("ks_max").get<double>();
  }
  const bool ok = report.within(thr);
  std::cout << "wrote " << output << ": max mean err "
            << report.mean_abs_err_max.maxCoeff() << ", max std err "
            << report.std_abs_err_max.maxCoeff() << ", "
            << (ok ? "within" : "EXCEEDS") << " thresholds\n";
  return ok ? exit_ok : exit_threshold;
}

int run_guarded(const std::string& subcommand, const json& config, const Overrides& ov) {
  try {
    if (subcommand == "gen-data") return run_gen_data(config, ov);
    if (subcommand == "train") return run_train(config, ov);
    if (subcommand == "predict") return run_predict(config, ov);
    if (subcommand == "validate") return run_validate(config, ov);
    throw ConfigError("unknown subcommand \"" + subcommand + "\"");
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return exit_config;
  } catch (const FormatError& e) {
    std::cerr << "format error: " << e.what() << "\n";
    return exit_config;
  } catch (const SimulationError& e) {
    std::cerr << "simulation error: " << e.what() << "\n";
    return exit_simulate;
  } catch (const TrainingError& e) {
    std::cerr << "training error: " << e.what() << "\n";
    return exit_train;
  } catch (const PredictError& e) {
    std::cerr << "prediction error: " << e.what() << "\n";
    return exit_predict;
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return (subcommand == "train") ? exit_train : exit_predict;
  }
}

const char* const gen_data_keys =
    "config keys: system, M, seed, output, delta?, x_box?{lo,hi}, gamma_box?{lo,hi}, "
    "n_sub?, json_sidecar?, threads?";
const char* const train_keys =
    "config keys: dataset, output, epochs, seed, batch_size?, base_rate?, max_rate?, "
    "gamma?, step_size_iters?, cycle_epochs?, cycle_decay?, weight_decay?, dequantize?, "
    "layers?, hidden?, s_max?, checkpoint_interval?, resume?, resume_from?, "
    "history_output?, progress_interval?, threads?";
const char* const predict_keys =
    "config keys: checkpoint, seed, x0|x0_field_expression, excitation, n_steps|T, "
    "n_ens?, guard_factor?, snapshot_times?, output_prefix, threads?";
const char* const validate_keys =
    "config keys: checkpoint, seed, system?, scenario{x0, excitation, T, n_ens}, "
    "x0_field_expression?, snapshot_times?, thresholds?{mean_abs_max, std_abs_max, "
    "w1_max, ks_max}, truth_n_sub?, guard_factor?, output, threads?";

}  // namespace sfml::cli
