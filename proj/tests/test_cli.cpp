#include <doctest.h>

#include <unistd.h>

#include <filesystem>
#include <fstream>

#include <nlohmann/json.hpp>

#include "sfml/cli.hpp"
#include "sfml/dataset.hpp"
#include "sfml/flow.hpp"
#include "sfml/predict.hpp"

using namespace sfml;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() / ("sfml_cli_" + std::to_string(::getpid()));
    fs::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path, ec);
  }
  std::string file(const std::string& name) const { return (path / name).string(); }
};

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(in), {});
}

}  // namespace

TEST_CASE("gen-data writes a loadable dataset") {
  TempDir tmp;
  json cfg;
  cfg["system"] = "ou_drift";
  cfg["M"] = 10;
  cfg["seed"] = 5;
  cfg["output"] = tmp.file("smoke.sfml");
  cfg["json_sidecar"] = true;
  CHECK(cli::run_gen_data(cfg, {}) == cli::exit_ok);
  const TrainingSet set = load(tmp.file("smoke.sfml"));
  CHECK(set.meta.M == 10);
  CHECK(set.meta.system_name == "ou_drift");
  CHECK(fs::exists(tmp.file("smoke.sfml") + ".json"));
}

TEST_CASE("config errors exit with code 2") {
  json cfg;
  cfg["M"] = 10;  // no system
  cfg["seed"] = 1;
  cfg["output"] = "nowhere.sfml";
  CHECK(cli::run_guarded("gen-data", cfg, {}) == cli::exit_config);

  json unknown = cfg;
  unknown["system"] = "not_a_system";
  CHECK(cli::run_guarded("gen-data", unknown, {}) == cli::exit_config);

  // a seed must be present somewhere
  json unseeded;
  unseeded["system"] = "ou_drift";
  unseeded["M"] = 1;
  unseeded["output"] = "nowhere.sfml";
  CHECK(cli::run_guarded("gen-data", unseeded, {}) == cli::exit_config);
  cli::Overrides ov;
  ov.seed = 4;
  ov.out_dir = fs::temp_directory_path().string();
  CHECK(cli::run_guarded("gen-data", unseeded, ov) == cli::exit_ok);
}

TEST_CASE("train, predict and validate round a tiny pipeline") {
  TempDir tmp;

  json gen;
  gen["system"] = "ou_drift";
  gen["M"] = 400;
  gen["seed"] = 9;
  gen["output"] = tmp.file("data.sfml");
  REQUIRE(cli::run_gen_data(gen, {}) == cli::exit_ok);

  json tr;
  tr["dataset"] = tmp.file("data.sfml");
  tr["output"] = tmp.file("model.ckpt");
  tr["epochs"] = 0;  // checkpoint of the initialized model
  tr["seed"] = 7;
  tr["history_output"] = tmp.file("history.txt");
  REQUIRE(cli::run_train(tr, {}) == cli::exit_ok);

  const FlowModel flow = load_flow(tmp.file("model.ckpt"));
  const TrainingSet set = load(tmp.file("data.sfml"));
  const FlowModel fresh = build_flow(set, FlowConfig{}, 7);
  CHECK(flow.get_weights() == fresh.get_weights());
  CHECK(fs::exists(tmp.file("history.txt")));

  json pr;
  pr["checkpoint"] = tmp.file("model.ckpt");
  pr["seed"] = 3;
  pr["x0"] = {1.0};
  pr["excitation"] = "0.5*sin(6*t)";
  pr["n_steps"] = 5;
  pr["n_ens"] = 8;
  pr["snapshot_times"] = {0.05};
  pr["output_prefix"] = tmp.file("pred");
  REQUIRE(cli::run_predict(pr, {}) == cli::exit_ok);
  const TrajectoryEnsemble ens = load_ensemble(tmp.file("pred.ens"));
  CHECK(ens.n_ens == 8);
  CHECK(ens.n_steps == 5);
  CHECK(fs::exists(tmp.file("pred_moments.txt")));
  CHECK(fs::exists(tmp.file("pred_hist_t0.05_c0.txt")));

  // reruns are byte-identical
  pr["output_prefix"] = tmp.file("pred2");
  REQUIRE(cli::run_predict(pr, {}) == cli::exit_ok);
  CHECK(slurp(tmp.file("pred.ens")) == slurp(tmp.file("pred2.ens")));

  // malformed expressions exit with the config code
  json bad = pr;
  bad["excitation"] = "0.5*sin(6*t";
  CHECK(cli::run_guarded("predict", bad, {}) == cli::exit_config);

  // the untrained model misses tight thresholds -> exit code 6
  json va;
  va["checkpoint"] = tmp.file("model.ckpt");
  va["seed"] = 13;
  va["scenario"] = {{"x0", {1.0}}, {"excitation", "0.5*sin(6*t)"}, {"T", 0.5}, {"n_ens", 400}};
  va["snapshot_times"] = {0.5};
  va["thresholds"] = {{"w1_max", 0.1}, {"mean_abs_max", 0.05}};
  va["output"] = tmp.file("report.txt");
  CHECK(cli::run_validate(va, {}) == cli::exit_threshold);
  CHECK(fs::exists(tmp.file("report.txt")));

  // without thresholds the report is written and the command succeeds
  va.erase("thresholds");
  va["output"] = tmp.file("report2.txt");
  CHECK(cli::run_validate(va, {}) == cli::exit_ok);
}

TEST_CASE("sampled excitations can come from a file") {
  TempDir tmp;
  {
    std::ofstream u(tmp.file("u.txt"));
    u << "# t u\n";
    for (int i = 0; i <= 100; ++i) u << 0.01 * i << " " << 0.1 * i << "\n";
  }

  json gen;
  gen["system"] = "double_well";
  gen["M"] = 200;
  gen["seed"] = 21;
  gen["output"] = tmp.file("dw.sfml");
  REQUIRE(cli::run_gen_data(gen, {}) == cli::exit_ok);

  json tr;
  tr["dataset"] = tmp.file("dw.sfml");
  tr["output"] = tmp.file("dw.ckpt");
  tr["epochs"] = 0;
  tr["seed"] = 2;
  REQUIRE(cli::run_train(tr, {}) == cli::exit_ok);

  json pr;
  pr["checkpoint"] = tmp.file("dw.ckpt");
  pr["seed"] = 6;
  pr["x0"] = {0.9};
  pr["excitation"] = {{"file", tmp.file("u.txt")}};
  pr["n_steps"] = 10;
  pr["n_ens"] = 4;
  pr["output_prefix"] = tmp.file("dw_pred");
  CHECK(cli::run_predict(pr, {}) == cli::exit_ok);
}

TEST_CASE("spde initial conditions can be given as a field expression") {
  TempDir tmp;
  json gen;
  gen["system"] = "stochastic_heat";
  gen["M"] = 60;
  gen["seed"] = 31;
  gen["output"] = tmp.file("heat.sfml");
  REQUIRE(cli::run_gen_data(gen, {}) == cli::exit_ok);

  json tr;
  tr["dataset"] = tmp.file("heat.sfml");
  tr["output"] = tmp.file("heat.ckpt");
  tr["epochs"] = 0;
  tr["seed"] = 1;
  REQUIRE(cli::run_train(tr, {}) == cli::exit_ok);

  json pr;
  pr["checkpoint"] = tmp.file("heat.ckpt");
  pr["seed"] = 11;
  pr["x0_field_expression"] = "exp(-sin(x)^2)-1";
  pr["excitation"] = "sin(t)";
  pr["n_steps"] = 3;
  pr["n_ens"] = 2;
  pr["output_prefix"] = tmp.file("heat_pred");
  CHECK(cli::run_predict(pr, {}) == cli::exit_ok);
  const TrajectoryEnsemble ens = load_ensemble(tmp.file("heat_pred.ens"));
  CHECK(ens.d == 30);
}
