#include <CLI11.hpp>

#include <iostream>
#include <optional>

#include <nlohmann/json.hpp>

#include "sfml/cli.hpp"
#include "sfml/common.hpp"

int main(int argc, char** argv) {
  CLI::App app{"sfml: learn one-step stochastic flow maps of excited dynamical "
               "systems and predict with them"};
  app.require_subcommand(1);

  struct Args {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::optional<int> threads;
    std::optional<std::string> out_dir;
  };

  auto add_common = [](CLI::App* cmd, Args& args) {
    cmd->add_option("--config", args.config, "JSON config file")->required();
    cmd->add_option("--seed", args.seed, "override the config seed");
    cmd->add_option("--threads", args.threads,
                    "worker cap (above the SFML_THREADS environment variable)");
    cmd->add_option("--out", args.out_dir, "directory prefixed to relative output paths");
  };

  Args gen_args, train_args, predict_args, validate_args;
  auto* gen = app.add_subcommand(
      "gen-data", std::string("generate a snapshot training set from a built-in system; ") +
                      sfml::cli::gen_data_keys);
  add_common(gen, gen_args);
  auto* train = app.add_subcommand(
      "train", std::string("train the conditional flow on a dataset; ") + sfml::cli::train_keys);
  add_common(train, train_args);
  auto* predict = app.add_subcommand(
      "predict", std::string("roll out a trained model under an excitation; ") +
                     sfml::cli::predict_keys);
  add_common(predict, predict_args);
  auto* validate = app.add_subcommand(
      "validate", std::string("compare a trained model against the reference simulator; ") +
                      sfml::cli::validate_keys);
  add_common(validate, validate_args);

  CLI11_PARSE(app, argc, argv);

  auto dispatch = [&](const char* name, const Args& args) {
    sfml::cli::Overrides ov{args.seed, args.threads, args.out_dir};
    try {
      const nlohmann::json config = sfml::cli::load_config(args.config);
      return sfml::cli::run_guarded(name, config, ov);
    } catch (const sfml::ConfigError& e) {
      std::cerr << "config error: " << e.what() << "\n";
      return sfml::cli::exit_config;
    }
  };

  if (gen->parsed()) return dispatch("gen-data", gen_args);
  if (train->parsed()) return dispatch("train", train_args);
  if (predict->parsed()) return dispatch("predict", predict_args);
  if (validate->parsed()) return dispatch("validate", validate_args);
  return 1;
}
