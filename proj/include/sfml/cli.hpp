#pragma once

#include <cstdint>
#include <optional>
#include <string>

#include <nlohmann/json_fwd.hpp>

namespace sfml::cli {

// Exit codes shared by all subcommands.
inline constexpr int exit_ok = 0;
inline constexpr int exit_config = 2;
inline constexpr int exit_simulate = 3;
inline constexpr int exit_train = 4;
inline constexpr int exit_predict = 5;
inline constexpr int exit_threshold = 6;

struct Overrides {
  std::optional<std::uint64_t> seed;
  std::optional<int> threads;
  std::optional<std::string> out_dir;
};

nlohmann::json load_config(const std::string& path);

/// Effective thread count: --threads flag, else SFML_THREADS, else config,
/// else hardware.
int effective_threads(const nlohmann::json& config, const Overrides& ov);

int run_gen_data(const nlohmann::json& config, const Overrides& ov);
int run_train(const nlohmann::json& config, const Overrides& ov);
int run_predict(const nlohmann::json& config, const Overrides& ov);
int run_validate(const nlohmann::json& config, const Overrides& ov);

/// Maps a thrown error to the subcommand's exit code and prints the message.
int run_guarded(const std::string& subcommand, const nlohmann::json& config,
                const Overrides& ov);

// Config keys read by each subcommand (surfaced in --help).
extern const char* const gen_data_keys;
extern const char* const train_keys;
extern const char* const predict_keys;
extern const char* const validate_keys;

}  // namespace sfml::cli
