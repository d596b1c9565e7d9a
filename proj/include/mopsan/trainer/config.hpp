#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>

namespace mopsan::train {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Every tunable of a training run. Keys in the flat config text are the
/// dotted names listed in config.cpp.
struct TrainConfig {
  std::string method = "mop-san";
  std::uint64_t seed = 0;
  long total_steps = 100000;
  int rollout = 2048;
  int batch = 64;
  int epochs = 4;
  double gamma = 0.99;
  double gae_lambda = 0.95;  // 1: advantages are plain G - V
  double lr = 3e-4;
  double clip = 0.2;
  double entropy = 0.01;
  double value_coef = 0.5;
  double grad_clip = 0.5;
  int eta_period = 10;
  double eta_lr = 3e-4;
  long checkpoint_every = 50000;
  /// Scale of the event bonuses added to the extrinsic training reward
  /// (onion into pot, dish taken for a full pot, soup scooped). It decays
  /// linearly to zero over shaping_horizon env steps (0: no decay).
  double shaping = 1.0;
  long shaping_horizon = 0;

  bool spiking = true;
  int snn_T = 8;
  double snn_tau = 2.0;
  double snn_v_th = 0.5;
  int snn_refractory = 0;
  double snn_width = 0.5;
  int hidden = 64;

  bool use_mop = true;
  int k = 12;
  bool noise = true;
  int context = 5;
  bool context_encoder = true;
  int token_dim = 64;
  int heads = 2;
  int inner_dim = 256;

  bool dpp = true;
  double beta = 0.5;
  int dpp_features = 16;
  int dpp_hidden = 32;
  double jitter = 1e-6;

  std::string layout;  // empty: built-in default

  /// Throws ConfigError with the offending key.
  void validate() const;
  /// Flat key=value text that parses back to an identical config.
  [[nodiscard]] std::string snapshot() const;
};

/// Parses `key=value` lines; `#` starts a comment. Unknown keys are errors.
std::map<std::string, std::string> parse_flat(const std::string& text);

TrainConfig config_from_text(const std::string& text, TrainConfig base = {});
TrainConfig load_config(const std::string& path);

/// Sets the architecture switches implied by a method tag:
/// dnn, san, mop-san, mop-san-no-dpp, mop-san-no-context.
void apply_method(TrainConfig& cfg, const std::string& method);

/// Command-line seed, then the MOPSAN_SEED environment variable, then the config.
std::uint64_t resolve_seed(std::optional<std::uint64_t> cli, std::uint64_t from_config);

}  // namespace mopsan::train
