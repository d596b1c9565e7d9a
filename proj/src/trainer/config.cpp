#include "mopsan/trainer/config.hpp"

#include <charconv>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <sstream>
#include <vector>

namespace mopsan::train {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <typename T>
T parse_number(const std::string& key, const std::string& v) {
  T out{};
  const auto* end = v.data() + v.size();
  const auto [ptr, ec] = std::from_chars(v.data(), end, out);
  if (ec != std::errc() || ptr != end) throw ConfigError("config: bad value '" + v + "' for key '" + key + "'");
  return out;
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "1" || v == "true" || v == "on" || v == "yes") return true;
  if (v == "0" || v == "false" || v == "off" || v == "no") return false;
  throw ConfigError("config: bad boolean '" + v + "' for key '" + key + "'");
}

template <typename T>
std::string fmt(T x) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, x);
  return std::string(buf, ptr);
}

struct Field {
  std::string key;
  std::function<void(TrainConfig&, const std::string&)> set;
  std::function<std::string(const TrainConfig&)> get;
};

#define MOPSAN_NUM(name, member, type)                                                          \
  Field {                                                                                        \
    name, [](TrainConfig& c, const std::string& v) { c.member = parse_number<type>(name, v); }, \
        [](const TrainConfig& c) { return fmt(c.member); }                                       \
  }
#define MOPSAN_BOOL(name, member)                                                     \
  Field {                                                                              \
    name, [](TrainConfig& c, const std::string& v) { c.member = parse_bool(name, v); }, \
        [](const TrainConfig& c) { return std::string(c.member ? "true" : "false"); }  \
  }

const std::vector<Field>& fields() {
  static const std::vector<Field> all = {
      Field{"train.method", [](TrainConfig& c, const std::string& v) { c.method = v; },
            [](const TrainConfig& c) { return c.method; }},
      Field{"train.seed", [](TrainConfig& c, const std::string& v) { c.seed = parse_number<std::uint64_t>("train.seed", v); },
            [](const TrainConfig& c) { return std::to_string(c.seed); }},
      MOPSAN_NUM("train.total_steps", total_steps, long),
      MOPSAN_NUM("train.rollout", rollout, int),
      MOPSAN_NUM("train.batch", batch, int),
      MOPSAN_NUM("train.epochs", epochs, int),
      MOPSAN_NUM("train.gamma", gamma, double),
      MOPSAN_NUM("train.gae_lambda", gae_lambda, double),
      MOPSAN_NUM("train.lr", lr, double),
      MOPSAN_NUM("train.clip", clip, double),
      MOPSAN_NUM("train.entropy", entropy, double),
      MOPSAN_NUM("train.value_coef", value_coef, double),
      MOPSAN_NUM("train.grad_clip", grad_clip, double),
      MOPSAN_NUM("train.eta_period", eta_period, int),
      MOPSAN_NUM("train.eta_lr", eta_lr, double),
      MOPSAN_NUM("train.checkpoint_every", checkpoint_every, long),
      MOPSAN_NUM("train.shaping", shaping, double),
      MOPSAN_NUM("train.shaping_horizon", shaping_horizon, long),
      MOPSAN_BOOL("snn.spiking", spiking),
      MOPSAN_NUM("snn.T", snn_T, int),
      MOPSAN_NUM("snn.tau", snn_tau, double),
      MOPSAN_NUM("snn.v_th", snn_v_th, double),
      MOPSAN_NUM("snn.refractory", snn_refractory, int),
      MOPSAN_NUM("snn.surrogate_width", snn_width, double),
      MOPSAN_NUM("snn.hidden", hidden, int),
      MOPSAN_BOOL("mop.enabled", use_mop),
      MOPSAN_NUM("mop.k", k, int),
      MOPSAN_BOOL("mop.noise_enabled", noise),
      MOPSAN_NUM("context.size", context, int),
      MOPSAN_BOOL("context.enabled", context_encoder),
      MOPSAN_NUM("context.token_dim", token_dim, int),
      MOPSAN_NUM("context.heads", heads, int),
      MOPSAN_NUM("context.inner_dim", inner_dim, int),
      MOPSAN_BOOL("dpp.enabled", dpp),
      MOPSAN_NUM("dpp.beta", beta, double),
      MOPSAN_NUM("dpp.feature_dim", dpp_features, int),
      MOPSAN_NUM("dpp.hidden", dpp_hidden, int),
      MOPSAN_NUM("dpp.jitter", jitter, double),
      Field{"env.layout", [](TrainConfig& c, const std::string& v) { c.layout = v; },
            [](const TrainConfig& c) { return c.layout; }},
  };
  return all;
}

#undef MOPSAN_NUM
#undef MOPSAN_BOOL

}  // namespace

void TrainConfig::validate() const {
  auto fail = [](const std::string& key, const std::string& why) { throw ConfigError("config: " + key + " " + why); };
  if (!(gamma >= 0.0 && gamma < 1.0)) fail("train.gamma", "must lie in [0, 1)");
  if (!(gae_lambda >= 0.0 && gae_lambda <= 1.0)) fail("train.gae_lambda", "must lie in [0, 1]");
  if (!(beta >= 0.0)) fail("dpp.beta", "must be non-negative");
  if (rollout < 1) fail("train.rollout", "must be positive");
  if (batch < 1 || rollout % batch != 0) fail("train.batch", "must divide train.rollout");
  if (epochs < 1) fail("train.epochs", "must be positive");
  if (total_steps < 1) fail("train.total_steps", "must be positive");
  if (!(lr > 0.0)) fail("train.lr", "must be positive");
  if (!(eta_lr >= 0.0)) fail("train.eta_lr", "must be non-negative");
  if (!(clip > 0.0)) fail("train.clip", "must be positive");
  if (!(entropy >= 0.0)) fail("train.entropy", "must be non-negative");
  if (eta_period < 1) fail("train.eta_period", "must be positive");
  if (checkpoint_every < 1) fail("train.checkpoint_every", "must be positive");
  if (!(shaping >= 0.0)) fail("train.shaping", "must be non-negative");
  if (shaping_horizon < 0) fail("train.shaping_horizon", "must be non-negative");
  if (snn_T < 1) fail("snn.T", "must be positive");
  if (!(snn_tau > 0.0)) fail("snn.tau", "must be positive");
  if (snn_refractory < 0) fail("snn.refractory", "must be non-negative");
  if (!(snn_width > 0.0)) fail("snn.surrogate_width", "must be positive");
  if (hidden < 1) fail("snn.hidden", "must be positive");
  if (k < 1) fail("mop.k", "must be positive");
  if (context < 0) fail("context.size", "must be non-negative");
  if (token_dim < 1) fail("context.token_dim", "must be positive");
  if (heads < 1) fail("context.heads", "must be positive");
  if (inner_dim < 1) fail("context.inner_dim", "must be positive");
  if (dpp_features < 1) fail("dpp.feature_dim", "must be positive");
  if (dpp_hidden < 1) fail("dpp.hidden", "must be positive");
  if (!(jitter >= 0.0)) fail("dpp.jitter", "must be non-negative");
}

std::string TrainConfig::snapshot() const {
  std::string out;
  for (const Field& f : fields()) out += f.key + "=" + f.get(*this) + "\n";
  return out;
}

std::map<std::string, std::string> parse_flat(const std::string& text) {
  std::map<std::string, std::string> out;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("config: line " + std::to_string(lineno) + " has no '='");
    const std::string key = trim(line.substr(0, eq));
    if (key.empty()) throw ConfigError("config: line " + std::to_string(lineno) + " has an empty key");
    out[key] = trim(line.substr(eq + 1));
  }
  return out;
}

TrainConfig config_from_text(const std::string& text, TrainConfig base) {
  const auto kv = parse_flat(text);
  if (const auto m = kv.find("train.method"); m != kv.end()) apply_method(base, m->second);
  for (const auto& [key, value] : kv) {
    bool known = false;
    for (const Field& f : fields()) {
      if (f.key == key) {
        f.set(base, value);
        known = true;
        break;
      }
    }
    if (!known) throw ConfigError("config: unknown key '" + key + "'");
  }
  base.validate();
  return base;
}

TrainConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot open '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return config_from_text(ss.str());
}

void apply_method(TrainConfig& cfg, const std::string& method) {
  cfg.method = method;
  if (method == "dnn") {
    cfg.spiking = false;
    cfg.use_mop = false;
  } else if (method == "san") {
    cfg.spiking = true;
    cfg.use_mop = false;
  } else if (method == "mop-san") {
    cfg.spiking = true;
    cfg.use_mop = true;
  } else if (method == "mop-san-no-dpp") {
    cfg.spiking = true;
    cfg.use_mop = true;
    cfg.beta = 0.0;
  } else if (method == "mop-san-no-context") {
    cfg.spiking = true;
    cfg.use_mop = true;
    cfg.context_encoder = false;
  } else {
    throw ConfigError("config: unknown method '" + method + "'");
  }
}

std::uint64_t resolve_seed(std::optional<std::uint64_t> cli, std::uint64_t from_config) {
  if (cli) return *cli;
  if (const char* env = std::getenv("MOPSAN_SEED"); env != nullptr && *env != '\0') {
    return parse_number<std::uint64_t>("MOPSAN_SEED", env);
  }
  return from_config;
}

}  // namespace mopsan::train
