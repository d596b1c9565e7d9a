#include "mopsan/trainer/agent.hpp"

#include <fstream>
#include <regex>
#include <sstream>

namespace mopsan::train {

namespace fs = std::filesystem;

snn::ActorConfig actor_config(const TrainConfig& cfg, int obs_dim) {
  snn::ActorConfig a;
  a.obs_dim = obs_dim;
  a.hidden1 = cfg.hidden;
  a.hidden2 = cfg.hidden;
  a.spiking = cfg.spiking;
  a.lif.T = cfg.snn_T;
  a.lif.tau = cfg.snn_tau;
  a.lif.v_th = cfg.snn_v_th;
  a.lif.refractory = cfg.snn_refractory;
  a.lif.surrogate_width = cfg.snn_width;
  return a;
}

mop::MopConfig mop_config(const TrainConfig& cfg, int obs_dim) {
  mop::MopConfig m;
  m.k = cfg.k;
  m.obs_dim = obs_dim;
  m.hidden = cfg.hidden;
  m.noise_enabled = cfg.noise;
  m.context.size = cfg.context;
  m.context.enabled = cfg.context_encoder;
  m.context.token_dim = cfg.token_dim;
  m.context.heads = cfg.heads;
  m.context.inner_dim = cfg.inner_dim;
  return m;
}

Agent::Agent(const TrainConfig& cfg, int obs_dim, ad::Rng& rng)
    : cfg_(cfg), actor_(actor_config(cfg, obs_dim), rng), critic_(obs_dim, cfg.hidden, rng) {
  if (cfg.use_mop) {
    mop_ = std::make_unique<mop::Mop>(mop_config(cfg, obs_dim), rng);
    features_ = std::make_unique<dpp::FeatureMap>(6, cfg.dpp_hidden, cfg.dpp_features, rng);
  }
}

mop::Mop& Agent::partner_model() {
  if (!mop_) throw std::logic_error("agent: method '" + cfg_.method + "' has no partner model");
  return *mop_;
}

dpp::FeatureMap& Agent::features() {
  if (!features_) throw std::logic_error("agent: method '" + cfg_.method + "' has no DPP feature map");
  return *features_;
}

std::uint64_t Agent::hash() const {
  std::vector<const ad::ParamSet*> sets = {&actor_.params(), &critic_.params()};
  if (mop_) {
    sets.push_back(&mop_->encoder().params());
    sets.push_back(&mop_->estimator().params());
    sets.push_back(&mop_->bank().params());
    sets.push_back(&mop_->critic().params());
    sets.push_back(&features_->params());
  }
  return ad::hash_params(sets);
}

void Agent::save(const fs::path& dir, long step) {
  fs::create_directories(dir);
  const std::string s = std::to_string(step);
  ad::save_checkpoint(dir / ("san-" + s + ".ckpt"), "san", {{"actor", &actor_.params()}, {"critic", &critic_.params()}});
  if (mop_) {
    mop_->save(dir / ("mop-" + s + ".ckpt"));
    features_->save(dir / ("dpp-" + s + ".ckpt"));
  }
}

void Agent::load(const fs::path& dir, long step) {
  const std::string s = std::to_string(step);
  ad::load_checkpoint(dir / ("san-" + s + ".ckpt"), "san", {{"actor", &actor_.params()}, {"critic", &critic_.params()}});
  if (mop_) {
    mop_->load(dir / ("mop-" + s + ".ckpt"));
    features_->load(dir / ("dpp-" + s + ".ckpt"));
  }
}

long Agent::latest_step(const fs::path& dir) {
  static const std::regex pattern(R"(san-(\d+)\.ckpt)");
  long best = -1;
  if (fs::is_directory(dir)) {
    for (const auto& entry : fs::directory_iterator(dir)) {
      std::smatch m;
      const std::string name = entry.path().filename().string();
      if (std::regex_match(name, m, pattern)) best = std::max(best, std::stol(m[1].str()));
    }
  }
  if (best < 0) throw ad::CheckpointError("checkpoint: no san-<step>.ckpt in '" + dir.string() + "'");
  return best;
}

std::unique_ptr<Agent> Agent::from_run(const fs::path& dir, int obs_dim) {
  const TrainConfig cfg = load_config((dir / "config.snapshot").string());
  ad::Rng rng(cfg.seed);
  auto agent = std::make_unique<Agent>(cfg, obs_dim, rng);
  agent->load(dir, latest_step(dir));
  return agent;
}

}  // namespace mopsan::train
