#pragma once

#include "mopsan/env/cookgrid.hpp"
#include "mopsan/trainer/agent.hpp"
#include "mopsan/trainer/ppo.hpp"
#include "mopsan/trainer/rollout.hpp"

#include <filesystem>
#include <functional>
#include <memory>
#include <string>

namespace mopsan::train {

struct EtaStats {
  double grad_norm = 0.0;
  int kept = 0;
  int dropped = 0;
  double mean_ratio = 0.0;
};

/// One line of the metrics log.
struct RolloutMetrics {
  long step = 0;
  int rollout = 0;
  int episodes = 0;
  double mean_ep_reward = 0.0;  // NaN when no episode finished during the rollout
  double entropy = 0.0;
  double dpp_reward_mean = 0.0;
  PpoStats san;
  PpoStats mop;
  bool eta_updated = false;
  EtaStats eta;
  std::vector<double> personality_usage;

  [[nodiscard]] std::string json_line() const;
};

/// Owns the environment, the agent and every optimizer of one training run.
/// All randomness flows from a single generator seeded by the config, so a run
/// is reproducible bit for bit.
class Trainer {
 public:
  explicit Trainer(TrainConfig cfg);

  RolloutBatch collect_rollout(int steps);
  PpoStats update_san(const RolloutBatch& batch);
  PpoStats update_mop(const RolloutBatch& batch);
  /// Meta-step on the DPP feature map. `before` holds the partner policy
  /// parameters (context, estimator, bank) that generated `batch`; the current
  /// ones are the result of the update that followed.
  EtaStats update_eta(const RolloutBatch& batch, const std::vector<ad::ParamSet>& before);
  /// Per-sample weights w_s of the meta-gradient, before scaling by lr * beta.
  std::vector<double> eta_weights(const RolloutBatch& batch, const std::vector<ad::ParamSet>& before,
                                  EtaStats* stats = nullptr);
  /// Mean over samples of w_s * r_dpp_s recomputed through the feature map.
  NodeId eta_objective(Tape& tape, const RolloutBatch& batch, const std::vector<double>& weights);

  /// Collect, update, and append to the metrics log. Returns the record.
  RolloutMetrics iterate();
  /// Full run into `out`: config.snapshot, metrics.jsonl and checkpoints.
  void run(const std::filesystem::path& out, const std::function<void(const RolloutMetrics&)>& on_metrics = {});

  Agent& agent() { return *agent_; }
  [[nodiscard]] const env::CookGrid& environment() const { return env_; }
  [[nodiscard]] const TrainConfig& config() const { return cfg_; }
  [[nodiscard]] long steps_done() const { return steps_; }
  std::vector<ad::ParamSet> partner_snapshot();
  ad::Rng& rng() { return rng_; }

 private:
  void reset_episode();
  PpoConfig ppo_config() const;

  TrainConfig cfg_;
  env::CookGrid env_;
  ad::Rng rng_;
  std::unique_ptr<Agent> agent_;
  std::unique_ptr<ad::Adam> actor_opt_, critic_opt_, mop_opt_, mop_critic_opt_, eta_opt_;
  env::GridState state_;
  std::unique_ptr<ctx::History> history_;
  double episode_return_ = 0.0;
  long steps_ = 0;
  int rollouts_ = 0;
};

env::CookGrid make_env(const TrainConfig& cfg);

/// Event bonus for one transition: 3 per onion loaded, 3 for taking a dish
/// while the pot is full and nobody holds a dish or soup, 5 per soup scooped.
double shaping_bonus(const env::GridState& before, const env::StepInfo& info);
/// Linear decay from `scale` at step 0 to zero at `horizon`; constant when horizon is 0.
double shaping_scale(double scale, long step, long horizon);

}  // namespace mopsan::train
