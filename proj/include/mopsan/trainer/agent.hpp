#pragma once

#include "mopsan/dpp/dpp.hpp"
#include "mopsan/mop/mop.hpp"
#include "mopsan/snn/san.hpp"
#include "mopsan/trainer/config.hpp"

#include <filesystem>
#include <memory>

namespace mopsan::train {

/// All networks of one learning-phase pair: the ego actor and critic, plus the
/// partner model and DPP feature map when the method uses them.
class Agent {
 public:
  Agent(const TrainConfig& cfg, int obs_dim, ad::Rng& rng);

  snn::Actor& actor() { return actor_; }
  snn::Critic& critic() { return critic_; }
  [[nodiscard]] bool has_mop() const { return mop_ != nullptr; }
  mop::Mop& partner_model();
  dpp::FeatureMap& features();
  [[nodiscard]] const TrainConfig& config() const { return cfg_; }

  /// Hash over every parameter the agent owns.
  [[nodiscard]] std::uint64_t hash() const;

  /// Writes san-<step>.ckpt and, when present, mop-<step>.ckpt and dpp-<step>.ckpt.
  void save(const std::filesystem::path& dir, long step);
  void load(const std::filesystem::path& dir, long step);
  /// Highest step with a san checkpoint in `dir`; throws when there is none.
  static long latest_step(const std::filesystem::path& dir);
  /// Rebuilds an agent from a run directory's config.snapshot and latest checkpoints.
  static std::unique_ptr<Agent> from_run(const std::filesystem::path& dir, int obs_dim);

 private:
  TrainConfig cfg_;
  snn::Actor actor_;
  snn::Critic critic_;
  std::unique_ptr<mop::Mop> mop_;
  std::unique_ptr<dpp::FeatureMap> features_;
};

snn::ActorConfig actor_config(const TrainConfig& cfg, int obs_dim);
mop::MopConfig mop_config(const TrainConfig& cfg, int obs_dim);

}  // namespace mopsan::train
