#pragma once

#include "mopsan/autodiff/nn.hpp"
#include "mopsan/context/encoder.hpp"
#include "mopsan/snn/san.hpp"

#include <filesystem>

namespace mopsan::mop {

using ad::Matrix;
using ad::NodeId;
using ad::Tape;

/// Maps a context embedding to mixture weights over k personalities:
/// softmax(weights(c) + noise * softplus(noise_scale(c))).
class Estimator {
 public:
  Estimator(int context_width, int hidden, int k, ad::Rng& rng);

  /// `noise` is a rows x k node of standard-normal draws, or -1 to disable.
  NodeId profile(Tape& tape, NodeId context, NodeId noise, bool trainable = true);
  /// Pre-softmax logits without noise.
  NodeId logits(Tape& tape, NodeId context, bool trainable = true);

  ad::ParamSet& params() { return params_; }
  [[nodiscard]] const ad::ParamSet& params() const { return params_; }
  [[nodiscard]] int k() const { return k_; }
  /// Output layer of the noise-scale head, exposed for tests.
  [[nodiscard]] const ad::Linear& noise_out() const { return noise_.layers.back(); }
  [[nodiscard]] const ad::Mlp& weight_mlp() const { return weights_; }

 private:
  int k_;
  ad::ParamSet params_;
  ad::Mlp weights_, noise_;
};

/// k independent obs -> hidden -> hidden -> actions softmax networks.
class Bank {
 public:
  Bank(int obs_dim, int hidden, int k, int actions, ad::Rng& rng);

  /// Distributions stacked group-major: row r * k + i is personality i on input row r.
  NodeId forward(Tape& tape, NodeId obs, bool trainable = true);
  /// k x actions distributions for one observation.
  Matrix distributions(const Matrix& obs_row);

  ad::ParamSet& params() { return params_; }
  [[nodiscard]] const ad::ParamSet& params() const { return params_; }
  [[nodiscard]] int k() const { return static_cast<int>(nets_.size()); }

 private:
  ad::ParamSet params_;
  std::vector<ad::Mlp> nets_;
};

/// Convex combination sum_i p_i * per_i for one profile (1 x k) and k x actions rows.
Matrix mixture_policy(const Matrix& profile, const Matrix& pers);
/// Batched form: profile rows x k, pers (rows * k) x actions.
NodeId mixture(Tape& tape, NodeId profile, NodeId pers);

struct MopConfig {
  int k = 12;
  int obs_dim = 0;
  int actions = 6;
  int hidden = 64;
  bool noise_enabled = true;
  ctx::ContextConfig context;
};

struct PartnerStep {
  Matrix profile;   // 1 x k
  Matrix guidance;  // 1 x actions, mixture over bank(obs of the guided agent)
  Matrix policy;    // 1 x actions, mixture over bank(obs of the partner)
  Matrix pers;      // k x actions, bank(obs of the partner)
};

/// Partner model: context encoder, personality estimator, personality bank and
/// the partner value head, checkpointed together.
class Mop {
 public:
  Mop(MopConfig cfg, ad::Rng& rng);

  /// One forward pass for the learning phase. `noise` is 1 x k (zeros disable it).
  PartnerStep step(const Matrix& guided_obs, const Matrix& partner_obs, const ctx::ContextWindow& window,
                   const Matrix& noise);
  /// Deterministic guidance for evaluation (noise off).
  Matrix guide(const Matrix& obs, const ctx::ContextWindow& partner_window);

  /// Samples an action from a distribution row; returns (action, log-prob).
  static std::pair<int, double> sample(const Matrix& dist, ad::Rng& rng);
  Matrix draw_noise(ad::Rng& rng) const;

  ctx::ContextEncoder& encoder() { return encoder_; }
  Estimator& estimator() { return estimator_; }
  Bank& bank() { return bank_; }
  snn::Critic& critic() { return critic_; }
  [[nodiscard]] const MopConfig& config() const { return cfg_; }

  /// Parameters trained by the partner policy loss (context, estimator, bank).
  std::vector<ad::ParamSet*> policy_params() { return {&encoder_.params(), &estimator_.params(), &bank_.params()}; }
  ad::NamedSets named_params();

  void save(const std::filesystem::path& path);
  void load(const std::filesystem::path& path);

 private:
  MopConfig cfg_;
  ctx::ContextEncoder encoder_;
  Estimator estimator_;
  Bank bank_;
  snn::Critic critic_;
};

}  // namespace mopsan::mop
