#pragma once

#include "mopsan/autodiff/nn.hpp"

#include <utility>

namespace mopsan::snn {

using ad::Matrix;
using ad::NodeId;
using ad::Tape;

struct LifConfig {
  double tau = 2.0;
  double dt = 1.0;
  double v_th = 0.5;
  double v_reset = 0.0;
  int refractory = 0;
  int T = 8;
  double surrogate_width = 0.5;

  [[nodiscard]] double leak() const { return dt / tau; }
  void validate() const;
};

struct LifState {
  Matrix v;
  Matrix refrac;
};

LifState lif_init(int rows, int cols, const LifConfig& cfg);

/// One Euler step outside any tape: integrate, fire, reset, count down refractory time.
std::pair<LifState, Matrix> lif_step(const LifState& state, const Matrix& current, const LifConfig& cfg);

/// Per-step membrane state on a tape.
struct LifNodes {
  NodeId v;
  NodeId refrac;
};

/// Advances a LIF population one step on the tape and returns the spike node.
NodeId lif_step(Tape& tape, LifNodes& state, NodeId current, const LifConfig& cfg, ad::SpikeMode mode);

void require_finite(const Matrix& m, const char* what);

struct ActorConfig {
  int obs_dim = 0;
  int guidance_dim = 6;
  int hidden1 = 64;
  int hidden2 = 64;
  int actions = 6;
  bool spiking = true;
  /// Initial weight scale of the two hidden LIF layers. At scale 1 almost no
  /// neuron reaches threshold; 4 gives firing rates around 0.2 on env features.
  double spike_init_gain = 4.0;
  double readout_gain = 0.01;
  LifConfig lif;
};

/// Actor over concat(obs, guidance). With spiking on, two LIF layers are run
/// for T steps under constant input current and a linear readout maps the
/// time-averaged spikes to action logits; with spiking off the layers are tanh.
class Actor {
 public:
  Actor(ActorConfig cfg, ad::Rng& rng);

  /// Log-probabilities, one row per input row.
  NodeId log_probs(Tape& tape, NodeId input, ad::SpikeMode mode = ad::SpikeMode::Hard, bool trainable = true);
  /// Action distribution for a batch of observations and guidance vectors.
  Matrix probs(const Matrix& obs, const Matrix& guidance);
  /// Mean firing rate of each hidden layer over the last probs() call.
  [[nodiscard]] const std::pair<double, double>& last_rates() const { return rates_; }

  ad::ParamSet& params() { return params_; }
  [[nodiscard]] const ad::ParamSet& params() const { return params_; }
  [[nodiscard]] const ActorConfig& config() const { return cfg_; }
  [[nodiscard]] int input_dim() const { return cfg_.obs_dim + cfg_.guidance_dim; }

 private:
  ActorConfig cfg_;
  ad::ParamSet params_;
  ad::Linear l1_, l2_, out_;
  std::pair<double, double> rates_{0.0, 0.0};
};

/// obs -> hidden tanh -> hidden tanh -> scalar.
class Critic {
 public:
  Critic(int obs_dim, int hidden, ad::Rng& rng);
  NodeId value(Tape& tape, NodeId obs, bool trainable = true);
  Matrix values(const Matrix& obs);

  ad::ParamSet& params() { return params_; }
  [[nodiscard]] const ad::ParamSet& params() const { return params_; }

 private:
  ad::ParamSet params_;
  ad::Mlp mlp_;
};

}  // namespace mopsan::snn
