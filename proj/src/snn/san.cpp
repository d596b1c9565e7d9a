#include "mopsan/snn/san.hpp"

#include <cmath>
#include <stdexcept>

namespace mopsan::snn {

void LifConfig::validate() const {
  if (!(tau > 0.0)) throw std::invalid_argument("lif: tau must be positive");
  if (!(dt > 0.0)) throw std::invalid_argument("lif: dt must be positive");
  if (T < 1) throw std::invalid_argument("lif: T must be at least 1");
  if (!(v_th > v_reset)) throw std::invalid_argument("lif: v_th must exceed v_reset");
  if (refractory < 0) throw std::invalid_argument("lif: refractory must be non-negative");
  if (!(surrogate_width > 0.0)) throw std::invalid_argument("lif: surrogate width must be positive");
}

LifState lif_init(int rows, int cols, const LifConfig& cfg) {
  return {Matrix::Constant(rows, cols, cfg.v_reset), Matrix::Zero(rows, cols)};
}

std::pair<LifState, Matrix> lif_step(const LifState& state, const Matrix& current, const LifConfig& cfg) {
  if (current.rows() != state.v.rows() || current.cols() != state.v.cols()) {
    throw ad::ShapeError("lif_step: current shape differs from state");
  }
  LifState next = state;
  Matrix spikes = Matrix::Zero(current.rows(), current.cols());
  const double a = cfg.leak();
  for (Eigen::Index i = 0; i < current.size(); ++i) {
    double& v = next.v.data()[i];
    double& r = next.refrac.data()[i];
    if (r > 0.0) {
      v = cfg.v_reset;
      r -= 1.0;
      continue;
    }
    v = v + a * (current.data()[i] - v);
    if (v >= cfg.v_th) {
      spikes.data()[i] = 1.0;
      v = cfg.v_reset;
      r = cfg.refractory;
    }
  }
  return {std::move(next), std::move(spikes)};
}

NodeId lif_step(Tape& tape, LifNodes& state, NodeId current, const LifConfig& cfg, ad::SpikeMode mode) {
  NodeId v = tape.lif_integrate(state.v, current, cfg.leak());
  if (cfg.refractory > 0) v = tape.where_zero(v, state.refrac, cfg.v_reset);
  const NodeId s = tape.spike(v, cfg.v_th, cfg.surrogate_width, mode);
  state.v = tape.lif_reset(v, s, cfg.v_reset);
  // Refractory neurons were clamped to v_reset above, so they cannot fire here.
  if (cfg.refractory > 0) state.refrac = tape.lif_counter(state.refrac, s, cfg.refractory);
  return s;
}

void require_finite(const Matrix& m, const char* what) {
  if (!m.allFinite()) throw std::domain_error(std::string(what) + ": non-finite input");
}

Actor::Actor(ActorConfig cfg, ad::Rng& rng) : cfg_(cfg) {
  if (cfg_.obs_dim <= 0) throw std::invalid_argument("actor: obs_dim must be positive");
  cfg_.lif.validate();
  const double gain = cfg_.spiking ? cfg_.spike_init_gain : 1.0;
  l1_ = ad::make_linear(params_, "actor.l1", input_dim(), cfg_.hidden1, rng, gain);
  l2_ = ad::make_linear(params_, "actor.l2", cfg_.hidden1, cfg_.hidden2, rng, gain);
  out_ = ad::make_linear(params_, "actor.out", cfg_.hidden2, cfg_.actions, rng, cfg_.readout_gain);
}

NodeId Actor::log_probs(Tape& tape, NodeId input, ad::SpikeMode mode, bool trainable) {
  const NodeId w1 = tape.param(params_[l1_.weight], trainable);
  const NodeId b1 = tape.param(params_[l1_.bias], trainable);
  const NodeId w2 = tape.param(params_[l2_.weight], trainable);
  const NodeId b2 = tape.param(params_[l2_.bias], trainable);
  NodeId features;
  if (!cfg_.spiking) {
    const NodeId h1 = tape.tanh(tape.add_bias(tape.matmul(input, w1), b1));
    features = tape.tanh(tape.add_bias(tape.matmul(h1, w2), b2));
  } else {
    const int rows = tape.rows(input);
    const NodeId current1 = tape.add_bias(tape.matmul(input, w1), b1);
    LifNodes s1{tape.constant(Matrix::Constant(rows, cfg_.hidden1, cfg_.lif.v_reset)),
                tape.zeros(rows, cfg_.hidden1)};
    LifNodes s2{tape.constant(Matrix::Constant(rows, cfg_.hidden2, cfg_.lif.v_reset)),
                tape.zeros(rows, cfg_.hidden2)};
    NodeId total = -1;
    NodeId total1 = -1;
    for (int t = 0; t < cfg_.lif.T; ++t) {
      const NodeId spikes1 = lif_step(tape, s1, current1, cfg_.lif, mode);
      const NodeId current2 = tape.add_bias(tape.matmul(spikes1, w2), b2);
      const NodeId spikes2 = lif_step(tape, s2, current2, cfg_.lif, mode);
      total = total < 0 ? spikes2 : tape.add(total, spikes2);
      total1 = total1 < 0 ? spikes1 : tape.add(total1, spikes1);
    }
    features = tape.scale(total, 1.0 / cfg_.lif.T);
    rates_ = {tape.value(total1).mean() / cfg_.lif.T, tape.value(total).mean() / cfg_.lif.T};
  }
  const NodeId logits = ad::apply(tape, params_, out_, features, trainable);
  return tape.log_softmax_rows(logits);
}

Matrix Actor::probs(const Matrix& obs, const Matrix& guidance) {
  require_finite(obs, "actor obs");
  require_finite(guidance, "actor guidance");
  if (obs.cols() != cfg_.obs_dim || guidance.cols() != cfg_.guidance_dim || obs.rows() != guidance.rows()) {
    throw ad::ShapeError("actor: input shape mismatch");
  }
  Tape tape;
  Matrix x(obs.rows(), input_dim());
  x << obs, guidance;
  const NodeId lp = log_probs(tape, tape.constant(x), ad::SpikeMode::Hard, false);
  return tape.value(lp).array().exp();
}

Critic::Critic(int obs_dim, int hidden, ad::Rng& rng) {
  mlp_ = ad::make_mlp(params_, "critic", {obs_dim, hidden, hidden, 1}, rng);
}

NodeId Critic::value(Tape& tape, NodeId obs, bool trainable) { return ad::apply(tape, params_, mlp_, obs, trainable); }

Matrix Critic::values(const Matrix& obs) {
  require_finite(obs, "critic obs");
  Tape tape;
  return tape.value(value(tape, tape.constant(obs), false));
}

}  // namespace mopsan::snn
