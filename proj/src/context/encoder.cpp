#include "mopsan/context/encoder.hpp"

#include <cmath>
#include <stdexcept>

namespace mopsan::ctx {

History::History(int capacity, int obs_dim, int actions) : capacity_(capacity), obs_dim_(obs_dim), actions_(actions) {
  if (capacity < 0) throw std::invalid_argument("history capacity must be non-negative");
}

void History::push(const std::vector<double>& obs, int action) {
  if (capacity_ == 0) return;
  if (static_cast<int>(obs.size()) != obs_dim_) throw std::invalid_argument("history: observation width mismatch");
  if (action < 0 || action >= actions_) throw std::invalid_argument("history: action out of range");
  entries_.emplace_back(obs, action);
  while (static_cast<int>(entries_.size()) > capacity_) entries_.pop_front();
}

ContextWindow History::window() const {
  ContextWindow w;
  w.obs = Matrix::Zero(capacity_, obs_dim_);
  w.act = Matrix::Zero(capacity_, actions_);
  w.length = size();
  const int first = capacity_ - w.length;
  for (int i = 0; i < w.length; ++i) {
    const auto& [obs, action] = entries_[static_cast<std::size_t>(i)];
    for (int j = 0; j < obs_dim_; ++j) w.obs(first + i, j) = obs[static_cast<std::size_t>(j)];
    w.act(first + i, action) = 1.0;
  }
  return w;
}

std::vector<double> token_mask(const ContextWindow& w) {
  const int c = static_cast<int>(w.obs.rows());
  std::vector<double> m(static_cast<std::size_t>(2 * c), 0.0);
  for (int i = c - w.length; i < c; ++i) {
    m[static_cast<std::size_t>(2 * i)] = 1.0;
    m[static_cast<std::size_t>(2 * i + 1)] = 1.0;
  }
  return m;
}

ContextEncoder::ContextEncoder(ContextConfig cfg, ad::Rng& rng) : cfg_(cfg) {
  if (cfg_.size < 0) throw std::invalid_argument("context size must be non-negative");
  if (cfg_.obs_dim <= 0) throw std::invalid_argument("context encoder: obs_dim must be positive");
  const int d = cfg_.token_dim;
  obs_mlp_ = ad::make_mlp(params_, "ctx.obs", {cfg_.obs_dim, d, d}, rng);
  act_mlp_ = ad::make_mlp(params_, "ctx.act", {cfg_.actions, d, d}, rng);
  std::uniform_real_distribution<double> pos(-0.1, 0.1);
  Matrix p(std::max(1, 2 * cfg_.size), d);
  for (Eigen::Index i = 0; i < p.size(); ++i) p.data()[i] = pos(rng);
  pos_ = params_.add("ctx.pos", std::move(p));
  for (int h = 0; h < cfg_.heads; ++h) {
    const std::string tag = "ctx.head" + std::to_string(h);
    q_.push_back(ad::make_linear(params_, tag + ".q", d, cfg_.head_dim, rng));
    k_.push_back(ad::make_linear(params_, tag + ".k", d, cfg_.head_dim, rng));
    v_.push_back(ad::make_linear(params_, tag + ".v", d, cfg_.head_dim, rng));
  }
  out_ = ad::make_linear(params_, "ctx.attn_out", cfg_.heads * cfg_.head_dim, d, rng);
  ln1_gain_ = params_.add("ctx.ln1.gain", Matrix::Ones(1, d));
  ln1_bias_ = params_.add("ctx.ln1.bias", Matrix::Zero(1, d));
  ffn1_ = ad::make_linear(params_, "ctx.ffn1", d, cfg_.inner_dim, rng);
  ffn2_ = ad::make_linear(params_, "ctx.ffn2", cfg_.inner_dim, d, rng);
  ln2_gain_ = params_.add("ctx.ln2.gain", Matrix::Ones(1, d));
  ln2_bias_ = params_.add("ctx.ln2.bias", Matrix::Zero(1, d));
}

NodeId ContextEncoder::layer_norm(Tape& tape, NodeId x, int gain, int bias, bool trainable) {
  const NodeId n = tape.layer_norm_rows(x);
  return tape.add_bias(tape.scale_cols(n, tape.param(params_[gain], trainable)), tape.param(params_[bias], trainable));
}

NodeId ContextEncoder::encode(Tape& tape, const std::vector<const ContextWindow*>& windows, bool trainable,
                              EncodeTrace* trace) {
  const int batch = static_cast<int>(windows.size());
  const int c = cfg_.size;
  const int d = cfg_.token_dim;
  if (batch == 0) throw std::invalid_argument("encode: empty batch");
  if (!cfg_.enabled || c == 0) return tape.zeros(batch, d);

  const int slots = batch * c;
  const int seq = 2 * c;
  Matrix obs(slots, cfg_.obs_dim);
  Matrix act(slots, cfg_.actions);
  Matrix slot_mask(slots * 2, 1);
  Matrix key_mask(batch * seq, seq);
  Matrix pool = Matrix::Zero(batch, batch * seq);
  bool any = false;
  for (int b = 0; b < batch; ++b) {
    const ContextWindow& w = *windows[static_cast<std::size_t>(b)];
    if (w.obs.rows() != c || w.obs.cols() != cfg_.obs_dim || w.act.rows() != c || w.act.cols() != cfg_.actions) {
      throw ad::ShapeError("encode: window shape does not match the encoder configuration");
    }
    obs.middleRows(b * c, c) = w.obs;
    act.middleRows(b * c, c) = w.act;
    const std::vector<double> m = token_mask(w);
    for (int j = 0; j < seq; ++j) {
      slot_mask(b * seq + j, 0) = m[static_cast<std::size_t>(j)];
      for (int i = 0; i < seq; ++i) key_mask(b * seq + i, j) = m[static_cast<std::size_t>(j)];
      if (w.length > 0 && m[static_cast<std::size_t>(j)] != 0.0) pool(b, b * seq + j) = 1.0 / (2.0 * w.length);
    }
    any = any || w.length > 0;
  }
  if (!any) return tape.zeros(batch, d);

  const NodeId o = ad::apply(tape, params_, obs_mlp_, tape.constant(obs), trainable);
  const NodeId a = ad::apply(tape, params_, act_mlp_, tape.constant(act), trainable);
  const NodeId raw = tape.mul_col(tape.interleave_rows({o, a}), tape.constant(slot_mask));
  const NodeId x = tape.add_tiled(raw, tape.param(params_[pos_], trainable));
  const NodeId keys = tape.constant(key_mask);
  if (trace) {
    trace->tokens = raw;
    trace->key_mask = keys;
    trace->attention.clear();
  }

  std::vector<NodeId> heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(cfg_.head_dim));
  for (int h = 0; h < cfg_.heads; ++h) {
    const NodeId q = ad::apply(tape, params_, q_[static_cast<std::size_t>(h)], x, trainable);
    const NodeId k = ad::apply(tape, params_, k_[static_cast<std::size_t>(h)], x, trainable);
    const NodeId v = ad::apply(tape, params_, v_[static_cast<std::size_t>(h)], x, trainable);
    const NodeId probs = tape.masked_softmax(tape.group_scores(q, k, seq, scale), keys);
    if (trace) trace->attention.push_back(probs);
    heads.push_back(tape.group_apply(probs, v, seq));
  }
  const NodeId attn = ad::apply(tape, params_, out_, heads.size() == 1 ? heads[0] : tape.concat_cols(heads), trainable);
  const NodeId h1 = layer_norm(tape, tape.add(x, attn), ln1_gain_, ln1_bias_, trainable);
  const NodeId ff =
      ad::apply(tape, params_, ffn2_, tape.relu(ad::apply(tape, params_, ffn1_, h1, trainable)), trainable);
  const NodeId h2 = layer_norm(tape, tape.add(h1, ff), ln2_gain_, ln2_bias_, trainable);
  return tape.matmul(tape.constant(pool), h2);
}

Matrix ContextEncoder::embed(const ContextWindow& w) {
  Tape tape;
  return tape.value(encode(tape, {&w}, false));
}

}  // namespace mopsan::ctx
