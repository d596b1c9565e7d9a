#pragma once

#include "mopsan/autodiff/nn.hpp"

#include <deque>
#include <vector>

namespace mopsan::ctx {

using ad::Matrix;
using ad::NodeId;
using ad::Tape;

struct ContextConfig {
  int size = 5;  // C: number of (obs, action) pairs kept
  int obs_dim = 0;
  int actions = 6;
  int token_dim = 64;
  int heads = 2;
  int head_dim = 64;
  int inner_dim = 256;
  bool enabled = true;
};

/// Fixed-size, right-aligned copy of a history: row C-1 is the newest pair,
/// rows before C-length are padding.
struct ContextWindow {
  Matrix obs;  // C x obs_dim
  Matrix act;  // C x actions (one-hot)
  int length = 0;
};

/// The partner's last C (observation, action) pairs, oldest first.
class History {
 public:
  History(int capacity, int obs_dim, int actions = 6);
  void push(const std::vector<double>& obs, int action);
  void clear() { entries_.clear(); }
  [[nodiscard]] int size() const { return static_cast<int>(entries_.size()); }
  [[nodiscard]] int capacity() const { return capacity_; }
  [[nodiscard]] ContextWindow window() const;

 private:
  int capacity_;
  int obs_dim_;
  int actions_;
  std::deque<std::pair<std::vector<double>, int>> entries_;
};

/// Token-level mask for a window: 2C entries, o/a interleaved oldest first.
std::vector<double> token_mask(const ContextWindow& w);

/// Intermediate nodes exposed for tests.
struct EncodeTrace {
  NodeId tokens = -1;
  NodeId key_mask = -1;
  std::vector<NodeId> attention;
};

/// Single-block transformer over interleaved obs/action tokens with learned
/// positions, masked attention and mean pooling over real tokens.
class ContextEncoder {
 public:
  ContextEncoder(ContextConfig cfg, ad::Rng& rng);

  /// One embedding row per window. Empty windows, C = 0 or a disabled encoder
  /// yield zero rows.
  NodeId encode(Tape& tape, const std::vector<const ContextWindow*>& windows, bool trainable = true,
                EncodeTrace* trace = nullptr);
  Matrix embed(const ContextWindow& w);

  ad::ParamSet& params() { return params_; }
  [[nodiscard]] const ad::ParamSet& params() const { return params_; }
  [[nodiscard]] const ContextConfig& config() const { return cfg_; }
  [[nodiscard]] int width() const { return cfg_.token_dim; }

 private:
  NodeId layer_norm(Tape& tape, NodeId x, int gain, int bias, bool trainable);

  ContextConfig cfg_;
  ad::ParamSet params_;
  ad::Mlp obs_mlp_, act_mlp_;
  int pos_ = -1;
  std::vector<ad::Linear> q_, k_, v_;
  ad::Linear out_;
  int ln1_gain_ = -1, ln1_bias_ = -1;
  ad::Linear ffn1_, ffn2_;
  int ln2_gain_ = -1, ln2_bias_ = -1;
};

}  // namespace mopsan::ctx
