#pragma once

#include "mopsan/autodiff/nn.hpp"

#include <filesystem>

namespace mopsan::dpp {

using ad::Matrix;
using ad::NodeId;
using ad::Tape;

struct DppConfig {
  bool enabled = true;
  int feature_dim = 16;
  int hidden = 32;
  double jitter = 1e-6;
  double beta = 0.5;
};

/// Action distribution -> unit-norm feature row.
class FeatureMap {
 public:
  FeatureMap(int actions, int hidden, int feature_dim, ad::Rng& rng);

  NodeId features(Tape& tape, NodeId dists, bool trainable = true);
  Matrix build_features(const Matrix& pers);

  ad::ParamSet& params() { return params_; }
  [[nodiscard]] const ad::ParamSet& params() const { return params_; }
  [[nodiscard]] int dim() const { return dim_; }

  void save(const std::filesystem::path& path);
  void load(const std::filesystem::path& path);

 private:
  ad::ParamSet params_;
  ad::Mlp mlp_;
  int dim_;
};

/// log det(B B^T + jitter I) per group of k feature rows.
NodeId dpp_reward(Tape& tape, NodeId features, int k, double jitter);
/// Single k x d feature matrix.
double dpp_reward(const Matrix& features, double jitter);

}  // namespace mopsan::dpp
