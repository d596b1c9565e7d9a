#include "mopsan/dpp/dpp.hpp"

#include "mopsan/autodiff/linalg.hpp"

#include <stdexcept>

namespace mopsan::dpp {

FeatureMap::FeatureMap(int actions, int hidden, int feature_dim, ad::Rng& rng) : dim_(feature_dim) {
  if (feature_dim < 1) throw std::invalid_argument("feature map: dimension must be positive");
  mlp_ = ad::make_mlp(params_, "dpp.features", {actions, hidden, feature_dim}, rng);
}

NodeId FeatureMap::features(Tape& tape, NodeId dists, bool trainable) {
  return tape.normalize_rows(ad::apply(tape, params_, mlp_, dists, trainable));
}

Matrix FeatureMap::build_features(const Matrix& pers) {
  Tape tape;
  return tape.value(features(tape, tape.constant(pers), false));
}

void FeatureMap::save(const std::filesystem::path& path) { ad::save_checkpoint(path, "dpp", {{"features", &params_}}); }
void FeatureMap::load(const std::filesystem::path& path) { ad::load_checkpoint(path, "dpp", {{"features", &params_}}); }

NodeId dpp_reward(Tape& tape, NodeId features, int k, double jitter) {
  if (!(jitter >= 0.0)) throw std::invalid_argument("dpp jitter must be non-negative");
  return tape.group_logdet(features, k, jitter);
}

double dpp_reward(const Matrix& features, double jitter) {
  Matrix gram = features * features.transpose();
  gram.diagonal().array() += jitter;
  const auto l = ad::cholesky(gram);
  if (!l) throw std::runtime_error("dpp_reward: Cholesky factorization failed");
  return ad::logdet_from_cholesky(*l);
}

}  // namespace mopsan::dpp
