#include "mopsan/mop/mop.hpp"

#include <cmath>
#include <stdexcept>

namespace mopsan::mop {

namespace {
constexpr double kNoiseBiasInit = -3.0;
}  // namespace

Estimator::Estimator(int context_width, int hidden, int k, ad::Rng& rng) : k_(k) {
  if (k < 1) throw std::invalid_argument("estimator: k must be positive");
  weights_ = ad::make_mlp(params_, "pe.weights", {context_width, hidden, k}, rng);
  noise_ = ad::make_mlp(params_, "pe.noise", {context_width, hidden, k}, rng);
  // Start with a faint filter (softplus(-3) ~ 0.05); training sets its scale.
  params_[noise_.layers.back().bias].value.setConstant(kNoiseBiasInit);
}

NodeId Estimator::logits(Tape& tape, NodeId context, bool trainable) {
  return ad::apply(tape, params_, weights_, context, trainable);
}

NodeId Estimator::profile(Tape& tape, NodeId context, NodeId noise, bool trainable) {
  NodeId z = logits(tape, context, trainable);
  if (noise >= 0) {
    const NodeId scale = tape.softplus(ad::apply(tape, params_, noise_, context, trainable));
    z = tape.add(z, tape.mul(noise, scale));
  }
  return tape.softmax_rows(z);
}

Bank::Bank(int obs_dim, int hidden, int k, int actions, ad::Rng& rng) {
  if (k < 1) throw std::invalid_argument("bank: k must be positive");
  for (int i = 0; i < k; ++i) {
    nets_.push_back(ad::make_mlp(params_, "bank" + std::to_string(i), {obs_dim, hidden, hidden, actions}, rng));
  }
}

NodeId Bank::forward(Tape& tape, NodeId obs, bool trainable) {
  std::vector<NodeId> parts;
  parts.reserve(nets_.size());
  for (const ad::Mlp& net : nets_) parts.push_back(tape.softmax_rows(ad::apply(tape, params_, net, obs, trainable)));
  return parts.size() == 1 ? parts[0] : tape.interleave_rows(parts);
}

Matrix Bank::distributions(const Matrix& obs_row) {
  snn::require_finite(obs_row, "bank obs");
  Tape tape;
  return tape.value(forward(tape, tape.constant(obs_row), false));
}

Matrix mixture_policy(const Matrix& profile, const Matrix& pers) {
  if (profile.rows() != 1 || profile.cols() != pers.rows()) throw ad::ShapeError("mixture_policy: shape mismatch");
  Matrix out = Matrix::Zero(1, pers.cols());
  for (Eigen::Index i = 0; i < pers.rows(); ++i) out += profile(0, i) * pers.row(i);
  return out;
}

NodeId mixture(Tape& tape, NodeId profile, NodeId pers) { return tape.group_weighted_sum(profile, pers); }

Mop::Mop(MopConfig cfg, ad::Rng& rng)
    : cfg_(cfg),
      encoder_([&] {
        ctx::ContextConfig c = cfg.context;
        c.obs_dim = cfg.obs_dim;
        c.actions = cfg.actions;
        return c;
      }(), rng),
      estimator_(cfg.context.token_dim, cfg.hidden, cfg.k, rng),
      bank_(cfg.obs_dim, cfg.hidden, cfg.k, cfg.actions, rng),
      critic_(cfg.obs_dim, cfg.hidden, rng) {}

PartnerStep Mop::step(const Matrix& guided_obs, const Matrix& partner_obs, const ctx::ContextWindow& window,
                      const Matrix& noise) {
  snn::require_finite(guided_obs, "mop guided obs");
  snn::require_finite(partner_obs, "mop partner obs");
  Tape tape;
  const NodeId c = encoder_.encode(tape, {&window}, false);
  const bool noisy = cfg_.noise_enabled && noise.size() > 0 && noise.cwiseAbs().maxCoeff() > 0.0;
  const NodeId p = estimator_.profile(tape, c, noisy ? tape.constant(noise) : -1, false);
  Matrix both(2, cfg_.obs_dim);
  both << guided_obs, partner_obs;
  const NodeId pers = bank_.forward(tape, tape.constant(both), false);
  // Rows 0..k-1 belong to the guided agent's observation, k..2k-1 to the partner's.
  const Matrix& all = tape.value(pers);
  PartnerStep out;
  out.profile = tape.value(p);
  out.pers = all.bottomRows(cfg_.k);
  out.guidance = mixture_policy(out.profile, all.topRows(cfg_.k));
  out.policy = mixture_policy(out.profile, out.pers);
  return out;
}

Matrix Mop::guide(const Matrix& obs, const ctx::ContextWindow& partner_window) {
  snn::require_finite(obs, "mop guide obs");
  Tape tape;
  const NodeId c = encoder_.encode(tape, {&partner_window}, false);
  const NodeId p = estimator_.profile(tape, c, -1, false);
  const NodeId pers = bank_.forward(tape, tape.constant(obs), false);
  return tape.value(mixture(tape, p, pers));
}

std::pair<int, double> Mop::sample(const Matrix& dist, ad::Rng& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const double x = u(rng);
  double acc = 0.0;
  int pick = static_cast<int>(dist.cols()) - 1;
  for (Eigen::Index a = 0; a < dist.cols(); ++a) {
    acc += dist(0, a);
    if (x < acc) {
      pick = static_cast<int>(a);
      break;
    }
  }
  // Floating-point slack in the cumulative sum must never select a zero-probability action.
  while (dist(0, pick) <= 0.0 && pick > 0) --pick;
  return {pick, std::log(dist(0, pick))};
}

Matrix Mop::draw_noise(ad::Rng& rng) const {
  Matrix xi = Matrix::Zero(1, cfg_.k);
  if (!cfg_.noise_enabled) return xi;
  std::normal_distribution<double> n(0.0, 1.0);
  for (int i = 0; i < cfg_.k; ++i) xi(0, i) = n(rng);
  return xi;
}

ad::NamedSets Mop::named_params() {
  return {{"context", &encoder_.params()},
          {"estimator", &estimator_.params()},
          {"bank", &bank_.params()},
          {"partner_critic", &critic_.params()}};
}

void Mop::save(const std::filesystem::path& path) { ad::save_checkpoint(path, "mop", named_params()); }
void Mop::load(const std::filesystem::path& path) { ad::load_checkpoint(path, "mop", named_params()); }

}  // namespace mopsan::mop
