#include "mopsan/trainer/trainer.hpp"

#include <json.hpp>

#include <cmath>
#include <fstream>

namespace mopsan::train {

namespace fs = std::filesystem;

namespace {

Matrix row_of(const env::Obs& o) {
  Matrix m(1, static_cast<Eigen::Index>(o.size()));
  for (std::size_t i = 0; i < o.size(); ++i) m(0, static_cast<Eigen::Index>(i)) = o[i];
  return m;
}

Matrix gather(const Matrix& m, const std::vector<int>& rows) {
  Matrix out(static_cast<Eigen::Index>(rows.size()), m.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = m.row(rows[i]);
  return out;
}

double entropy_of(const Matrix& dist) {
  double h = 0.0;
  for (Eigen::Index a = 0; a < dist.cols(); ++a) {
    if (dist(0, a) > 0.0) h -= dist(0, a) * std::log(dist(0, a));
  }
  return h;
}

nlohmann::json stats_json(const PpoStats& s) {
  return {{"policy_loss", s.policy_loss}, {"value_loss", s.value_loss}, {"entropy", s.entropy},
          {"extra_loss", s.extra_loss},   {"clip_fraction", s.clip_fraction}, {"grad_norm", s.grad_norm}};
}

}  // namespace

env::CookGrid make_env(const TrainConfig& cfg) {
  return env::CookGrid(cfg.layout.empty() ? env::default_layout() : env::load_layout(cfg.layout));
}

double shaping_bonus(const env::GridState& before, const env::StepInfo& info) {
  constexpr double kOnionLoaded = 3.0;
  constexpr double kDishTaken = 3.0;
  constexpr double kSoupScooped = 5.0;
  bool dish_out = false;
  for (const env::Player& p : before.players) dish_out = dish_out || p.held == env::Item::Dish || p.held == env::Item::Soup;
  const bool dish_useful = before.pot_onions == 3 && !dish_out && info.dishes_taken > 0;
  return kOnionLoaded * info.onions_loaded + (dish_useful ? kDishTaken : 0.0) + kSoupScooped * info.soups_scooped;
}

double shaping_scale(double scale, long step, long horizon) {
  if (horizon <= 0) return scale;
  if (step >= horizon) return 0.0;
  return scale * (1.0 - static_cast<double>(step) / static_cast<double>(horizon));
}

std::string RolloutMetrics::json_line() const {
  nlohmann::json j;
  j["step"] = step;
  j["rollout"] = rollout;
  j["episodes"] = episodes;
  j["mean_ep_reward"] = std::isfinite(mean_ep_reward) ? nlohmann::json(mean_ep_reward) : nlohmann::json(nullptr);
  j["entropy"] = entropy;
  j["dpp_reward_mean"] = dpp_reward_mean;
  j["san"] = stats_json(san);
  j["mop"] = stats_json(mop);
  if (eta_updated) {
    j["eta"] = {{"grad_norm", eta.grad_norm}, {"kept", eta.kept}, {"dropped", eta.dropped},
                {"mean_ratio", eta.mean_ratio}};
  }
  j["personality_usage"] = personality_usage;
  return j.dump();
}

Trainer::Trainer(TrainConfig cfg) : cfg_(std::move(cfg)), env_(make_env(cfg_)), rng_(cfg_.seed) {
  cfg_.validate();
  agent_ = std::make_unique<Agent>(cfg_, env_.obs_size(), rng_);
  ad::AdamConfig ac;
  ac.lr = cfg_.lr;
  ac.clip_norm = cfg_.grad_clip;
  actor_opt_ = std::make_unique<ad::Adam>(std::vector<ad::ParamSet*>{&agent_->actor().params()}, ac);
  critic_opt_ = std::make_unique<ad::Adam>(std::vector<ad::ParamSet*>{&agent_->critic().params()}, ac);
  if (agent_->has_mop()) {
    mop::Mop& m = agent_->partner_model();
    mop_opt_ = std::make_unique<ad::Adam>(m.policy_params(), ac);
    mop_critic_opt_ = std::make_unique<ad::Adam>(std::vector<ad::ParamSet*>{&m.critic().params()}, ac);
    ad::AdamConfig ec = ac;
    ec.lr = cfg_.eta_lr;
    eta_opt_ = std::make_unique<ad::Adam>(std::vector<ad::ParamSet*>{&agent_->features().params()}, ec);
    history_ = std::make_unique<ctx::History>(cfg_.context, env_.obs_size());
  }
  reset_episode();
}

void Trainer::reset_episode() {
  state_ = env_.reset(cfg_.seed);
  if (history_) history_->clear();
  episode_return_ = 0.0;
}

PpoConfig Trainer::ppo_config() const {
  PpoConfig p;
  p.clip = cfg_.clip;
  p.entropy = cfg_.entropy;
  p.value_coef = cfg_.value_coef;
  p.epochs = cfg_.epochs;
  p.batch = cfg_.batch;
  return p;
}

std::vector<ad::ParamSet> Trainer::partner_snapshot() {
  std::vector<ad::ParamSet> out;
  for (ad::ParamSet* ps : agent_->partner_model().policy_params()) out.push_back(*ps);
  return out;
}

RolloutBatch Trainer::collect_rollout(int steps) {
  if (steps < 1) throw std::invalid_argument("collect_rollout: steps must be positive");
  const int obs = env_.obs_size();
  const bool with_mop = agent_->has_mop();
  const int k = with_mop ? cfg_.k : 0;
  RolloutBatch b;
  b.obs1.resize(steps, obs);
  b.obs2.resize(steps, obs);
  b.guidance = Matrix::Zero(steps, env::kNumActions);
  b.noise = Matrix::Zero(steps, k);
  b.profile = Matrix::Zero(steps, k);
  b.pers = Matrix::Zero(static_cast<Eigen::Index>(steps) * k, env::kNumActions);
  const std::size_t n = static_cast<std::size_t>(steps);
  b.windows.reserve(n);
  for (auto* v : {&b.logp1, &b.logp2, &b.reward_ex, &b.reward_dpp, &b.reward_mix, &b.value1, &b.value2}) v->resize(n);
  b.act1.resize(n);
  b.act2.resize(n);
  b.done.resize(n);

  snn::Actor& actor = agent_->actor();
  const double shaping = shaping_scale(cfg_.shaping, steps_, cfg_.shaping_horizon);
  for (int t = 0; t < steps; ++t) {
    const auto ti = static_cast<std::size_t>(t);
    const Matrix o1 = row_of(env_.featurize(state_, 0));
    const Matrix o2 = row_of(env_.featurize(state_, 1));
    b.obs1.row(t) = o1;
    b.obs2.row(t) = o2;
    Matrix both(2, obs);
    both << o1, o2;
    const Matrix v = agent_->critic().values(with_mop ? o1 : both);
    b.value1[ti] = v(0, 0);
    if (with_mop) {
      mop::Mop& m = agent_->partner_model();
      b.windows.push_back(history_->window());
      const Matrix xi = m.draw_noise(rng_);
      const mop::PartnerStep ps = m.step(o1, o2, b.windows.back(), xi);
      b.guidance.row(t) = ps.guidance;
      b.noise.row(t) = xi;
      b.profile.row(t) = ps.profile;
      b.pers.middleRows(static_cast<Eigen::Index>(t) * k, k) = ps.pers;
      const Matrix pi1 = actor.probs(o1, ps.guidance);
      std::tie(b.act1[ti], b.logp1[ti]) = mop::Mop::sample(pi1, rng_);
      std::tie(b.act2[ti], b.logp2[ti]) = mop::Mop::sample(ps.policy, rng_);
      b.entropy_sum += entropy_of(pi1);
      b.value2[ti] = m.critic().values(o2)(0, 0);
      b.reward_dpp[ti] = dpp::dpp_reward(agent_->features().build_features(ps.pers), cfg_.jitter);
    } else {
      b.windows.emplace_back();
      const Matrix pi = actor.probs(both, Matrix::Zero(2, env::kNumActions));
      std::tie(b.act1[ti], b.logp1[ti]) = mop::Mop::sample(pi.row(0), rng_);
      std::tie(b.act2[ti], b.logp2[ti]) = mop::Mop::sample(pi.row(1), rng_);
      b.entropy_sum += entropy_of(pi.row(0));
      b.value2[ti] = v(1, 0);
      b.reward_dpp[ti] = 0.0;
    }
    const env::StepResult r = env_.step(state_, {b.act1[ti], b.act2[ti]});
    b.reward_ex[ti] = r.reward + shaping * shaping_bonus(state_, r.info);
    b.reward_mix[ti] = b.reward_ex[ti] + cfg_.beta * b.reward_dpp[ti];
    b.done[ti] = r.done ? 1 : 0;
    if (with_mop) history_->push(env_.featurize(state_, 1), b.act2[ti]);
    state_ = r.state;
    episode_return_ += r.reward;
    if (r.done) {
      b.episode_returns.push_back(episode_return_);
      reset_episode();
    }
  }
  if (!b.done.back()) {
    const Matrix o1 = row_of(env_.featurize(state_, 0));
    const Matrix o2 = row_of(env_.featurize(state_, 1));
    b.bootstrap1 = agent_->critic().values(o1)(0, 0);
    b.bootstrap2 = with_mop ? agent_->partner_model().critic().values(o2)(0, 0) : agent_->critic().values(o2)(0, 0);
  }
  return b;
}

PpoStats Trainer::update_san(const RolloutBatch& batch) {
  const int n = batch.size();
  const int obs = env_.obs_size();
  const bool self_play = !agent_->has_mop();
  const int rows = self_play ? 2 * n : n;
  Matrix x(rows, obs + env::kNumActions);
  Matrix o(rows, obs);
  x.topLeftCorner(n, obs) = batch.obs1;
  x.topRightCorner(n, env::kNumActions) = batch.guidance;
  o.topRows(n) = batch.obs1;
  PpoData data;
  data.actions = batch.act1;
  data.old_logp = batch.logp1;
  data.advantages = batch.adv1;
  data.returns = batch.return_ex;
  if (self_play) {
    // Both seats are played by the same actor and critic.
    x.bottomLeftCorner(n, obs) = batch.obs2;
    x.bottomRightCorner(n, env::kNumActions).setZero();
    o.bottomRows(n) = batch.obs2;
    data.actions.insert(data.actions.end(), batch.act2.begin(), batch.act2.end());
    data.old_logp.insert(data.old_logp.end(), batch.logp2.begin(), batch.logp2.end());
    data.advantages.insert(data.advantages.end(), batch.adv2.begin(), batch.adv2.end());
    data.returns.insert(data.returns.end(), batch.return_mix.begin(), batch.return_mix.end());
  }
  snn::Actor& actor = agent_->actor();
  snn::Critic& critic = agent_->critic();
  const PolicyFn policy = [&](Tape& tape, const std::vector<int>& idx) {
    return PolicyNodes{actor.log_probs(tape, tape.constant(gather(x, idx)), ad::SpikeMode::Hard, true), -1};
  };
  const ValueFn value = [&](Tape& tape, const std::vector<int>& idx) {
    return critic.value(tape, tape.constant(gather(o, idx)), true);
  };
  try {
    return ppo_update(data, policy, value, *actor_opt_, {&actor.params()}, critic_opt_.get(), {&critic.params()},
                      ppo_config(), rng_);
  } catch (const std::runtime_error& e) {
    throw TrainingError(std::string("update_san: ") + e.what() + "; batch: " + batch.summary());
  }
}

namespace {

/// Partner log-probabilities for the given batch rows, plus the bank output node.
std::pair<NodeId, NodeId> partner_log_probs(Tape& tape, mop::Mop& m, const RolloutBatch& batch,
                                            const std::vector<int>& idx, bool noise, bool trainable) {
  std::vector<const ctx::ContextWindow*> windows;
  windows.reserve(idx.size());
  for (int i : idx) windows.push_back(&batch.windows[static_cast<std::size_t>(i)]);
  const NodeId c = m.encoder().encode(tape, windows, trainable);
  const NodeId xi = noise ? tape.constant(gather(batch.noise, idx)) : -1;
  const NodeId p = m.estimator().profile(tape, c, xi, trainable);
  const NodeId pers = m.bank().forward(tape, tape.constant(gather(batch.obs2, idx)), trainable);
  return {tape.log(mop::mixture(tape, p, pers)), pers};
}

}  // namespace

PpoStats Trainer::update_mop(const RolloutBatch& batch) {
  mop::Mop& m = agent_->partner_model();
  dpp::FeatureMap& fm = agent_->features();
  PpoData data{batch.act2, batch.logp2, batch.adv2, batch.return_mix};
  const bool pathwise = cfg_.dpp && cfg_.beta > 0.0;
  const PolicyFn policy = [&](Tape& tape, const std::vector<int>& idx) {
    const auto [lp, pers] = partner_log_probs(tape, m, batch, idx, cfg_.noise, true);
    NodeId extra = -1;
    if (pathwise) {
      // The diversity reward depends on the bank directly, so its gradient is
      // taken through the bank outputs with the feature map held fixed. It is
      // divided by the same spread as the advantages so that both terms keep
      // the proportion they have in the gradient of the mixed return.
      const NodeId r = dpp::dpp_reward(tape, fm.features(tape, pers, false), cfg_.k, cfg_.jitter);
      extra = tape.scale(tape.mean_all(r), -cfg_.beta / batch.adv_scale2);
    }
    return PolicyNodes{lp, extra};
  };
  const ValueFn value = [&](Tape& tape, const std::vector<int>& idx) {
    return m.critic().value(tape, tape.constant(gather(batch.obs2, idx)), true);
  };
  try {
    return ppo_update(data, policy, value, *mop_opt_, m.policy_params(), mop_critic_opt_.get(),
                      {&m.critic().params()}, ppo_config(), rng_);
  } catch (const std::runtime_error& e) {
    throw TrainingError(std::string("update_mop: ") + e.what() + "; batch: " + batch.summary());
  }
}

std::vector<double> Trainer::eta_weights(const RolloutBatch& batch, const std::vector<ad::ParamSet>& before,
                                         EtaStats* stats) {
  mop::Mop& m = agent_->partner_model();
  const std::vector<ad::ParamSet*> sets = m.policy_params();
  if (before.size() != sets.size()) throw std::invalid_argument("eta_weights: snapshot does not match the partner model");
  const int n = batch.size();
  constexpr double kMaxLogRatio = 5.0;
  constexpr int kChunk = 256;

  // u = grad over the updated parameters of mean_t(ratio_t * G_mix_t).
  for (ad::ParamSet* ps : sets) ps->zero_grad();
  std::vector<char> kept(static_cast<std::size_t>(n), 0);
  int n_kept = 0;
  double ratio_sum = 0.0;
  for (int start = 0; start < n; start += kChunk) {
    std::vector<int> idx;
    for (int i = start; i < std::min(n, start + kChunk); ++i) idx.push_back(i);
    Tape tape;
    std::vector<int> acts;
    Matrix old(static_cast<Eigen::Index>(idx.size()), 1), g(static_cast<Eigen::Index>(idx.size()), 1);
    for (std::size_t j = 0; j < idx.size(); ++j) {
      const auto i = static_cast<std::size_t>(idx[j]);
      acts.push_back(batch.act2[i]);
      old(static_cast<Eigen::Index>(j), 0) = batch.logp2[i];
    }
    const NodeId lpa = tape.pick_cols(partner_log_probs(tape, m, batch, idx, cfg_.noise, true).first, acts);
    const Matrix& logr = tape.value(lpa);
    for (std::size_t j = 0; j < idx.size(); ++j) {
      const auto i = static_cast<std::size_t>(idx[j]);
      const double lr = logr(static_cast<Eigen::Index>(j), 0) - old(static_cast<Eigen::Index>(j), 0);
      const bool keep = std::abs(lr) <= kMaxLogRatio;
      kept[i] = keep ? 1 : 0;
      n_kept += keep ? 1 : 0;
      ratio_sum += keep ? std::exp(lr) : 0.0;
      g(static_cast<Eigen::Index>(j), 0) = keep ? batch.return_mix[i] : 0.0;
    }
    const NodeId ratio = tape.exp(tape.sub(lpa, tape.constant(old)));
    tape.backward(tape.sum_all(tape.mul(ratio, tape.constant(g))));
  }
  if (stats != nullptr) {
    stats->kept = n_kept;
    stats->dropped = n - n_kept;
    stats->mean_ratio = n_kept > 0 ? ratio_sum / n_kept : 0.0;
  }
  std::vector<double> w(static_cast<std::size_t>(n), 0.0);
  if (n_kept == 0) return w;
  std::vector<Matrix> u;
  for (ad::ParamSet* ps : sets) {
    for (const ad::Parameter& p : ps->all()) u.push_back(p.grad / n_kept);
  }

  // c_t = u . grad over the pre-update parameters of log m(a_t), one sample at a time.
  std::vector<ad::ParamSet> after;
  for (std::size_t i = 0; i < sets.size(); ++i) {
    after.push_back(*sets[i]);
    sets[i]->copy_values_from(before[i]);
  }
  std::vector<double> c(static_cast<std::size_t>(n), 0.0);
  for (int t = 0; t < n; ++t) {
    if (!kept[static_cast<std::size_t>(t)]) continue;
    for (ad::ParamSet* ps : sets) ps->zero_grad();
    Tape tape;
    const NodeId lp = partner_log_probs(tape, m, batch, {t}, cfg_.noise, true).first;
    tape.backward(tape.pick_cols(lp, {batch.act2[static_cast<std::size_t>(t)]}));
    double dot = 0.0;
    std::size_t slot = 0;
    for (ad::ParamSet* ps : sets) {
      for (const ad::Parameter& p : ps->all()) dot += p.grad.cwiseProduct(u[slot++]).sum();
    }
    c[static_cast<std::size_t>(t)] = dot;
  }
  for (std::size_t i = 0; i < sets.size(); ++i) {
    sets[i]->copy_values_from(after[i]);
    sets[i]->zero_grad();
  }

  // w_s = sum over earlier steps t of the same episode of gamma^(s - t) * c_t.
  for (int s = 0; s < n; ++s) {
    const auto si = static_cast<std::size_t>(s);
    const double carry = (s > 0 && !batch.done[si - 1]) ? cfg_.gamma * w[si - 1] : 0.0;
    w[si] = c[si] + carry;
  }
  return w;
}

NodeId Trainer::eta_objective(Tape& tape, const RolloutBatch& batch, const std::vector<double>& weights) {
  const int n = batch.size();
  Matrix wcol(n, 1);
  for (int i = 0; i < n; ++i) wcol(i, 0) = weights[static_cast<std::size_t>(i)];
  const NodeId feats = agent_->features().features(tape, tape.constant(batch.pers), true);
  const NodeId r = dpp::dpp_reward(tape, feats, cfg_.k, cfg_.jitter);
  return tape.mean_all(tape.mul(r, tape.constant(wcol)));
}

EtaStats Trainer::update_eta(const RolloutBatch& batch, const std::vector<ad::ParamSet>& before) {
  EtaStats stats;
  // The meta-gradient carries a factor beta; with beta = 0 it is exactly zero.
  if (!cfg_.dpp || cfg_.beta == 0.0) return stats;
  const std::vector<double> w = eta_weights(batch, before, &stats);
  Tape tape;
  const NodeId obj = eta_objective(tape, batch, w);
  ad::ParamSet& eta = agent_->features().params();
  eta.zero_grad();
  // Gradient ascent on the extrinsic objective through the inner step of size lr.
  tape.backward(tape.scale(obj, -cfg_.lr * cfg_.beta));
  stats.grad_norm = eta_opt_->step();
  return stats;
}

RolloutMetrics Trainer::iterate() {
  const int n = static_cast<int>(std::min<long>(cfg_.rollout, cfg_.total_steps - steps_));
  if (n < 1) throw std::logic_error("iterate: training budget exhausted");
  RolloutBatch batch = collect_rollout(n);
  compute_returns(batch, cfg_.gamma, cfg_.gae_lambda);
  if (const std::string bad = batch.check(cfg_.beta); !bad.empty()) throw TrainingError("rollout: " + bad);
  if (return_recursion_error(batch.return_ex, batch.reward_ex, batch.done, cfg_.gamma, batch.bootstrap1) > 1e-9 ||
      return_recursion_error(batch.return_mix, batch.reward_mix, batch.done, cfg_.gamma, batch.bootstrap2) > 1e-9) {
    throw TrainingError("rollout: return recursion violated; batch: " + batch.summary());
  }
  const bool with_mop = agent_->has_mop();
  const bool eta_due = with_mop && cfg_.dpp && (rollouts_ + 1) % cfg_.eta_period == 0;
  std::vector<ad::ParamSet> before;
  if (eta_due) before = partner_snapshot();

  RolloutMetrics metrics;
  metrics.san = update_san(batch);
  if (with_mop) {
    metrics.mop = update_mop(batch);
    if (eta_due) {
      metrics.eta = update_eta(batch, before);
      metrics.eta_updated = true;
    }
  }
  steps_ += n;
  ++rollouts_;
  metrics.step = steps_;
  metrics.rollout = rollouts_;
  metrics.episodes = static_cast<int>(batch.episode_returns.size());
  double total = 0.0;
  for (double r : batch.episode_returns) total += r;
  metrics.mean_ep_reward = metrics.episodes > 0 ? total / metrics.episodes : std::nan("");
  metrics.entropy = batch.entropy_sum / n;
  double dsum = 0.0;
  for (double r : batch.reward_dpp) dsum += r;
  metrics.dpp_reward_mean = dsum / n;
  if (with_mop) {
    const Matrix usage = batch.profile.colwise().mean();
    metrics.personality_usage.assign(usage.data(), usage.data() + usage.size());
  }
  return metrics;
}

void Trainer::run(const fs::path& out, const std::function<void(const RolloutMetrics&)>& on_metrics) {
  fs::create_directories(out);
  {
    std::ofstream snap(out / "config.snapshot");
    if (!snap) throw std::runtime_error("train: cannot write '" + (out / "config.snapshot").string() + "'");
    snap << cfg_.snapshot();
  }
  std::ofstream log(out / "metrics.jsonl");
  if (!log) throw std::runtime_error("train: cannot write '" + (out / "metrics.jsonl").string() + "'");
  long next_ckpt = steps_ + cfg_.checkpoint_every;
  long saved = -1;
  while (steps_ < cfg_.total_steps) {
    const RolloutMetrics m = iterate();
    log << m.json_line() << '\n';
    log.flush();
    if (on_metrics) on_metrics(m);
    if (steps_ >= next_ckpt) {
      agent_->save(out, steps_);
      saved = steps_;
      while (next_ckpt <= steps_) next_ckpt += cfg_.checkpoint_every;
    }
  }
  if (saved != steps_) agent_->save(out, steps_);
}

}  // namespace mopsan::train
