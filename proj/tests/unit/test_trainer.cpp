#include "mopsan/trainer/trainer.hpp"

#include <doctest.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

using namespace mopsan;
using namespace mopsan::train;
using ad::Rng;
namespace fs = std::filesystem;

namespace {

TrainConfig small_config(const std::string& method = "mop-san") {
  TrainConfig c;
  apply_method(c, method);
  c.k = 4;
  c.rollout = 64;
  c.batch = 16;
  c.epochs = 2;
  c.hidden = 16;
  c.token_dim = 16;
  c.inner_dim = 32;
  c.dpp_hidden = 8;
  c.dpp_features = 8;
  c.total_steps = 128;
  c.seed = 3;
  return c;
}

fs::path scratch_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("mopsan_trainer_" + name);
  fs::remove_all(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

Matrix gather_rows(const Matrix& m, const std::vector<int>& rows) {
  Matrix out(static_cast<Eigen::Index>(rows.size()), m.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = m.row(rows[i]);
  return out;
}

/// Log-probability of every taken partner action, recomputed from the batch.
std::vector<double> partner_logp(mop::Mop& m, const RolloutBatch& b, bool noise) {
  std::vector<int> idx(static_cast<std::size_t>(b.size()));
  for (int i = 0; i < b.size(); ++i) idx[static_cast<std::size_t>(i)] = i;
  std::vector<const ctx::ContextWindow*> windows;
  for (const auto& w : b.windows) windows.push_back(&w);
  Tape tape;
  const NodeId c = m.encoder().encode(tape, windows, false);
  const NodeId xi = noise ? tape.constant(b.noise) : -1;
  const NodeId p = m.estimator().profile(tape, c, xi, false);
  const NodeId pers = m.bank().forward(tape, tape.constant(b.obs2), false);
  const Matrix& lp = tape.value(tape.pick_cols(tape.log(mop::mixture(tape, p, pers)), b.act2));
  return {lp.data(), lp.data() + lp.size()};
}

double set_grad_norm(const ad::ParamSet& ps) {
  double s = 0.0;
  for (const auto& p : const_cast<ad::ParamSet&>(ps).all()) s += p.grad.squaredNorm();
  return std::sqrt(s);
}

}  // namespace

TEST_CASE("discounted returns match hand-computed sums") {
  const auto g = discounted_returns({0, 0, 20}, {0, 0, 0}, 0.99);
  CHECK(g[0] == doctest::Approx(19.602).epsilon(1e-12));
  CHECK(g[1] == doctest::Approx(19.8));
  CHECK(g[2] == doctest::Approx(20.0));

  const auto g0 = discounted_returns({1, 2, 3}, {0, 0, 0}, 0.0);
  CHECK(g0 == std::vector<double>{1, 2, 3});

  // An episode ending at t = 1 hides every later reward from t = 0.
  const auto b = discounted_returns({1, 2, 100}, {0, 1, 0}, 0.9);
  CHECK(b[0] == doctest::Approx(1 + 0.9 * 2));
  CHECK(b[1] == doctest::Approx(2.0));

  const auto boot = discounted_returns({0, 0}, {0, 0}, 0.5, 8.0);
  CHECK(boot[1] == doctest::Approx(4.0));
  CHECK(boot[0] == doctest::Approx(2.0));
}

TEST_CASE("return recursion holds on random reward streams") {
  Rng rng(11);
  std::uniform_real_distribution<double> r(-5, 20);
  std::bernoulli_distribution d(0.05);
  for (int trial = 0; trial < 50; ++trial) {
    const int n = 1 + static_cast<int>(rng() % 300);
    std::vector<double> rew(static_cast<std::size_t>(n));
    std::vector<char> done(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
      rew[static_cast<std::size_t>(i)] = r(rng);
      done[static_cast<std::size_t>(i)] = d(rng) ? 1 : 0;
    }
    const double gamma = std::uniform_real_distribution<double>(0, 0.999)(rng);
    const double boot = r(rng);
    const auto g = discounted_returns(rew, done, gamma, boot);
    CHECK(return_recursion_error(g, rew, done, gamma, boot) < 1e-9);
  }
  CHECK(return_recursion_error({1.0, 1.0}, {0.0, 1.0}, {0, 0}, 0.5) == doctest::Approx(0.5));
}

TEST_CASE("advantage estimates reduce to G - V at lambda 1") {
  Rng rng(5);
  std::uniform_real_distribution<double> u(-3, 3);
  const int n = 200;
  std::vector<double> rew(n), val(n);
  std::vector<char> done(n, 0);
  for (int i = 0; i < n; ++i) {
    rew[static_cast<std::size_t>(i)] = u(rng);
    val[static_cast<std::size_t>(i)] = u(rng);
    done[static_cast<std::size_t>(i)] = (i % 37 == 36) ? 1 : 0;
  }
  const auto g = discounted_returns(rew, done, 0.99, 1.5);
  const auto a = gae_advantages(rew, val, done, 0.99, 1.0, 1.5);
  for (int i = 0; i < n; ++i) {
    const auto s = static_cast<std::size_t>(i);
    CHECK(a[s] == doctest::Approx(g[s] - val[s]).epsilon(1e-10));
  }
  // lambda = 0 is the one-step temporal difference.
  const auto td = gae_advantages({1.0, 2.0}, {0.5, 0.25}, {0, 1}, 0.9, 0.0, 100.0);
  CHECK(td[0] == doctest::Approx(1.0 + 0.9 * 0.25 - 0.5));
  CHECK(td[1] == doctest::Approx(2.0 - 0.25));
}

TEST_CASE("normalize gives mean 0 and std 1, or centres a constant vector") {
  const auto z = normalize({1, 2, 3, 4});
  double m = 0, v = 0;
  for (double x : z) m += x / 4;
  for (double x : z) v += (x - m) * (x - m) / 4;
  CHECK(m == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(v == doctest::Approx(1.0));
  CHECK(normalize({2, 2, 2}) == std::vector<double>{0, 0, 0});
}

TEST_CASE("config parsing, validation and snapshot round trip") {
  const TrainConfig c = config_from_text("# desk run\ntrain.method = mop-san\nmop.k=4\ncontext.size=5\ndpp.beta=0.25\n");
  CHECK(c.k == 4);
  CHECK(c.context == 5);
  CHECK(c.beta == 0.25);
  CHECK(c.gamma == 0.99);
  CHECK(c.lr == 3e-4);
  CHECK(c.batch == 64);

  CHECK_THROWS_AS(config_from_text("mop.kk=4"), ConfigError);
  CHECK_THROWS_AS(config_from_text("mop.k"), ConfigError);
  CHECK_THROWS_AS(config_from_text("train.gamma=1.0"), ConfigError);
  CHECK_THROWS_AS(config_from_text("dpp.beta=-0.1"), ConfigError);
  CHECK_THROWS_AS(config_from_text("train.batch=100"), ConfigError);
  CHECK_THROWS_AS(config_from_text("mop.k=four"), ConfigError);

  TrainConfig odd = small_config("mop-san-no-context");
  odd.gamma = 0.987654321;
  odd.layout = "layouts/tiny.txt";
  const TrainConfig back = config_from_text(odd.snapshot());
  CHECK(back.snapshot() == odd.snapshot());
  CHECK(back.gamma == odd.gamma);
  CHECK_FALSE(back.context_encoder);
  CHECK(back.layout == odd.layout);

  // Round numbers of steps must come back as integers.
  TrainConfig desk;
  desk.total_steps = 100'000;
  desk.checkpoint_every = 1'000'000;
  CHECK(desk.snapshot().find("train.total_steps=100000\n") != std::string::npos);
  CHECK(config_from_text(desk.snapshot()).total_steps == 100'000);
  CHECK(config_from_text(desk.snapshot()).checkpoint_every == 1'000'000);
}

TEST_CASE("method tags select the baselines") {
  TrainConfig c;
  apply_method(c, "dnn");
  CHECK_FALSE(c.spiking);
  CHECK_FALSE(c.use_mop);
  apply_method(c, "san");
  CHECK(c.spiking);
  CHECK_FALSE(c.use_mop);
  apply_method(c, "mop-san-no-dpp");
  CHECK(c.use_mop);
  CHECK(c.beta == 0.0);
  CHECK_THROWS_AS(apply_method(c, "ppo"), ConfigError);

  Rng rng(1);
  Agent dnn(small_config("dnn"), 71, rng);
  CHECK_FALSE(dnn.has_mop());
  CHECK_THROWS_AS(dnn.partner_model(), std::logic_error);
}

TEST_CASE("seed precedence is command line, then environment, then config") {
  ::unsetenv("MOPSAN_SEED");
  CHECK(resolve_seed(std::nullopt, 4) == 4);
  ::setenv("MOPSAN_SEED", "17", 1);
  CHECK(resolve_seed(std::nullopt, 4) == 17);
  CHECK(resolve_seed(9, 4) == 9);
  ::setenv("MOPSAN_SEED", "x", 1);
  CHECK_THROWS_AS(resolve_seed(std::nullopt, 4), ConfigError);
  ::unsetenv("MOPSAN_SEED");
}

TEST_CASE("shaping bonus counts useful events and decays to zero") {
  env::GridState s;
  env::StepInfo info;
  info.onions_loaded = 1;
  CHECK(shaping_bonus(s, info) == 3.0);
  info = {};
  info.dishes_taken = 1;
  CHECK(shaping_bonus(s, info) == 0.0);
  s.pot_onions = 3;
  CHECK(shaping_bonus(s, info) == 3.0);
  s.players[1].held = env::Item::Dish;
  CHECK(shaping_bonus(s, info) == 0.0);
  info = {};
  info.soups_scooped = 1;
  CHECK(shaping_bonus(s, info) == 5.0);

  CHECK(shaping_scale(2.0, 0, 100) == 2.0);
  CHECK(shaping_scale(2.0, 50, 100) == 1.0);
  CHECK(shaping_scale(2.0, 100, 100) == 0.0);
  CHECK(shaping_scale(2.0, 10'000, 0) == 2.0);
}

TEST_CASE("a full-size rollout is aligned, additive and bit-reproducible") {
  TrainConfig c = small_config();
  c.rollout = 2048;
  c.batch = 64;
  Trainer a(c), b(c);
  RolloutBatch x = a.collect_rollout(2048);
  RolloutBatch y = b.collect_rollout(2048);
  CHECK(x.size() == 2048);
  CHECK(x.check(c.beta).empty());
  CHECK(x.pers.rows() == 2048 * c.k);
  CHECK(x.obs1 == y.obs1);
  CHECK(x.act1 == y.act1);
  CHECK(x.act2 == y.act2);
  CHECK(x.logp2 == y.logp2);
  CHECK(x.reward_mix == y.reward_mix);
  CHECK(x.episode_returns.size() == 5);  // 2048 steps at horizon 400
  int dones = 0;
  for (char d : x.done) dones += d;
  CHECK(dones == 5);
  for (int t = 0; t < x.size(); ++t) {
    CHECK(x.reward_mix[static_cast<std::size_t>(t)] - x.reward_ex[static_cast<std::size_t>(t)] ==
          doctest::Approx(c.beta * x.reward_dpp[static_cast<std::size_t>(t)]).epsilon(1e-12));
  }
  // Profiles are distributions and the guidance is a distribution on the ego side.
  CHECK((x.profile.rowwise().sum().array() - 1.0).abs().maxCoeff() < 1e-12);
  CHECK((x.guidance.rowwise().sum().array() - 1.0).abs().maxCoeff() < 1e-12);
  compute_returns(x, c.gamma, c.gae_lambda);
  CHECK(return_recursion_error(x.return_ex, x.reward_ex, x.done, c.gamma, x.bootstrap1) < 1e-9);
  CHECK(return_recursion_error(x.return_mix, x.reward_mix, x.done, c.gamma, x.bootstrap2) < 1e-9);
  CHECK_THROWS_AS(a.collect_rollout(0), std::invalid_argument);
}

TEST_CASE("beta = 0 makes the mixture reward extrinsic and the meta-gradient zero") {
  TrainConfig c = small_config("mop-san-no-dpp");
  Trainer t(c);
  RolloutBatch b = t.collect_rollout(64);
  CHECK(b.reward_mix == b.reward_ex);
  compute_returns(b, c.gamma, c.gae_lambda);
  const auto before = t.partner_snapshot();
  t.update_mop(b);
  const std::uint64_t eta = ad::hash_params({&t.agent().features().params()});
  const EtaStats s = t.update_eta(b, before);
  CHECK(s.grad_norm == 0.0);
  CHECK(ad::hash_params({&t.agent().features().params()}) == eta);
}

TEST_CASE("importance ratio is 1 when the partner has not moved") {
  Trainer t(small_config());
  RolloutBatch b = t.collect_rollout(64);
  compute_returns(b, 0.99, 0.95);
  EtaStats s;
  t.eta_weights(b, t.partner_snapshot(), &s);
  CHECK(s.kept == 64);
  CHECK(s.dropped == 0);
  CHECK(s.mean_ratio == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("meta objective gradient over the feature map matches finite differences") {
  Trainer t(small_config());
  RolloutBatch b = t.collect_rollout(32);
  Rng rng(2);
  std::normal_distribution<double> n(0, 1);
  std::vector<double> w(32);
  for (double& x : w) x = n(rng);
  ad::ParamSet& eta = t.agent().features().params();
  eta.zero_grad();
  {
    Tape tape;
    tape.backward(t.eta_objective(tape, b, w));
  }
  auto eval = [&] {
    Tape tape;
    return tape.value(t.eta_objective(tape, b, w))(0, 0);
  };
  constexpr double h = 1e-6;
  double worst = 0.0;
  for (auto& p : eta.all()) {
    for (Eigen::Index i = 0; i < p.value.size(); i += 7) {
      const double keep = p.value.data()[i];
      p.value.data()[i] = keep + h;
      const double up = eval();
      p.value.data()[i] = keep - h;
      const double down = eval();
      p.value.data()[i] = keep;
      worst = std::max(worst, std::abs((up - down) / (2 * h) - p.grad.data()[i]));
    }
  }
  CHECK(worst < 1e-4);
}

TEST_CASE("meta-step moves only the feature map") {
  Trainer t(small_config());
  RolloutBatch b = t.collect_rollout(64);
  compute_returns(b, 0.99, 0.95);
  const auto before = t.partner_snapshot();
  t.update_mop(b);
  Agent& ag = t.agent();
  const std::uint64_t rest = ad::hash_params({&ag.actor().params(), &ag.critic().params(),
                                              &ag.partner_model().bank().params()});
  const std::uint64_t eta = ad::hash_params({&ag.features().params()});
  const EtaStats s = t.update_eta(b, before);
  CHECK(s.grad_norm > 0.0);
  CHECK(std::isfinite(s.grad_norm));
  CHECK(ad::hash_params({&ag.features().params()}) != eta);
  CHECK(ad::hash_params({&ag.actor().params(), &ag.critic().params(), &ag.partner_model().bank().params()}) == rest);
}

TEST_CASE("the ego actor never sees the diversity reward and the SAN loss never reaches the feature map") {
  TrainConfig c = small_config();
  Trainer a(c), b(c);
  RolloutBatch x = a.collect_rollout(64);
  RolloutBatch y = b.collect_rollout(64);
  for (std::size_t i = 0; i < y.reward_dpp.size(); ++i) {
    y.reward_dpp[i] += 10.0 * static_cast<double>(i % 3);
    y.reward_mix[i] = y.reward_ex[i] + c.beta * y.reward_dpp[i];
  }
  compute_returns(x, c.gamma, c.gae_lambda);
  compute_returns(y, c.gamma, c.gae_lambda);
  const std::uint64_t eta = ad::hash_params({&a.agent().features().params()});
  const std::uint64_t mop = ad::hash_params({&a.agent().partner_model().bank().params()});
  a.update_san(x);
  b.update_san(y);
  CHECK(ad::hash_params({&a.agent().actor().params()}) == ad::hash_params({&b.agent().actor().params()}));
  CHECK(ad::hash_params({&a.agent().features().params()}) == eta);
  CHECK(ad::hash_params({&a.agent().partner_model().bank().params()}) == mop);
  // The partner update leaves the feature map alone too; it only moves in the meta-step.
  a.update_mop(x);
  CHECK(ad::hash_params({&a.agent().features().params()}) == eta);
}

TEST_CASE("partner log-probability rises after a step on positive advantages") {
  TrainConfig c = small_config("mop-san-no-dpp");
  c.epochs = 1;
  c.batch = 64;
  c.entropy = 0.0;
  Trainer t(c);
  RolloutBatch b = t.collect_rollout(64);
  compute_returns(b, c.gamma, c.gae_lambda);
  b.adv2.assign(64, 1.0);
  mop::Mop& m = t.agent().partner_model();
  const auto before = partner_logp(m, b, true);
  for (std::size_t i = 0; i < before.size(); ++i) CHECK(before[i] == doctest::Approx(b.logp2[i]).epsilon(1e-9));
  t.update_mop(b);
  const auto after = partner_logp(m, b, true);
  double gain = 0.0;
  for (std::size_t i = 0; i < after.size(); ++i) gain += after[i] - before[i];
  CHECK(gain > 0.0);
}

TEST_CASE("partner policy gradient reaches every part of the partner model") {
  Trainer t(small_config());
  RolloutBatch b = t.collect_rollout(32);
  mop::Mop& m = t.agent().partner_model();
  for (ad::ParamSet* ps : m.policy_params()) ps->zero_grad();
  std::vector<int> idx(32);
  for (int i = 0; i < 32; ++i) idx[static_cast<std::size_t>(i)] = i;
  std::vector<const ctx::ContextWindow*> windows;
  for (const auto& w : b.windows) windows.push_back(&w);
  Tape tape;
  const NodeId ctxt = m.encoder().encode(tape, windows, true);
  const NodeId p = m.estimator().profile(tape, ctxt, tape.constant(gather_rows(b.noise, idx)), true);
  const NodeId pers = m.bank().forward(tape, tape.constant(b.obs2), true);
  tape.backward(tape.sum_all(tape.pick_cols(tape.log(mop::mixture(tape, p, pers)), b.act2)));
  CHECK(set_grad_norm(m.encoder().params()) > 0.0);
  CHECK(set_grad_norm(m.bank().params()) > 0.0);
  const ad::Linear& wn = m.estimator().noise_out();
  const ad::Linear& wp = m.estimator().weight_mlp().layers.back();
  CHECK(m.estimator().params()[wn.weight].grad.norm() > 0.0);
  CHECK(m.estimator().params()[wp.weight].grad.norm() > 0.0);
}

TEST_CASE("PPO on a one-state bandit converges to the paying arm") {
  ad::ParamSet ps;
  const int logits = ps.add("logits", Matrix::Zero(1, 6));
  ad::AdamConfig ac;
  ac.lr = 0.01;
  ad::Adam opt({&ps}, ac);
  PpoConfig pc;
  pc.batch = 16;
  Rng rng(9);
  auto log_probs = [&](Tape& tape, int rows) {
    const NodeId row = tape.param(ps[logits]);
    return tape.log_softmax_rows(tape.add_tiled(tape.zeros(rows, 6), row));
  };
  const PolicyFn policy = [&](Tape& tape, const std::vector<int>& rows) {
    return PolicyNodes{log_probs(tape, static_cast<int>(rows.size())), -1};
  };
  auto prob0 = [&] {
    Tape tape;
    return std::exp(tape.value(log_probs(tape, 1))(0, 0));
  };
  CHECK(prob0() == doctest::Approx(1.0 / 6));
  for (int update = 0; update < 200; ++update) {
    Tape tape;
    const Matrix lp = tape.value(log_probs(tape, 1));
    const Matrix dist = lp.array().exp();
    PpoData d;
    for (int i = 0; i < 64; ++i) {
      const auto [a, l] = mop::Mop::sample(dist, rng);
      d.actions.push_back(a);
      d.old_logp.push_back(l);
      d.advantages.push_back(a == 0 ? 1.0 : 0.0);
      d.returns.push_back(0.0);
    }
    d.advantages = normalize(d.advantages);
    ppo_update(d, policy, {}, opt, {&ps}, nullptr, {}, pc, rng);
  }
  CHECK(prob0() > 0.9);
}

TEST_CASE("with zero advantages the entropy bonus alone raises entropy") {
  ad::ParamSet ps;
  Matrix init(1, 6);
  init << 2.0, -1.0, 0.5, 0.0, -0.5, 1.0;
  const int logits = ps.add("logits", init);
  ad::Adam opt({&ps});
  PpoConfig pc;
  pc.batch = 16;
  Rng rng(4);
  const PolicyFn policy = [&](Tape& tape, const std::vector<int>& rows) {
    const NodeId row = tape.param(ps[logits]);
    return PolicyNodes{tape.log_softmax_rows(tape.add_tiled(tape.zeros(static_cast<int>(rows.size()), 6), row)), -1};
  };
  auto entropy = [&] {
    Tape tape;
    const Matrix lp = tape.value(policy(tape, {0}).log_probs);
    return -(lp.array().exp() * lp.array()).sum();
  };
  PpoData d;
  for (int i = 0; i < 64; ++i) {
    d.actions.push_back(i % 6);
    Tape tape;
    d.old_logp.push_back(tape.value(policy(tape, {0}).log_probs)(0, i % 6));
    d.advantages.push_back(0.0);
    d.returns.push_back(0.0);
  }
  const double h0 = entropy();
  const PpoStats s = ppo_update(d, policy, {}, opt, {&ps}, nullptr, {}, pc, rng);
  CHECK(entropy() > h0);
  CHECK(s.policy_loss == doctest::Approx(-pc.entropy * h0).epsilon(0.05));
}

TEST_CASE("a non-finite loss aborts with a training error") {
  ad::ParamSet ps;
  const int logits = ps.add("logits", Matrix::Zero(1, 6));
  ad::Adam opt({&ps});
  Rng rng(1);
  const PolicyFn policy = [&](Tape& tape, const std::vector<int>& rows) {
    const NodeId row = tape.param(ps[logits]);
    return PolicyNodes{tape.log_softmax_rows(tape.add_tiled(tape.zeros(static_cast<int>(rows.size()), 6), row)), -1};
  };
  PpoData d{{0, 1}, {std::log(1.0 / 6), std::log(1.0 / 6)}, {std::nan(""), 1.0}, {0.0, 0.0}};
  PpoConfig pc;
  pc.batch = 2;
  CHECK_THROWS_AS(ppo_update(d, policy, {}, opt, {&ps}, nullptr, {}, pc, rng), TrainingError);
}

TEST_CASE("fixed-seed training reproduces the metrics log byte for byte") {
  TrainConfig c = small_config();
  c.total_steps = 192;
  c.eta_period = 2;
  const fs::path d1 = scratch_dir("det1"), d2 = scratch_dir("det2");
  Trainer(c).run(d1);
  Trainer(c).run(d2);
  const std::string log = slurp(d1 / "metrics.jsonl");
  CHECK(log == slurp(d2 / "metrics.jsonl"));
  CHECK(std::count(log.begin(), log.end(), '\n') == 3);
  CHECK(log.find("\"eta\"") != std::string::npos);
  CHECK(slurp(d1 / "san-192.ckpt") == slurp(d2 / "san-192.ckpt"));
  fs::remove_all(d1);
  fs::remove_all(d2);
}

TEST_CASE("baseline methods train in self-play without a partner model") {
  for (const std::string method : {"dnn", "san"}) {
    TrainConfig c = small_config(method);
    const fs::path d = scratch_dir(method);
    Trainer t(c);
    std::vector<RolloutMetrics> seen;
    t.run(d, [&](const RolloutMetrics& m) { seen.push_back(m); });
    CHECK(seen.size() == 2);
    CHECK(seen.back().mop.minibatches == 0);
    CHECK(seen.back().personality_usage.empty());
    CHECK(fs::exists(d / "san-128.ckpt"));
    CHECK_FALSE(fs::exists(d / "mop-128.ckpt"));
    fs::remove_all(d);
  }
}

TEST_CASE("agent checkpoints round-trip and rebuild from a run directory") {
  TrainConfig c = small_config();
  const fs::path d = scratch_dir("ckpt");
  Trainer t(c);
  t.run(d);
  const std::uint64_t h = t.agent().hash();
  CHECK(Agent::latest_step(d) == 128);
  const auto rebuilt = Agent::from_run(d, t.environment().obs_size());
  CHECK(rebuilt->hash() == h);
  CHECK(rebuilt->config().snapshot() == c.snapshot());

  Rng rng(77);
  Agent fresh(c, t.environment().obs_size(), rng);
  CHECK(fresh.hash() != h);
  fresh.load(d, 128);
  CHECK(fresh.hash() == h);

  TrainConfig other = c;
  other.k = 6;
  Agent wrong(other, t.environment().obs_size(), rng);
  CHECK_THROWS(wrong.load(d, 128));
  CHECK_THROWS_AS(Agent::latest_step(d / "missing"), ad::CheckpointError);
  fs::remove_all(d);
}

TEST_CASE("desk-scale run completes and checkpoints on schedule") {
  TrainConfig c;
  c.k = 4;
  c.total_steps = 50'000;
  c.checkpoint_every = 20'000;
  c.seed = 1;
  const fs::path d = scratch_dir("desk");
  Trainer t(c);
  int records = 0;
  t.run(d, [&](const RolloutMetrics& m) {
    ++records;
    CHECK(std::isfinite(m.entropy));
    CHECK(m.personality_usage.size() == 4);
  });
  CHECK(records == 25);  // 24 full rollouts and a 848-step tail
  CHECK(t.steps_done() == 50'000);
  CHECK(fs::exists(d / "config.snapshot"));
  CHECK(fs::exists(d / "san-20480.ckpt"));
  CHECK(fs::exists(d / "san-40960.ckpt"));
  CHECK(fs::exists(d / "san-50000.ckpt"));
  CHECK(fs::exists(d / "mop-50000.ckpt"));
  CHECK(fs::exists(d / "dpp-50000.ckpt"));
  fs::remove_all(d);
}
