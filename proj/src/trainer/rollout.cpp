#include "mopsan/trainer/rollout.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace mopsan::train {

std::string RolloutBatch::check(double beta) const {
  const std::size_t n = act1.size();
  const std::vector<std::size_t> lens = {act2.size(),       logp1.size(),      logp2.size(),  reward_ex.size(),
                                         reward_dpp.size(), reward_mix.size(), value1.size(), value2.size(),
                                         done.size(),       windows.size(),    static_cast<std::size_t>(obs1.rows()),
                                         static_cast<std::size_t>(obs2.rows()),
                                         static_cast<std::size_t>(guidance.rows())};
  for (std::size_t len : lens) {
    if (len != n) return "batch arrays differ in length";
  }
  for (std::size_t t = 0; t < n; ++t) {
    if (reward_mix[t] != reward_ex[t] + beta * reward_dpp[t]) return "mixture reward is not r_ex + beta * r_dpp";
  }
  return "";
}

std::string RolloutBatch::summary() const {
  std::ostringstream os;
  auto stats = [&](const char* name, const std::vector<double>& v) {
    if (v.empty()) return;
    const auto [lo, hi] = std::minmax_element(v.begin(), v.end());
    double sum = 0.0;
    for (double x : v) sum += x;
    os << name << " mean=" << sum / static_cast<double>(v.size()) << " min=" << *lo << " max=" << *hi << "; ";
  };
  os << "steps=" << size() << "; ";
  stats("r_ex", reward_ex);
  stats("r_dpp", reward_dpp);
  stats("G_ex", return_ex);
  stats("G_mix", return_mix);
  stats("v1", value1);
  stats("v2", value2);
  stats("logp1", logp1);
  stats("logp2", logp2);
  return os.str();
}

std::vector<double> discounted_returns(const std::vector<double>& rewards, const std::vector<char>& done,
                                       double gamma, double bootstrap) {
  std::vector<double> g(rewards.size());
  double next = bootstrap;
  for (std::size_t i = rewards.size(); i-- > 0;) {
    next = rewards[i] + gamma * next * (done[i] ? 0.0 : 1.0);
    g[i] = next;
  }
  return g;
}

double return_recursion_error(const std::vector<double>& returns, const std::vector<double>& rewards,
                              const std::vector<char>& done, double gamma, double bootstrap) {
  double worst = 0.0;
  for (std::size_t i = 0; i < rewards.size(); ++i) {
    const double next = i + 1 < rewards.size() ? returns[i + 1] : bootstrap;
    worst = std::max(worst, std::abs(returns[i] - (rewards[i] + gamma * next * (done[i] ? 0.0 : 1.0))));
  }
  return worst;
}

namespace {

std::pair<double, double> mean_sd(const std::vector<double>& x) {
  double mean = 0.0;
  for (double v : x) mean += v;
  mean /= static_cast<double>(x.size());
  double var = 0.0;
  for (double v : x) var += (v - mean) * (v - mean);
  return {mean, std::sqrt(var / static_cast<double>(x.size()))};
}

constexpr double kMinSpread = 1e-12;

}  // namespace

double spread(const std::vector<double>& x) {
  if (x.empty()) return 1.0;
  const double sd = mean_sd(x).second;
  return sd > kMinSpread ? sd : 1.0;
}

std::vector<double> normalize(const std::vector<double>& x) {
  if (x.empty()) return {};
  const auto [mean, sd] = mean_sd(x);
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = sd > kMinSpread ? (x[i] - mean) / sd : x[i] - mean;
  return out;
}

std::vector<double> gae_advantages(const std::vector<double>& rewards, const std::vector<double>& values,
                                   const std::vector<char>& done, double gamma, double lambda, double bootstrap) {
  std::vector<double> adv(rewards.size());
  double next_value = bootstrap;
  double next_adv = 0.0;
  for (std::size_t i = rewards.size(); i-- > 0;) {
    const double live = done[i] ? 0.0 : 1.0;
    const double delta = rewards[i] + gamma * live * next_value - values[i];
    adv[i] = delta + gamma * lambda * live * next_adv;
    next_value = values[i];
    next_adv = adv[i];
  }
  return adv;
}

void compute_returns(RolloutBatch& batch, double gamma, double lambda) {
  batch.return_ex = discounted_returns(batch.reward_ex, batch.done, gamma, batch.bootstrap1);
  batch.return_mix = discounted_returns(batch.reward_mix, batch.done, gamma, batch.bootstrap2);
  const auto a1 = gae_advantages(batch.reward_ex, batch.value1, batch.done, gamma, lambda, batch.bootstrap1);
  const auto a2 = gae_advantages(batch.reward_mix, batch.value2, batch.done, gamma, lambda, batch.bootstrap2);
  batch.adv_scale1 = spread(a1);
  batch.adv_scale2 = spread(a2);
  batch.adv1 = normalize(a1);
  batch.adv2 = normalize(a2);
}

}  // namespace mopsan::train
