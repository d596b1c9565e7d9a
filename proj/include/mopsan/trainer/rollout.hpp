#pragma once

#include "mopsan/autodiff/tape.hpp"
#include "mopsan/context/encoder.hpp"

#include <string>
#include <vector>

namespace mopsan::train {

using ad::Matrix;

/// Time-aligned record of one rollout. Row t of every matrix and entry t of
/// every vector belong to the same environment step.
struct RolloutBatch {
  Matrix obs1;      // n x obs, ego observation
  Matrix obs2;      // n x obs, partner observation
  Matrix guidance;  // n x actions, guidance fed to the ego actor
  Matrix noise;     // n x k, estimator noise used for the partner step
  Matrix profile;   // n x k, mixture weights used for the partner step
  Matrix pers;      // (n * k) x actions, personality outputs on the partner observation
  std::vector<ctx::ContextWindow> windows;  // partner's own history before each step
  std::vector<int> act1, act2;
  std::vector<double> logp1, logp2;
  std::vector<double> reward_ex, reward_dpp, reward_mix;
  std::vector<double> value1, value2;
  std::vector<double> return_ex, return_mix;
  std::vector<double> adv1, adv2;
  double adv_scale1 = 1.0;  // spread that divided each seat's raw advantages (1 when degenerate)
  double adv_scale2 = 1.0;
  std::vector<char> done;
  double bootstrap1 = 0.0;  // critic values after the last step (0 when it ended an episode)
  double bootstrap2 = 0.0;
  std::vector<double> episode_returns;  // episodes completed during this rollout
  double entropy_sum = 0.0;

  [[nodiscard]] int size() const { return static_cast<int>(act1.size()); }
  /// Empty string when every array has the same length and r_mix = r_ex + beta * r_dpp.
  [[nodiscard]] std::string check(double beta) const;
  /// Mean, min and max of each reward and return stream, for failure reports.
  [[nodiscard]] std::string summary() const;
};

/// Discounted returns computed backward: G_t = r_t + gamma * G_{t+1} * (1 - done_t),
/// with G_n = bootstrap.
std::vector<double> discounted_returns(const std::vector<double>& rewards, const std::vector<char>& done,
                                       double gamma, double bootstrap = 0.0);

/// Largest violation of the return recursion.
double return_recursion_error(const std::vector<double>& returns, const std::vector<double>& rewards,
                              const std::vector<char>& done, double gamma, double bootstrap = 0.0);

/// Generalized advantage estimates over critic values; lambda = 1 gives G - V.
std::vector<double> gae_advantages(const std::vector<double>& rewards, const std::vector<double>& values,
                                   const std::vector<char>& done, double gamma, double lambda, double bootstrap = 0.0);
/// Fills return_ex, return_mix and the normalized advantages of both seats.
void compute_returns(RolloutBatch& batch, double gamma, double lambda = 1.0);

/// Population standard deviation, or 1 when it is too small to divide by.
double spread(const std::vector<double>& x);
/// Shifts to mean 0 and scales to std 1; left centred only when the spread is zero.
std::vector<double> normalize(const std::vector<double>& x);

}  // namespace mopsan::train
