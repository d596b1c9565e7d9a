#pragma once

#include "mopsan/autodiff/nn.hpp"

#include <functional>
#include <stdexcept>
#include <vector>

namespace mopsan::train {

using ad::NodeId;
using ad::Tape;

class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct PpoConfig {
  double clip = 0.2;
  double entropy = 0.01;
  double value_coef = 0.5;
  int epochs = 4;
  int batch = 64;
};

/// Policy head output for a minibatch: log-probabilities (rows x actions) and
/// an optional scalar added to the policy loss (-1 for none).
struct PolicyNodes {
  NodeId log_probs = -1;
  NodeId extra_loss = -1;
};

using PolicyFn = std::function<PolicyNodes(Tape&, const std::vector<int>& rows)>;
using ValueFn = std::function<NodeId(Tape&, const std::vector<int>& rows)>;

/// Samples and targets of one clipped-surrogate update.
struct PpoData {
  std::vector<int> actions;
  std::vector<double> old_logp;
  std::vector<double> advantages;
  std::vector<double> returns;
  [[nodiscard]] int size() const { return static_cast<int>(actions.size()); }
};

struct PpoStats {
  double policy_loss = 0.0;
  double value_loss = 0.0;
  double entropy = 0.0;
  double extra_loss = 0.0;
  double clip_fraction = 0.0;
  double grad_norm = 0.0;
  int minibatches = 0;
};

/// Minibatch epochs of the clipped surrogate with an entropy bonus. The policy
/// and critic have separate optimizers so the critic's large regression
/// gradients do not eat the policy's share of the clipping budget. `value`
/// may be empty to skip critic regression.
PpoStats ppo_update(const PpoData& data, const PolicyFn& policy, const ValueFn& value, ad::Adam& policy_opt,
                    const std::vector<ad::ParamSet*>& policy_sets, ad::Adam* value_opt,
                    const std::vector<ad::ParamSet*>& value_sets, const PpoConfig& cfg, ad::Rng& rng);

}  // namespace mopsan::train
