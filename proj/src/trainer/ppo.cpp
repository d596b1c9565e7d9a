#include "mopsan/trainer/ppo.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace mopsan::train {

using ad::Matrix;

namespace {

Matrix column(const std::vector<double>& v, const std::vector<int>& rows) {
  Matrix m(static_cast<Eigen::Index>(rows.size()), 1);
  for (std::size_t i = 0; i < rows.size(); ++i) m(static_cast<Eigen::Index>(i), 0) = v[static_cast<std::size_t>(rows[i])];
  return m;
}

}  // namespace

PpoStats ppo_update(const PpoData& data, const PolicyFn& policy, const ValueFn& value, ad::Adam& policy_opt,
                    const std::vector<ad::ParamSet*>& policy_sets, ad::Adam* value_opt,
                    const std::vector<ad::ParamSet*>& value_sets, const PpoConfig& cfg, ad::Rng& rng) {
  const int n = data.size();
  if (n == 0) return {};
  if (static_cast<int>(data.old_logp.size()) != n || static_cast<int>(data.advantages.size()) != n ||
      static_cast<int>(data.returns.size()) != n) {
    throw ad::ShapeError("ppo: sample arrays differ in length");
  }
  std::vector<int> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  PpoStats stats;
  double clipped = 0.0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (int start = 0; start < n; start += cfg.batch) {
      const int end = std::min(n, start + cfg.batch);
      const std::vector<int> rows(order.begin() + start, order.begin() + end);
      const int m = end - start;
      std::vector<int> acts(static_cast<std::size_t>(m));
      for (int i = 0; i < m; ++i) acts[static_cast<std::size_t>(i)] = data.actions[static_cast<std::size_t>(rows[static_cast<std::size_t>(i)])];

      Tape tape;
      const PolicyNodes head = policy(tape, rows);
      const NodeId lpa = tape.pick_cols(head.log_probs, acts);
      const NodeId ratio = tape.exp(tape.sub(lpa, tape.constant(column(data.old_logp, rows))));
      const NodeId adv = tape.constant(column(data.advantages, rows));
      const NodeId surr = tape.minimum(tape.mul(ratio, adv), tape.mul(tape.clip(ratio, 1.0 - cfg.clip, 1.0 + cfg.clip), adv));
      const NodeId pl = tape.scale(tape.mean_all(surr), -1.0);
      const NodeId ent = tape.scale(tape.sum_all(tape.mul(tape.exp(head.log_probs), head.log_probs)), -1.0 / m);
      NodeId loss = tape.sub(pl, tape.scale(ent, cfg.entropy));
      if (head.extra_loss >= 0) loss = tape.add(loss, head.extra_loss);

      const double loss_value = tape.scalar(loss);
      if (!std::isfinite(loss_value)) {
        throw TrainingError("ppo: non-finite policy loss (policy=" + std::to_string(tape.scalar(pl)) +
                            ", entropy=" + std::to_string(tape.scalar(ent)) + ")");
      }
      for (ad::ParamSet* ps : policy_sets) ps->zero_grad();
      tape.backward(loss);
      stats.grad_norm += policy_opt.step();

      if (value && value_opt != nullptr) {
        const NodeId v = value(tape, rows);
        const NodeId diff = tape.sub(v, tape.constant(column(data.returns, rows)));
        const NodeId vl = tape.scale(tape.mean_all(tape.mul(diff, diff)), cfg.value_coef);
        if (!std::isfinite(tape.scalar(vl))) throw TrainingError("ppo: non-finite value loss");
        for (ad::ParamSet* ps : value_sets) ps->zero_grad();
        tape.backward(vl);
        value_opt->step();
        stats.value_loss += tape.scalar(vl) / cfg.value_coef;
      }

      const Matrix& r = tape.value(ratio);
      clipped += static_cast<double>(((r.array() - 1.0).abs() > cfg.clip).count());
      stats.policy_loss += tape.scalar(pl);
      stats.entropy += tape.scalar(ent);
      if (head.extra_loss >= 0) stats.extra_loss += tape.scalar(head.extra_loss);
      ++stats.minibatches;
    }
  }
  const double mb = std::max(1, stats.minibatches);
  stats.policy_loss /= mb;
  stats.value_loss /= mb;
  stats.entropy /= mb;
  stats.extra_loss /= mb;
  stats.grad_norm /= mb;
  stats.clip_fraction = clipped / (static_cast<double>(n) * cfg.epochs);
  return stats;
}

}  // namespace mopsan::train
