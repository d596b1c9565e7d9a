#pragma once

#include "mopsan/autodiff/tape.hpp"

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <utility>
#include <vector>

namespace mopsan::ad {

using Rng = std::mt19937_64;

/// Owns the parameters of one network. Parameters are addressed by index so a
/// copied set (a weight snapshot) behaves exactly like the original.
class ParamSet {
 public:
  int add(std::string name, Matrix init);
  Parameter& operator[](int i) { return params_.at(static_cast<std::size_t>(i)); }
  const Parameter& operator[](int i) const { return params_.at(static_cast<std::size_t>(i)); }
  [[nodiscard]] int size() const { return static_cast<int>(params_.size()); }
  [[nodiscard]] std::size_t scalar_count() const;
  [[nodiscard]] int index_of(const std::string& name) const;

  void zero_grad();
  [[nodiscard]] double grad_norm_sq() const;
  /// FNV-1a over names, shapes and raw parameter bytes.
  [[nodiscard]] std::uint64_t hash() const;
  void copy_values_from(const ParamSet& other);

  std::vector<Parameter>& all() { return params_; }
  [[nodiscard]] const std::vector<Parameter>& all() const { return params_; }

 private:
  std::vector<Parameter> params_;
};

std::uint64_t hash_params(const std::vector<const ParamSet*>& sets);

struct Linear {
  int weight = -1;
  int bias = -1;
  int in = 0;
  int out = 0;
};

/// Uniform(-gain/sqrt(in), gain/sqrt(in)) weights, zero bias.
Linear make_linear(ParamSet& ps, const std::string& name, int in, int out, Rng& rng, double gain = 1.0);
NodeId apply(Tape& tape, ParamSet& ps, const Linear& layer, NodeId x, bool trainable = true);

enum class Activation { Tanh, Relu };

/// Stack of linear layers with the activation between them (none after the last).
struct Mlp {
  std::vector<Linear> layers;
  Activation act = Activation::Tanh;
};

Mlp make_mlp(ParamSet& ps, const std::string& name, const std::vector<int>& widths, Rng& rng,
             Activation act = Activation::Tanh, double last_gain = 1.0);
NodeId apply(Tape& tape, ParamSet& ps, const Mlp& mlp, NodeId x, bool trainable = true);

struct AdamConfig {
  double lr = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double clip_norm = 0.5;  // <= 0 disables clipping
};

/// Adam with global-norm clipping over every parameter of the attached sets.
class Adam {
 public:
  Adam(std::vector<ParamSet*> sets, AdamConfig cfg = {});
  /// Applies one update from the accumulated grads. Returns the pre-clip norm.
  double step();
  [[nodiscard]] long steps() const { return t_; }
  [[nodiscard]] const AdamConfig& config() const { return cfg_; }
  void set_lr(double lr) { cfg_.lr = lr; }

 private:
  std::vector<ParamSet*> sets_;
  AdamConfig cfg_;
  std::vector<Matrix> m_;
  std::vector<Matrix> v_;
  long t_ = 0;
};

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

using NamedSets = std::vector<std::pair<std::string, ParamSet*>>;

void save_checkpoint(const std::filesystem::path& path, const std::string& module, const NamedSets& sets);
void load_checkpoint(const std::filesystem::path& path, const std::string& module, const NamedSets& sets);

/// Largest |analytic - central difference| / max(1, |analytic|) over `probes`
/// randomly chosen scalar entries (every entry when probes >= the total).
/// Replays the tape, so the loss must depend on the parameters only through it.
double finite_diff_check(Tape& tape, NodeId loss, const std::vector<Parameter*>& params, double eps, int probes,
                         Rng& rng);

std::vector<Parameter*> param_ptrs(ParamSet& ps);

}  // namespace mopsan::ad
