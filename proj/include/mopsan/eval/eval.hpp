#pragma once

#include "mopsan/env/cookgrid.hpp"
#include "mopsan/trainer/agent.hpp"
#include "mopsan/trainer/config.hpp"

#include <filesystem>
#include <memory>
#include <string>
#include <vector>

namespace mopsan::eval {

using ad::Matrix;

/// Named agents, one per learning-phase pair.
class AgentPool {
 public:
  /// Each subdirectory of `dir` holding a config.snapshot is one entry, named
  /// after the subdirectory and ordered by name.
  static AgentPool load(const std::filesystem::path& dir, int obs_dim);

  void add(std::string name, std::unique_ptr<train::Agent> agent);
  [[nodiscard]] int size() const { return static_cast<int>(agents_.size()); }
  [[nodiscard]] const std::vector<std::string>& names() const { return names_; }
  train::Agent& operator[](int i) { return *agents_.at(static_cast<std::size_t>(i)); }
  /// Hash over every entry's parameters.
  [[nodiscard]] std::uint64_t hash() const;

 private:
  std::vector<std::string> names_;
  std::vector<std::unique_ptr<train::Agent>> agents_;
};

/// One episode with `ego` in seat 0 and `partner` in seat 1, both frozen.
/// An ego with a partner model is guided from the live history of its
/// partner; a partner with a partner model acts through it with the noise off.
double play_episode(const env::CookGrid& env, train::Agent& ego, train::Agent& partner, ad::Rng& rng);

struct CellStats {
  double mean = 0.0;
  double std = 0.0;
  int episodes = 0;
};

/// Mean and population standard deviation of `episodes` episodes.
CellStats evaluate_pair(const env::CookGrid& env, train::Agent& ego, train::Agent& partner, int episodes,
                        ad::Rng& rng);

struct CrossPlayMatrix {
  std::vector<std::string> names;
  std::vector<std::vector<CellStats>> cells;  // [ego][partner]

  /// Mean of row i without its diagonal cell (zero-shot score of ego i).
  [[nodiscard]] double row_generalization(int i) const;
  /// Mean over every off-diagonal cell.
  [[nodiscard]] double generalization() const;
  /// Mean over the diagonal (learning-phase pairs).
  [[nodiscard]] double learning() const;
};

/// Every ordered (ego, partner) pair of the pool. Cells draw from independent
/// generators derived from `seed` and their indices, and the pool's parameter
/// hash is checked to be unchanged afterwards.
CrossPlayMatrix crossplay(AgentPool& pool, const env::CookGrid& env, int episodes, std::uint64_t seed);

struct AblationTable {
  std::string axis;
  std::vector<std::string> columns;  // one per seed
  std::vector<std::string> rows;     // "<axis>=<value>"
  std::vector<std::vector<double>> scores;

  [[nodiscard]] double row_mean(int r) const;
  [[nodiscard]] double row_std(int r) const;
};

/// Default values of an ablation axis; throws for an unknown axis.
std::vector<std::string> axis_values(const std::string& axis);
/// Applies one axis value to a config; throws for a value outside the axis.
void apply_axis(train::TrainConfig& cfg, const std::string& axis, const std::string& value);

struct AblationOptions {
  int seeds = 5;
  int episodes = 10;
  std::vector<std::string> values;  // empty: every value of the axis
};

/// Trains one run per (value, seed) under `out` and scores each by evaluating
/// its learning-phase pair.
AblationTable ablate(const std::string& axis, const train::TrainConfig& base, const std::filesystem::path& out,
                     const AblationOptions& opts);

void write_matrix_csv(const CrossPlayMatrix& m, const std::filesystem::path& path);
void write_table_csv(const AblationTable& t, const std::filesystem::path& path);
void write_heatmap_svg(const CrossPlayMatrix& m, const std::filesystem::path& path);
void write_table_svg(const AblationTable& t, const std::filesystem::path& path);

/// JSON round trip used between the crossplay/ablate and report commands.
void save_matrix(const CrossPlayMatrix& m, const std::filesystem::path& path);
CrossPlayMatrix load_matrix(const std::filesystem::path& path);
void save_table(const AblationTable& t, const std::filesystem::path& path);
AblationTable load_table(const std::filesystem::path& path);

}  // namespace mopsan::eval
