#include "mopsan/eval/eval.hpp"
#include "mopsan/trainer/trainer.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <iostream>

namespace fs = std::filesystem;
using namespace mopsan;

namespace {

train::TrainConfig base_config(const std::string& path, const std::string& method, const std::string& layout) {
  train::TrainConfig cfg = path.empty() ? train::TrainConfig{} : train::load_config(path);
  if (!method.empty()) train::apply_method(cfg, method);
  if (!layout.empty()) cfg.layout = layout;
  cfg.validate();
  return cfg;
}

std::optional<std::uint64_t> opt_seed(const CLI::Option* opt, std::uint64_t value) {
  if (opt->count() == 0) return std::nullopt;
  return value;
}

void print_matrix(const eval::CrossPlayMatrix& m) {
  std::printf("%-8s", "ego");
  for (const auto& n : m.names) std::printf("%10s", n.c_str());
  std::printf("%12s\n", "zero-shot");
  for (std::size_t i = 0; i < m.names.size(); ++i) {
    std::printf("%-8s", m.names[i].c_str());
    for (const auto& c : m.cells[i]) std::printf("%10.2f", c.mean);
    std::printf("%12.2f\n", m.row_generalization(static_cast<int>(i)));
  }
  std::printf("learning score (diagonal): %.2f\n", m.learning());
  std::printf("generalization score (off-diagonal): %.2f\n", m.generalization());
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Spiking actor with a mixture-of-personality partner model on a cooperative cooking grid"};
  app.require_subcommand(1);

  auto* train_cmd = app.add_subcommand("train", "train one learning-phase pair");
  std::string config_path, method, out_dir, layout;
  std::uint64_t seed = 0;
  long steps = 0;
  train_cmd->add_option("--config", config_path, "flat key=value config file");
  auto* seed_opt = train_cmd->add_option("--seed", seed, "seed (overrides MOPSAN_SEED and the config)");
  train_cmd->add_option("--method", method, "dnn | san | mop-san | mop-san-no-dpp | mop-san-no-context");
  train_cmd->add_option("--out", out_dir, "run directory (default runs/<method>-seed<S>)");
  train_cmd->add_option("--steps", steps, "override train.total_steps");
  train_cmd->add_option("--layout", layout, "layout file replacing the built-in default");

  auto* cross_cmd = app.add_subcommand("crossplay", "evaluate every ego against every partner of a pool");
  std::string pool_dir, cross_out;
  int episodes = 10;
  std::uint64_t eval_seed = 0;
  cross_cmd->add_option("--pool", pool_dir, "directory of run directories")->required();
  cross_cmd->add_option("--episodes", episodes, "episodes per cell");
  cross_cmd->add_option("--out", cross_out, "output directory")->required();
  cross_cmd->add_option("--seed", eval_seed, "evaluation seed");
  cross_cmd->add_option("--layout", layout, "layout file replacing the built-in default");

  auto* ablate_cmd = app.add_subcommand("ablate", "train and score every value of one ablation axis");
  std::string axis, ablate_config, ablate_out;
  int seeds = 5;
  std::vector<std::string> values;
  ablate_cmd->add_option("--axis", axis, "personality_k | context_size | dpp | context_encoder")->required();
  ablate_cmd->add_option("--config", ablate_config, "base config file");
  ablate_cmd->add_option("--out", ablate_out, "output directory")->required();
  ablate_cmd->add_option("--seeds", seeds, "seeds per value");
  ablate_cmd->add_option("--episodes", episodes, "evaluation episodes per run");
  ablate_cmd->add_option("--values", values, "subset of axis values");
  ablate_cmd->add_option("--steps", steps, "override train.total_steps");
  auto* ablate_seed = ablate_cmd->add_option("--seed", seed, "first seed");

  auto* report_cmd = app.add_subcommand("report", "render crossplay or ablation results");
  std::string report_in, format = "csv";
  report_cmd->add_option("--in", report_in, "directory written by crossplay or ablate")->required();
  report_cmd->add_option("--format", format, "csv | svg")->check(CLI::IsMember({"csv", "svg"}));

  CLI11_PARSE(app, argc, argv);

  try {
    if (*train_cmd) {
      train::TrainConfig cfg = base_config(config_path, method, layout);
      cfg.seed = train::resolve_seed(opt_seed(seed_opt, seed), cfg.seed);
      if (steps > 0) cfg.total_steps = steps;
      const fs::path out = out_dir.empty() ? fs::path("runs") / (cfg.method + "-seed" + std::to_string(cfg.seed)) : fs::path(out_dir);
      train::Trainer trainer(cfg);
      trainer.run(out, [](const train::RolloutMetrics& m) {
        std::printf("step %7ld  episodes %d  mean reward %7.2f  entropy %.3f  dpp %.3f\n", m.step, m.episodes,
                    m.mean_ep_reward, m.entropy, m.dpp_reward_mean);
        std::fflush(stdout);
      });
      std::printf("run written to %s\n", out.string().c_str());
    } else if (*cross_cmd) {
      train::TrainConfig cfg;
      cfg.layout = layout;
      const env::CookGrid env = train::make_env(cfg);
      eval::AgentPool pool = eval::AgentPool::load(pool_dir, env.obs_size());
      const eval::CrossPlayMatrix m = eval::crossplay(pool, env, episodes, eval_seed);
      eval::save_matrix(m, fs::path(cross_out) / "crossplay.json");
      eval::write_matrix_csv(m, fs::path(cross_out) / "crossplay.csv");
      print_matrix(m);
    } else if (*ablate_cmd) {
      train::TrainConfig cfg = base_config(ablate_config, "", "");
      cfg.seed = train::resolve_seed(opt_seed(ablate_seed, seed), cfg.seed);
      if (steps > 0) cfg.total_steps = steps;
      const eval::AblationTable t = eval::ablate(axis, cfg, ablate_out, {seeds, episodes, values});
      eval::save_table(t, fs::path(ablate_out) / "ablation.json");
      eval::write_table_csv(t, fs::path(ablate_out) / "ablation.csv");
      for (std::size_t r = 0; r < t.rows.size(); ++r) {
        std::printf("%-20s %8.2f +- %.2f\n", t.rows[r].c_str(), t.row_mean(static_cast<int>(r)),
                    t.row_std(static_cast<int>(r)));
      }
    } else if (*report_cmd) {
      const fs::path in(report_in);
      bool any = false;
      if (fs::exists(in / "crossplay.json")) {
        const eval::CrossPlayMatrix m = eval::load_matrix(in / "crossplay.json");
        if (format == "csv") eval::write_matrix_csv(m, in / "crossplay.csv");
        else eval::write_heatmap_svg(m, in / "crossplay.svg");
        any = true;
      }
      if (fs::exists(in / "ablation.json")) {
        const eval::AblationTable t = eval::load_table(in / "ablation.json");
        if (format == "csv") eval::write_table_csv(t, in / "ablation.csv");
        else eval::write_table_svg(t, in / "ablation.svg");
        any = true;
      }
      if (!any) throw std::runtime_error("report: no crossplay.json or ablation.json in '" + in.string() + "'");
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
