#include "mopsan/eval/eval.hpp"

#include "mopsan/trainer/trainer.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

namespace mopsan::eval {

namespace fs = std::filesystem;

namespace {

Matrix row_of(const env::Obs& o) {
  Matrix m(1, static_cast<Eigen::Index>(o.size()));
  for (std::size_t i = 0; i < o.size(); ++i) m(0, static_cast<Eigen::Index>(i)) = o[i];
  return m;
}

std::ofstream open_out(const fs::path& path) {
  if (path.has_parent_path()) {
    std::error_code ec;
    fs::create_directories(path.parent_path(), ec);
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("report: cannot write '" + path.string() + "'");
  return out;
}

std::string num(double x, int digits = 4) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, x);
  return buf;
}

CellStats stats_of(const std::vector<double>& xs) {
  CellStats s;
  s.episodes = static_cast<int>(xs.size());
  if (xs.empty()) return s;
  for (double x : xs) s.mean += x;
  s.mean /= static_cast<double>(xs.size());
  for (double x : xs) s.std += (x - s.mean) * (x - s.mean);
  s.std = std::sqrt(s.std / static_cast<double>(xs.size()));
  return s;
}

}  // namespace

// ---------------------------------------------------------------- pool

AgentPool AgentPool::load(const fs::path& dir, int obs_dim) {
  if (!fs::is_directory(dir)) throw std::runtime_error("pool: '" + dir.string() + "' is not a directory");
  std::vector<fs::path> runs;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.is_directory() && fs::exists(entry.path() / "config.snapshot")) runs.push_back(entry.path());
  }
  std::sort(runs.begin(), runs.end());
  if (runs.empty()) throw std::runtime_error("pool: no run directories in '" + dir.string() + "'");
  AgentPool pool;
  for (const fs::path& run : runs) pool.add(run.filename().string(), train::Agent::from_run(run, obs_dim));
  return pool;
}

void AgentPool::add(std::string name, std::unique_ptr<train::Agent> agent) {
  if (std::find(names_.begin(), names_.end(), name) != names_.end()) {
    throw std::invalid_argument("pool: duplicate agent name '" + name + "'");
  }
  names_.push_back(std::move(name));
  agents_.push_back(std::move(agent));
}

std::uint64_t AgentPool::hash() const {
  std::uint64_t h = 1469598103934665603ULL;
  for (const auto& a : agents_) h = (h ^ a->hash()) * 1099511628211ULL;
  return h;
}

// ---------------------------------------------------------------- play

double play_episode(const env::CookGrid& env, train::Agent& ego, train::Agent& partner, ad::Rng& rng) {
  const int obs_dim = env.obs_size();
  // The partner's trajectory, seen by the ego's partner model and, when the
  // partner has one, used as that model's own context.
  ctx::History ego_view(ego.has_mop() ? ego.config().context : 0, obs_dim);
  ctx::History own_view(partner.has_mop() ? partner.config().context : 0, obs_dim);
  const Matrix no_guidance = Matrix::Zero(1, env::kNumActions);
  env::GridState s = env.reset();
  double score = 0.0;
  for (;;) {
    const env::Obs raw2 = env.featurize(s, 1);
    const Matrix o1 = row_of(env.featurize(s, 0));
    const Matrix o2 = row_of(raw2);
    const Matrix g = ego.has_mop() ? ego.partner_model().guide(o1, ego_view.window()) : no_guidance;
    const Matrix pi2 = partner.has_mop() ? partner.partner_model().guide(o2, own_view.window())
                                         : partner.actor().probs(o2, no_guidance);
    const int a1 = mop::Mop::sample(ego.actor().probs(o1, g), rng).first;
    const int a2 = mop::Mop::sample(pi2, rng).first;
    ego_view.push(raw2, a2);
    own_view.push(raw2, a2);
    const env::StepResult r = env.step(s, {a1, a2});
    score += r.reward;
    s = r.state;
    if (r.done) break;
  }
  return score;
}

CellStats evaluate_pair(const env::CookGrid& env, train::Agent& ego, train::Agent& partner, int episodes,
                        ad::Rng& rng) {
  if (episodes < 1) throw std::invalid_argument("evaluate: episodes must be positive");
  std::vector<double> scores;
  scores.reserve(static_cast<std::size_t>(episodes));
  for (int e = 0; e < episodes; ++e) scores.push_back(play_episode(env, ego, partner, rng));
  return stats_of(scores);
}

// ---------------------------------------------------------------- crossplay

double CrossPlayMatrix::row_generalization(int i) const {
  const int n = static_cast<int>(names.size());
  if (n < 2) return 0.0;
  double s = 0.0;
  for (int j = 0; j < n; ++j) {
    if (j != i) s += cells[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)].mean;
  }
  return s / (n - 1);
}

double CrossPlayMatrix::generalization() const {
  const int n = static_cast<int>(names.size());
  if (n < 2) return 0.0;
  double s = 0.0;
  for (int i = 0; i < n; ++i) s += row_generalization(i);
  return s / n;
}

double CrossPlayMatrix::learning() const {
  const int n = static_cast<int>(names.size());
  if (n == 0) return 0.0;
  double s = 0.0;
  for (int i = 0; i < n; ++i) s += cells[static_cast<std::size_t>(i)][static_cast<std::size_t>(i)].mean;
  return s / n;
}

CrossPlayMatrix crossplay(AgentPool& pool, const env::CookGrid& env, int episodes, std::uint64_t seed) {
  if (episodes < 1) throw std::invalid_argument("crossplay: episodes per cell must be positive");
  if (pool.size() == 0) throw std::invalid_argument("crossplay: empty pool");
  const std::uint64_t before = pool.hash();
  CrossPlayMatrix m;
  m.names = pool.names();
  const int n = pool.size();
  m.cells.assign(static_cast<std::size_t>(n), std::vector<CellStats>(static_cast<std::size_t>(n)));
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                        static_cast<std::uint32_t>(i), static_cast<std::uint32_t>(j)};
      ad::Rng rng(seq);
      m.cells[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] =
          evaluate_pair(env, pool[i], pool[j], episodes, rng);
    }
  }
  if (pool.hash() != before) throw std::logic_error("crossplay: evaluation modified agent parameters");
  return m;
}

// ---------------------------------------------------------------- ablation

double AblationTable::row_mean(int r) const {
  const auto& v = scores.at(static_cast<std::size_t>(r));
  if (v.empty()) return 0.0;
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

double AblationTable::row_std(int r) const {
  const auto& v = scores.at(static_cast<std::size_t>(r));
  if (v.empty()) return 0.0;
  const double mu = row_mean(r);
  double s = 0.0;
  for (double x : v) s += (x - mu) * (x - mu);
  return std::sqrt(s / static_cast<double>(v.size()));
}

std::vector<std::string> axis_values(const std::string& axis) {
  if (axis == "personality_k") return {"6", "8", "10", "12"};
  if (axis == "context_size") return {"0", "1", "3", "5"};
  if (axis == "dpp" || axis == "context_encoder") return {"on", "off"};
  throw std::invalid_argument("ablate: unknown axis '" + axis + "'");
}

void apply_axis(train::TrainConfig& cfg, const std::string& axis, const std::string& value) {
  const auto allowed = axis_values(axis);
  if (std::find(allowed.begin(), allowed.end(), value) == allowed.end()) {
    throw std::invalid_argument("ablate: invalid value '" + value + "' for axis '" + axis + "'");
  }
  if (axis == "personality_k") {
    cfg.k = std::stoi(value);
  } else if (axis == "context_size") {
    cfg.context = std::stoi(value);
  } else if (axis == "dpp") {
    cfg.beta = value == "on" ? (cfg.beta > 0.0 ? cfg.beta : 0.5) : 0.0;
  } else {
    cfg.context_encoder = value == "on";
  }
  cfg.use_mop = true;
}

AblationTable ablate(const std::string& axis, const train::TrainConfig& base, const fs::path& out,
                     const AblationOptions& opts) {
  if (opts.seeds < 1) throw std::invalid_argument("ablate: seeds must be positive");
  const std::vector<std::string> values = opts.values.empty() ? axis_values(axis) : opts.values;
  AblationTable t;
  t.axis = axis;
  for (int s = 0; s < opts.seeds; ++s) {
    t.columns.push_back(s < 26 ? std::string(1, static_cast<char>('A' + s)) : "S" + std::to_string(s));
  }
  for (const std::string& v : values) {
    train::TrainConfig probe = base;
    apply_axis(probe, axis, v);  // validates every value before any training starts
  }
  for (const std::string& v : values) {
    t.rows.push_back(axis + "=" + v);
    std::vector<double> row;
    for (int s = 0; s < opts.seeds; ++s) {
      train::TrainConfig cfg = base;
      apply_axis(cfg, axis, v);
      cfg.seed = base.seed + static_cast<std::uint64_t>(s);
      train::Trainer trainer(cfg);
      trainer.run(out / (axis + "-" + v) / t.columns[static_cast<std::size_t>(s)]);
      ad::Rng rng(cfg.seed + 7919);
      row.push_back(evaluate_pair(trainer.environment(), trainer.agent(), trainer.agent(), opts.episodes, rng).mean);
    }
    t.scores.push_back(row);
  }
  return t;
}

// ---------------------------------------------------------------- reports

void write_matrix_csv(const CrossPlayMatrix& m, const fs::path& path) {
  std::ofstream out = open_out(path);
  out << "ego,partner,mean,std,episodes\n";
  for (std::size_t i = 0; i < m.names.size(); ++i) {
    for (std::size_t j = 0; j < m.names.size(); ++j) {
      const CellStats& c = m.cells[i][j];
      out << m.names[i] << ',' << m.names[j] << ',' << num(c.mean) << ',' << num(c.std) << ',' << c.episodes << '\n';
    }
  }
  if (!out) throw std::runtime_error("report: write failed for '" + path.string() + "'");
}

void write_table_csv(const AblationTable& t, const fs::path& path) {
  std::ofstream out = open_out(path);
  out << "method";
  for (const std::string& c : t.columns) out << ',' << c;
  out << ",avg,std\n";
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    out << t.rows[r];
    for (double x : t.scores[r]) out << ',' << num(x);
    out << ',' << num(t.row_mean(static_cast<int>(r))) << ',' << num(t.row_std(static_cast<int>(r))) << '\n';
  }
  if (!out) throw std::runtime_error("report: write failed for '" + path.string() + "'");
}

namespace {

// White to dark blue.
std::string cell_color(double x, double lo, double hi) {
  const double t = hi > lo ? std::clamp((x - lo) / (hi - lo), 0.0, 1.0) : 0.0;
  const int r = static_cast<int>(std::lround(255 - t * (255 - 8)));
  const int g = static_cast<int>(std::lround(255 - t * (255 - 48)));
  const int b = static_cast<int>(std::lround(255 - t * (255 - 107)));
  char buf[16];
  std::snprintf(buf, sizeof buf, "#%02x%02x%02x", r, g, b);
  return buf;
}

void write_grid_svg(const std::vector<std::string>& row_names, const std::vector<std::string>& col_names,
                    const std::vector<std::vector<double>>& values, const std::string& title, const fs::path& path) {
  constexpr int cell = 64;
  constexpr int margin = 96;
  const int w = margin + cell * static_cast<int>(col_names.size()) + 16;
  const int h = margin + cell * static_cast<int>(row_names.size()) + 16;
  double lo = 0.0, hi = 0.0;
  bool first = true;
  for (const auto& row : values) {
    for (double x : row) {
      lo = first ? x : std::min(lo, x);
      hi = first ? x : std::max(hi, x);
      first = false;
    }
  }
  std::ofstream out = open_out(path);
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  out << "<text x=\"" << margin << "\" y=\"20\" font-size=\"14\">" << title << "</text>\n";
  for (std::size_t j = 0; j < col_names.size(); ++j) {
    out << "<text x=\"" << margin + cell * static_cast<int>(j) + cell / 2 << "\" y=\"" << margin - 8
        << "\" text-anchor=\"middle\">" << col_names[j] << "</text>\n";
  }
  for (std::size_t i = 0; i < row_names.size(); ++i) {
    const int y = margin + cell * static_cast<int>(i);
    out << "<text x=\"" << margin - 8 << "\" y=\"" << y + cell / 2 + 4 << "\" text-anchor=\"end\">" << row_names[i]
        << "</text>\n";
    for (std::size_t j = 0; j < col_names.size(); ++j) {
      const int x = margin + cell * static_cast<int>(j);
      const double v = values[i][j];
      const double t = hi > lo ? (v - lo) / (hi - lo) : 0.0;
      out << "<rect x=\"" << x << "\" y=\"" << y << "\" width=\"" << cell << "\" height=\"" << cell << "\" fill=\""
          << cell_color(v, lo, hi) << "\" stroke=\"#ffffff\"/>\n";
      out << "<text x=\"" << x + cell / 2 << "\" y=\"" << y + cell / 2 + 4 << "\" text-anchor=\"middle\" fill=\""
          << (t > 0.5 ? "#ffffff" : "#000000") << "\">" << num(v, 1) << "</text>\n";
    }
  }
  out << "</svg>\n";
  if (!out) throw std::runtime_error("report: write failed for '" + path.string() + "'");
}

}  // namespace

void write_heatmap_svg(const CrossPlayMatrix& m, const fs::path& path) {
  std::vector<std::vector<double>> v(m.names.size());
  for (std::size_t i = 0; i < m.names.size(); ++i) {
    for (const CellStats& c : m.cells[i]) v[i].push_back(c.mean);
  }
  write_grid_svg(m.names, m.names, v, "cross-play mean score (row: ego, column: partner)", path);
}

void write_table_svg(const AblationTable& t, const fs::path& path) {
  std::vector<std::string> cols = t.columns;
  cols.emplace_back("avg");
  std::vector<std::vector<double>> v = t.scores;
  for (std::size_t r = 0; r < v.size(); ++r) v[r].push_back(t.row_mean(static_cast<int>(r)));
  write_grid_svg(t.rows, cols, v, "ablation: " + t.axis, path);
}

void save_matrix(const CrossPlayMatrix& m, const fs::path& path) {
  nlohmann::json j;
  j["names"] = m.names;
  for (const auto& row : m.cells) {
    nlohmann::json r = nlohmann::json::array();
    for (const CellStats& c : row) r.push_back({{"mean", c.mean}, {"std", c.std}, {"episodes", c.episodes}});
    j["cells"].push_back(r);
  }
  j["learning"] = m.learning();
  j["generalization"] = m.generalization();
  std::ofstream out = open_out(path);
  out << j.dump(2) << '\n';
}

CrossPlayMatrix load_matrix(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("report: cannot read '" + path.string() + "'");
  const nlohmann::json j = nlohmann::json::parse(in);
  CrossPlayMatrix m;
  m.names = j.at("names").get<std::vector<std::string>>();
  for (const auto& row : j.at("cells")) {
    std::vector<CellStats> r;
    for (const auto& c : row) r.push_back({c.at("mean").get<double>(), c.at("std").get<double>(), c.at("episodes").get<int>()});
    m.cells.push_back(r);
  }
  return m;
}

void save_table(const AblationTable& t, const fs::path& path) {
  nlohmann::json j;
  j["axis"] = t.axis;
  j["columns"] = t.columns;
  j["rows"] = t.rows;
  j["scores"] = t.scores;
  std::ofstream out = open_out(path);
  out << j.dump(2) << '\n';
}

AblationTable load_table(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("report: cannot read '" + path.string() + "'");
  const nlohmann::json j = nlohmann::json::parse(in);
  AblationTable t;
  t.axis = j.at("axis").get<std::string>();
  t.columns = j.at("columns").get<std::vector<std::string>>();
  t.rows = j.at("rows").get<std::vector<std::string>>();
  t.scores = j.at("scores").get<std::vector<std::vector<double>>>();
  return t;
}

}  // namespace mopsan::eval
