#include "mopsan/autodiff/nn.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

namespace mopsan::ad {

namespace {

constexpr std::uint64_t kFnvOffset = 1469598103934665603ULL;
constexpr std::uint64_t kFnvPrime = 1099511628211ULL;

void fnv(std::uint64_t& h, const void* data, std::size_t n) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= kFnvPrime;
  }
}

void hash_into(std::uint64_t& h, const ParamSet& ps) {
  for (const Parameter& p : ps.all()) {
    fnv(h, p.name.data(), p.name.size());
    const std::int64_t shape[2] = {p.value.rows(), p.value.cols()};
    fnv(h, shape, sizeof shape);
    fnv(h, p.value.data(), sizeof(double) * static_cast<std::size_t>(p.value.size()));
  }
}

}  // namespace

int ParamSet::add(std::string name, Matrix init) {
  if (index_of(name) >= 0) throw std::invalid_argument("duplicate parameter name '" + name + "'");
  Parameter p;
  p.name = std::move(name);
  p.grad = Matrix::Zero(init.rows(), init.cols());
  p.value = std::move(init);
  params_.push_back(std::move(p));
  return static_cast<int>(params_.size() - 1);
}

std::size_t ParamSet::scalar_count() const {
  std::size_t n = 0;
  for (const Parameter& p : params_) n += static_cast<std::size_t>(p.value.size());
  return n;
}

int ParamSet::index_of(const std::string& name) const {
  for (std::size_t i = 0; i < params_.size(); ++i) {
    if (params_[i].name == name) return static_cast<int>(i);
  }
  return -1;
}

void ParamSet::zero_grad() {
  for (Parameter& p : params_) p.grad = Matrix::Zero(p.value.rows(), p.value.cols());
}

double ParamSet::grad_norm_sq() const {
  double s = 0.0;
  for (const Parameter& p : params_) {
    if (p.grad.size() == p.value.size()) s += p.grad.squaredNorm();
  }
  return s;
}

std::uint64_t ParamSet::hash() const {
  std::uint64_t h = kFnvOffset;
  hash_into(h, *this);
  return h;
}

void ParamSet::copy_values_from(const ParamSet& other) {
  if (other.size() != size()) throw std::invalid_argument("copy_values_from: parameter count differs");
  for (int i = 0; i < size(); ++i) {
    if (other[i].value.rows() != (*this)[i].value.rows() || other[i].value.cols() != (*this)[i].value.cols()) {
      throw std::invalid_argument("copy_values_from: shape differs for '" + (*this)[i].name + "'");
    }
    (*this)[i].value = other[i].value;
  }
}

std::uint64_t hash_params(const std::vector<const ParamSet*>& sets) {
  std::uint64_t h = kFnvOffset;
  for (const ParamSet* ps : sets) hash_into(h, *ps);
  return h;
}

Linear make_linear(ParamSet& ps, const std::string& name, int in, int out, Rng& rng, double gain) {
  const double bound = in > 0 ? gain / std::sqrt(static_cast<double>(in)) : 0.0;
  std::uniform_real_distribution<double> dist(-bound, bound);
  Matrix w(in, out);
  for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = bound > 0.0 ? dist(rng) : 0.0;
  Linear l;
  l.in = in;
  l.out = out;
  l.weight = ps.add(name + ".w", std::move(w));
  l.bias = ps.add(name + ".b", Matrix::Zero(1, out));
  return l;
}

NodeId apply(Tape& tape, ParamSet& ps, const Linear& layer, NodeId x, bool trainable) {
  const NodeId w = tape.param(ps[layer.weight], trainable);
  const NodeId b = tape.param(ps[layer.bias], trainable);
  return tape.add_bias(tape.matmul(x, w), b);
}

Mlp make_mlp(ParamSet& ps, const std::string& name, const std::vector<int>& widths, Rng& rng, Activation act,
             double last_gain) {
  if (widths.size() < 2) throw std::invalid_argument("make_mlp: need at least input and output widths");
  Mlp mlp;
  mlp.act = act;
  for (std::size_t i = 0; i + 1 < widths.size(); ++i) {
    const bool last = i + 2 == widths.size();
    mlp.layers.push_back(make_linear(ps, name + "." + std::to_string(i), widths[i], widths[i + 1], rng,
                                     last ? last_gain : 1.0));
  }
  return mlp;
}

NodeId apply(Tape& tape, ParamSet& ps, const Mlp& mlp, NodeId x, bool trainable) {
  NodeId h = x;
  for (std::size_t i = 0; i < mlp.layers.size(); ++i) {
    h = apply(tape, ps, mlp.layers[i], h, trainable);
    if (i + 1 < mlp.layers.size()) h = mlp.act == Activation::Tanh ? tape.tanh(h) : tape.relu(h);
  }
  return h;
}

// ---------------------------------------------------------------- adam

Adam::Adam(std::vector<ParamSet*> sets, AdamConfig cfg) : sets_(std::move(sets)), cfg_(cfg) {
  for (ParamSet* ps : sets_) {
    for (const Parameter& p : ps->all()) {
      m_.push_back(Matrix::Zero(p.value.rows(), p.value.cols()));
      v_.push_back(Matrix::Zero(p.value.rows(), p.value.cols()));
    }
  }
}

double Adam::step() {
  double sq = 0.0;
  for (ParamSet* ps : sets_) sq += ps->grad_norm_sq();
  const double norm = std::sqrt(sq);
  if (!std::isfinite(norm)) throw std::runtime_error("adam: non-finite gradient norm");
  const double scale = (cfg_.clip_norm > 0.0 && norm > cfg_.clip_norm) ? cfg_.clip_norm / norm : 1.0;
  ++t_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  std::size_t slot = 0;
  for (ParamSet* ps : sets_) {
    for (Parameter& p : ps->all()) {
      Matrix& m = m_[slot];
      Matrix& v = v_[slot];
      ++slot;
      if (m.rows() != p.value.rows() || m.cols() != p.value.cols()) {
        throw std::runtime_error("adam: moment shape mismatch for '" + p.name + "'");
      }
      if (p.grad.size() != p.value.size()) continue;
      const Matrix g = p.grad * scale;
      m = cfg_.beta1 * m + (1.0 - cfg_.beta1) * g;
      v = cfg_.beta2 * v + (1.0 - cfg_.beta2) * g.cwiseProduct(g);
      p.value.array() -= cfg_.lr * (m.array() / bc1) / ((v.array() / bc2).sqrt() + cfg_.eps);
    }
  }
  return norm;
}

// ---------------------------------------------------------------- checkpoint

namespace {

constexpr char kMagic[8] = {'M', 'O', 'P', 'S', 'A', 'N', 'C', 'K'};
constexpr std::uint32_t kVersion = 1;

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

void write_u32(std::ostream& os, std::uint32_t v) { os.write(reinterpret_cast<const char*>(&v), sizeof v); }
void write_i64(std::ostream& os, std::int64_t v) { os.write(reinterpret_cast<const char*>(&v), sizeof v); }
void write_str(std::ostream& os, const std::string& s) {
  write_u32(os, static_cast<std::uint32_t>(s.size()));
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

template <typename T>
T read_pod(std::istream& is, const std::string& field) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof v);
  if (!is) throw CheckpointError("checkpoint truncated while reading " + field);
  return v;
}

std::string read_str(std::istream& is, const std::string& field) {
  const auto n = read_pod<std::uint32_t>(is, field + " length");
  if (n > (1u << 20)) throw CheckpointError("checkpoint field " + field + " has implausible length");
  std::string s(n, '\0');
  is.read(s.data(), n);
  if (!is) throw CheckpointError("checkpoint truncated while reading " + field);
  return s;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const std::string& module, const NamedSets& sets) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw CheckpointError("cannot open checkpoint for writing: " + path.string());
  os.write(kMagic, sizeof kMagic);
  write_u32(os, kVersion);
  write_str(os, module);
  std::uint32_t count = 0;
  for (const auto& [prefix, ps] : sets) count += static_cast<std::uint32_t>(ps->size());
  write_u32(os, count);
  for (const auto& [prefix, ps] : sets) {
    for (const Parameter& p : ps->all()) {
      write_str(os, prefix + "/" + p.name);
      write_i64(os, p.value.rows());
      write_i64(os, p.value.cols());
    }
  }
  for (const auto& [prefix, ps] : sets) {
    for (const Parameter& p : ps->all()) {
      os.write(reinterpret_cast<const char*>(p.value.data()),
               static_cast<std::streamsize>(sizeof(double) * static_cast<std::size_t>(p.value.size())));
    }
  }
  if (!os) throw CheckpointError("write failed: " + path.string());
}

void load_checkpoint(const std::filesystem::path& path, const std::string& module, const NamedSets& sets) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw CheckpointError("cannot open checkpoint: " + path.string());
  char magic[8];
  is.read(magic, sizeof magic);
  if (!is || std::memcmp(magic, kMagic, sizeof magic) != 0) throw CheckpointError("bad magic in " + path.string());
  const auto version = read_pod<std::uint32_t>(is, "format-version");
  if (version != kVersion) {
    throw CheckpointError("format-version mismatch: file has " + std::to_string(version) + ", expected " +
                          std::to_string(kVersion));
  }
  const std::string stored_module = read_str(is, "module-name");
  if (stored_module != module) {
    throw CheckpointError("module-name mismatch: file has '" + stored_module + "', expected '" + module + "'");
  }
  std::vector<Parameter*> targets;
  std::vector<std::string> names;
  for (const auto& [prefix, ps] : sets) {
    for (Parameter& p : ps->all()) {
      targets.push_back(&p);
      names.push_back(prefix + "/" + p.name);
    }
  }
  const auto count = read_pod<std::uint32_t>(is, "parameter count");
  if (count != targets.size()) {
    throw CheckpointError("parameter count mismatch: file has " + std::to_string(count) + ", expected " +
                          std::to_string(targets.size()));
  }
  for (std::size_t i = 0; i < targets.size(); ++i) {
    const std::string name = read_str(is, "parameter name");
    const auto rows = read_pod<std::int64_t>(is, name + " rows");
    const auto cols = read_pod<std::int64_t>(is, name + " cols");
    if (name != names[i]) throw CheckpointError("parameter name mismatch: file has '" + name + "', expected '" + names[i] + "'");
    if (rows != targets[i]->value.rows() || cols != targets[i]->value.cols()) {
      throw CheckpointError("shape mismatch for " + name + ": file has " + std::to_string(rows) + "x" +
                            std::to_string(cols) + ", expected " + std::to_string(targets[i]->value.rows()) + "x" +
                            std::to_string(targets[i]->value.cols()));
    }
  }
  for (Parameter* p : targets) {
    Matrix m(p->value.rows(), p->value.cols());
    is.read(reinterpret_cast<char*>(m.data()),
            static_cast<std::streamsize>(sizeof(double) * static_cast<std::size_t>(m.size())));
    if (!is) throw CheckpointError("checkpoint truncated in data for " + p->name);
    p->value = std::move(m);
  }
}

// ---------------------------------------------------------------- gradcheck

std::vector<Parameter*> param_ptrs(ParamSet& ps) {
  std::vector<Parameter*> out;
  for (Parameter& p : ps.all()) out.push_back(&p);
  return out;
}

double finite_diff_check(Tape& tape, NodeId loss, const std::vector<Parameter*>& params, double eps, int probes,
                         Rng& rng) {
  for (Parameter* p : params) p->grad = Matrix::Zero(p->value.rows(), p->value.cols());
  tape.forward();
  tape.backward(loss);
  std::vector<std::pair<std::size_t, Eigen::Index>> coords;
  for (std::size_t i = 0; i < params.size(); ++i) {
    for (Eigen::Index j = 0; j < params[i]->value.size(); ++j) coords.emplace_back(i, j);
  }
  if (coords.empty()) return 0.0;
  if (probes < static_cast<int>(coords.size())) {
    std::shuffle(coords.begin(), coords.end(), rng);
    coords.resize(static_cast<std::size_t>(probes));
  }
  double worst = 0.0;
  for (const auto& [pi, j] : coords) {
    Parameter& p = *params[pi];
    const double saved = p.value.data()[j];
    p.value.data()[j] = saved + eps;
    tape.forward();
    const double up = tape.scalar(loss);
    p.value.data()[j] = saved - eps;
    tape.forward();
    const double down = tape.scalar(loss);
    p.value.data()[j] = saved;
    const double numeric = (up - down) / (2.0 * eps);
    const double analytic = p.grad.data()[j];
    worst = std::max(worst, std::abs(analytic - numeric) / std::max(1.0, std::abs(analytic)));
  }
  tape.forward();
  return worst;
}

}  // namespace mopsan::ad
