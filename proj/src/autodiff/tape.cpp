#include "mopsan/autodiff/tape.hpp"

#include "mopsan/autodiff/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>
#include <sstream>

namespace mopsan::ad {

namespace {

double stable_softplus(double x) {
  return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

double stable_sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

std::string shape_str(int r, int c) {
  std::ostringstream os;
  os << r << "x" << c;
  return os.str();
}

}  // namespace

std::string_view op_name(Op op) {
  switch (op) {
    case Op::Input: return "input";
    case Op::Param: return "param";
    case Op::Constant: return "constant";
    case Op::MatMul: return "matmul";
    case Op::AddBias: return "add_bias";
    case Op::Add: return "add";
    case Op::Sub: return "sub";
    case Op::Mul: return "mul";
    case Op::Scale: return "scale";
    case Op::AddScalar: return "add_scalar";
    case Op::Tanh: return "tanh";
    case Op::Relu: return "relu";
    case Op::Softplus: return "softplus";
    case Op::Exp: return "exp";
    case Op::Log: return "log";
    case Op::SoftmaxRows: return "softmax_rows";
    case Op::LogSoftmaxRows: return "log_softmax_rows";
    case Op::SumAll: return "sum_all";
    case Op::MeanAll: return "mean_all";
    case Op::SumRows: return "sum_rows";
    case Op::ConcatCols: return "concat_cols";
    case Op::SliceCols: return "slice_cols";
    case Op::PickCols: return "pick_cols";
    case Op::Minimum: return "minimum";
    case Op::Clip: return "clip";
    case Op::MulCol: return "mul_col";
    case Op::AddTiled: return "add_tiled";
    case Op::InterleaveRows: return "interleave_rows";
    case Op::GroupScores: return "group_scores";
    case Op::MaskedSoftmax: return "masked_softmax";
    case Op::GroupApply: return "group_apply";
    case Op::LayerNormRows: return "layer_norm_rows";
    case Op::ScaleCols: return "scale_cols";
    case Op::GroupWeightedSum: return "group_weighted_sum";
    case Op::NormalizeRows: return "normalize_rows";
    case Op::GroupLogDet: return "group_logdet";
    case Op::Spike: return "spike";
    case Op::LifIntegrate: return "lif_integrate";
    case Op::LifReset: return "lif_reset";
    case Op::WhereZero: return "where_zero";
    case Op::LifCounter: return "lif_counter";
  }
  return "unknown";
}

const Tape::Node& Tape::node(NodeId id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= nodes_.size()) {
    throw std::out_of_range("tape: node id " + std::to_string(id) + " out of range");
  }
  return nodes_[static_cast<std::size_t>(id)];
}

Tape::Node& Tape::node(NodeId id) {
  return const_cast<Node&>(static_cast<const Tape&>(*this).node(id));
}

void Tape::shape_error(const Node& n, const std::string& what) const {
  std::ostringstream os;
  os << "shape mismatch at node #" << nodes_.size() << " (" << op_name(n.op) << "): " << what;
  throw ShapeError(os.str());
}

NodeId Tape::push(Node n) {
  bool ready = true;
  for (NodeId i : n.in) {
    const Node& src = node(i);
    ready = ready && src.evaluated;
    n.needs_grad = n.needs_grad || src.needs_grad;
  }
  if (n.op == Op::LifCounter) n.needs_grad = false;
  nodes_.push_back(std::move(n));
  Node& added = nodes_.back();
  if (added.op != Op::Input && added.op != Op::Param && added.op != Op::Constant && ready) {
    evaluate(added);
  }
  return static_cast<NodeId>(nodes_.size() - 1);
}

// ---------------------------------------------------------------- leaves

NodeId Tape::input(std::string name, int rows, int cols, bool requires_grad) {
  Node n;
  n.op = Op::Input;
  n.name = std::move(name);
  n.rows = rows;
  n.cols = cols;
  n.needs_grad = requires_grad;
  return push(std::move(n));
}

NodeId Tape::input(std::string name, Matrix value, bool requires_grad) {
  Node n;
  n.op = Op::Input;
  n.name = std::move(name);
  n.rows = static_cast<int>(value.rows());
  n.cols = static_cast<int>(value.cols());
  n.value = std::move(value);
  n.evaluated = true;
  n.needs_grad = requires_grad;
  return push(std::move(n));
}

NodeId Tape::param(Parameter& p, bool trainable) {
  Node n;
  n.op = Op::Param;
  n.param = &p;
  n.name = p.name;
  n.rows = static_cast<int>(p.value.rows());
  n.cols = static_cast<int>(p.value.cols());
  n.value = p.value;
  n.evaluated = true;
  n.needs_grad = trainable;
  return push(std::move(n));
}

NodeId Tape::constant(Matrix value) {
  Node n;
  n.op = Op::Constant;
  n.rows = static_cast<int>(value.rows());
  n.cols = static_cast<int>(value.cols());
  n.value = std::move(value);
  n.evaluated = true;
  return push(std::move(n));
}

NodeId Tape::zeros(int rows, int cols) { return constant(Matrix::Zero(rows, cols)); }

// ---------------------------------------------------------------- builders

namespace {
bool same_shape(int r1, int c1, int r2, int c2) { return r1 == r2 && c1 == c2; }
}  // namespace


NodeId Tape::matmul(NodeId a, NodeId b) {
  Node n;
  n.op = Op::MatMul;
  n.in = {a, b};
  const Node& x = node(a);
  const Node& y = node(b);
  if (x.cols != y.rows) shape_error(n, shape_str(x.rows, x.cols) + " * " + shape_str(y.rows, y.cols));
  n.rows = x.rows;
  n.cols = y.cols;
  return push(std::move(n));
}

NodeId Tape::add_bias(NodeId x, NodeId bias) {
  Node n;
  n.op = Op::AddBias;
  n.in = {x, bias};
  const Node& xs = node(x);
  const Node& bs = node(bias);
  if (bs.rows != 1 || bs.cols != xs.cols) {
    shape_error(n, "bias " + shape_str(bs.rows, bs.cols) + " for " + shape_str(xs.rows, xs.cols));
  }
  n.rows = xs.rows;
  n.cols = xs.cols;
  return push(std::move(n));
}

#define MOPSAN_BINARY_SAME(fn, opkind)                                                       \
  NodeId Tape::fn(NodeId a, NodeId b) {                                                      \
    Node n;                                                                                  \
    n.op = opkind;                                                                           \
    n.in = {a, b};                                                                           \
    const Node& x = node(a);                                                                 \
    const Node& y = node(b);                                                                 \
    if (!same_shape(x.rows, x.cols, y.rows, y.cols)) {                                       \
      shape_error(n, shape_str(x.rows, x.cols) + " vs " + shape_str(y.rows, y.cols));        \
    }                                                                                        \
    n.rows = x.rows;                                                                         \
    n.cols = x.cols;                                                                         \
    return push(std::move(n));                                                               \
  }

MOPSAN_BINARY_SAME(add, Op::Add)
MOPSAN_BINARY_SAME(sub, Op::Sub)
MOPSAN_BINARY_SAME(mul, Op::Mul)
MOPSAN_BINARY_SAME(minimum, Op::Minimum)
#undef MOPSAN_BINARY_SAME

#define MOPSAN_UNARY(fn, opkind)     \
  NodeId Tape::fn(NodeId x) {        \
    Node n;                          \
    n.op = opkind;                   \
    n.in = {x};                      \
    n.rows = node(x).rows;           \
    n.cols = node(x).cols;           \
    return push(std::move(n));       \
  }

MOPSAN_UNARY(tanh, Op::Tanh)
MOPSAN_UNARY(relu, Op::Relu)
MOPSAN_UNARY(softplus, Op::Softplus)
MOPSAN_UNARY(exp, Op::Exp)
MOPSAN_UNARY(log, Op::Log)
MOPSAN_UNARY(softmax_rows, Op::SoftmaxRows)
MOPSAN_UNARY(log_softmax_rows, Op::LogSoftmaxRows)
MOPSAN_UNARY(normalize_rows, Op::NormalizeRows)
#undef MOPSAN_UNARY

NodeId Tape::scale(NodeId x, double factor) {
  Node n;
  n.op = Op::Scale;
  n.in = {x};
  n.a = factor;
  n.rows = node(x).rows;
  n.cols = node(x).cols;
  return push(std::move(n));
}

NodeId Tape::add_scalar(NodeId x, double offset) {
  Node n;
  n.op = Op::AddScalar;
  n.in = {x};
  n.a = offset;
  n.rows = node(x).rows;
  n.cols = node(x).cols;
  return push(std::move(n));
}

NodeId Tape::clip(NodeId x, double lo, double hi) {
  Node n;
  n.op = Op::Clip;
  n.in = {x};
  n.a = lo;
  n.b = hi;
  if (!(lo <= hi)) shape_error(n, "clip bounds inverted");
  n.rows = node(x).rows;
  n.cols = node(x).cols;
  return push(std::move(n));
}

NodeId Tape::mul_col(NodeId x, NodeId column) {
  Node n;
  n.op = Op::MulCol;
  n.in = {x, column};
  const Node& xs = node(x);
  const Node& cs = node(column);
  if (cs.cols != 1 || cs.rows != xs.rows) {
    shape_error(n, "column " + shape_str(cs.rows, cs.cols) + " for " + shape_str(xs.rows, xs.cols));
  }
  n.rows = xs.rows;
  n.cols = xs.cols;
  return push(std::move(n));
}

NodeId Tape::scale_cols(NodeId x, NodeId row) {
  Node n;
  n.op = Op::ScaleCols;
  n.in = {x, row};
  const Node& xs = node(x);
  const Node& rs = node(row);
  if (rs.rows != 1 || rs.cols != xs.cols) {
    shape_error(n, "row " + shape_str(rs.rows, rs.cols) + " for " + shape_str(xs.rows, xs.cols));
  }
  n.rows = xs.rows;
  n.cols = xs.cols;
  return push(std::move(n));
}

NodeId Tape::add_tiled(NodeId x, NodeId tile) {
  Node n;
  n.op = Op::AddTiled;
  n.in = {x, tile};
  const Node& xs = node(x);
  const Node& ts = node(tile);
  if (ts.cols != xs.cols || ts.rows == 0 || xs.rows % ts.rows != 0) {
    shape_error(n, "tile " + shape_str(ts.rows, ts.cols) + " for " + shape_str(xs.rows, xs.cols));
  }
  n.rows = xs.rows;
  n.cols = xs.cols;
  return push(std::move(n));
}

NodeId Tape::sum_all(NodeId x) {
  Node n;
  n.op = Op::SumAll;
  n.in = {x};
  n.rows = 1;
  n.cols = 1;
  return push(std::move(n));
}

NodeId Tape::mean_all(NodeId x) {
  Node n;
  n.op = Op::MeanAll;
  n.in = {x};
  if (node(x).rows * node(x).cols == 0) shape_error(n, "mean of empty tensor");
  n.rows = 1;
  n.cols = 1;
  return push(std::move(n));
}

NodeId Tape::sum_rows(NodeId x) {
  Node n;
  n.op = Op::SumRows;
  n.in = {x};
  n.rows = node(x).rows;
  n.cols = 1;
  return push(std::move(n));
}

NodeId Tape::layer_norm_rows(NodeId x, double eps) {
  Node n;
  n.op = Op::LayerNormRows;
  n.in = {x};
  n.a = eps;
  n.rows = node(x).rows;
  n.cols = node(x).cols;
  if (n.cols == 0) shape_error(n, "layer norm over zero columns");
  return push(std::move(n));
}

NodeId Tape::concat_cols(const std::vector<NodeId>& parts) {
  Node n;
  n.op = Op::ConcatCols;
  n.in = parts;
  if (parts.empty()) shape_error(n, "no parts");
  n.rows = node(parts.front()).rows;
  for (NodeId p : parts) {
    if (node(p).rows != n.rows) shape_error(n, "row counts differ");
    n.cols += node(p).cols;
  }
  return push(std::move(n));
}

NodeId Tape::slice_cols(NodeId x, int start, int count) {
  Node n;
  n.op = Op::SliceCols;
  n.in = {x};
  n.k = start;
  const Node& xs = node(x);
  if (start < 0 || count < 0 || start + count > xs.cols) {
    shape_error(n, "slice [" + std::to_string(start) + "," + std::to_string(start + count) + ") of " +
                       shape_str(xs.rows, xs.cols));
  }
  n.rows = xs.rows;
  n.cols = count;
  return push(std::move(n));
}

NodeId Tape::pick_cols(NodeId x, std::vector<int> column_per_row) {
  Node n;
  n.op = Op::PickCols;
  n.in = {x};
  const Node& xs = node(x);
  if (static_cast<int>(column_per_row.size()) != xs.rows) shape_error(n, "index count != rows");
  for (int c : column_per_row) {
    if (c < 0 || c >= xs.cols) shape_error(n, "column index " + std::to_string(c) + " out of range");
  }
  n.idx = std::move(column_per_row);
  n.rows = xs.rows;
  n.cols = 1;
  return push(std::move(n));
}

NodeId Tape::interleave_rows(const std::vector<NodeId>& parts) {
  Node n;
  n.op = Op::InterleaveRows;
  n.in = parts;
  if (parts.empty()) shape_error(n, "no parts");
  const Node& first = node(parts.front());
  for (NodeId p : parts) {
    if (!same_shape(node(p).rows, node(p).cols, first.rows, first.cols)) shape_error(n, "part shapes differ");
  }
  n.rows = first.rows * static_cast<int>(parts.size());
  n.cols = first.cols;
  return push(std::move(n));
}

NodeId Tape::group_scores(NodeId q, NodeId k, int group, double factor) {
  Node n;
  n.op = Op::GroupScores;
  n.in = {q, k};
  n.k = group;
  n.a = factor;
  const Node& qs = node(q);
  const Node& ks = node(k);
  if (!same_shape(qs.rows, qs.cols, ks.rows, ks.cols) || group <= 0 || qs.rows % group != 0) {
    shape_error(n, "q " + shape_str(qs.rows, qs.cols) + " k " + shape_str(ks.rows, ks.cols) + " group " +
                       std::to_string(group));
  }
  n.rows = qs.rows;
  n.cols = group;
  return push(std::move(n));
}

NodeId Tape::masked_softmax(NodeId scores, NodeId mask) {
  Node n;
  n.op = Op::MaskedSoftmax;
  n.in = {scores, mask};
  const Node& s = node(scores);
  const Node& m = node(mask);
  if (!same_shape(s.rows, s.cols, m.rows, m.cols)) {
    shape_error(n, "scores " + shape_str(s.rows, s.cols) + " mask " + shape_str(m.rows, m.cols));
  }
  n.rows = s.rows;
  n.cols = s.cols;
  return push(std::move(n));
}

NodeId Tape::group_apply(NodeId probs, NodeId v, int group) {
  Node n;
  n.op = Op::GroupApply;
  n.in = {probs, v};
  n.k = group;
  const Node& p = node(probs);
  const Node& vs = node(v);
  if (p.cols != group || p.rows != vs.rows || group <= 0 || vs.rows % group != 0) {
    shape_error(n, "probs " + shape_str(p.rows, p.cols) + " v " + shape_str(vs.rows, vs.cols));
  }
  n.rows = vs.rows;
  n.cols = vs.cols;
  return push(std::move(n));
}

NodeId Tape::group_weighted_sum(NodeId weights, NodeId x) {
  Node n;
  n.op = Op::GroupWeightedSum;
  n.in = {weights, x};
  const Node& w = node(weights);
  const Node& xs = node(x);
  if (w.rows * w.cols != xs.rows) {
    shape_error(n, "weights " + shape_str(w.rows, w.cols) + " x " + shape_str(xs.rows, xs.cols));
  }
  n.k = w.cols;
  n.rows = w.rows;
  n.cols = xs.cols;
  return push(std::move(n));
}

NodeId Tape::group_logdet(NodeId features, int group, double jitter) {
  Node n;
  n.op = Op::GroupLogDet;
  n.in = {features};
  n.k = group;
  n.a = jitter;
  const Node& f = node(features);
  if (group <= 0 || f.rows % group != 0) {
    shape_error(n, "features " + shape_str(f.rows, f.cols) + " group " + std::to_string(group));
  }
  n.rows = f.rows / group;
  n.cols = 1;
  return push(std::move(n));
}

NodeId Tape::spike(NodeId v, double threshold, double width, SpikeMode mode) {
  Node n;
  n.op = Op::Spike;
  n.in = {v};
  n.a = threshold;
  n.b = width;
  n.mode = mode;
  if (!(width > 0.0)) shape_error(n, "surrogate width must be positive");
  n.rows = node(v).rows;
  n.cols = node(v).cols;
  return push(std::move(n));
}

NodeId Tape::lif_integrate(NodeId v, NodeId current, double leak) {
  Node n;
  n.op = Op::LifIntegrate;
  n.in = {v, current};
  n.a = leak;
  const Node& vs = node(v);
  const Node& cs = node(current);
  if (!same_shape(vs.rows, vs.cols, cs.rows, cs.cols)) {
    shape_error(n, "v " + shape_str(vs.rows, vs.cols) + " current " + shape_str(cs.rows, cs.cols));
  }
  n.rows = vs.rows;
  n.cols = vs.cols;
  return push(std::move(n));
}

NodeId Tape::lif_reset(NodeId v, NodeId spikes, double v_reset) {
  Node n;
  n.op = Op::LifReset;
  n.in = {v, spikes};
  n.a = v_reset;
  const Node& vs = node(v);
  const Node& ss = node(spikes);
  if (!same_shape(vs.rows, vs.cols, ss.rows, ss.cols)) shape_error(n, "v and spikes differ");
  n.rows = vs.rows;
  n.cols = vs.cols;
  return push(std::move(n));
}

NodeId Tape::where_zero(NodeId x, NodeId counter, double fill) {
  Node n;
  n.op = Op::WhereZero;
  n.in = {x, counter};
  n.a = fill;
  const Node& xs = node(x);
  const Node& cs = node(counter);
  if (!same_shape(xs.rows, xs.cols, cs.rows, cs.cols)) shape_error(n, "x and counter differ");
  n.rows = xs.rows;
  n.cols = xs.cols;
  return push(std::move(n));
}

NodeId Tape::lif_counter(NodeId previous, NodeId spikes, int refractory) {
  Node n;
  n.op = Op::LifCounter;
  n.in = {previous, spikes};
  n.k = refractory;
  const Node& ps = node(previous);
  const Node& ss = node(spikes);
  if (!same_shape(ps.rows, ps.cols, ss.rows, ss.cols)) shape_error(n, "counter and spikes differ");
  n.rows = ps.rows;
  n.cols = ps.cols;
  return push(std::move(n));
}


// ---------------------------------------------------------------- evaluation

void Tape::evaluate(Node& n) {
  auto in = [&](std::size_t i) -> const Matrix& { return nodes_[static_cast<std::size_t>(n.in[i])].value; };
  Matrix& y = n.value;
  switch (n.op) {
    case Op::Input:
    case Op::Constant:
      break;
    case Op::Param:
      if (n.param->value.rows() != n.rows || n.param->value.cols() != n.cols) {
        shape_error(n, "parameter '" + n.name + "' changed shape");
      }
      y = n.param->value;
      break;
    case Op::MatMul:
      y.noalias() = in(0) * in(1);
      break;
    case Op::AddBias:
      y = in(0);
      y.rowwise() += in(1).row(0);
      break;
    case Op::Add:
      y = in(0) + in(1);
      break;
    case Op::Sub:
      y = in(0) - in(1);
      break;
    case Op::Mul:
      y = in(0).cwiseProduct(in(1));
      break;
    case Op::Scale:
      y = in(0) * n.a;
      break;
    case Op::AddScalar:
      y = in(0).array() + n.a;
      break;
    case Op::Tanh:
      y = in(0).array().tanh();
      break;
    case Op::Relu:
      y = in(0).cwiseMax(0.0);
      break;
    case Op::Softplus:
      y = in(0).unaryExpr([](double x) { return stable_softplus(x); });
      break;
    case Op::Exp:
      y = in(0).array().exp();
      break;
    case Op::Log:
      y = in(0).array().log();
      break;
    case Op::SoftmaxRows: {
      const Matrix& x = in(0);
      y.resize(x.rows(), x.cols());
      for (Eigen::Index r = 0; r < x.rows(); ++r) {
        const double mx = x.row(r).maxCoeff();
        y.row(r) = (x.row(r).array() - mx).exp();
        y.row(r) /= y.row(r).sum();
      }
      break;
    }
    case Op::LogSoftmaxRows: {
      const Matrix& x = in(0);
      y.resize(x.rows(), x.cols());
      for (Eigen::Index r = 0; r < x.rows(); ++r) {
        const double mx = x.row(r).maxCoeff();
        const double lse = mx + std::log((x.row(r).array() - mx).exp().sum());
        y.row(r) = x.row(r).array() - lse;
      }
      break;
    }
    case Op::SumAll:
      y = Matrix::Constant(1, 1, in(0).sum());
      break;
    case Op::MeanAll:
      y = Matrix::Constant(1, 1, in(0).mean());
      break;
    case Op::SumRows:
      y = in(0).rowwise().sum();
      break;
    case Op::ConcatCols: {
      y.resize(n.rows, n.cols);
      int c = 0;
      for (std::size_t i = 0; i < n.in.size(); ++i) {
        const Matrix& part = in(i);
        y.middleCols(c, part.cols()) = part;
        c += static_cast<int>(part.cols());
      }
      break;
    }
    case Op::SliceCols:
      y = in(0).middleCols(n.k, n.cols);
      break;
    case Op::PickCols: {
      const Matrix& x = in(0);
      y.resize(n.rows, 1);
      for (int r = 0; r < n.rows; ++r) y(r, 0) = x(r, n.idx[static_cast<std::size_t>(r)]);
      break;
    }
    case Op::Minimum:
      y = in(0).cwiseMin(in(1));
      break;
    case Op::Clip:
      y = in(0).cwiseMax(n.a).cwiseMin(n.b);
      break;
    case Op::MulCol:
      y = in(0).array().colwise() * in(1).col(0).array();
      break;
    case Op::AddTiled: {
      const Matrix& x = in(0);
      const Matrix& t = in(1);
      y = x;
      const Eigen::Index reps = x.rows() / t.rows();
      for (Eigen::Index g = 0; g < reps; ++g) y.middleRows(g * t.rows(), t.rows()) += t;
      break;
    }
    case Op::InterleaveRows: {
      const std::size_t m = n.in.size();
      const int base_rows = nodes_[static_cast<std::size_t>(n.in[0])].rows;
      y.resize(n.rows, n.cols);
      for (std::size_t i = 0; i < m; ++i) {
        const Matrix& part = in(i);
        for (int r = 0; r < base_rows; ++r) y.row(static_cast<Eigen::Index>(r * m + i)) = part.row(r);
      }
      break;
    }
    case Op::GroupScores: {
      const Matrix& q = in(0);
      const Matrix& k = in(1);
      const int g = n.k;
      y.resize(n.rows, g);
      for (int b = 0; b < n.rows / g; ++b) {
        y.middleRows(b * g, g).noalias() = n.a * q.middleRows(b * g, g) * k.middleRows(b * g, g).transpose();
      }
      break;
    }
    case Op::MaskedSoftmax: {
      const Matrix& s = in(0);
      const Matrix& m = in(1);
      y = Matrix::Zero(s.rows(), s.cols());
      for (Eigen::Index r = 0; r < s.rows(); ++r) {
        double mx = -std::numeric_limits<double>::infinity();
        for (Eigen::Index c = 0; c < s.cols(); ++c) {
          if (m(r, c) != 0.0) mx = std::max(mx, s(r, c));
        }
        if (!std::isfinite(mx)) continue;
        double total = 0.0;
        for (Eigen::Index c = 0; c < s.cols(); ++c) {
          if (m(r, c) != 0.0) {
            y(r, c) = std::exp(s(r, c) - mx);
            total += y(r, c);
          }
        }
        y.row(r) /= total;
      }
      break;
    }
    case Op::GroupApply: {
      const Matrix& p = in(0);
      const Matrix& v = in(1);
      const int g = n.k;
      y.resize(n.rows, n.cols);
      for (int b = 0; b < n.rows / g; ++b) {
        y.middleRows(b * g, g).noalias() = p.middleRows(b * g, g) * v.middleRows(b * g, g);
      }
      break;
    }
    case Op::LayerNormRows: {
      const Matrix& x = in(0);
      y.resize(x.rows(), x.cols());
      n.aux.resize(x.rows(), 1);
      for (Eigen::Index r = 0; r < x.rows(); ++r) {
        const double mu = x.row(r).mean();
        const double var = (x.row(r).array() - mu).square().mean();
        const double inv = 1.0 / std::sqrt(var + n.a);
        n.aux(r, 0) = inv;
        y.row(r) = (x.row(r).array() - mu) * inv;
      }
      break;
    }
    case Op::ScaleCols:
      y = in(0).array().rowwise() * in(1).row(0).array();
      break;
    case Op::GroupWeightedSum: {
      const Matrix& w = in(0);
      const Matrix& x = in(1);
      const int k = n.k;
      y = Matrix::Zero(n.rows, n.cols);
      for (int g = 0; g < n.rows; ++g) {
        for (int i = 0; i < k; ++i) y.row(g) += w(g, i) * x.row(g * k + i);
      }
      break;
    }
    case Op::NormalizeRows: {
      const Matrix& x = in(0);
      y.resize(x.rows(), x.cols());
      n.aux.resize(x.rows(), 1);
      for (Eigen::Index r = 0; r < x.rows(); ++r) {
        const double norm = x.row(r).norm();
        if (!(norm > 0.0)) throw std::domain_error("normalize_rows: zero-norm row " + std::to_string(r));
        n.aux(r, 0) = norm;
        y.row(r) = x.row(r) / norm;
      }
      break;
    }
    case Op::GroupLogDet: {
      const Matrix& f = in(0);
      const int k = n.k;
      y.resize(n.rows, 1);
      n.aux.resize(f.rows(), k);
      for (int g = 0; g < n.rows; ++g) {
        const Matrix block = f.middleRows(g * k, k);
        Matrix gram = block * block.transpose();
        gram.diagonal().array() += n.a;
        auto chol = cholesky(gram);
        if (!chol) throw std::runtime_error("group_logdet: Cholesky failed for group " + std::to_string(g));
        y(g, 0) = logdet_from_cholesky(*chol);
        n.aux.middleRows(g * k, k) = inverse_from_cholesky(*chol);
      }
      break;
    }
    case Op::Spike: {
      const Matrix& v = in(0);
      const double th = n.a;
      const double w = n.b;
      if (n.mode == SpikeMode::Hard) {
        y = v.unaryExpr([th](double x) { return x >= th ? 1.0 : 0.0; });
      } else {
        y = v.unaryExpr([th, w](double x) { return std::clamp((x - th + w) / (2.0 * w), 0.0, 1.0); });
      }
      break;
    }
    case Op::LifIntegrate:
      y = in(0) + n.a * (in(1) - in(0));
      break;
    case Op::LifReset:
      y = in(0).array() * (1.0 - in(1).array()) + n.a * in(1).array();
      break;
    case Op::WhereZero: {
      const Matrix& x = in(0);
      const Matrix& c = in(1);
      y = x;
      for (Eigen::Index i = 0; i < y.size(); ++i) {
        if (c.data()[i] != 0.0) y.data()[i] = n.a;
      }
      break;
    }
    case Op::LifCounter: {
      const Matrix& prev = in(0);
      const Matrix& s = in(1);
      y.resize(prev.rows(), prev.cols());
      for (Eigen::Index i = 0; i < y.size(); ++i) {
        y.data()[i] = s.data()[i] >= 0.5 ? static_cast<double>(n.k) : std::max(prev.data()[i] - 1.0, 0.0);
      }
      break;
    }
  }
  n.evaluated = true;
}

void Tape::forward(const std::map<std::string, Matrix>& inputs) {
  std::set<std::string> used;
  for (Node& n : nodes_) {
    if (n.op == Op::Input) {
      auto it = inputs.find(n.name);
      if (it != inputs.end()) {
        if (it->second.rows() != n.rows || it->second.cols() != n.cols) {
          throw ShapeError("input '" + n.name + "' expects " + shape_str(n.rows, n.cols) + ", got " +
                           shape_str(static_cast<int>(it->second.rows()), static_cast<int>(it->second.cols())));
        }
        n.value = it->second;
        n.evaluated = true;
        used.insert(n.name);
      } else if (!n.evaluated) {
        throw BindingError("unbound input '" + n.name + "'");
      }
      continue;
    }
    if (n.op == Op::Constant) continue;
    evaluate(n);
  }
  for (const auto& [name, _] : inputs) {
    if (!used.count(name)) throw BindingError("no input named '" + name + "' on tape");
  }
}

// ---------------------------------------------------------------- backward

void Tape::propagate(Node& n) {
  auto src = [&](std::size_t i) -> Node& { return nodes_[static_cast<std::size_t>(n.in[i])]; };
  auto wants = [&](std::size_t i) { return src(i).needs_grad; };
  const Matrix& g = n.grad;
  switch (n.op) {
    case Op::Input:
    case Op::Param:
    case Op::Constant:
    case Op::LifCounter:
      break;
    case Op::MatMul:
      if (wants(0)) src(0).grad.noalias() += g * src(1).value.transpose();
      if (wants(1)) src(1).grad.noalias() += src(0).value.transpose() * g;
      break;
    case Op::AddBias:
      if (wants(0)) src(0).grad += g;
      if (wants(1)) src(1).grad += g.colwise().sum();
      break;
    case Op::Add:
      if (wants(0)) src(0).grad += g;
      if (wants(1)) src(1).grad += g;
      break;
    case Op::Sub:
      if (wants(0)) src(0).grad += g;
      if (wants(1)) src(1).grad -= g;
      break;
    case Op::Mul:
      if (wants(0)) src(0).grad += g.cwiseProduct(src(1).value);
      if (wants(1)) src(1).grad += g.cwiseProduct(src(0).value);
      break;
    case Op::Scale:
      if (wants(0)) src(0).grad += n.a * g;
      break;
    case Op::AddScalar:
      if (wants(0)) src(0).grad += g;
      break;
    case Op::Tanh:
      if (wants(0)) src(0).grad.array() += g.array() * (1.0 - n.value.array().square());
      break;
    case Op::Relu:
      if (wants(0)) {
        src(0).grad.array() += g.array() * (src(0).value.array() > 0.0).cast<double>();
      }
      break;
    case Op::Softplus:
      if (wants(0)) {
        src(0).grad.array() +=
            g.array() * src(0).value.unaryExpr([](double x) { return stable_sigmoid(x); }).array();
      }
      break;
    case Op::Exp:
      if (wants(0)) src(0).grad += g.cwiseProduct(n.value);
      break;
    case Op::Log:
      if (wants(0)) src(0).grad.array() += g.array() / src(0).value.array();
      break;
    case Op::SoftmaxRows:
    case Op::MaskedSoftmax:
      if (wants(0)) {
        const Matrix& y = n.value;
        const Eigen::VectorXd dot = g.cwiseProduct(y).rowwise().sum();
        src(0).grad.array() += y.array() * (g.array().colwise() - dot.array());
      }
      break;
    case Op::LogSoftmaxRows:
      if (wants(0)) {
        const Matrix soft = n.value.array().exp();
        const Eigen::VectorXd total = g.rowwise().sum();
        src(0).grad.array() += g.array() - soft.array().colwise() * total.array();
      }
      break;
    case Op::SumAll:
      if (wants(0)) src(0).grad.array() += g(0, 0);
      break;
    case Op::MeanAll:
      if (wants(0)) src(0).grad.array() += g(0, 0) / static_cast<double>(src(0).value.size());
      break;
    case Op::SumRows:
      if (wants(0)) src(0).grad.colwise() += g.col(0);
      break;
    case Op::ConcatCols: {
      int c = 0;
      for (std::size_t i = 0; i < n.in.size(); ++i) {
        const int w = src(i).cols;
        if (wants(i)) src(i).grad += g.middleCols(c, w);
        c += w;
      }
      break;
    }
    case Op::SliceCols:
      if (wants(0)) src(0).grad.middleCols(n.k, n.cols) += g;
      break;
    case Op::PickCols:
      if (wants(0)) {
        for (int r = 0; r < n.rows; ++r) src(0).grad(r, n.idx[static_cast<std::size_t>(r)]) += g(r, 0);
      }
      break;
    case Op::Minimum: {
      const Matrix& a = src(0).value;
      const Matrix& b = src(1).value;
      const auto pick_a = (a.array() <= b.array()).cast<double>();
      if (wants(0)) src(0).grad.array() += g.array() * pick_a;
      if (wants(1)) src(1).grad.array() += g.array() * (1.0 - pick_a);
      break;
    }
    case Op::Clip:
      if (wants(0)) {
        const Matrix& x = src(0).value;
        src(0).grad.array() += g.array() * ((x.array() >= n.a) && (x.array() <= n.b)).cast<double>();
      }
      break;
    case Op::MulCol:
      if (wants(0)) src(0).grad.array() += g.array().colwise() * src(1).value.col(0).array();
      if (wants(1)) src(1).grad += g.cwiseProduct(src(0).value).rowwise().sum();
      break;
    case Op::AddTiled:
      if (wants(0)) src(0).grad += g;
      if (wants(1)) {
        const Eigen::Index t = src(1).rows;
        for (Eigen::Index b = 0; b < g.rows() / t; ++b) src(1).grad += g.middleRows(b * t, t);
      }
      break;
    case Op::InterleaveRows: {
      const std::size_t m = n.in.size();
      for (std::size_t i = 0; i < m; ++i) {
        if (!wants(i)) continue;
        Node& part = src(i);
        for (int r = 0; r < part.rows; ++r) part.grad.row(r) += g.row(static_cast<Eigen::Index>(r * m + i));
      }
      break;
    }
    case Op::GroupScores: {
      const int gs = n.k;
      for (int b = 0; b < n.rows / gs; ++b) {
        const auto gb = g.middleRows(b * gs, gs);
        if (wants(0)) src(0).grad.middleRows(b * gs, gs).noalias() += n.a * gb * src(1).value.middleRows(b * gs, gs);
        if (wants(1)) {
          src(1).grad.middleRows(b * gs, gs).noalias() += n.a * gb.transpose() * src(0).value.middleRows(b * gs, gs);
        }
      }
      break;
    }
    case Op::GroupApply: {
      const int gs = n.k;
      for (int b = 0; b < n.rows / gs; ++b) {
        const auto gb = g.middleRows(b * gs, gs);
        if (wants(0)) {
          src(0).grad.middleRows(b * gs, gs).noalias() += gb * src(1).value.middleRows(b * gs, gs).transpose();
        }
        if (wants(1)) {
          src(1).grad.middleRows(b * gs, gs).noalias() += src(0).value.middleRows(b * gs, gs).transpose() * gb;
        }
      }
      break;
    }
    case Op::LayerNormRows:
      if (wants(0)) {
        const Matrix& y = n.value;
        const double inv_n = 1.0 / static_cast<double>(n.cols);
        for (Eigen::Index r = 0; r < y.rows(); ++r) {
          const double mg = g.row(r).sum() * inv_n;
          const double mgy = g.row(r).dot(y.row(r)) * inv_n;
          src(0).grad.row(r).array() += n.aux(r, 0) * (g.row(r).array() - mg - y.row(r).array() * mgy);
        }
      }
      break;
    case Op::ScaleCols:
      if (wants(0)) src(0).grad.array() += g.array().rowwise() * src(1).value.row(0).array();
      if (wants(1)) src(1).grad += g.cwiseProduct(src(0).value).colwise().sum();
      break;
    case Op::GroupWeightedSum: {
      const int k = n.k;
      const Matrix& w = src(0).value;
      const Matrix& x = src(1).value;
      for (int gi = 0; gi < n.rows; ++gi) {
        for (int i = 0; i < k; ++i) {
          if (wants(0)) src(0).grad(gi, i) += g.row(gi).dot(x.row(gi * k + i));
          if (wants(1)) src(1).grad.row(gi * k + i) += w(gi, i) * g.row(gi);
        }
      }
      break;
    }
    case Op::NormalizeRows:
      if (wants(0)) {
        const Matrix& y = n.value;
        for (Eigen::Index r = 0; r < y.rows(); ++r) {
          const double proj = y.row(r).dot(g.row(r));
          src(0).grad.row(r) += (g.row(r) - proj * y.row(r)) / n.aux(r, 0);
        }
      }
      break;
    case Op::GroupLogDet:
      if (wants(0)) {
        const int k = n.k;
        const Matrix& f = src(0).value;
        for (int gi = 0; gi < n.rows; ++gi) {
          src(0).grad.middleRows(gi * k, k).noalias() +=
              (2.0 * g(gi, 0)) * n.aux.middleRows(gi * k, k) * f.middleRows(gi * k, k);
        }
      }
      break;
    case Op::Spike:
      if (wants(0)) {
        const double th = n.a;
        const double w = n.b;
        const double height = 1.0 / (2.0 * w);
        src(0).grad.array() +=
            g.array() * src(0).value.unaryExpr([=](double x) { return std::abs(x - th) < w ? height : 0.0; }).array();
      }
      break;
    case Op::LifIntegrate:
      if (wants(0)) src(0).grad += (1.0 - n.a) * g;
      if (wants(1)) src(1).grad += n.a * g;
      break;
    case Op::LifReset:
      if (wants(0)) src(0).grad.array() += g.array() * (1.0 - src(1).value.array());
      if (wants(1)) src(1).grad.array() += g.array() * (n.a - src(0).value.array());
      break;
    case Op::WhereZero:
      if (wants(0)) {
        const Matrix& c = src(1).value;
        Matrix& dst = src(0).grad;
        for (Eigen::Index i = 0; i < dst.size(); ++i) {
          if (c.data()[i] == 0.0) dst.data()[i] += g.data()[i];
        }
      }
      break;
  }
}

void Tape::backward(NodeId loss) {
  Node& root = node(loss);
  if (root.rows != 1 || root.cols != 1) {
    throw ShapeError("backward: loss node #" + std::to_string(loss) + " is " + shape_str(root.rows, root.cols) +
                     ", expected a scalar");
  }
  for (const Node& n : nodes_) {
    if (!n.evaluated) throw BindingError("backward before forward: node '" + std::string(op_name(n.op)) + "'");
  }
  for (Node& n : nodes_) n.grad = Matrix::Zero(n.rows, n.cols);
  root.grad(0, 0) = 1.0;
  std::vector<char> reached(nodes_.size(), 0);
  reached[static_cast<std::size_t>(loss)] = 1;
  for (NodeId id = loss; id >= 0; --id) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    if (!reached[static_cast<std::size_t>(id)] || !n.needs_grad) continue;
    propagate(n);
    for (NodeId i : n.in) reached[static_cast<std::size_t>(i)] = 1;
  }
  for (Node& n : nodes_) {
    if (n.op != Op::Param || !n.needs_grad) continue;
    Parameter& p = *n.param;
    if (p.grad.rows() != p.value.rows() || p.grad.cols() != p.value.cols()) {
      p.grad = Matrix::Zero(p.value.rows(), p.value.cols());
    }
    p.grad += n.grad;
  }
}

const Matrix& Tape::value(NodeId id) const {
  const Node& n = node(id);
  if (!n.evaluated) throw BindingError("node #" + std::to_string(id) + " has no value (unbound input upstream)");
  return n.value;
}

const Matrix& Tape::grad(NodeId id) const {
  const Node& n = node(id);
  if (n.grad.rows() != n.rows || n.grad.cols() != n.cols) {
    throw BindingError("node #" + std::to_string(id) + " has no gradient (backward not run)");
  }
  return n.grad;
}

double Tape::scalar(NodeId id) const {
  const Matrix& v = value(id);
  if (v.rows() != 1 || v.cols() != 1) throw ShapeError("scalar(): node #" + std::to_string(id) + " is not 1x1");
  return v(0, 0);
}

}  // namespace mopsan::ad
