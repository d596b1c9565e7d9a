#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace mopsan::ad {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

class ShapeError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class BindingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Trainable tensor. `grad` accumulates across backward passes until zeroed.
struct Parameter {
  std::string name;
  Matrix value;
  Matrix grad;
};

using NodeId = int;

enum class Op : std::uint8_t {
  Input,
  Param,
  Constant,
  MatMul,
  AddBias,
  Add,
  Sub,
  Mul,
  Scale,
  AddScalar,
  Tanh,
  Relu,
  Softplus,
  Exp,
  Log,
  SoftmaxRows,
  LogSoftmaxRows,
  SumAll,
  MeanAll,
  SumRows,
  ConcatCols,
  SliceCols,
  PickCols,
  Minimum,
  Clip,
  MulCol,
  AddTiled,
  InterleaveRows,
  GroupScores,
  MaskedSoftmax,
  GroupApply,
  LayerNormRows,
  ScaleCols,
  GroupWeightedSum,
  NormalizeRows,
  GroupLogDet,
  Spike,
  LifIntegrate,
  LifReset,
  WhereZero,
  LifCounter,
};

std::string_view op_name(Op op);

/// Hard: forward is a step function. Smooth: forward is the clamped ramp whose
/// derivative is the rectangular surrogate, used for finite-difference checks.
enum class SpikeMode : std::uint8_t { Hard, Smooth };

/// Reverse-mode tape over row-major matrices.
///
/// Nodes are appended in topological order and evaluated eagerly once all of
/// their inputs carry values. Named inputs may be declared unbound and bound
/// later through forward(), which replays every node in order. Parameter
/// leaves read Parameter::value at evaluation time, so mutating a parameter and
/// calling forward() re-evaluates the graph under the new weights.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;
  Tape(Tape&&) = default;
  Tape& operator=(Tape&&) = default;

  // Leaves.
  NodeId input(std::string name, int rows, int cols, bool requires_grad = false);
  NodeId input(std::string name, Matrix value, bool requires_grad = false);
  NodeId param(Parameter& p, bool trainable = true);
  NodeId constant(Matrix value);
  NodeId zeros(int rows, int cols);

  // Dense algebra.
  NodeId matmul(NodeId a, NodeId b);
  NodeId add_bias(NodeId x, NodeId bias);
  NodeId add(NodeId a, NodeId b);
  NodeId sub(NodeId a, NodeId b);
  NodeId mul(NodeId a, NodeId b);
  NodeId scale(NodeId x, double factor);
  NodeId add_scalar(NodeId x, double offset);
  NodeId mul_col(NodeId x, NodeId column);
  NodeId scale_cols(NodeId x, NodeId row);
  NodeId add_tiled(NodeId x, NodeId tile);

  // Elementwise nonlinearities.
  NodeId tanh(NodeId x);
  NodeId relu(NodeId x);
  NodeId softplus(NodeId x);
  NodeId exp(NodeId x);
  NodeId log(NodeId x);
  NodeId minimum(NodeId a, NodeId b);
  NodeId clip(NodeId x, double lo, double hi);

  // Row-wise reductions and normalizations.
  NodeId softmax_rows(NodeId x);
  NodeId log_softmax_rows(NodeId x);
  NodeId sum_all(NodeId x);
  NodeId mean_all(NodeId x);
  NodeId sum_rows(NodeId x);
  NodeId layer_norm_rows(NodeId x, double eps = 1e-5);
  NodeId normalize_rows(NodeId x);

  // Layout.
  NodeId concat_cols(const std::vector<NodeId>& parts);
  NodeId slice_cols(NodeId x, int start, int count);
  NodeId pick_cols(NodeId x, std::vector<int> column_per_row);
  NodeId interleave_rows(const std::vector<NodeId>& parts);

  // Grouped ops: rows are partitioned into consecutive blocks of `group` rows.
  NodeId group_scores(NodeId q, NodeId k, int group, double factor);
  NodeId masked_softmax(NodeId scores, NodeId mask);
  NodeId group_apply(NodeId probs, NodeId v, int group);
  NodeId group_weighted_sum(NodeId weights, NodeId x);
  NodeId group_logdet(NodeId features, int group, double jitter);

  // Spiking dynamics.
  NodeId spike(NodeId v, double threshold, double width, SpikeMode mode);
  NodeId lif_integrate(NodeId v, NodeId current, double leak);
  NodeId lif_reset(NodeId v, NodeId spikes, double v_reset);
  NodeId where_zero(NodeId x, NodeId counter, double fill);
  NodeId lif_counter(NodeId previous, NodeId spikes, int refractory);

  /// Rebinds the named inputs and re-evaluates every node.
  void forward(const std::map<std::string, Matrix>& inputs = {});

  /// Reverse sweep from a scalar node. Node adjoints restart from zero on every
  /// call; trainable parameter gradients accumulate into Parameter::grad.
  void backward(NodeId loss);

  [[nodiscard]] const Matrix& value(NodeId id) const;
  [[nodiscard]] const Matrix& grad(NodeId id) const;
  [[nodiscard]] double scalar(NodeId id) const;
  [[nodiscard]] int rows(NodeId id) const { return node(id).rows; }
  [[nodiscard]] int cols(NodeId id) const { return node(id).cols; }
  [[nodiscard]] Op op(NodeId id) const { return node(id).op; }
  [[nodiscard]] const std::vector<NodeId>& inputs_of(NodeId id) const { return node(id).in; }
  [[nodiscard]] std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Op op = Op::Constant;
    std::vector<NodeId> in;
    int rows = 0;
    int cols = 0;
    Matrix value;
    Matrix grad;
    Matrix aux;
    double a = 0.0;
    double b = 0.0;
    int k = 0;
    SpikeMode mode = SpikeMode::Hard;
    std::vector<int> idx;
    Parameter* param = nullptr;
    std::string name;
    bool evaluated = false;
    bool needs_grad = false;
  };

  [[nodiscard]] const Node& node(NodeId id) const;
  Node& node(NodeId id);
  NodeId push(Node n);
  [[noreturn]] void shape_error(const Node& n, const std::string& what) const;
  void evaluate(Node& n);
  void propagate(Node& n);

  std::vector<Node> nodes_;
};

}  // namespace mopsan::ad
