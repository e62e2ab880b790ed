#pragma once

// Reverse-mode differentiation over dense batched matrices.
//
// Every value on a tape is a matrix whose rows are batch entries and whose
// columns are features, so one node stands for a whole vector-level primitive
// (affine map, tanh, add, reduction) applied to a batch. Nodes are evaluated
// eagerly when recorded; backward() walks them in reverse recording order.

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <Eigen/Dense>

namespace latdyn::ad {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

struct ParamBlock {
  std::string name;
  Matrix value;
  Matrix grad;
};

/// Named trainable blocks with gradient buffers of identical shape.
class ParamStore {
 public:
  /// Adds a block; throws SpecError if the name already exists.
  std::size_t add(std::string name, Matrix init);

  std::size_t index(std::string_view name) const;
  bool contains(std::string_view name) const;

  ParamBlock& block(std::size_t i) { return blocks_.at(i); }
  const ParamBlock& block(std::size_t i) const { return blocks_.at(i); }
  Matrix& value(std::string_view name) { return blocks_[index(name)].value; }
  const Matrix& value(std::string_view name) const { return blocks_[index(name)].value; }

  std::size_t size() const noexcept { return blocks_.size(); }
  std::size_t num_scalars() const noexcept;
  void zero_grad();

  auto begin() const { return blocks_.begin(); }
  auto end() const { return blocks_.end(); }

 private:
  std::vector<ParamBlock> blocks_;
  std::unordered_map<std::string, std::size_t> index_;
};

/// Gradient accumulator with one matrix per ParamStore block.
class GradBuffer {
 public:
  GradBuffer() = default;
  explicit GradBuffer(const ParamStore& store);

  Matrix& operator[](std::size_t i) { return grads_[i]; }
  const Matrix& operator[](std::size_t i) const { return grads_[i]; }
  std::size_t size() const noexcept { return grads_.size(); }

  void set_zero();
  void add_scaled(const GradBuffer& other, double scale);
  /// store.grad[i] += scale * this[i]
  void accumulate_into(ParamStore& store, double scale = 1.0) const;

 private:
  std::vector<Matrix> grads_;
};

struct NodeId {
  std::size_t index = static_cast<std::size_t>(-1);
  friend bool operator==(NodeId, NodeId) = default;
};

enum class OpKind {
  kInput,
  kParam,
  kAffine,
  kTanh,
  kAdd,
  kSub,
  kScale,
  kConcat,
  kSlice,
  kSumSquares,
  kWeightedSum,
  kCustom,
};

/// Extension point for domain primitives that are not worth expressing as a
/// composition of the built-in ones. Implementations must be deterministic.
class CustomOp {
 public:
  virtual ~CustomOp() = default;
  virtual std::string_view name() const = 0;
  virtual void forward(std::span<const Matrix* const> inputs, Matrix& out) = 0;
  /// `input_grads[k]` is null when input k does not need a gradient. Parameter
  /// contributions that do not flow through inputs go to `params` scaled by
  /// whatever `out_grad` implies.
  virtual void backward(std::span<const Matrix* const> inputs, const Matrix& out,
                        const Matrix& out_grad, std::span<Matrix* const> input_grads,
                        GradBuffer& params) = 0;
};

class Tape {
 public:
  explicit Tape(const ParamStore& store);

  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;
  Tape(Tape&&) noexcept = default;
  Tape& operator=(Tape&&) noexcept = default;

  NodeId input(Matrix value, bool requires_grad = false);
  NodeId param(std::size_t block);
  NodeId param(std::string_view name);

  /// y = x * W^T + b^T with W (out x in) and b (out x 1). Rows of x are batch entries.
  NodeId affine(NodeId x, NodeId weight, NodeId bias);
  NodeId tanh(NodeId x);
  NodeId add(NodeId a, NodeId b);
  NodeId sub(NodeId a, NodeId b);
  NodeId scale(NodeId a, double factor);
  NodeId concat_cols(std::span<const NodeId> parts);
  NodeId slice_cols(NodeId x, Eigen::Index begin, Eigen::Index count);
  /// 1x1 sum of squared entries.
  NodeId sum_squares(NodeId x);
  /// 1x1 sum_k w_k * s_k over 1x1 inputs.
  NodeId weighted_sum(std::span<const NodeId> scalars, std::span<const double> weights);
  NodeId custom(std::shared_ptr<CustomOp> op, std::vector<NodeId> inputs,
                std::vector<bool> input_needs_grad = {});

  const Matrix& value(NodeId id) const;
  /// Gradient of the last backward() output with respect to this node.
  const Matrix& grad(NodeId id) const;
  bool requires_grad(NodeId id) const;
  OpKind kind(NodeId id) const;
  std::size_t size() const noexcept { return nodes_.size(); }

  /// Seeds d(out) = seed and accumulates parameter gradients into `params`.
  void backward(NodeId out, const Matrix& seed, GradBuffer& params);
  void backward(NodeId out, double seed, GradBuffer& params);
  /// Accumulates into the gradient buffers of `store` (must be the store the
  /// tape was recorded against).
  void backward(NodeId out, ParamStore& store, double seed = 1.0);

  /// Re-evaluates every node in recording order, re-reading parameter values.
  void replay();
  void clear();

 private:
  struct Node {
    explicit Node(OpKind k, std::vector<std::size_t> in = {}) : kind(k), inputs(std::move(in)) {}

    OpKind kind;
    std::vector<std::size_t> inputs;
    Matrix value;
    Matrix grad;
    bool requires_grad = false;
    std::size_t block = 0;  // kParam
    double factor = 1.0;    // kScale
    Eigen::Index begin = 0; // kSlice
    Eigen::Index count = 0; // kSlice
    std::vector<double> weights;  // kWeightedSum
    std::shared_ptr<CustomOp> op; // kCustom
    std::vector<bool> input_needs_grad;  // kCustom
  };

  NodeId push(Node node);
  const Node& node(NodeId id) const;
  void evaluate(Node& n);
  void propagate(Node& n, GradBuffer& params);

  const ParamStore* store_;
  std::vector<Node> nodes_;
};

/// Max over every parameter scalar of |analytic - central| / max(|analytic|, |central|, 1e-6).
/// `loss` must read parameters from `store` and be deterministic.
double finite_difference_check(const std::function<double()>& loss, ParamStore& store,
                               const GradBuffer& analytic, double step);

/// Records `build` on a fresh tape, backpropagates, and compares with central
/// differences obtained by re-recording.
double finite_difference_check(const std::function<NodeId(Tape&)>& build, ParamStore& store,
                               double step);

}  // namespace latdyn::ad
