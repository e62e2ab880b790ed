#include "latdyn/autodiff.hpp"

#include <cmath>
#include <sstream>

#include "latdyn/error.hpp"
#include "latdyn/kernels.hpp"

namespace latdyn::ad {

namespace {

std::string shape_str(const Matrix& m) {
  std::ostringstream os;
  os << m.rows() << "x" << m.cols();
  return os.str();
}

void add_into(Matrix& dst, const Matrix& src) {
  if (dst.size() == 0) {
    dst = src;
  } else {
    dst += src;
  }
}

}  // namespace

std::size_t ParamStore::add(std::string name, Matrix init) {
  if (index_.count(name)) throw SpecError("duplicate parameter block '" + name + "'");
  const std::size_t i = blocks_.size();
  index_.emplace(name, i);
  Matrix grad = Matrix::Zero(init.rows(), init.cols());
  blocks_.push_back(ParamBlock{std::move(name), std::move(init), std::move(grad)});
  return i;
}

std::size_t ParamStore::index(std::string_view name) const {
  auto it = index_.find(std::string(name));
  if (it == index_.end()) throw NotFoundError("no parameter block '" + std::string(name) + "'");
  return it->second;
}

bool ParamStore::contains(std::string_view name) const {
  return index_.count(std::string(name)) != 0;
}

std::size_t ParamStore::num_scalars() const noexcept {
  std::size_t n = 0;
  for (const auto& b : blocks_) n += static_cast<std::size_t>(b.value.size());
  return n;
}

void ParamStore::zero_grad() {
  for (auto& b : blocks_) b.grad.setZero(b.value.rows(), b.value.cols());
}

GradBuffer::GradBuffer(const ParamStore& store) {
  grads_.reserve(store.size());
  for (const auto& b : store) grads_.push_back(Matrix::Zero(b.value.rows(), b.value.cols()));
}

void GradBuffer::set_zero() {
  for (auto& g : grads_) g.setZero();
}

void GradBuffer::add_scaled(const GradBuffer& other, double scale) {
  if (other.size() != size()) throw DimensionError("gradient buffer size mismatch");
  for (std::size_t i = 0; i < grads_.size(); ++i) grads_[i] += scale * other.grads_[i];
}

void GradBuffer::accumulate_into(ParamStore& store, double scale) const {
  if (store.size() != size()) throw DimensionError("gradient buffer does not match store");
  for (std::size_t i = 0; i < grads_.size(); ++i) store.block(i).grad += scale * grads_[i];
}

Tape::Tape(const ParamStore& store) : store_(&store) {}

const Tape::Node& Tape::node(NodeId id) const {
  if (id.index >= nodes_.size()) throw StateError("node id out of range");
  return nodes_[id.index];
}

NodeId Tape::push(Node n) {
  evaluate(n);
  nodes_.push_back(std::move(n));
  return NodeId{nodes_.size() - 1};
}

NodeId Tape::input(Matrix value, bool requires_grad) {
  Node n{OpKind::kInput};
  n.value = std::move(value);
  n.requires_grad = requires_grad;
  nodes_.push_back(std::move(n));
  return NodeId{nodes_.size() - 1};
}

NodeId Tape::param(std::size_t block) {
  if (block >= store_->size()) throw NotFoundError("parameter block index out of range");
  Node n{OpKind::kParam};
  n.block = block;
  n.requires_grad = true;
  return push(std::move(n));
}

NodeId Tape::param(std::string_view name) { return param(store_->index(name)); }

NodeId Tape::affine(NodeId x, NodeId weight, NodeId bias) {
  const Matrix& xv = value(x);
  const Matrix& w = value(weight);
  const Matrix& b = value(bias);
  if (xv.cols() != w.cols() || b.rows() != w.rows() || b.cols() != 1) {
    std::string layer = kind(weight) == OpKind::kParam
                            ? store_->block(nodes_[weight.index].block).name
                            : std::string("<affine>");
    throw DimensionError("layer '" + layer + "': input " + shape_str(xv) + " vs weight " +
                         shape_str(w) + ", bias " + shape_str(b));
  }
  Node n{OpKind::kAffine, {x.index, weight.index, bias.index}};
  n.requires_grad = requires_grad(x) || requires_grad(weight) || requires_grad(bias);
  return push(std::move(n));
}

NodeId Tape::tanh(NodeId x) {
  Node n{OpKind::kTanh, {x.index}};
  n.requires_grad = requires_grad(x);
  return push(std::move(n));
}

NodeId Tape::add(NodeId a, NodeId b) {
  if (value(a).rows() != value(b).rows() || value(a).cols() != value(b).cols())
    throw DimensionError("add: " + shape_str(value(a)) + " vs " + shape_str(value(b)));
  Node n{OpKind::kAdd, {a.index, b.index}};
  n.requires_grad = requires_grad(a) || requires_grad(b);
  return push(std::move(n));
}

NodeId Tape::sub(NodeId a, NodeId b) {
  if (value(a).rows() != value(b).rows() || value(a).cols() != value(b).cols())
    throw DimensionError("sub: " + shape_str(value(a)) + " vs " + shape_str(value(b)));
  Node n{OpKind::kSub, {a.index, b.index}};
  n.requires_grad = requires_grad(a) || requires_grad(b);
  return push(std::move(n));
}

NodeId Tape::scale(NodeId a, double factor) {
  Node n{OpKind::kScale, {a.index}};
  n.factor = factor;
  n.requires_grad = requires_grad(a);
  return push(std::move(n));
}

NodeId Tape::concat_cols(std::span<const NodeId> parts) {
  if (parts.empty()) throw DimensionError("concat of zero parts");
  Node n{OpKind::kConcat};
  const Eigen::Index rows = value(parts[0]).rows();
  for (NodeId p : parts) {
    if (value(p).rows() != rows) throw DimensionError("concat: row count mismatch");
    n.inputs.push_back(p.index);
    n.requires_grad = n.requires_grad || requires_grad(p);
  }
  return push(std::move(n));
}

NodeId Tape::slice_cols(NodeId x, Eigen::Index begin, Eigen::Index count) {
  if (begin < 0 || count < 0 || begin + count > value(x).cols())
    throw DimensionError("slice out of range");
  Node n{OpKind::kSlice, {x.index}};
  n.begin = begin;
  n.count = count;
  n.requires_grad = requires_grad(x);
  return push(std::move(n));
}

NodeId Tape::sum_squares(NodeId x) {
  Node n{OpKind::kSumSquares, {x.index}};
  n.requires_grad = requires_grad(x);
  return push(std::move(n));
}

NodeId Tape::weighted_sum(std::span<const NodeId> scalars, std::span<const double> weights) {
  if (scalars.size() != weights.size()) throw DimensionError("weighted_sum: weight count mismatch");
  Node n{OpKind::kWeightedSum};
  for (NodeId s : scalars) {
    if (value(s).size() != 1) throw DimensionError("weighted_sum expects 1x1 inputs");
    n.inputs.push_back(s.index);
    n.requires_grad = n.requires_grad || requires_grad(s);
  }
  n.weights.assign(weights.begin(), weights.end());
  return push(std::move(n));
}

NodeId Tape::custom(std::shared_ptr<CustomOp> op, std::vector<NodeId> inputs,
                    std::vector<bool> input_needs_grad) {
  Node n{OpKind::kCustom};
  for (NodeId in : inputs) {
    node(in);
    n.inputs.push_back(in.index);
  }
  if (input_needs_grad.empty()) input_needs_grad.assign(inputs.size(), true);
  if (input_needs_grad.size() != inputs.size())
    throw DimensionError("custom op: gradient mask size mismatch");
  // Custom ops may own parameter contributions, so they always take part in backward.
  n.requires_grad = true;
  n.input_needs_grad = std::move(input_needs_grad);
  n.op = std::move(op);
  return push(std::move(n));
}

const Matrix& Tape::value(NodeId id) const { return node(id).value; }

const Matrix& Tape::grad(NodeId id) const { return node(id).grad; }

bool Tape::requires_grad(NodeId id) const { return node(id).requires_grad; }

OpKind Tape::kind(NodeId id) const { return node(id).kind; }

void Tape::evaluate(Node& n) {
  auto in = [&](std::size_t k) -> const Matrix& { return nodes_[n.inputs[k]].value; };
  switch (n.kind) {
    case OpKind::kInput:
      break;
    case OpKind::kParam:
      n.value = store_->block(n.block).value;
      break;
    case OpKind::kAffine: {
      const Matrix& x = in(0);
      const Matrix& w = in(1);
      const Matrix& b = in(2);
      n.value.resize(x.rows(), w.rows());
      n.value.noalias() = x * w.transpose();
      n.value.rowwise() += b.col(0).transpose();
      break;
    }
    case OpKind::kTanh:
      n.value = in(0);
      kernels::tanh_inplace(n.value.data(), static_cast<std::size_t>(n.value.size()));
      break;
    case OpKind::kAdd:
      n.value = in(0) + in(1);
      break;
    case OpKind::kSub:
      n.value = in(0) - in(1);
      break;
    case OpKind::kScale:
      n.value = n.factor * in(0);
      break;
    case OpKind::kConcat: {
      Eigen::Index cols = 0;
      for (std::size_t k = 0; k < n.inputs.size(); ++k) cols += in(k).cols();
      n.value.resize(in(0).rows(), cols);
      Eigen::Index c = 0;
      for (std::size_t k = 0; k < n.inputs.size(); ++k) {
        n.value.middleCols(c, in(k).cols()) = in(k);
        c += in(k).cols();
      }
      break;
    }
    case OpKind::kSlice:
      n.value = in(0).middleCols(n.begin, n.count);
      break;
    case OpKind::kSumSquares:
      n.value.resize(1, 1);
      n.value(0, 0) = in(0).squaredNorm();
      break;
    case OpKind::kWeightedSum: {
      double s = 0.0;
      for (std::size_t k = 0; k < n.inputs.size(); ++k) s += n.weights[k] * in(k)(0, 0);
      n.value.resize(1, 1);
      n.value(0, 0) = s;
      break;
    }
    case OpKind::kCustom: {
      std::vector<const Matrix*> ins;
      ins.reserve(n.inputs.size());
      for (std::size_t k = 0; k < n.inputs.size(); ++k) ins.push_back(&in(k));
      n.op->forward(ins, n.value);
      break;
    }
  }
}

void Tape::propagate(Node& n, GradBuffer& params) {
  const Matrix& g = n.grad;
  auto needs = [&](std::size_t k) { return nodes_[n.inputs[k]].requires_grad; };
  auto gin = [&](std::size_t k) -> Matrix& { return nodes_[n.inputs[k]].grad; };
  auto in = [&](std::size_t k) -> const Matrix& { return nodes_[n.inputs[k]].value; };
  switch (n.kind) {
    case OpKind::kInput:
      break;
    case OpKind::kParam:
      params[n.block] += g;
      break;
    case OpKind::kAffine: {
      const Matrix& x = in(0);
      const Matrix& w = in(1);
      if (needs(0)) {
        Matrix gx = g * w;
        add_into(gin(0), gx);
      }
      if (needs(1)) {
        Matrix gw = g.transpose().lazyProduct(x);
        add_into(gin(1), gw);
      }
      if (needs(2)) {
        Matrix gb = g.colwise().sum().transpose();
        add_into(gin(2), gb);
      }
      break;
    }
    case OpKind::kTanh:
      if (needs(0)) {
        Matrix gx = g;
        kernels::tanh_backward(n.value.data(), gx.data(), static_cast<std::size_t>(gx.size()));
        add_into(gin(0), gx);
      }
      break;
    case OpKind::kAdd:
      if (needs(0)) add_into(gin(0), g);
      if (needs(1)) add_into(gin(1), g);
      break;
    case OpKind::kSub:
      if (needs(0)) add_into(gin(0), g);
      if (needs(1)) add_into(gin(1), Matrix(-g));
      break;
    case OpKind::kScale:
      if (needs(0)) add_into(gin(0), Matrix(n.factor * g));
      break;
    case OpKind::kConcat: {
      Eigen::Index c = 0;
      for (std::size_t k = 0; k < n.inputs.size(); ++k) {
        const Eigen::Index w = in(k).cols();
        if (needs(k)) add_into(gin(k), Matrix(g.middleCols(c, w)));
        c += w;
      }
      break;
    }
    case OpKind::kSlice:
      if (needs(0)) {
        Matrix& gx = gin(0);
        if (gx.size() == 0) gx = Matrix::Zero(in(0).rows(), in(0).cols());
        gx.middleCols(n.begin, n.count) += g;
      }
      break;
    case OpKind::kSumSquares:
      if (needs(0)) add_into(gin(0), Matrix(2.0 * g(0, 0) * in(0)));
      break;
    case OpKind::kWeightedSum:
      for (std::size_t k = 0; k < n.inputs.size(); ++k) {
        if (needs(k)) add_into(gin(k), Matrix::Constant(1, 1, n.weights[k] * g(0, 0)));
      }
      break;
    case OpKind::kCustom: {
      std::vector<const Matrix*> ins;
      std::vector<Matrix> local(n.inputs.size());
      std::vector<Matrix*> grads(n.inputs.size(), nullptr);
      for (std::size_t k = 0; k < n.inputs.size(); ++k) {
        ins.push_back(&in(k));
        if (n.input_needs_grad[k] && needs(k)) {
          local[k] = Matrix::Zero(in(k).rows(), in(k).cols());
          grads[k] = &local[k];
        }
      }
      n.op->backward(ins, n.value, g, grads, params);
      for (std::size_t k = 0; k < n.inputs.size(); ++k) {
        if (grads[k]) add_into(gin(k), local[k]);
      }
      break;
    }
  }
}

void Tape::backward(NodeId out, const Matrix& seed, GradBuffer& params) {
  if (nodes_.empty() || out.index >= nodes_.size())
    throw StateError("backward called before a forward pass was recorded");
  Node& root = nodes_[out.index];
  if (seed.rows() != root.value.rows() || seed.cols() != root.value.cols())
    throw DimensionError("backward seed " + shape_str(seed) + " does not match output " +
                         shape_str(root.value));
  if (params.size() != store_->size()) throw DimensionError("gradient buffer does not match store");
  for (auto& n : nodes_) n.grad.resize(0, 0);
  root.grad = seed;
  for (std::size_t i = out.index + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.requires_grad || n.grad.size() == 0) continue;
    propagate(n, params);
  }
}

void Tape::backward(NodeId out, double seed, GradBuffer& params) {
  if (nodes_.empty() || out.index >= nodes_.size())
    throw StateError("backward called before a forward pass was recorded");
  const Matrix& v = nodes_[out.index].value;
  backward(out, Matrix::Constant(v.rows(), v.cols(), seed), params);
}

void Tape::backward(NodeId out, ParamStore& store, double seed) {
  if (&store != store_) throw StateError("backward into a store the tape was not recorded against");
  GradBuffer buf(store);
  backward(out, seed, buf);
  buf.accumulate_into(store);
}

void Tape::replay() {
  if (nodes_.empty()) throw StateError("replay of an empty tape");
  for (auto& n : nodes_) evaluate(n);
}

void Tape::clear() { nodes_.clear(); }

double finite_difference_check(const std::function<double()>& loss, ParamStore& store,
                               const GradBuffer& analytic, double step) {
  if (analytic.size() != store.size()) throw DimensionError("gradient buffer does not match store");
  double worst = 0.0;
  for (std::size_t b = 0; b < store.size(); ++b) {
    Matrix& v = store.block(b).value;
    for (Eigen::Index k = 0; k < v.size(); ++k) {
      const double saved = v.data()[k];
      v.data()[k] = saved + step;
      const double up = loss();
      v.data()[k] = saved - step;
      const double down = loss();
      v.data()[k] = saved;
      const double central = (up - down) / (2.0 * step);
      const double a = analytic[b].data()[k];
      const double rel = std::abs(a - central) / std::max({std::abs(a), std::abs(central), 1e-6});
      worst = std::max(worst, rel);
    }
  }
  return worst;
}

double finite_difference_check(const std::function<NodeId(Tape&)>& build, ParamStore& store,
                               double step) {
  GradBuffer analytic(store);
  {
    Tape tape(store);
    NodeId out = build(tape);
    tape.backward(out, 1.0, analytic);
  }
  auto loss = [&] {
    Tape tape(store);
    NodeId out = build(tape);
    return tape.value(out)(0, 0);
  };
  return finite_difference_check(loss, store, analytic, step);
}

}  // namespace latdyn::ad
