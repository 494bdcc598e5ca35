#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <atomic>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <sstream>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "eri/error.hpp"

namespace eri {

using Index = Eigen::Index;
using Shape = std::vector<Index>;

template <typename T>
using Vec = Eigen::Matrix<T, Eigen::Dynamic, 1>;

template <typename T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

inline Index numel(const Shape& shape) {
  Index n = 1;
  for (Index e : shape) n *= e;
  return n;
}

inline std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << ']';
  return os.str();
}

namespace detail {
inline std::uint64_t next_node_id() {
  static std::atomic<std::uint64_t> counter{0};
  return ++counter;
}
}  // namespace detail

/// One vertex of the define-by-run graph. Parents always carry smaller ids
/// than their children, so descending id order is a reverse topological order.
template <typename T>
struct Node {
  Shape shape;
  Vec<T> value;
  Vec<T> grad;  // empty until backward reaches this node
  bool requires_grad = false;
  std::uint64_t id = detail::next_node_id();
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;

  Vec<T>& grad_buffer() {
    if (grad.size() != value.size()) grad = Vec<T>::Zero(value.size());
    return grad;
  }
};

/// Dense row-major tensor with shared-handle semantics. Copies alias the same
/// node; use `detach()` for an independent value copy.
template <typename T>
class Tensor {
 public:
  using Scalar = T;

  Tensor() : node_(std::make_shared<Node<T>>()) { node_->value = Vec<T>::Zero(1); node_->shape = {}; }

  Tensor(Shape shape, Vec<T> data, bool requires_grad = false) : node_(std::make_shared<Node<T>>()) {
    if (numel(shape) != data.size()) {
      throw ShapeMismatch("shape " + to_string(shape) + " holds " + std::to_string(numel(shape)) +
                          " elements, data has " + std::to_string(data.size()));
    }
    node_->shape = std::move(shape);
    node_->value = std::move(data);
    node_->requires_grad = requires_grad;
  }

  explicit Tensor(std::shared_ptr<Node<T>> node) : node_(std::move(node)) {}

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    Index n = numel(shape);
    return Tensor(std::move(shape), Vec<T>::Zero(n), requires_grad);
  }
  static Tensor ones(Shape shape, bool requires_grad = false) { return full(std::move(shape), T(1), requires_grad); }
  static Tensor full(Shape shape, T value, bool requires_grad = false) {
    Index n = numel(shape);
    return Tensor(std::move(shape), Vec<T>::Constant(n, value), requires_grad);
  }
  static Tensor from(Shape shape, std::initializer_list<T> values, bool requires_grad = false) {
    Vec<T> v(static_cast<Index>(values.size()));
    std::copy(values.begin(), values.end(), v.data());
    return Tensor(std::move(shape), std::move(v), requires_grad);
  }
  static Tensor scalar(T value, bool requires_grad = false) { return full({}, value, requires_grad); }

  const Shape& shape() const { return node_->shape; }
  int rank() const { return static_cast<int>(node_->shape.size()); }
  Index size() const { return node_->value.size(); }
  Index dim(int axis) const {
    int r = rank();
    int a = axis < 0 ? axis + r : axis;
    if (a < 0 || a >= r) throw AxisOutOfRange("axis " + std::to_string(axis) + " for rank " + std::to_string(r));
    return node_->shape[static_cast<std::size_t>(a)];
  }

  const Vec<T>& data() const { return node_->value; }
  /// Direct write access; only meaningful on leaves (parameters, inputs).
  Vec<T>& mutable_data() { return node_->value; }
  T item() const {
    if (size() != 1) throw NotScalar("item() on tensor of shape " + to_string(shape()));
    return node_->value[0];
  }
  T operator[](Index i) const { return node_->value[i]; }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool flag) {
    node_->requires_grad = flag;
    if (!flag) node_->grad.resize(0);
  }
  bool has_grad() const { return node_->grad.size() == node_->value.size() && node_->value.size() > 0; }
  const Vec<T>& grad() const { return node_->grad; }
  void zero_grad() { node_->grad.resize(0); }

  bool is_leaf() const { return !node_->backward_fn; }
  std::uint64_t node_id() const { return node_->id; }
  const char* op_name() const { return node_->op; }
  const std::shared_ptr<Node<T>>& node() const { return node_; }

  Tensor detach() const { return Tensor(shape(), data(), false); }

  template <typename U>
  Tensor<U> cast() const {
    return Tensor<U>(shape(), data().template cast<U>(), false);
  }

 private:
  std::shared_ptr<Node<T>> node_;
};

namespace detail {

/// Creates the result node of an operation. The backward closure is attached
/// only when at least one input participates in differentiation.
template <typename T, typename Backward>
Tensor<T> record(const char* op, Shape shape, Vec<T> value, std::vector<std::shared_ptr<Node<T>>> inputs,
                 Backward&& backward) {
  Tensor<T> out(std::move(shape), std::move(value), false);
  bool needs = std::any_of(inputs.begin(), inputs.end(), [](const auto& n) { return n->requires_grad; });
  auto& node = *out.node();
  node.op = op;
  if (needs) {
    node.requires_grad = true;
    node.parents = std::move(inputs);
    node.backward_fn = std::forward<Backward>(backward);
  }
  return out;
}

}  // namespace detail

/// Reverse-mode sweep from a scalar loss. Every reachable tensor that requires
/// grad accumulates into its gradient buffer; tensors without the flag are
/// never touched.
template <typename T>
void backward(const Tensor<T>& loss) {
  if (loss.size() != 1) throw NotScalar("backward from tensor of shape " + to_string(loss.shape()));
  if (!loss.requires_grad()) return;

  std::vector<Node<T>*> order;
  std::vector<Node<T>*> stack{loss.node().get()};
  std::unordered_set<const Node<T>*> seen;
  while (!stack.empty()) {
    Node<T>* n = stack.back();
    stack.pop_back();
    if (!seen.insert(n).second) continue;
    order.push_back(n);
    for (const auto& p : n->parents)
      if (p->requires_grad) stack.push_back(p.get());
  }
  std::sort(order.begin(), order.end(), [](const Node<T>* a, const Node<T>* b) { return a->id > b->id; });

  loss.node()->grad_buffer().array() += T(1);
  for (Node<T>* n : order) {
    if (!n->backward_fn || n->grad.size() == 0) continue;
    n->backward_fn(*n);
    for (const auto& p : n->parents) {
      if (p->requires_grad && p->grad.size() && !p->grad.allFinite())
        throw NonFiniteGradient(std::string("non-finite gradient produced by op '") + n->op + "'");
    }
  }
}

}  // namespace eri
