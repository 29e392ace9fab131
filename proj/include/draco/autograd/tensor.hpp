#pragma once

#include <algorithm>
#include <atomic>
#include <concepts>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <new>
#include <numeric>
#include <span>
#include <string>
#include <unordered_set>
#include <vector>

#include "draco/core/error.hpp"

namespace draco::ag {

using Shape = std::vector<std::size_t>;

/// Tensor storage starts on a 64-byte boundary, so vectorized kernels split
/// every buffer the same way and results do not depend on heap layout.
template <class T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::align_val_t alignment{64};
  AlignedAllocator() = default;
  template <class U>
  AlignedAllocator(const AlignedAllocator<U>&) noexcept {}
  T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), alignment)); }
  void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, alignment); }
  template <class U>
  bool operator==(const AlignedAllocator<U>&) const noexcept { return true; }
};

template <class T>
using Buffer = std::vector<T, AlignedAllocator<T>>;

inline std::size_t numel(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string to_string(const Shape& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

namespace detail {

inline std::uint64_t next_node_id() {
  static std::atomic<std::uint64_t> counter{0};
  return ++counter;
}

inline bool& grad_mode() {
  thread_local bool enabled = true;
  return enabled;
}

template <class T>
struct Node {
  Shape shape;
  Buffer<T> data;
  Buffer<T> grad;  // empty until a backward pass reaches this node
  bool requires_grad = false;
  bool recorded = false;  // produced by a recorded op (not a leaf)
  bool consumed = false;  // backward already ran from this node
  std::uint64_t id = next_node_id();
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;

  bool is_leaf() const { return !recorded; }

  std::span<T> grad_buffer() {
    if (grad.size() != data.size()) grad.assign(data.size(), T(0));
    return grad;
  }
};

}  // namespace detail

/// Records forward results only while enabled; tensors created under a
/// NoGradGuard never join the graph.
class NoGradGuard {
 public:
  NoGradGuard() : previous_(detail::grad_mode()) { detail::grad_mode() = false; }
  ~NoGradGuard() { detail::grad_mode() = previous_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

inline bool grad_enabled() { return detail::grad_mode(); }

/// Shared handle to a node of the dynamic tape. Copies alias the same node.
template <class T>
class Tensor {
 public:
  using value_type = T;
  using NodeT = detail::Node<T>;

  Tensor() = default;

  template <class Alloc>
    requires(!std::same_as<Alloc, AlignedAllocator<T>>)
  Tensor(Shape shape, const std::vector<T, Alloc>& data, bool requires_grad = false)
      : Tensor(std::move(shape), Buffer<T>(data.begin(), data.end()), requires_grad) {}

  Tensor(Shape shape, Buffer<T> data, bool requires_grad = false) : node_(std::make_shared<NodeT>()) {
    if (ag::numel(shape) != data.size()) {
      throw ShapeError("tensor shape " + ag::to_string(shape) + " does not match " + std::to_string(data.size()) +
                       " values");
    }
    node_->shape = std::move(shape);
    node_->data = std::move(data);
    node_->requires_grad = requires_grad;
  }

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    const std::size_t n = ag::numel(shape);
    return Tensor(std::move(shape), Buffer<T>(n, T(0)), requires_grad);
  }

  static Tensor full(Shape shape, T value, bool requires_grad = false) {
    const std::size_t n = ag::numel(shape);
    return Tensor(std::move(shape), Buffer<T>(n, value), requires_grad);
  }

  static Tensor scalar(T value, bool requires_grad = false) { return Tensor(Shape{}, Buffer<T>{value}, requires_grad); }

  bool defined() const noexcept { return static_cast<bool>(node_); }
  const Shape& shape() const { return checked().shape; }
  std::size_t ndim() const { return shape().size(); }
  std::size_t dim(std::size_t i) const { return shape().at(i); }
  std::size_t numel() const { return checked().data.size(); }

  std::span<const T> data() const { return checked().data; }
  const Buffer<T>& values() const& { return checked().data; }
  Buffer<T> values() && { return checked().data; }

  /// Writable view; only leaves may be mutated, recorded results are frozen.
  std::span<T> mutable_data() {
    if (!checked().is_leaf()) throw GraphError("cannot mutate a recorded (non-leaf) tensor");
    return node_->data;
  }

  T item() const {
    if (numel() != 1) throw ShapeError("item() on tensor of shape " + ag::to_string(shape()));
    return data()[0];
  }

  bool requires_grad() const { return checked().requires_grad; }
  void set_requires_grad(bool v) {
    if (!checked().is_leaf()) throw GraphError("requires_grad can only be set on leaves");
    node_->requires_grad = v;
  }

  bool has_grad() const { return checked().grad.size() == checked().data.size() && !checked().grad.empty(); }
  std::span<const T> grad() const { return checked().grad; }
  void zero_grad() {
    checked();
    std::fill(node_->grad.begin(), node_->grad.end(), T(0));
    if (node_->is_leaf()) node_->consumed = false;
  }

  bool is_leaf() const { return checked().is_leaf(); }
  std::uint64_t id() const { return checked().id; }

  /// New leaf holding a copy of the values, cut from any graph.
  Tensor detach() const { return Tensor(shape(), values(), false); }

  const std::shared_ptr<NodeT>& node() const { return node_; }
  explicit Tensor(std::shared_ptr<NodeT> n) : node_(std::move(n)) {}

 private:
  const NodeT& checked() const {
    if (!node_) throw GraphError("use of an undefined tensor");
    return *node_;
  }

  std::shared_ptr<NodeT> node_;
};

/// Build an op result. Parents and the backward rule are recorded only when
/// grad mode is on and at least one parent needs a gradient.
template <class T>
Tensor<T> make_result(Shape shape, Buffer<T> data, std::initializer_list<Tensor<T>> parents,
                      std::function<void(detail::Node<T>&)> backward_fn) {
  Tensor<T> out(std::move(shape), std::move(data), false);
  if (!grad_enabled()) return out;
  bool any = false;
  for (const auto& p : parents) any = any || p.requires_grad();
  if (!any) return out;
  auto& node = *out.node();
  node.requires_grad = true;
  node.recorded = true;
  for (const auto& p : parents) node.parents.push_back(p.node());
  node.backward_fn = std::move(backward_fn);
  return out;
}

template <class T>
Tensor<T> make_result(Shape shape, Buffer<T> data, const std::vector<Tensor<T>>& parents,
                      std::function<void(detail::Node<T>&)> backward_fn) {
  Tensor<T> out(std::move(shape), std::move(data), false);
  if (!grad_enabled()) return out;
  bool any = false;
  for (const auto& p : parents) any = any || p.requires_grad();
  if (!any) return out;
  auto& node = *out.node();
  node.requires_grad = true;
  node.recorded = true;
  for (const auto& p : parents) node.parents.push_back(p.node());
  node.backward_fn = std::move(backward_fn);
  return out;
}

/// Reverse-mode sweep from a scalar loss. Leaf gradients accumulate; the
/// recorded graph is released afterwards, so a second call on the same loss
/// is an error until the graph is rebuilt.
template <class T>
void backward(const Tensor<T>& loss) {
  if (!loss.defined()) throw GraphError("backward on undefined tensor");
  if (loss.numel() != 1) throw ShapeError("backward requires a scalar loss, got shape " + to_string(loss.shape()));
  if (!loss.requires_grad()) throw GraphError("backward on a loss detached from every parameter");
  using NodeT = detail::Node<T>;
  NodeT* root = loss.node().get();
  if (root->consumed) throw GraphError("backward already ran on this graph; rebuild it before calling again");

  std::vector<NodeT*> order;
  std::vector<NodeT*> stack{root};
  std::unordered_set<const NodeT*> seen;
  while (!stack.empty()) {
    NodeT* n = stack.back();
    stack.pop_back();
    if (!seen.insert(n).second) continue;
    if (n->recorded && !n->backward_fn) throw GraphError("graph reached by backward was already released");
    order.push_back(n);
    for (const auto& p : n->parents) {
      if (p->requires_grad) stack.push_back(p.get());
    }
  }
  // Ids grow in creation order, so descending id is a reverse topological order.
  std::sort(order.begin(), order.end(), [](const NodeT* a, const NodeT* b) { return a->id > b->id; });

  for (NodeT* n : order) {
    if (n->recorded) {
      n->grad.assign(n->data.size(), T(0));
    } else {
      n->grad_buffer();
    }
  }
  root->grad[0] += T(1);
  for (NodeT* n : order) {
    if (n->backward_fn) n->backward_fn(*n);
  }
  // Release the graph. Parents are parked first so no node dies while the
  // sweep still points at it.
  std::vector<std::shared_ptr<NodeT>> release;
  for (NodeT* n : order) {
    if (!n->recorded) continue;
    n->backward_fn = nullptr;
    for (auto& p : n->parents) release.push_back(std::move(p));
    n->parents.clear();
  }
  root->consumed = true;
}

}  // namespace draco::ag
