#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace rdnet {

using Shape = std::vector<std::int64_t>;

std::int64_t numel(const Shape& shape);
std::string to_string(const Shape& shape);

// Graph recording switch. Thread-local so independent model instances can
// run on separate threads.
class GradMode {
 public:
  static bool enabled();
  static void set_enabled(bool enabled);
};

class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

namespace detail {

template <typename Real>
struct TensorNode {
  Shape shape;
  std::vector<Real> data;
  std::vector<Real> grad;  // empty until first accumulation
  bool requires_grad = false;
  std::vector<std::shared_ptr<TensorNode>> parents;
  // Reads this node's grad and accumulates into the parents' grads.
  std::function<void(TensorNode&)> backward_fn;
  const char* op = "leaf";

  bool is_leaf() const { return !backward_fn; }

  std::vector<Real>& ensure_grad() {
    if (grad.empty()) grad.assign(data.size(), Real(0));
    return grad;
  }
};

}  // namespace detail

// Dense row-major tensor with optional reverse-mode tracking. A Tensor is a
// cheap handle; copies share the underlying node. Values produced by ops are
// never mutated afterwards, except for leaves updated by an optimizer.
template <typename Real>
class Tensor {
 public:
  using value_type = Real;
  using Node = detail::TensorNode<Real>;

  Tensor() = default;
  explicit Tensor(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, Real value, bool requires_grad = false);
  static Tensor from_data(Shape shape, std::vector<Real> data, bool requires_grad = false);
  static Tensor scalar(Real value, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  int rank() const { return static_cast<int>(node_->shape.size()); }
  std::int64_t dim(int axis) const;
  std::int64_t numel() const { return static_cast<std::int64_t>(node_->data.size()); }

  std::span<const Real> data() const { return node_->data; }
  // Intended for leaves (parameters, inputs); mutating an interior node
  // invalidates any recorded gradient through it.
  std::span<Real> mutable_data() { return node_->data; }
  Real item() const;
  Real operator[](std::int64_t i) const { return node_->data[static_cast<std::size_t>(i)]; }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool value) { node_->requires_grad = value; }
  bool has_grad() const { return !node_->grad.empty(); }
  std::span<const Real> grad() const { return node_->grad; }
  std::span<Real> mutable_grad() { return node_->ensure_grad(); }
  void zero_grad();

  bool is_leaf() const { return node_->is_leaf(); }
  const char* op_name() const { return node_->op; }

  // New leaf with a copy of the data and no history.
  Tensor detach() const;
  Tensor clone() const { return detach(); }
  bool all_finite() const;

  template <typename Other>
  Tensor<Other> cast() const {
    std::vector<Other> out(node_->data.begin(), node_->data.end());
    return Tensor<Other>::from_data(node_->shape, std::move(out), node_->requires_grad);
  }

  Node* node() const { return node_.get(); }
  const std::shared_ptr<Node>& node_ptr() const { return node_; }

 private:
  std::shared_ptr<Node> node_;
};

// Runs reverse-mode differentiation from a scalar loss. Leaf grads
// accumulate across calls; interior grads are reset on every call.
template <typename Real>
void backward(const Tensor<Real>& loss);

// Throws NonFiniteError naming `what` if any value is NaN or infinite.
template <typename Real>
void check_finite(const Tensor<Real>& t, const std::string& what);

}  // namespace rdnet
