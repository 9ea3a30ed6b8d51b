#pragma once

// Dense 64-bit tensors with reverse-mode differentiation.
//
// A Tensor is a cheap handle to an immutable node. Operations whose inputs
// require gradients record their parents and a backward rule; calling
// backward() on a scalar output walks that graph in reverse topological order
// (the gradient tape) and returns one gradient per reached leaf. Leaves are the
// only tensors whose values may be mutated, and only by optimizers between
// graph constructions.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

namespace maskfuse {

using Shape = std::vector<std::size_t>;

std::string shape_str(const Shape& shape);
std::size_t shape_numel(const Shape& shape);

namespace detail {
struct Node;
using BackwardFn = std::function<void(const Node& self, const std::vector<double>& grad_out,
                                      std::span<std::vector<double>*> parent_grads)>;
struct Node {
  Shape shape;
  std::vector<double> value;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  BackwardFn backward;
};
}  // namespace detail

class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);
  // Row vector of shape [1, n].
  static Tensor row(std::vector<double> values, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const;
  std::span<const double> values() const;
  const std::vector<double>& data() const;
  double item() const;
  double at(std::size_t i, std::size_t j) const;
  bool requires_grad() const;

  // Deep copy of values as a fresh leaf.
  Tensor clone(bool requires_grad) const;
  // Same values, no graph history, no gradient.
  Tensor detach() const;

  // Leaf mutation for optimizers and finite-difference probes.
  std::span<double> mutable_values();

  const detail::Node* id() const { return node_.get(); }
  const std::shared_ptr<detail::Node>& node() const { return node_; }
  static Tensor wrap(std::shared_ptr<detail::Node> node);

 private:
  std::shared_ptr<detail::Node> node_;
};

// Gradients of one backward pass, keyed by leaf.
class Gradients {
 public:
  // Gradient for `leaf`, or zeros of its shape if the leaf was not reached.
  Tensor of(const Tensor& leaf) const;
  bool reached(const Tensor& leaf) const;
  std::size_t tape_length() const { return tape_length_; }
  // Sum of squares over every leaf gradient.
  double squared_norm() const;
  void scale_all(double factor);

 private:
  friend Gradients backward(const Tensor& output);
  std::unordered_map<const detail::Node*, std::vector<double>> leaves_;
  std::size_t tape_length_ = 0;
};

// Reverse pass from a scalar (numel == 1) output.
Gradients backward(const Tensor& output);

// Records the branch taken by every piecewise op (relu, clamp, max-pool,
// maximum) while active on the current thread. Finite-difference checks use
// the digest to detect perturbations that cross a kink.
class BranchTrace {
 public:
  BranchTrace();
  ~BranchTrace();
  BranchTrace(const BranchTrace&) = delete;
  BranchTrace& operator=(const BranchTrace&) = delete;

  static BranchTrace* active();
  void record(std::uint64_t branch);
  std::uint64_t digest() const { return digest_; }

 private:
  BranchTrace* previous_;
  std::uint64_t digest_ = 0xcbf29ce484222325ULL;
};

// ---- operations -----------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);
Tensor add_scalar(const Tensor& a, double s);
Tensor log(const Tensor& a);
Tensor exp(const Tensor& a);
Tensor relu(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor clamp(const Tensor& a, double lo, double hi);
Tensor maximum(const Tensor& a, const Tensor& b);
Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
Tensor reshape(const Tensor& a, Shape shape);
// Concatenate 2-D tensors along axis 0 (rows) or 1 (columns).
Tensor concat(std::span<const Tensor> parts, std::size_t axis);
// a: [m, n], b: [1, n] or [n]; b is added to every row.
Tensor add_row_broadcast(const Tensor& a, const Tensor& b);
// a: [m, n], b: [1, n] or [n]; every row multiplied elementwise by b.
Tensor mul_row_broadcast(const Tensor& a, const Tensor& b);
// Row i of a (2-D) multiplied by the constant factors[i].
Tensor scale_rows(const Tensor& a, std::span<const double> factors);
// Per-row layer normalization with learned gain and offset of width n.
Tensor layer_norm(const Tensor& a, const Tensor& gain, const Tensor& offset, double eps = 1e-5);
// x: [C, H, W], weight: [O, C, k, k], bias: [O]; stride 1, zero "same" padding (odd k).
Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias);
// 2x2 window, stride 2, on [C, H, W]; odd trailing rows/columns are dropped.
Tensor max_pool2d(const Tensor& x);
// [C, H, W] -> [1, C] spatial mean.
Tensor global_avg_pool(const Tensor& x);
// Row `index` of a 2-D table as [1, n].
Tensor embedding_row(const Tensor& table, std::size_t index);
// Softmax along `axis` of a 2-D tensor. -inf entries receive zero weight and a
// slice made entirely of -inf maps to all zeros.
Tensor safe_softmax(const Tensor& logits, std::size_t axis = 1);

}  // namespace maskfuse
