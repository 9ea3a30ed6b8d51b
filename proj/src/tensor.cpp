#include "maskfuse/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <unordered_set>

#include "maskfuse/errors.hpp"

namespace maskfuse {

using detail::Node;

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

thread_local BranchTrace* g_active_trace = nullptr;

std::shared_ptr<Node> leaf_node(Shape shape, std::vector<double> values, bool requires_grad) {
  if (shape_numel(shape) != values.size()) {
    throw ShapeError("tensor: shape " + shape_str(shape) + " holds " +
                     std::to_string(shape_numel(shape)) + " values, got " +
                     std::to_string(values.size()));
  }
  auto n = std::make_shared<Node>();
  n->shape = std::move(shape);
  n->value = std::move(values);
  n->requires_grad = requires_grad;
  return n;
}

// Builds an op result; graph links are kept only when some input needs a gradient.
Tensor make_result(Shape shape, std::vector<double> values, std::vector<Tensor> inputs,
                   detail::BackwardFn backward) {
  auto n = std::make_shared<Node>();
  n->shape = std::move(shape);
  n->value = std::move(values);
  bool any = false;
  for (const auto& t : inputs) any = any || t.requires_grad();
  if (any) {
    n->requires_grad = true;
    n->parents.reserve(inputs.size());
    for (const auto& t : inputs) n->parents.push_back(t.node());
    n->backward = std::move(backward);
  }
  return Tensor::wrap(std::move(n));
}

[[noreturn]] void shape_mismatch(const char* op, const Shape& a, const Shape& b) {
  throw ShapeError(std::string(op) + ": incompatible shapes " + shape_str(a) + " and " +
                   shape_str(b));
}

void require_rank(const char* op, const Tensor& t, std::size_t rank) {
  if (t.rank() != rank) {
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) +
                     ", got shape " + shape_str(t.shape()));
  }
}

// Accepts [n] or [1, n] as a row vector of width n.
std::size_t row_vector_width(const char* op, const Tensor& b) {
  const auto& s = b.shape();
  if (s.size() == 1) return s[0];
  if (s.size() == 2 && s[0] == 1) return s[1];
  throw ShapeError(std::string(op) + ": expected a row vector, got " + shape_str(s));
}

void trace_branch(std::uint64_t b) {
  if (g_active_trace) g_active_trace->record(b);
}

template <class F>
Tensor unary(const Tensor& a, F f, std::function<double(double x, double y)> dfdx) {
  std::vector<double> out(a.numel());
  const auto& in = a.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(in[i]);
  return make_result(a.shape(), std::move(out), {a},
                     [dfdx](const Node& self, const std::vector<double>& g,
                            std::span<std::vector<double>*> pg) {
                       if (!pg[0]) return;
                       const auto& x = self.parents[0]->value;
                       auto& ga = *pg[0];
                       for (std::size_t i = 0; i < g.size(); ++i) {
                         ga[i] += g[i] * dfdx(x[i], self.value[i]);
                       }
                     });
}

}  // namespace

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ", ";
    os << shape[i];
  }
  os << ']';
  return os.str();
}

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto e : shape) n *= e;
  return n;
}

// ---- Tensor -----------------------------------------------------------------

Tensor Tensor::wrap(std::shared_ptr<Node> node) {
  Tensor t;
  t.node_ = std::move(node);
  return t;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  const auto n = shape_numel(shape);
  return wrap(leaf_node(std::move(shape), std::vector<double>(n, 0.0), requires_grad));
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  const auto n = shape_numel(shape);
  return wrap(leaf_node(std::move(shape), std::vector<double>(n, value), requires_grad));
}

Tensor Tensor::from(Shape shape, std::vector<double> values, bool requires_grad) {
  return wrap(leaf_node(std::move(shape), std::move(values), requires_grad));
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return wrap(leaf_node({1}, {value}, requires_grad));
}

Tensor Tensor::row(std::vector<double> values, bool requires_grad) {
  const std::size_t n = values.size();
  return wrap(leaf_node({1, n}, std::move(values), requires_grad));
}

const Shape& Tensor::shape() const { return node_->shape; }

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= rank()) {
    throw ShapeError("dim: axis " + std::to_string(axis) + " out of range for " +
                     shape_str(shape()));
  }
  return node_->shape[axis];
}

std::size_t Tensor::numel() const { return node_->value.size(); }

std::span<const double> Tensor::values() const { return node_->value; }

const std::vector<double>& Tensor::data() const { return node_->value; }

double Tensor::item() const {
  if (numel() != 1) throw ShapeError("item: tensor " + shape_str(shape()) + " is not a scalar");
  return node_->value[0];
}

double Tensor::at(std::size_t i, std::size_t j) const {
  if (rank() != 2) throw ShapeError("at: tensor " + shape_str(shape()) + " is not 2-D");
  return node_->value[i * node_->shape[1] + j];
}

bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }

Tensor Tensor::clone(bool requires_grad) const {
  return wrap(leaf_node(node_->shape, node_->value, requires_grad));
}

Tensor Tensor::detach() const { return clone(false); }

std::span<double> Tensor::mutable_values() {
  if (!node_->parents.empty()) {
    throw PreconditionError("mutable_values: only leaf tensors may be mutated");
  }
  return node_->value;
}

// ---- backward -----------------------------------------------------------------

Tensor Gradients::of(const Tensor& leaf) const {
  auto it = leaves_.find(leaf.id());
  if (it == leaves_.end()) return Tensor::zeros(leaf.shape());
  return Tensor::from(leaf.shape(), it->second);
}

bool Gradients::reached(const Tensor& leaf) const { return leaves_.count(leaf.id()) != 0; }

double Gradients::squared_norm() const {
  double total = 0.0;
  for (const auto& [node, g] : leaves_)
    for (double x : g) total += x * x;
  return total;
}

void Gradients::scale_all(double factor) {
  for (auto& [node, g] : leaves_)
    for (double& x : g) x *= factor;
}

Gradients backward(const Tensor& output) {
  if (!output.defined() || output.numel() != 1) {
    throw ShapeError("backward: output must be a scalar, got " +
                     (output.defined() ? shape_str(output.shape()) : std::string("undefined")));
  }
  Gradients result;
  if (!output.requires_grad()) return result;

  // Iterative post-order DFS gives a topological order (parents before children).
  std::vector<const Node*> order;
  std::unordered_set<const Node*> visited;
  std::vector<std::pair<const Node*, std::size_t>> stack;
  stack.emplace_back(output.id(), 0);
  visited.insert(output.id());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      const Node* p = node->parents[next++].get();
      if (p->requires_grad && visited.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  result.tape_length_ = order.size();

  std::unordered_map<const Node*, std::vector<double>> grads;
  grads[output.id()] = std::vector<double>(1, 1.0);
  std::vector<std::vector<double>*> parent_grads;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    const Node* node = *it;
    auto git = grads.find(node);
    if (git == grads.end()) continue;
    if (node->parents.empty()) continue;
    parent_grads.assign(node->parents.size(), nullptr);
    for (std::size_t i = 0; i < node->parents.size(); ++i) {
      const Node* p = node->parents[i].get();
      if (!p->requires_grad) continue;
      auto& buf = grads[p];
      if (buf.empty()) buf.assign(p->value.size(), 0.0);
      parent_grads[i] = &buf;
    }
    // grads may rehash above; look the node's gradient up again.
    const auto& g = grads.find(node)->second;
    node->backward(*node, g, parent_grads);
    if (node != output.id()) grads.erase(node);
  }
  for (auto& [node, g] : grads) {
    if (node->parents.empty()) result.leaves_.emplace(node, std::move(g));
  }
  return result;
}

// ---- BranchTrace --------------------------------------------------------------

BranchTrace::BranchTrace() : previous_(g_active_trace) { g_active_trace = this; }

BranchTrace::~BranchTrace() { g_active_trace = previous_; }

BranchTrace* BranchTrace::active() { return g_active_trace; }

void BranchTrace::record(std::uint64_t branch) {
  digest_ ^= branch + 0x9e3779b97f4a7c15ULL;
  digest_ *= 0x100000001b3ULL;
}

// ---- elementwise ----------------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) shape_mismatch("add", a.shape(), b.shape());
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] + b.data()[i];
  return make_result(a.shape(), std::move(out), {a, b},
                     [](const Node&, const std::vector<double>& g,
                        std::span<std::vector<double>*> pg) {
                       for (int k = 0; k < 2; ++k) {
                         if (!pg[k]) continue;
                         for (std::size_t i = 0; i < g.size(); ++i) (*pg[k])[i] += g[i];
                       }
                     });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) shape_mismatch("sub", a.shape(), b.shape());
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] - b.data()[i];
  return make_result(a.shape(), std::move(out), {a, b},
                     [](const Node&, const std::vector<double>& g,
                        std::span<std::vector<double>*> pg) {
                       if (pg[0])
                         for (std::size_t i = 0; i < g.size(); ++i) (*pg[0])[i] += g[i];
                       if (pg[1])
                         for (std::size_t i = 0; i < g.size(); ++i) (*pg[1])[i] -= g[i];
                     });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) shape_mismatch("mul", a.shape(), b.shape());
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * b.data()[i];
  return make_result(a.shape(), std::move(out), {a, b},
                     [](const Node& self, const std::vector<double>& g,
                        std::span<std::vector<double>*> pg) {
                       const auto& av = self.parents[0]->value;
                       const auto& bv = self.parents[1]->value;
                       if (pg[0])
                         for (std::size_t i = 0; i < g.size(); ++i) (*pg[0])[i] += g[i] * bv[i];
                       if (pg[1])
                         for (std::size_t i = 0; i < g.size(); ++i) (*pg[1])[i] += g[i] * av[i];
                     });
}

Tensor scale(const Tensor& a, double s) {
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * s;
  return make_result(a.shape(), std::move(out), {a},
                     [s](const Node&, const std::vector<double>& g,
                         std::span<std::vector<double>*> pg) {
                       if (!pg[0]) return;
                       for (std::size_t i = 0; i < g.size(); ++i) (*pg[0])[i] += g[i] * s;
                     });
}

Tensor add_scalar(const Tensor& a, double s) {
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] + s;
  return make_result(a.shape(), std::move(out), {a},
                     [](const Node&, const std::vector<double>& g,
                        std::span<std::vector<double>*> pg) {
                       if (!pg[0]) return;
                       for (std::size_t i = 0; i < g.size(); ++i) (*pg[0])[i] += g[i];
                     });
}

Tensor log(const Tensor& a) {
  return unary(
      a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

Tensor exp(const Tensor& a) {
  return unary(
      a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Tensor relu(const Tensor& a) {
  if (g_active_trace) {
    for (double x : a.data()) trace_branch(x > 0.0 ? 1 : 0);
  }
  return unary(
      a, [](double x) { return x > 0.0 ? x : 0.0; },
      [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Tensor sigmoid(const Tensor& a) {
  return unary(
      a,
      [](double x) {
        if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
        const double e = std::exp(x);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); });
}

Tensor clamp(const Tensor& a, double lo, double hi) {
  if (g_active_trace) {
    for (double x : a.data()) trace_branch(x < lo ? 0 : (x > hi ? 2 : 1));
  }
  return unary(
      a, [lo, hi](double x) { return std::clamp(x, lo, hi); },
      [lo, hi](double x, double) { return (x < lo || x > hi) ? 0.0 : 1.0; });
}

Tensor maximum(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) shape_mismatch("maximum", a.shape(), b.shape());
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const bool take_a = a.data()[i] >= b.data()[i];
    out[i] = take_a ? a.data()[i] : b.data()[i];
    trace_branch(take_a ? 1 : 0);
  }
  return make_result(a.shape(), std::move(out), {a, b},
                     [](const Node& self, const std::vector<double>& g,
                        std::span<std::vector<double>*> pg) {
                       const auto& av = self.parents[0]->value;
                       const auto& bv = self.parents[1]->value;
                       for (std::size_t i = 0; i < g.size(); ++i) {
                         const int k = av[i] >= bv[i] ? 0 : 1;
                         if (pg[k]) (*pg[k])[i] += g[i];
                       }
                     });
}

// ---- reductions and shape ---------------------------------------------------

Tensor sum(const Tensor& a) {
  double s = 0.0;
  for (double x : a.data()) s += x;
  return make_result({1}, {s}, {a},
                     [](const Node&, const std::vector<double>& g,
                        std::span<std::vector<double>*> pg) {
                       if (!pg[0]) return;
                       for (auto& x : *pg[0]) x += g[0];
                     });
}

Tensor mean(const Tensor& a) {
  if (a.numel() == 0) throw ShapeError("mean: empty tensor");
  const double n = static_cast<double>(a.numel());
  double s = 0.0;
  for (double x : a.data()) s += x;
  return make_result({1}, {s / n}, {a},
                     [n](const Node&, const std::vector<double>& g,
                         std::span<std::vector<double>*> pg) {
                       if (!pg[0]) return;
                       for (auto& x : *pg[0]) x += g[0] / n;
                     });
}

Tensor reshape(const Tensor& a, Shape shape) {
  if (shape_numel(shape) != a.numel()) shape_mismatch("reshape", a.shape(), shape);
  return make_result(std::move(shape), a.data(), {a},
                     [](const Node&, const std::vector<double>& g,
                        std::span<std::vector<double>*> pg) {
                       if (!pg[0]) return;
                       for (std::size_t i = 0; i < g.size(); ++i) (*pg[0])[i] += g[i];
                     });
}

Tensor transpose(const Tensor& a) {
  require_rank("transpose", a, 2);
  const std::size_t m = a.dim(0), n = a.dim(1);
  std::vector<double> out(m * n);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j * m + i] = a.data()[i * n + j];
  return make_result({n, m}, std::move(out), {a},
                     [m, n](const Node&, const std::vector<double>& g,
                            std::span<std::vector<double>*> pg) {
                       if (!pg[0]) return;
                       auto& ga = *pg[0];
                       for (std::size_t i = 0; i < m; ++i)
                         for (std::size_t j = 0; j < n; ++j) ga[i * n + j] += g[j * m + i];
                     });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    shape_mismatch("matmul", a.shape(), b.shape());
  }
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<double> out(m * n, 0.0);
  const double* A = a.data().data();
  const double* B = b.data().data();
  for (std::size_t i = 0; i < m; ++i) {
    double* row = out.data() + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = A[i * k + p];
      const double* brow = B + p * n;
      for (std::size_t j = 0; j < n; ++j) row[j] += aip * brow[j];
    }
  }
  return make_result({m, n}, std::move(out), {a, b},
                     [m, k, n](const Node& self, const std::vector<double>& g,
                               std::span<std::vector<double>*> pg) {
                       const double* A = self.parents[0]->value.data();
                       const double* B = self.parents[1]->value.data();
                       if (pg[0]) {
                         // dA = G B^T
                         double* ga = pg[0]->data();
                         for (std::size_t i = 0; i < m; ++i)
                           for (std::size_t p = 0; p < k; ++p) {
                             double s = 0.0;
                             for (std::size_t j = 0; j < n; ++j) s += g[i * n + j] * B[p * n + j];
                             ga[i * k + p] += s;
                           }
                       }
                       if (pg[1]) {
                         // dB = A^T G
                         double* gb = pg[1]->data();
                         for (std::size_t i = 0; i < m; ++i)
                           for (std::size_t p = 0; p < k; ++p) {
                             const double aip = A[i * k + p];
                             for (std::size_t j = 0; j < n; ++j) gb[p * n + j] += aip * g[i * n + j];
                           }
                       }
                     });
}

Tensor concat(std::span<const Tensor> parts, std::size_t axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  if (axis > 1) throw ShapeError("concat: axis must be 0 or 1");
  for (const auto& p : parts) require_rank("concat", p, 2);
  const std::size_t other = axis == 0 ? parts[0].dim(1) : parts[0].dim(0);
  std::size_t total = 0;
  for (const auto& p : parts) {
    const std::size_t o = axis == 0 ? p.dim(1) : p.dim(0);
    if (o != other) shape_mismatch("concat", parts[0].shape(), p.shape());
    total += p.dim(axis);
  }
  Shape shape = axis == 0 ? Shape{total, other} : Shape{other, total};
  std::vector<double> out;
  out.reserve(total * other);
  std::vector<std::size_t> widths;
  widths.reserve(parts.size());
  for (const auto& p : parts) widths.push_back(p.dim(axis));
  if (axis == 0) {
    for (const auto& p : parts) out.insert(out.end(), p.data().begin(), p.data().end());
  } else {
    out.resize(total * other);
    for (std::size_t r = 0; r < other; ++r) {
      std::size_t col = 0;
      for (std::size_t k = 0; k < parts.size(); ++k) {
        const auto& d = parts[k].data();
        std::copy(d.begin() + r * widths[k], d.begin() + (r + 1) * widths[k],
                  out.begin() + r * total + col);
        col += widths[k];
      }
    }
  }
  return make_result(std::move(shape), std::move(out),
                     std::vector<Tensor>(parts.begin(), parts.end()),
                     [axis, widths, other, total](const Node&, const std::vector<double>& g,
                                                  std::span<std::vector<double>*> pg) {
                       if (axis == 0) {
                         std::size_t off = 0;
                         for (std::size_t k = 0; k < widths.size(); ++k) {
                           const std::size_t len = widths[k] * other;
                           if (pg[k])
                             for (std::size_t i = 0; i < len; ++i) (*pg[k])[i] += g[off + i];
                           off += len;
                         }
                       } else {
                         for (std::size_t r = 0; r < other; ++r) {
                           std::size_t col = 0;
                           for (std::size_t k = 0; k < widths.size(); ++k) {
                             if (pg[k])
                               for (std::size_t j = 0; j < widths[k]; ++j)
                                 (*pg[k])[r * widths[k] + j] += g[r * total + col + j];
                             col += widths[k];
                           }
                         }
                       }
                     });
}

Tensor add_row_broadcast(const Tensor& a, const Tensor& b) {
  require_rank("add_row_broadcast", a, 2);
  const std::size_t m = a.dim(0), n = a.dim(1);
  if (row_vector_width("add_row_broadcast", b) != n)
    shape_mismatch("add_row_broadcast", a.shape(), b.shape());
  std::vector<double> out(a.data());
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] += b.data()[j];
  return make_result(a.shape(), std::move(out), {a, b},
                     [m, n](const Node&, const std::vector<double>& g,
                            std::span<std::vector<double>*> pg) {
                       if (pg[0])
                         for (std::size_t i = 0; i < g.size(); ++i) (*pg[0])[i] += g[i];
                       if (pg[1])
                         for (std::size_t i = 0; i < m; ++i)
                           for (std::size_t j = 0; j < n; ++j) (*pg[1])[j] += g[i * n + j];
                     });
}

Tensor mul_row_broadcast(const Tensor& a, const Tensor& b) {
  require_rank("mul_row_broadcast", a, 2);
  const std::size_t m = a.dim(0), n = a.dim(1);
  if (row_vector_width("mul_row_broadcast", b) != n)
    shape_mismatch("mul_row_broadcast", a.shape(), b.shape());
  std::vector<double> out(a.data());
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] *= b.data()[j];
  return make_result(a.shape(), std::move(out), {a, b},
                     [m, n](const Node& self, const std::vector<double>& g,
                            std::span<std::vector<double>*> pg) {
                       const auto& av = self.parents[0]->value;
                       const auto& bv = self.parents[1]->value;
                       if (pg[0])
                         for (std::size_t i = 0; i < m; ++i)
                           for (std::size_t j = 0; j < n; ++j)
                             (*pg[0])[i * n + j] += g[i * n + j] * bv[j];
                       if (pg[1])
                         for (std::size_t i = 0; i < m; ++i)
                           for (std::size_t j = 0; j < n; ++j)
                             (*pg[1])[j] += g[i * n + j] * av[i * n + j];
                     });
}

Tensor scale_rows(const Tensor& a, std::span<const double> factors) {
  require_rank("scale_rows", a, 2);
  const std::size_t m = a.dim(0), n = a.dim(1);
  if (factors.size() != m) {
    throw ShapeError("scale_rows: " + std::to_string(factors.size()) + " factors for " +
                     shape_str(a.shape()));
  }
  std::vector<double> f(factors.begin(), factors.end());
  std::vector<double> out(a.data());
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] *= f[i];
  return make_result(a.shape(), std::move(out), {a},
                     [f, m, n](const Node&, const std::vector<double>& g,
                               std::span<std::vector<double>*> pg) {
                       if (!pg[0]) return;
                       for (std::size_t i = 0; i < m; ++i)
                         for (std::size_t j = 0; j < n; ++j) (*pg[0])[i * n + j] += g[i * n + j] * f[i];
                     });
}

Tensor layer_norm(const Tensor& a, const Tensor& gain, const Tensor& offset, double eps) {
  require_rank("layer_norm", a, 2);
  const std::size_t m = a.dim(0), n = a.dim(1);
  if (row_vector_width("layer_norm", gain) != n) shape_mismatch("layer_norm", a.shape(), gain.shape());
  if (row_vector_width("layer_norm", offset) != n)
    shape_mismatch("layer_norm", a.shape(), offset.shape());
  std::vector<double> out(m * n), xhat(m * n), inv_std(m);
  const auto& x = a.data();
  for (std::size_t i = 0; i < m; ++i) {
    double mu = 0.0;
    for (std::size_t j = 0; j < n; ++j) mu += x[i * n + j];
    mu /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      const double d = x[i * n + j] - mu;
      var += d * d;
    }
    var /= static_cast<double>(n);
    inv_std[i] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < n; ++j) {
      xhat[i * n + j] = (x[i * n + j] - mu) * inv_std[i];
      out[i * n + j] = xhat[i * n + j] * gain.data()[j] + offset.data()[j];
    }
  }
  return make_result(
      a.shape(), std::move(out), {a, gain, offset},
      [m, n, xhat = std::move(xhat), inv_std = std::move(inv_std)](
          const Node& self, const std::vector<double>& g, std::span<std::vector<double>*> pg) {
        const auto& gamma = self.parents[1]->value;
        if (pg[0]) {
          std::vector<double> dxhat(n);
          for (std::size_t i = 0; i < m; ++i) {
            double mean_d = 0.0, mean_dx = 0.0;
            for (std::size_t j = 0; j < n; ++j) {
              dxhat[j] = g[i * n + j] * gamma[j];
              mean_d += dxhat[j];
              mean_dx += dxhat[j] * xhat[i * n + j];
            }
            mean_d /= static_cast<double>(n);
            mean_dx /= static_cast<double>(n);
            for (std::size_t j = 0; j < n; ++j) {
              (*pg[0])[i * n + j] += inv_std[i] * (dxhat[j] - mean_d - xhat[i * n + j] * mean_dx);
            }
          }
        }
        if (pg[1])
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) (*pg[1])[j] += g[i * n + j] * xhat[i * n + j];
        if (pg[2])
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) (*pg[2])[j] += g[i * n + j];
      });
}

// ---- convolutional ------------------------------------------------------------

Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  require_rank("conv2d", x, 3);
  require_rank("conv2d", weight, 4);
  const std::size_t C = x.dim(0), H = x.dim(1), W = x.dim(2);
  const std::size_t O = weight.dim(0), K = weight.dim(2);
  if (weight.dim(1) != C || weight.dim(3) != K || K % 2 == 0) {
    shape_mismatch("conv2d", x.shape(), weight.shape());
  }
  if (bias.numel() != O) shape_mismatch("conv2d", weight.shape(), bias.shape());
  const long pad = static_cast<long>(K / 2);
  std::vector<double> out(O * H * W);
  const double* X = x.data().data();
  const double* Wt = weight.data().data();
  for (std::size_t o = 0; o < O; ++o) {
    double* plane = out.data() + o * H * W;
    std::fill(plane, plane + H * W, bias.data()[o]);
    for (std::size_t c = 0; c < C; ++c) {
      const double* xin = X + c * H * W;
      const double* ker = Wt + (o * C + c) * K * K;
      for (std::size_t ky = 0; ky < K; ++ky) {
        for (std::size_t kx = 0; kx < K; ++kx) {
          const double w = ker[ky * K + kx];
          const long dy = static_cast<long>(ky) - pad, dx = static_cast<long>(kx) - pad;
          const std::size_t y0 = dy < 0 ? static_cast<std::size_t>(-dy) : 0;
          const std::size_t y1 = dy > 0 ? H - static_cast<std::size_t>(dy) : H;
          const std::size_t x0 = dx < 0 ? static_cast<std::size_t>(-dx) : 0;
          const std::size_t x1 = dx > 0 ? W - static_cast<std::size_t>(dx) : W;
          for (std::size_t yy = y0; yy < y1; ++yy) {
            const double* src = xin + (yy + dy) * W + dx;
            double* dst = plane + yy * W;
            for (std::size_t xx = x0; xx < x1; ++xx) dst[xx] += w * src[xx];
          }
        }
      }
    }
  }
  return make_result(
      {O, H, W}, std::move(out), {x, weight, bias},
      [C, H, W, O, K, pad](const Node& self, const std::vector<double>& g,
                           std::span<std::vector<double>*> pg) {
        const double* X = self.parents[0]->value.data();
        const double* Wt = self.parents[1]->value.data();
        for (std::size_t o = 0; o < O; ++o) {
          const double* gp = g.data() + o * H * W;
          if (pg[2]) {
            double s = 0.0;
            for (std::size_t i = 0; i < H * W; ++i) s += gp[i];
            (*pg[2])[o] += s;
          }
          for (std::size_t c = 0; c < C; ++c) {
            const double* xin = X + c * H * W;
            for (std::size_t ky = 0; ky < K; ++ky) {
              for (std::size_t kx = 0; kx < K; ++kx) {
                const long dy = static_cast<long>(ky) - pad, dx = static_cast<long>(kx) - pad;
                const std::size_t y0 = dy < 0 ? static_cast<std::size_t>(-dy) : 0;
                const std::size_t y1 = dy > 0 ? H - static_cast<std::size_t>(dy) : H;
                const std::size_t x0 = dx < 0 ? static_cast<std::size_t>(-dx) : 0;
                const std::size_t x1 = dx > 0 ? W - static_cast<std::size_t>(dx) : W;
                const std::size_t widx = (o * C + c) * K * K + ky * K + kx;
                if (pg[1]) {
                  double s = 0.0;
                  for (std::size_t yy = y0; yy < y1; ++yy) {
                    const double* src = xin + (yy + dy) * W + dx;
                    const double* gr = gp + yy * W;
                    for (std::size_t xx = x0; xx < x1; ++xx) s += gr[xx] * src[xx];
                  }
                  (*pg[1])[widx] += s;
                }
                if (pg[0]) {
                  const double w = Wt[widx];
                  double* gx = pg[0]->data() + c * H * W;
                  for (std::size_t yy = y0; yy < y1; ++yy) {
                    double* dst = gx + (yy + dy) * W + dx;
                    const double* gr = gp + yy * W;
                    for (std::size_t xx = x0; xx < x1; ++xx) dst[xx] += w * gr[xx];
                  }
                }
              }
            }
          }
        }
      });
}

Tensor max_pool2d(const Tensor& x) {
  require_rank("max_pool2d", x, 3);
  const std::size_t C = x.dim(0), H = x.dim(1), W = x.dim(2);
  const std::size_t Ho = H / 2, Wo = W / 2;
  if (Ho == 0 || Wo == 0) throw ShapeError("max_pool2d: input too small " + shape_str(x.shape()));
  std::vector<double> out(C * Ho * Wo);
  std::vector<std::size_t> argmax(out.size());
  const auto& X = x.data();
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t i = 0; i < Ho; ++i)
      for (std::size_t j = 0; j < Wo; ++j) {
        std::size_t best = c * H * W + (2 * i) * W + 2 * j;
        std::uint64_t which = 0;
        for (std::size_t di = 0; di < 2; ++di)
          for (std::size_t dj = 0; dj < 2; ++dj) {
            const std::size_t idx = c * H * W + (2 * i + di) * W + 2 * j + dj;
            if (X[idx] > X[best]) {
              best = idx;
              which = di * 2 + dj;
            }
          }
        const std::size_t o = (c * Ho + i) * Wo + j;
        out[o] = X[best];
        argmax[o] = best;
        trace_branch(which);
      }
  return make_result({C, Ho, Wo}, std::move(out), {x},
                     [argmax = std::move(argmax)](const Node&, const std::vector<double>& g,
                                                  std::span<std::vector<double>*> pg) {
                       if (!pg[0]) return;
                       for (std::size_t o = 0; o < g.size(); ++o) (*pg[0])[argmax[o]] += g[o];
                     });
}

Tensor global_avg_pool(const Tensor& x) {
  require_rank("global_avg_pool", x, 3);
  const std::size_t C = x.dim(0), HW = x.dim(1) * x.dim(2);
  std::vector<double> out(C, 0.0);
  for (std::size_t c = 0; c < C; ++c) {
    double s = 0.0;
    for (std::size_t i = 0; i < HW; ++i) s += x.data()[c * HW + i];
    out[c] = s / static_cast<double>(HW);
  }
  return make_result({1, C}, std::move(out), {x},
                     [C, HW](const Node&, const std::vector<double>& g,
                             std::span<std::vector<double>*> pg) {
                       if (!pg[0]) return;
                       for (std::size_t c = 0; c < C; ++c)
                         for (std::size_t i = 0; i < HW; ++i)
                           (*pg[0])[c * HW + i] += g[c] / static_cast<double>(HW);
                     });
}

Tensor embedding_row(const Tensor& table, std::size_t index) {
  require_rank("embedding_row", table, 2);
  const std::size_t n = table.dim(1);
  if (index >= table.dim(0)) {
    throw ShapeError("embedding_row: index " + std::to_string(index) + " out of range for " +
                     shape_str(table.shape()));
  }
  std::vector<double> out(table.data().begin() + index * n, table.data().begin() + (index + 1) * n);
  return make_result({1, n}, std::move(out), {table},
                     [index, n](const Node&, const std::vector<double>& g,
                                std::span<std::vector<double>*> pg) {
                       if (!pg[0]) return;
                       for (std::size_t j = 0; j < n; ++j) (*pg[0])[index * n + j] += g[j];
                     });
}

Tensor safe_softmax(const Tensor& logits, std::size_t axis) {
  require_rank("safe_softmax", logits, 2);
  if (axis > 1) throw ShapeError("safe_softmax: axis must be 0 or 1");
  const std::size_t m = logits.dim(0), n = logits.dim(1);
  // Slices are rows for axis 1 and columns for axis 0.
  const std::size_t slices = axis == 1 ? m : n;
  const std::size_t len = axis == 1 ? n : m;
  const std::size_t outer_stride = axis == 1 ? n : 1;
  const std::size_t inner_stride = axis == 1 ? 1 : n;
  std::vector<double> out(m * n, 0.0);
  const auto& x = logits.data();
  for (std::size_t s = 0; s < slices; ++s) {
    double mx = kNegInf;
    for (std::size_t t = 0; t < len; ++t) mx = std::max(mx, x[s * outer_stride + t * inner_stride]);
    if (mx == kNegInf) continue;
    double z = 0.0;
    for (std::size_t t = 0; t < len; ++t) {
      const std::size_t idx = s * outer_stride + t * inner_stride;
      const double e = x[idx] == kNegInf ? 0.0 : std::exp(x[idx] - mx);
      out[idx] = e;
      z += e;
    }
    for (std::size_t t = 0; t < len; ++t) out[s * outer_stride + t * inner_stride] /= z;
  }
  return make_result(logits.shape(), std::move(out), {logits},
                     [slices, len, outer_stride, inner_stride](
                         const Node& self, const std::vector<double>& g,
                         std::span<std::vector<double>*> pg) {
                       if (!pg[0]) return;
                       const auto& y = self.value;
                       for (std::size_t s = 0; s < slices; ++s) {
                         double dot = 0.0;
                         for (std::size_t t = 0; t < len; ++t) {
                           const std::size_t idx = s * outer_stride + t * inner_stride;
                           dot += g[idx] * y[idx];
                         }
                         for (std::size_t t = 0; t < len; ++t) {
                           const std::size_t idx = s * outer_stride + t * inner_stride;
                           (*pg[0])[idx] += y[idx] * (g[idx] - dot);
                         }
                       }
                     });
}

}  // namespace maskfuse
