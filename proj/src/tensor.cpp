#include "tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <unordered_set>

#include "error.hpp"
#include "threadpool.hpp"

namespace attenlab {

using detail::Node;

namespace {

thread_local bool g_grad_enabled = true;
thread_local bool g_guided_relu = false;

std::shared_ptr<Node> make_leaf(Shape shape, std::vector<double> values, bool requires_grad) {
  auto n = std::make_shared<Node>();
  n->shape = std::move(shape);
  n->value = std::move(values);
  n->requires_grad = requires_grad;
  return n;
}

bool any_requires_grad(const std::vector<std::shared_ptr<Node>>& parents) {
  for (const auto& p : parents) {
    if (p->requires_grad) return true;
  }
  return false;
}

bool recording(const Node& n) { return !n.is_leaf; }

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shapes disagree: " + shape_str(a.shape()) +
                         " vs " + shape_str(b.shape()));
  }
}

enum class Combine { kAdd, kSub, kMul };

Tensor elementwise(const Tensor& a, const Tensor& b, Combine kind, const char* op) {
  if (!a.defined() || !b.defined()) throw ContractError(std::string(op) + ": undefined tensor");
  const bool broadcast =
      b.rank() == 1 && a.rank() > 1 && b.dim(0) == a.shape().back() && a.shape() != b.shape();
  if (!broadcast) require_same_shape(a, b, op);

  const auto& av = a.values();
  const auto& bv = b.values();
  const int64_t n = a.size();
  const int64_t inner = broadcast ? b.dim(0) : n;
  std::vector<double> out(n);
  switch (kind) {
    case Combine::kAdd:
      for (int64_t i = 0; i < n; ++i) out[i] = av[i] + bv[i % inner];
      break;
    case Combine::kSub:
      for (int64_t i = 0; i < n; ++i) out[i] = av[i] - bv[i % inner];
      break;
    case Combine::kMul:
      for (int64_t i = 0; i < n; ++i) out[i] = av[i] * bv[i % inner];
      break;
  }
  auto node = detail::make_op_node(a.shape(), std::move(out), {a.node(), b.node()}, op);
  if (recording(*node)) {
    auto ap = a.node();
    auto bp = b.node();
    node->backward_fn = [ap, bp, kind, inner, n](Node& self) {
      if (ap->requires_grad) {
        ap->ensure_grad();
        for (int64_t i = 0; i < n; ++i) {
          const double g = self.grad[i];
          switch (kind) {
            case Combine::kAdd:
              ap->grad[i] += g;
              break;
            case Combine::kSub:
              ap->grad[i] += g;
              break;
            case Combine::kMul:
              ap->grad[i] += g * bp->value[i % inner];
              break;
          }
        }
      }
      if (bp->requires_grad) {
        bp->ensure_grad();
        for (int64_t i = 0; i < n; ++i) {
          const double g = self.grad[i];
          const int64_t j = i % inner;
          switch (kind) {
            case Combine::kAdd:
              bp->grad[j] += g;
              break;
            case Combine::kSub:
              bp->grad[j] -= g;
              break;
            case Combine::kMul:
              bp->grad[j] += g * ap->value[i];
              break;
          }
        }
      }
    };
  }
  return Tensor(node);
}

}  // namespace

namespace detail {

std::shared_ptr<Node> make_op_node(Shape shape, std::vector<double> values,
                                   std::vector<std::shared_ptr<Node>> parents, const char* op) {
  auto n = std::make_shared<Node>();
  n->shape = std::move(shape);
  n->value = std::move(values);
  if (g_grad_enabled && any_requires_grad(parents)) {
    n->requires_grad = true;
    n->is_leaf = false;
    n->parents = std::move(parents);
    n->op = op;
  }
  return n;
}

}  // namespace detail

int64_t shape_volume(const Shape& shape) {
  int64_t v = 1;
  for (int d : shape) {
    if (d <= 0) throw DimensionError("shape extents must be positive, got " + shape_str(shape));
    v *= d;
  }
  return v;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << "(";
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ",";
    os << shape[i];
  }
  os << ")";
  return os.str();
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  const int64_t n = shape_volume(shape);
  return Tensor(make_leaf(std::move(shape), std::vector<double>(n, 0.0), requires_grad));
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  const int64_t n = shape_volume(shape);
  return Tensor(make_leaf(std::move(shape), std::vector<double>(n, value), requires_grad));
}

Tensor Tensor::from_data(Shape shape, std::vector<double> values, bool requires_grad) {
  if (shape_volume(shape) != static_cast<int64_t>(values.size())) {
    throw DimensionError("from_data: " + shape_str(shape) + " does not hold " +
                         std::to_string(values.size()) + " values");
  }
  return Tensor(make_leaf(std::move(shape), std::move(values), requires_grad));
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return Tensor(make_leaf({1}, {value}, requires_grad));
}

const Shape& Tensor::shape() const {
  if (!node_) throw ContractError("use of undefined tensor");
  return node_->shape;
}

int Tensor::dim(int axis) const {
  const auto& s = shape();
  if (axis < 0 || axis >= static_cast<int>(s.size())) {
    throw DimensionError("axis " + std::to_string(axis) + " out of range for " + shape_str(s));
  }
  return s[axis];
}

int64_t Tensor::size() const { return static_cast<int64_t>(values().size()); }

const std::vector<double>& Tensor::values() const {
  if (!node_) throw ContractError("use of undefined tensor");
  return node_->value;
}

double Tensor::item() const {
  if (size() != 1) throw ContractError("item(): tensor has " + std::to_string(size()) + " values");
  return values()[0];
}

double Tensor::at(const std::vector<int>& index) const {
  const auto& s = shape();
  if (index.size() != s.size()) throw DimensionError("at(): index rank mismatch");
  int64_t off = 0;
  for (size_t i = 0; i < s.size(); ++i) {
    if (index[i] < 0 || index[i] >= s[i]) throw DimensionError("at(): index out of range");
    off = off * s[i] + index[i];
  }
  return values()[off];
}

std::vector<double>& Tensor::values_mut() {
  if (!node_) throw ContractError("use of undefined tensor");
  return node_->value;
}

bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }

bool Tensor::has_grad() const { return node_ && node_->grad.size() == node_->value.size(); }

const std::vector<double>& Tensor::grad() const {
  if (!has_grad()) throw ContractError("grad(): no gradient recorded");
  return node_->grad;
}

void Tensor::zero_grad() {
  if (node_) node_->grad.clear();
}

Tensor Tensor::detach() const {
  if (!node_) return Tensor();
  return Tensor(make_leaf(node_->shape, node_->value, false));
}

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

bool grad_enabled() { return g_grad_enabled; }

GuidedReluGuard::GuidedReluGuard() : previous_(g_guided_relu) { g_guided_relu = true; }
GuidedReluGuard::~GuidedReluGuard() { g_guided_relu = previous_; }

bool guided_relu_enabled() { return g_guided_relu; }

Tensor add(const Tensor& a, const Tensor& b) { return elementwise(a, b, Combine::kAdd, "add"); }
Tensor sub(const Tensor& a, const Tensor& b) { return elementwise(a, b, Combine::kSub, "sub"); }
Tensor mul(const Tensor& a, const Tensor& b) { return elementwise(a, b, Combine::kMul, "mul"); }

Tensor add(const Tensor& a, double scalar) {
  std::vector<double> out(a.values());
  for (double& v : out) v += scalar;
  auto node = detail::make_op_node(a.shape(), std::move(out), {a.node()}, "add_scalar");
  if (recording(*node)) {
    auto ap = a.node();
    node->backward_fn = [ap](Node& self) {
      ap->ensure_grad();
      for (size_t i = 0; i < self.grad.size(); ++i) ap->grad[i] += self.grad[i];
    };
  }
  return Tensor(node);
}

Tensor mul(const Tensor& a, double scalar) {
  std::vector<double> out(a.values());
  for (double& v : out) v *= scalar;
  auto node = detail::make_op_node(a.shape(), std::move(out), {a.node()}, "scale");
  if (recording(*node)) {
    auto ap = a.node();
    node->backward_fn = [ap, scalar](Node& self) {
      ap->ensure_grad();
      for (size_t i = 0; i < self.grad.size(); ++i) ap->grad[i] += scalar * self.grad[i];
    };
  }
  return Tensor(node);
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2) {
    throw DimensionError("matmul: needs rank-2 operands, got " + shape_str(a.shape()) + " x " +
                         shape_str(b.shape()));
  }
  const int m = a.dim(0), k = a.dim(1), k2 = b.dim(0), n = b.dim(1);
  if (k != k2) {
    throw DimensionError("matmul: inner dimensions disagree: " + shape_str(a.shape()) + " x " +
                         shape_str(b.shape()));
  }
  const double* av = a.values().data();
  const double* bv = b.values().data();
  std::vector<double> out(static_cast<size_t>(m) * n, 0.0);
  const int64_t work = static_cast<int64_t>(m) * n * k;
  auto rows = [&](int64_t r0, int64_t r1) {
    for (int64_t i = r0; i < r1; ++i) {
      double* crow = out.data() + i * n;
      const double* arow = av + i * k;
      for (int t = 0; t < k; ++t) {
        const double s = arow[t];
        const double* brow = bv + static_cast<int64_t>(t) * n;
        for (int j = 0; j < n; ++j) crow[j] += s * brow[j];
      }
    }
  };
  if (work > (1 << 16)) {
    parallel_for_ranges(m, rows);
  } else {
    rows(0, m);
  }

  auto node = detail::make_op_node({m, n}, std::move(out), {a.node(), b.node()}, "matmul");
  check_finite(Tensor(node), "matmul");
  if (recording(*node)) {
    auto ap = a.node();
    auto bp = b.node();
    node->backward_fn = [ap, bp, m, k, n](Node& self) {
      const double* g = self.grad.data();
      if (ap->requires_grad) {
        // dA = dC * B^T; materialize B^T so the inner loop is contiguous.
        std::vector<double> bt(static_cast<size_t>(n) * k);
        const double* bv = bp->value.data();
        for (int t = 0; t < k; ++t) {
          for (int j = 0; j < n; ++j) bt[static_cast<int64_t>(j) * k + t] = bv[static_cast<int64_t>(t) * n + j];
        }
        ap->ensure_grad();
        double* da = ap->grad.data();
        parallel_for_ranges(m, [&](int64_t r0, int64_t r1) {
          for (int64_t i = r0; i < r1; ++i) {
            const double* grow = g + i * n;
            double* darow = da + i * k;
            for (int j = 0; j < n; ++j) {
              const double s = grow[j];
              const double* btrow = bt.data() + static_cast<int64_t>(j) * k;
              for (int t = 0; t < k; ++t) darow[t] += s * btrow[t];
            }
          }
        });
      }
      if (bp->requires_grad) {
        // dB = A^T * dC
        bp->ensure_grad();
        double* db = bp->grad.data();
        const double* av = ap->value.data();
        parallel_for_ranges(k, [&](int64_t t0, int64_t t1) {
          for (int64_t t = t0; t < t1; ++t) {
            double* dbrow = db + t * n;
            for (int i = 0; i < m; ++i) {
              const double s = av[static_cast<int64_t>(i) * k + t];
              const double* grow = g + static_cast<int64_t>(i) * n;
              for (int j = 0; j < n; ++j) dbrow[j] += s * grow[j];
            }
          }
        });
      }
    };
  }
  return Tensor(node);
}

Tensor transpose(const Tensor& a) {
  if (a.rank() != 2) throw DimensionError("transpose: needs rank 2, got " + shape_str(a.shape()));
  const int m = a.dim(0), n = a.dim(1);
  const auto& av = a.values();
  std::vector<double> out(av.size());
  for (int i = 0; i < m; ++i) {
    for (int j = 0; j < n; ++j) out[static_cast<int64_t>(j) * m + i] = av[static_cast<int64_t>(i) * n + j];
  }
  auto node = detail::make_op_node({n, m}, std::move(out), {a.node()}, "transpose");
  if (recording(*node)) {
    auto ap = a.node();
    node->backward_fn = [ap, m, n](Node& self) {
      ap->ensure_grad();
      for (int i = 0; i < m; ++i) {
        for (int j = 0; j < n; ++j) {
          ap->grad[static_cast<int64_t>(i) * n + j] += self.grad[static_cast<int64_t>(j) * m + i];
        }
      }
    };
  }
  return Tensor(node);
}

Tensor reshape(const Tensor& t, Shape new_shape) {
  if (shape_volume(new_shape) != t.size()) {
    throw DimensionError("reshape: " + shape_str(t.shape()) + " -> " + shape_str(new_shape) +
                         " changes element count");
  }
  auto node = detail::make_op_node(new_shape, t.values(), {t.node()}, "reshape");
  if (recording(*node)) {
    auto tp = t.node();
    node->backward_fn = [tp](Node& self) {
      tp->ensure_grad();
      for (size_t i = 0; i < self.grad.size(); ++i) tp->grad[i] += self.grad[i];
    };
  }
  return Tensor(node);
}

Tensor concat(const std::vector<Tensor>& parts, int axis) {
  if (parts.empty()) throw ContractError("concat: no inputs");
  const Shape& first = parts[0].shape();
  if (axis < 0 || axis >= static_cast<int>(first.size())) {
    throw DimensionError("concat: axis " + std::to_string(axis) + " out of range for " +
                         shape_str(first));
  }
  Shape out_shape = first;
  out_shape[axis] = 0;
  for (const Tensor& p : parts) {
    const Shape& s = p.shape();
    if (s.size() != first.size()) {
      throw DimensionError("concat: rank mismatch: " + shape_str(first) + " vs " + shape_str(s));
    }
    for (size_t d = 0; d < s.size(); ++d) {
      if (static_cast<int>(d) != axis && s[d] != first[d]) {
        throw DimensionError("concat: non-concat axis differs: " + shape_str(first) + " vs " +
                             shape_str(s));
      }
    }
    out_shape[axis] += s[axis];
  }

  int64_t outer = 1, inner = 1;
  for (int d = 0; d < axis; ++d) outer *= first[d];
  for (size_t d = axis + 1; d < first.size(); ++d) inner *= first[d];

  std::vector<double> out(shape_volume(out_shape));
  const int64_t out_row = static_cast<int64_t>(out_shape[axis]) * inner;
  int64_t axis_off = 0;
  for (const Tensor& p : parts) {
    const int64_t row = static_cast<int64_t>(p.shape()[axis]) * inner;
    const auto& pv = p.values();
    for (int64_t o = 0; o < outer; ++o) {
      std::copy(pv.begin() + o * row, pv.begin() + (o + 1) * row,
                out.begin() + o * out_row + axis_off);
    }
    axis_off += row;
  }

  std::vector<std::shared_ptr<Node>> parent_nodes;
  parent_nodes.reserve(parts.size());
  for (const Tensor& p : parts) parent_nodes.push_back(p.node());
  auto node = detail::make_op_node(out_shape, std::move(out), parent_nodes, "concat");
  if (recording(*node)) {
    node->backward_fn = [parent_nodes, outer, inner, out_row](Node& self) {
      int64_t axis_off = 0;
      for (const auto& pp : parent_nodes) {
        const int64_t row = static_cast<int64_t>(pp->value.size()) / (outer ? outer : 1);
        if (pp->requires_grad) {
          pp->ensure_grad();
          for (int64_t o = 0; o < outer; ++o) {
            const double* src = self.grad.data() + o * out_row + axis_off;
            double* dst = pp->grad.data() + o * row;
            for (int64_t i = 0; i < row; ++i) dst[i] += src[i];
          }
        }
        axis_off += row;
      }
    };
  }
  return Tensor(node);
}

Tensor select(const Tensor& t, int index) {
  if (t.rank() < 1) throw DimensionError("select: needs rank >= 1");
  const int n0 = t.dim(0);
  if (index < 0 || index >= n0) {
    throw DimensionError("select: index " + std::to_string(index) + " out of range for " +
                         shape_str(t.shape()));
  }
  Shape out_shape(t.shape().begin() + 1, t.shape().end());
  if (out_shape.empty()) out_shape = {1};
  const int64_t stride = t.size() / n0;
  std::vector<double> out(t.values().begin() + index * stride,
                          t.values().begin() + (index + 1) * stride);
  auto node = detail::make_op_node(out_shape, std::move(out), {t.node()}, "select");
  if (recording(*node)) {
    auto tp = t.node();
    node->backward_fn = [tp, index, stride](Node& self) {
      tp->ensure_grad();
      double* dst = tp->grad.data() + index * stride;
      for (int64_t i = 0; i < stride; ++i) dst[i] += self.grad[i];
    };
  }
  return Tensor(node);
}

Tensor stack(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ContractError("stack: no inputs");
  const Shape& s = parts[0].shape();
  for (const Tensor& p : parts) require_same_shape(parts[0], p, "stack");
  Shape out_shape;
  out_shape.push_back(static_cast<int>(parts.size()));
  out_shape.insert(out_shape.end(), s.begin(), s.end());
  const int64_t stride = parts[0].size();
  std::vector<double> out;
  out.reserve(stride * parts.size());
  for (const Tensor& p : parts) out.insert(out.end(), p.values().begin(), p.values().end());

  std::vector<std::shared_ptr<Node>> parent_nodes;
  parent_nodes.reserve(parts.size());
  for (const Tensor& p : parts) parent_nodes.push_back(p.node());
  auto node = detail::make_op_node(out_shape, std::move(out), parent_nodes, "stack");
  if (recording(*node)) {
    node->backward_fn = [parent_nodes, stride](Node& self) {
      for (size_t p = 0; p < parent_nodes.size(); ++p) {
        const auto& pp = parent_nodes[p];
        if (!pp->requires_grad) continue;
        pp->ensure_grad();
        const double* src = self.grad.data() + p * stride;
        for (int64_t i = 0; i < stride; ++i) pp->grad[i] += src[i];
      }
    };
  }
  return Tensor(node);
}

Tensor relu(const Tensor& x) {
  std::vector<double> out(x.values());
  for (double& v : out) v = v > 0.0 ? v : 0.0;
  auto node = detail::make_op_node(x.shape(), std::move(out), {x.node()}, "relu");
  if (recording(*node)) {
    auto xp = x.node();
    node->backward_fn = [xp](Node& self) {
      xp->ensure_grad();
      const bool guided = g_guided_relu;
      for (size_t i = 0; i < self.grad.size(); ++i) {
        if (xp->value[i] > 0.0) {
          const double g = self.grad[i];
          if (!guided || g > 0.0) xp->grad[i] += g;
        }
      }
    };
  }
  return Tensor(node);
}

Tensor sigmoid(const Tensor& x) {
  std::vector<double> out(x.values());
  for (double& v : out) v = 1.0 / (1.0 + std::exp(-v));
  auto node = detail::make_op_node(x.shape(), std::move(out), {x.node()}, "sigmoid");
  if (recording(*node)) {
    auto xp = x.node();
    node->backward_fn = [xp](Node& self) {
      xp->ensure_grad();
      for (size_t i = 0; i < self.grad.size(); ++i) {
        const double y = self.value[i];
        xp->grad[i] += self.grad[i] * y * (1.0 - y);
      }
    };
  }
  return Tensor(node);
}

Tensor softmax(const Tensor& x, int axis) {
  const auto& s = x.shape();
  if (axis < 0 || axis >= static_cast<int>(s.size())) {
    throw DimensionError("softmax: axis " + std::to_string(axis) + " out of range for " +
                         shape_str(s));
  }
  int64_t outer = 1, inner = 1;
  const int len = s[axis];
  for (int d = 0; d < axis; ++d) outer *= s[d];
  for (size_t d = axis + 1; d < s.size(); ++d) inner *= s[d];

  const auto& xv = x.values();
  std::vector<double> out(xv.size());
  for (int64_t o = 0; o < outer; ++o) {
    for (int64_t in = 0; in < inner; ++in) {
      const int64_t base = o * len * inner + in;
      double mx = xv[base];
      for (int j = 1; j < len; ++j) mx = std::max(mx, xv[base + j * inner]);
      double denom = 0.0;
      for (int j = 0; j < len; ++j) {
        const double e = std::exp(xv[base + j * inner] - mx);
        out[base + j * inner] = e;
        denom += e;
      }
      for (int j = 0; j < len; ++j) out[base + j * inner] /= denom;
    }
  }
  auto node = detail::make_op_node(s, std::move(out), {x.node()}, "softmax");
  check_finite(Tensor(node), "softmax");
  if (recording(*node)) {
    auto xp = x.node();
    node->backward_fn = [xp, outer, inner, len](Node& self) {
      xp->ensure_grad();
      for (int64_t o = 0; o < outer; ++o) {
        for (int64_t in = 0; in < inner; ++in) {
          const int64_t base = o * len * inner + in;
          double dot = 0.0;
          for (int j = 0; j < len; ++j) dot += self.value[base + j * inner] * self.grad[base + j * inner];
          for (int j = 0; j < len; ++j) {
            const int64_t idx = base + j * inner;
            xp->grad[idx] += self.value[idx] * (self.grad[idx] - dot);
          }
        }
      }
    };
  }
  return Tensor(node);
}

Tensor sum(const Tensor& x) {
  double total = 0.0;
  for (double v : x.values()) total += v;
  auto node = detail::make_op_node({1}, {total}, {x.node()}, "sum");
  if (recording(*node)) {
    auto xp = x.node();
    node->backward_fn = [xp](Node& self) {
      xp->ensure_grad();
      const double g = self.grad[0];
      for (double& d : xp->grad) d += g;
    };
  }
  return Tensor(node);
}

void backward(const Tensor& loss) {
  if (!loss.defined()) throw ContractError("backward: undefined loss");
  if (loss.size() != 1) {
    throw ContractError("backward: loss must be scalar, got " + shape_str(loss.shape()));
  }
  Node* root = loss.node().get();
  if (!root->requires_grad) return;  // nothing reachable wants gradients

  // Reverse topological order by iterative post-order DFS over parents.
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, size_t>> dfs;
  dfs.emplace_back(root, 0);
  visited.insert(root);
  while (!dfs.empty()) {
    auto& [n, next] = dfs.back();
    if (next < n->parents.size()) {
      Node* p = n->parents[next++].get();
      if (p->requires_grad && !visited.count(p)) {
        visited.insert(p);
        dfs.emplace_back(p, 0);
      }
    } else {
      order.push_back(n);
      dfs.pop_back();
    }
  }

  // Interior gradients restart from zero each call; leaf gradients accumulate.
  for (Node* n : order) {
    if (!n->is_leaf) n->grad.assign(n->value.size(), 0.0);
  }
  root->ensure_grad();
  root->grad[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward_fn) n->backward_fn(*n);
  }
}

double grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x, double eps) {
  Tensor probe = Tensor::from_data(x.shape(), x.values(), true);
  Tensor y = f(probe);
  if (y.size() != 1) throw ContractError("grad_check: f must return a scalar");
  if (!std::isfinite(y.item())) throw NumericError("grad_check: f(x) is not finite");
  backward(y);
  const std::vector<double> g_ad = probe.grad();

  NoGradGuard no_grad;
  std::vector<double> base = x.values();
  double worst = 0.0;
  for (size_t i = 0; i < base.size(); ++i) {
    const double keep = base[i];
    base[i] = keep + eps;
    const double up = f(Tensor::from_data(x.shape(), base, false)).item();
    base[i] = keep - eps;
    const double down = f(Tensor::from_data(x.shape(), base, false)).item();
    base[i] = keep;
    if (!std::isfinite(up) || !std::isfinite(down)) {
      throw NumericError("grad_check: perturbed evaluation is not finite");
    }
    const double g_fd = (up - down) / (2.0 * eps);
    const double denom = std::max({std::fabs(g_ad[i]), std::fabs(g_fd), 1e-8});
    worst = std::max(worst, std::fabs(g_ad[i] - g_fd) / denom);
  }
  return worst;
}

void check_finite(const Tensor& t, const char* what) {
  for (double v : t.values()) {
    if (!std::isfinite(v)) {
      throw NumericError(std::string(what) + ": non-finite value produced");
    }
  }
}

}  // namespace attenlab
