#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace attenlab {

// Dense tensors hold IEEE binary64 values in row-major order. Maps use the
// (height, width, channel) axis order, batches prepend an axis. Tensors are
// immutable through the op interface; every op returns a fresh tensor and
// records enough structure to replay reverse-mode gradients.
using Shape = std::vector<int>;

int64_t shape_volume(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // sized lazily; empty means "no grad yet"
  bool requires_grad = false;
  bool is_leaf = true;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;  // consumes this->grad
  const char* op = "leaf";

  void ensure_grad() {
    if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
  }
};

// Builds an op-result node; parents and a backward hook are retained only
// when recording is on and some parent wants gradients. Callers attach
// backward_fn when the returned node is non-leaf.
std::shared_ptr<Node> make_op_node(Shape shape, std::vector<double> values,
                                   std::vector<std::shared_ptr<Node>> parents, const char* op);

}  // namespace detail

class Tensor {
public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from_data(Shape shape, std::vector<double> values, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  int rank() const { return static_cast<int>(shape().size()); }
  int dim(int axis) const;
  int64_t size() const;

  const std::vector<double>& values() const;
  double item() const;  // scalar tensors only
  double at(const std::vector<int>& index) const;

  // Direct mutable access to the underlying storage. Reserved for parameter
  // updates and buffer filling; bypasses autodiff on purpose.
  std::vector<double>& values_mut();

  bool requires_grad() const;
  bool has_grad() const;
  const std::vector<double>& grad() const;
  void zero_grad();
  Tensor detach() const;

  const void* id() const { return node_.get(); }

  // internal
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
  const std::shared_ptr<detail::Node>& node() const { return node_; }

private:
  std::shared_ptr<detail::Node> node_;
};

// Disables graph recording in the current thread while alive. Forward math is
// unchanged; outputs come back detached.
class NoGradGuard {
public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
  bool previous_;
};

bool grad_enabled();

// While alive, relu backward additionally drops negative incoming gradients
// (the saliency backward rule). Thread-local, like NoGradGuard.
class GuidedReluGuard {
public:
  GuidedReluGuard();
  ~GuidedReluGuard();
  GuidedReluGuard(const GuidedReluGuard&) = delete;
  GuidedReluGuard& operator=(const GuidedReluGuard&) = delete;

private:
  bool previous_;
};

bool guided_relu_enabled();

// Elementwise; b must match a's shape exactly, or be a rank-1 tensor matching
// a's trailing axis (broadcast over all leading axes).
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor add(const Tensor& a, double scalar);
Tensor mul(const Tensor& a, double scalar);

Tensor matmul(const Tensor& a, const Tensor& b);  // (m,k) x (k,n) -> (m,n)
Tensor transpose(const Tensor& a);                // rank 2 only

Tensor reshape(const Tensor& t, Shape new_shape);
Tensor concat(const std::vector<Tensor>& parts, int axis);
Tensor select(const Tensor& t, int index);        // index along axis 0
Tensor stack(const std::vector<Tensor>& parts);   // new leading axis

Tensor relu(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor softmax(const Tensor& x, int axis);
Tensor sum(const Tensor& x);  // -> scalar

// Runs reverse-mode accumulation from a scalar loss. Gradients of leaves
// accumulate across calls until zero_grad(); gradients of interior nodes are
// reset at the start of each call and hold d(loss)/d(node) afterwards.
void backward(const Tensor& loss);

// Central-difference gradient check of a scalar-valued function at x.
// Returns max over elements of |g_ad - g_fd| / max(|g_ad|, |g_fd|, 1e-8).
double grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x,
                  double eps = 1e-5);

void check_finite(const Tensor& t, const char* what);

}  // namespace attenlab
