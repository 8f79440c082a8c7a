// Dense 64-bit tensors with a reverse-mode tape.
//
// A Tensor is a cheap handle onto a shared node. Operations record onto the
// Tape that is active on the calling thread; without an active tape nothing is
// recorded and the ops are plain value computations (used for evaluation).
#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace jepkd {

using Shape = std::vector<std::size_t>;

std::string shape_str(const Shape& shape);
std::size_t shape_numel(const Shape& shape);

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class NumericError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

namespace autograd {

struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;
  bool requires_grad = false;
  bool recorded = false;
  std::vector<std::shared_ptr<Node>> inputs;
  // Reads this node's grad and accumulates into inputs that require grad.
  std::function<void(Node&)> backward;
};

}  // namespace autograd

class Tensor {
 public:
  Tensor();
  Tensor(Shape shape, std::vector<double> values, bool grad_enabled = false);

  static Tensor zeros(Shape shape, bool grad_enabled = false);
  static Tensor filled(Shape shape, double value);
  static Tensor scalar(double value);

  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t numel() const { return node_->value.size(); }
  std::size_t dim(std::size_t axis) const;
  // Convenience for the 2-d case; rows() of a 1-d tensor is 1.
  std::size_t rows() const;
  std::size_t cols() const;

  std::span<const double> values() const { return node_->value; }
  // In-place access for optimizers, checkpoint loading and finite differences.
  std::span<double> mutable_values() { return node_->value; }
  double item() const;
  double at(std::size_t i) const { return node_->value[i]; }
  double at(std::size_t r, std::size_t c) const { return node_->value[r * cols() + c]; }

  bool grad_enabled() const { return node_->requires_grad; }
  // Gradient left by the last backward sweep; empty if none was computed.
  std::span<const double> grad() const { return node_->grad; }

  // Same values, no gradient participation.
  Tensor detach() const;

  const std::shared_ptr<autograd::Node>& node() const { return node_; }
  explicit Tensor(std::shared_ptr<autograd::Node> node) : node_(std::move(node)) {}

 private:
  std::shared_ptr<autograd::Node> node_;
};

// Ordered record of differentiable operations executed while it is active.
// Construction makes the tape active on this thread; destruction restores the
// previously active tape.
class Tape {
 public:
  Tape();
  ~Tape();
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  std::size_t size() const { return nodes_.size(); }

  // Populates grad() of every grad-enabled tensor reachable from `loss`.
  void backward(const Tensor& loss);

  static Tape* active();
  void record(const std::shared_ptr<autograd::Node>& node);

 private:
  std::vector<std::shared_ptr<autograd::Node>> nodes_;
  Tape* previous_ = nullptr;
};

// Suspends recording on this thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  Tape* saved_;
};

namespace autograd {

// Builds an op result and, when a tape is active and any input requires grad,
// records it with the given backward rule.
Tensor make_result(Shape shape, std::vector<double> values, std::vector<Tensor> inputs,
                   std::function<void(Node&)> backward);

void check_finite(const Tensor& t, const char* op);

}  // namespace autograd

// ---------------------------------------------------------------------------
// Forward ops. Broadcasting is limited to a rank-0 operand against any tensor.

Tensor matmul(const Tensor& a, const Tensor& b);        // (m,k)x(k,n) -> (m,n)
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);
Tensor mul(const Tensor& a, const Tensor& b);           // elementwise
Tensor relu(const Tensor& a);
Tensor tanh(const Tensor& a);
Tensor abs(const Tensor& a);
Tensor square(const Tensor& a);
Tensor softmax_last(const Tensor& a);
Tensor log_softmax_last(const Tensor& a);
// gain and bias have extent equal to the last dimension of x.
Tensor layer_norm_last(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps = 1e-5);
// x: (T, c_in); weight: (kernel * c_in, c_out) laid out [k][c_in][c_out];
// bias: (c_out). Zero "same" padding, odd kernel.
Tensor conv1d_same(const Tensor& x, const Tensor& weight, const Tensor& bias, std::size_t kernel);
// Single-channel 2-d convolution over (H, W) with an odd (kh, kw) kernel and
// rank-0 bias, zero "same" padding.
Tensor conv2d_same(const Tensor& x, const Tensor& weight, const Tensor& bias);
Tensor concat_last(const Tensor& a, const Tensor& b);
// Half-open range [begin, end) along `axis` of a rank-1 or rank-2 tensor.
Tensor slice(const Tensor& a, std::size_t axis, std::size_t begin, std::size_t end);
Tensor transpose(const Tensor& a);
Tensor reshape(const Tensor& a, Shape shape);
Tensor sum(const Tensor& a);   // -> rank 0
Tensor mean(const Tensor& a);  // -> rank 0

enum class OpKind {
  matmul,
  add,
  sub,
  scale,
  mul,
  relu,
  tanh,
  abs,
  square,
  softmax_last,
  log_softmax_last,
  layer_norm_last,
  conv1d_same,
  conv2d_same,
  concat_last,
  slice,
  transpose,
  reshape,
  sum,
  mean,
};

std::string_view op_name(OpKind kind);
std::span<const OpKind> all_op_kinds();

// ---------------------------------------------------------------------------

enum class Group { encoder, generator, discriminator, decoder };

std::string_view group_name(Group g);
std::optional<Group> group_from_name(std::string_view name);
inline constexpr Group kAllGroups[] = {Group::encoder, Group::generator, Group::discriminator,
                                       Group::decoder};

// Named, uniquely registered parameters. The group of a parameter is the
// dotted prefix of its name ("decoder.layer0.ff.w1" belongs to decoder).
class ParameterStore {
 public:
  Tensor add(const std::string& name, Shape shape, std::vector<double> values, bool grad_enabled = true);

  bool contains(const std::string& name) const { return params_.count(name) != 0; }
  const Tensor& at(const std::string& name) const;
  const std::map<std::string, Tensor>& entries() const { return params_; }
  std::size_t size() const { return params_.size(); }
  std::size_t scalar_count() const;
  std::size_t scalar_count(Group g) const;

  void set_trainable(Group g, bool trainable);
  bool trainable(Group g) const;
  bool trainable(const std::string& name) const;

  // FNV-1a over the raw bytes of every parameter of the group, in name order.
  std::uint64_t group_hash(Group g) const;

 private:
  std::map<std::string, Tensor> params_;
  std::map<Group, bool> trainable_ = {{Group::encoder, true},
                                      {Group::generator, true},
                                      {Group::discriminator, true},
                                      {Group::decoder, true}};
};

using GradientMap = std::map<std::string, Tensor>;

// Runs a backward sweep on the active tape and collects the gradient of every
// parameter in the store. Parameters the loss does not reach get zeros.
GradientMap backward(const Tensor& loss, const ParameterStore& params);

// Max over coordinates of |analytic - central difference| / max(1, |analytic|).
// `leaf` is perturbed in place and restored. A non-finite evaluation yields +inf.
double finite_diff_check(const std::function<Tensor()>& f, Tensor& leaf, double step = 1e-5);
// Convenience form where x is the independent variable.
double finite_diff_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x,
                         double step = 1e-5);

}  // namespace jepkd
