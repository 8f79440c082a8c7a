#include "jepkd/tensor.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstring>
#include <limits>
#include <sstream>

namespace jepkd {

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ')';
  return os.str();
}

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto e : shape) n *= e;
  return n;
}

namespace {

thread_local Tape* g_active_tape = nullptr;

void check_shape(const Shape& shape) {
  for (auto e : shape) {
    if (e == 0) throw ShapeError("tensor extents must be positive, got " + shape_str(shape));
  }
}

[[noreturn]] void shape_fail(const char* op, const std::string& detail) {
  throw ShapeError(std::string(op) + ": " + detail);
}

void require_rank(const Tensor& t, std::size_t rank, const char* op) {
  if (t.rank() != rank) {
    shape_fail(op, "expected rank " + std::to_string(rank) + ", got " + shape_str(t.shape()));
  }
}

using autograd::Node;

// Gradient buffer of an input, or nullptr if it does not take gradients.
std::vector<double>* grad_of(Node& self, std::size_t i) {
  Node& in = *self.inputs[i];
  return in.requires_grad ? &in.grad : nullptr;
}

}  // namespace

// ---------------------------------------------------------------------------

Tensor::Tensor() : node_(std::make_shared<autograd::Node>()) { node_->value = {0.0}; }

Tensor::Tensor(Shape shape, std::vector<double> values, bool grad_enabled)
    : node_(std::make_shared<autograd::Node>()) {
  check_shape(shape);
  if (shape_numel(shape) != values.size()) {
    throw ShapeError("value count " + std::to_string(values.size()) + " does not match shape " +
                     shape_str(shape));
  }
  node_->shape = std::move(shape);
  node_->value = std::move(values);
  node_->requires_grad = grad_enabled;
}

Tensor Tensor::zeros(Shape shape, bool grad_enabled) {
  auto n = shape_numel(shape);
  return Tensor(std::move(shape), std::vector<double>(n, 0.0), grad_enabled);
}

Tensor Tensor::filled(Shape shape, double value) {
  auto n = shape_numel(shape);
  return Tensor(std::move(shape), std::vector<double>(n, value));
}

Tensor Tensor::scalar(double value) { return Tensor({}, {value}); }

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= rank()) throw ShapeError("axis " + std::to_string(axis) + " out of range for " + shape_str(shape()));
  return node_->shape[axis];
}

std::size_t Tensor::rows() const { return rank() == 2 ? node_->shape[0] : 1; }
std::size_t Tensor::cols() const { return rank() == 0 ? 1 : node_->shape.back(); }

double Tensor::item() const {
  if (numel() != 1) throw ShapeError("item() on tensor of shape " + shape_str(shape()));
  return node_->value[0];
}

Tensor Tensor::detach() const { return Tensor(node_->shape, node_->value); }

// ---------------------------------------------------------------------------

Tape::Tape() : previous_(g_active_tape) { g_active_tape = this; }
Tape::~Tape() { g_active_tape = previous_; }
Tape* Tape::active() { return g_active_tape; }

void Tape::record(const std::shared_ptr<autograd::Node>& node) { nodes_.push_back(node); }

void Tape::backward(const Tensor& loss) {
  if (loss.numel() != 1) {
    throw ShapeError("backward: loss must be a scalar, got shape " + shape_str(loss.shape()));
  }
  for (auto& n : nodes_) {
    n->grad.assign(n->value.size(), 0.0);
    for (auto& in : n->inputs) {
      if (in->requires_grad && !in->recorded) in->grad.assign(in->value.size(), 0.0);
    }
  }
  auto& root = *loss.node();
  if (!root.requires_grad) return;
  root.grad.assign(1, 1.0);
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    if ((*it)->backward) (*it)->backward(**it);
  }
}

NoGradGuard::NoGradGuard() : saved_(g_active_tape) { g_active_tape = nullptr; }
NoGradGuard::~NoGradGuard() { g_active_tape = saved_; }

namespace autograd {

Tensor make_result(Shape shape, std::vector<double> values, std::vector<Tensor> inputs,
                   std::function<void(Node&)> backward) {
  Tensor out(std::move(shape), std::move(values));
  Tape* tape = Tape::active();
  if (!tape) return out;
  bool any = std::any_of(inputs.begin(), inputs.end(),
                         [](const Tensor& t) { return t.grad_enabled(); });
  if (!any) return out;
  auto& node = *out.node();
  node.requires_grad = true;
  node.recorded = true;
  node.inputs.reserve(inputs.size());
  for (auto& t : inputs) node.inputs.push_back(t.node());
  node.backward = std::move(backward);
  tape->record(out.node());
  return out;
}

void check_finite(const Tensor& t, const char* op) {
  for (double v : t.values()) {
    if (!std::isfinite(v)) throw NumericError(std::string(op) + ": non-finite input");
  }
}

}  // namespace autograd

using autograd::check_finite;
using autograd::make_result;

// ---------------------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank(a, 2, "matmul");
  require_rank(b, 2, "matmul");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) {
    shape_fail("matmul", "inner extents differ: " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  }
  check_finite(a, "matmul");
  check_finite(b, "matmul");
  std::vector<double> out(m * n, 0.0);
  auto av = a.values();
  auto bv = b.values();
  for (std::size_t i = 0; i < m; ++i) {
    double* row = &out[i * n];
    for (std::size_t p = 0; p < k; ++p) {
      const double s = av[i * k + p];
      if (s == 0.0) continue;
      const double* brow = &bv[p * n];
      for (std::size_t j = 0; j < n; ++j) row[j] += s * brow[j];
    }
  }
  return make_result({m, n}, std::move(out), {a, b}, [m, k, n](Node& self) {
    const auto& g = self.grad;
    const auto& av = self.inputs[0]->value;
    const auto& bv = self.inputs[1]->value;
    if (auto* ga = grad_of(self, 0)) {
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t p = 0; p < k; ++p) {
          double s = 0.0;
          const double* grow = &g[i * n];
          const double* brow = &bv[p * n];
          for (std::size_t j = 0; j < n; ++j) s += grow[j] * brow[j];
          (*ga)[i * k + p] += s;
        }
      }
    }
    if (auto* gb = grad_of(self, 1)) {
      for (std::size_t i = 0; i < m; ++i) {
        const double* grow = &g[i * n];
        for (std::size_t p = 0; p < k; ++p) {
          const double s = av[i * k + p];
          if (s == 0.0) continue;
          double* gbrow = &(*gb)[p * n];
          for (std::size_t j = 0; j < n; ++j) gbrow[j] += s * grow[j];
        }
      }
    }
  });
}

namespace {

enum class Binary { add, sub, mul };

Tensor binary(const Tensor& a, const Tensor& b, Binary kind, const char* op) {
  const bool a_scalar = a.rank() == 0 && b.rank() != 0;
  const bool b_scalar = b.rank() == 0 && a.rank() != 0;
  if (!a_scalar && !b_scalar && a.shape() != b.shape()) {
    shape_fail(op, "shapes differ: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
  check_finite(a, op);
  check_finite(b, op);
  const Shape& shape = a_scalar ? b.shape() : a.shape();
  const std::size_t n = shape_numel(shape);
  auto av = a.values();
  auto bv = b.values();
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double x = av[a_scalar ? 0 : i];
    const double y = bv[b_scalar ? 0 : i];
    switch (kind) {
      case Binary::add: out[i] = x + y; break;
      case Binary::sub: out[i] = x - y; break;
      case Binary::mul: out[i] = x * y; break;
    }
  }
  return make_result(shape, std::move(out), {a, b}, [n, a_scalar, b_scalar, kind](Node& self) {
    const auto& g = self.grad;
    const auto& av = self.inputs[0]->value;
    const auto& bv = self.inputs[1]->value;
    if (auto* ga = grad_of(self, 0)) {
      for (std::size_t i = 0; i < n; ++i) {
        double d = g[i];
        if (kind == Binary::mul) d *= bv[b_scalar ? 0 : i];
        (*ga)[a_scalar ? 0 : i] += d;
      }
    }
    if (auto* gb = grad_of(self, 1)) {
      for (std::size_t i = 0; i < n; ++i) {
        double d = g[i];
        if (kind == Binary::sub) d = -d;
        if (kind == Binary::mul) d *= av[a_scalar ? 0 : i];
        (*gb)[b_scalar ? 0 : i] += d;
      }
    }
  });
}

// Elementwise unary op with derivative expressed from (input, output).
template <typename F, typename D>
Tensor unary(const Tensor& a, const char* op, F f, D df) {
  check_finite(a, op);
  auto av = a.values();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = f(av[i]);
  return make_result(a.shape(), std::move(out), {a}, [df](Node& self) {
    auto* ga = grad_of(self, 0);
    if (!ga) return;
    const auto& x = self.inputs[0]->value;
    for (std::size_t i = 0; i < x.size(); ++i) (*ga)[i] += self.grad[i] * df(x[i], self.value[i]);
  });
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) { return binary(a, b, Binary::add, "add"); }
Tensor sub(const Tensor& a, const Tensor& b) { return binary(a, b, Binary::sub, "sub"); }
Tensor mul(const Tensor& a, const Tensor& b) { return binary(a, b, Binary::mul, "mul"); }

Tensor scale(const Tensor& a, double factor) {
  if (!std::isfinite(factor)) throw NumericError("scale: non-finite factor");
  return unary(
      a, "scale", [factor](double x) { return x * factor; },
      [factor](double, double) { return factor; });
}

Tensor relu(const Tensor& a) {
  return unary(
      a, "relu", [](double x) { return x > 0.0 ? x : 0.0; },
      [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Tensor tanh(const Tensor& a) {
  return unary(
      a, "tanh", [](double x) { return std::tanh(x); },
      [](double, double y) { return 1.0 - y * y; });
}

Tensor abs(const Tensor& a) {
  return unary(
      a, "abs", [](double x) { return std::fabs(x); },
      [](double x, double) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); });
}

Tensor square(const Tensor& a) {
  return unary(
      a, "square", [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

namespace {

std::size_t last_extent(const Tensor& a, const char* op) {
  if (a.rank() == 0) shape_fail(op, "needs rank >= 1");
  return a.shape().back();
}

}  // namespace

Tensor softmax_last(const Tensor& a) {
  const std::size_t n = last_extent(a, "softmax_last");
  check_finite(a, "softmax_last");
  const std::size_t rows = a.numel() / n;
  auto av = a.values();
  std::vector<double> out(a.numel());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* x = &av[r * n];
    double* y = &out[r * n];
    const double mx = *std::max_element(x, x + n);
    double z = 0.0;
    for (std::size_t j = 0; j < n; ++j) z += (y[j] = std::exp(x[j] - mx));
    for (std::size_t j = 0; j < n; ++j) y[j] /= z;
  }
  return make_result(a.shape(), std::move(out), {a}, [rows, n](Node& self) {
    auto* ga = grad_of(self, 0);
    if (!ga) return;
    for (std::size_t r = 0; r < rows; ++r) {
      const double* y = &self.value[r * n];
      const double* g = &self.grad[r * n];
      double dot = 0.0;
      for (std::size_t j = 0; j < n; ++j) dot += g[j] * y[j];
      for (std::size_t j = 0; j < n; ++j) (*ga)[r * n + j] += y[j] * (g[j] - dot);
    }
  });
}

Tensor log_softmax_last(const Tensor& a) {
  const std::size_t n = last_extent(a, "log_softmax_last");
  check_finite(a, "log_softmax_last");
  const std::size_t rows = a.numel() / n;
  auto av = a.values();
  std::vector<double> out(a.numel());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* x = &av[r * n];
    const double mx = *std::max_element(x, x + n);
    double z = 0.0;
    for (std::size_t j = 0; j < n; ++j) z += std::exp(x[j] - mx);
    const double lse = mx + std::log(z);
    for (std::size_t j = 0; j < n; ++j) out[r * n + j] = x[j] - lse;
  }
  return make_result(a.shape(), std::move(out), {a}, [rows, n](Node& self) {
    auto* ga = grad_of(self, 0);
    if (!ga) return;
    for (std::size_t r = 0; r < rows; ++r) {
      const double* y = &self.value[r * n];
      const double* g = &self.grad[r * n];
      double gs = 0.0;
      for (std::size_t j = 0; j < n; ++j) gs += g[j];
      for (std::size_t j = 0; j < n; ++j) (*ga)[r * n + j] += g[j] - std::exp(y[j]) * gs;
    }
  });
}

Tensor layer_norm_last(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
  const std::size_t n = last_extent(x, "layer_norm_last");
  if (gain.shape() != Shape{n} || bias.shape() != Shape{n}) {
    shape_fail("layer_norm_last", "gain/bias must be (" + std::to_string(n) + "), got " +
                                      shape_str(gain.shape()) + " and " + shape_str(bias.shape()));
  }
  check_finite(x, "layer_norm_last");
  check_finite(gain, "layer_norm_last");
  check_finite(bias, "layer_norm_last");
  const std::size_t rows = x.numel() / n;
  auto xv = x.values();
  auto gv = gain.values();
  auto bv = bias.values();
  auto xhat = std::make_shared<std::vector<double>>(x.numel());
  auto inv_std = std::make_shared<std::vector<double>>(rows);
  std::vector<double> out(x.numel());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = &xv[r * n];
    double mu = 0.0;
    for (std::size_t j = 0; j < n; ++j) mu += row[j];
    mu /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t j = 0; j < n; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= static_cast<double>(n);
    const double is = 1.0 / std::sqrt(var + eps);
    (*inv_std)[r] = is;
    for (std::size_t j = 0; j < n; ++j) {
      const double h = (row[j] - mu) * is;
      (*xhat)[r * n + j] = h;
      out[r * n + j] = h * gv[j] + bv[j];
    }
  }
  return make_result(x.shape(), std::move(out), {x, gain, bias}, [rows, n, xhat, inv_std](Node& self) {
    const auto& g = self.grad;
    const auto& gv = self.inputs[1]->value;
    auto* gx = grad_of(self, 0);
    auto* gg = grad_of(self, 1);
    auto* gb = grad_of(self, 2);
    for (std::size_t r = 0; r < rows; ++r) {
      const double* h = &(*xhat)[r * n];
      const double* dy = &g[r * n];
      if (gg) for (std::size_t j = 0; j < n; ++j) (*gg)[j] += dy[j] * h[j];
      if (gb) for (std::size_t j = 0; j < n; ++j) (*gb)[j] += dy[j];
      if (!gx) continue;
      double mean_dh = 0.0, mean_dh_h = 0.0;
      for (std::size_t j = 0; j < n; ++j) {
        const double dh = dy[j] * gv[j];
        mean_dh += dh;
        mean_dh_h += dh * h[j];
      }
      mean_dh /= static_cast<double>(n);
      mean_dh_h /= static_cast<double>(n);
      const double is = (*inv_std)[r];
      for (std::size_t j = 0; j < n; ++j) {
        const double dh = dy[j] * gv[j];
        (*gx)[r * n + j] += is * (dh - mean_dh - h[j] * mean_dh_h);
      }
    }
  });
}

Tensor conv1d_same(const Tensor& x, const Tensor& weight, const Tensor& bias, std::size_t kernel) {
  require_rank(x, 2, "conv1d_same");
  require_rank(weight, 2, "conv1d_same");
  if (kernel % 2 == 0) shape_fail("conv1d_same", "kernel must be odd, got " + std::to_string(kernel));
  const std::size_t len = x.dim(0), cin = x.dim(1), cout = weight.dim(1);
  if (weight.dim(0) != kernel * cin) {
    shape_fail("conv1d_same", "weight " + shape_str(weight.shape()) + " does not match kernel " +
                                  std::to_string(kernel) + " x channels " + std::to_string(cin));
  }
  if (bias.shape() != Shape{cout}) {
    shape_fail("conv1d_same", "bias " + shape_str(bias.shape()) + " must be (" + std::to_string(cout) + ")");
  }
  check_finite(x, "conv1d_same");
  check_finite(weight, "conv1d_same");
  check_finite(bias, "conv1d_same");
  const auto half = static_cast<std::ptrdiff_t>(kernel / 2);
  auto xv = x.values();
  auto wv = weight.values();
  auto bv = bias.values();
  std::vector<double> out(len * cout);
  for (std::size_t t = 0; t < len; ++t) {
    double* y = &out[t * cout];
    for (std::size_t o = 0; o < cout; ++o) y[o] = bv[o];
    for (std::size_t k = 0; k < kernel; ++k) {
      const auto src = static_cast<std::ptrdiff_t>(t) + static_cast<std::ptrdiff_t>(k) - half;
      if (src < 0 || src >= static_cast<std::ptrdiff_t>(len)) continue;
      const double* xr = &xv[static_cast<std::size_t>(src) * cin];
      for (std::size_t c = 0; c < cin; ++c) {
        const double s = xr[c];
        if (s == 0.0) continue;
        const double* w = &wv[(k * cin + c) * cout];
        for (std::size_t o = 0; o < cout; ++o) y[o] += s * w[o];
      }
    }
  }
  return make_result({len, cout}, std::move(out), {x, weight, bias},
                     [len, cin, cout, kernel, half](Node& self) {
                       const auto& g = self.grad;
                       const auto& xv = self.inputs[0]->value;
                       const auto& wv = self.inputs[1]->value;
                       auto* gx = grad_of(self, 0);
                       auto* gw = grad_of(self, 1);
                       auto* gb = grad_of(self, 2);
                       for (std::size_t t = 0; t < len; ++t) {
                         const double* dy = &g[t * cout];
                         if (gb) for (std::size_t o = 0; o < cout; ++o) (*gb)[o] += dy[o];
                         for (std::size_t k = 0; k < kernel; ++k) {
                           const auto src = static_cast<std::ptrdiff_t>(t) +
                                            static_cast<std::ptrdiff_t>(k) - half;
                           if (src < 0 || src >= static_cast<std::ptrdiff_t>(len)) continue;
                           const auto s = static_cast<std::size_t>(src);
                           for (std::size_t c = 0; c < cin; ++c) {
                             const std::size_t wrow = (k * cin + c) * cout;
                             if (gw) {
                               const double xs = xv[s * cin + c];
                               if (xs != 0.0) {
                                 for (std::size_t o = 0; o < cout; ++o) (*gw)[wrow + o] += xs * dy[o];
                               }
                             }
                             if (gx) {
                               double acc = 0.0;
                               for (std::size_t o = 0; o < cout; ++o) acc += wv[wrow + o] * dy[o];
                               (*gx)[s * cin + c] += acc;
                             }
                           }
                         }
                       }
                     });
}

Tensor conv2d_same(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  require_rank(x, 2, "conv2d_same");
  require_rank(weight, 2, "conv2d_same");
  require_rank(bias, 0, "conv2d_same");
  const std::size_t h = x.dim(0), w = x.dim(1), kh = weight.dim(0), kw = weight.dim(1);
  if (kh % 2 == 0 || kw % 2 == 0) {
    shape_fail("conv2d_same", "kernel extents must be odd, got " + shape_str(weight.shape()));
  }
  check_finite(x, "conv2d_same");
  check_finite(weight, "conv2d_same");
  check_finite(bias, "conv2d_same");
  const auto hh = static_cast<std::ptrdiff_t>(kh / 2);
  const auto hw = static_cast<std::ptrdiff_t>(kw / 2);
  auto xv = x.values();
  auto wv = weight.values();
  const double b = bias.item();
  auto in_range = [](std::ptrdiff_t v, std::size_t ext) {
    return v >= 0 && v < static_cast<std::ptrdiff_t>(ext);
  };
  std::vector<double> out(h * w, b);
  for (std::size_t i = 0; i < h; ++i) {
    for (std::size_t p = 0; p < kh; ++p) {
      const auto si = static_cast<std::ptrdiff_t>(i + p) - hh;
      if (!in_range(si, h)) continue;
      for (std::size_t j = 0; j < w; ++j) {
        double acc = 0.0;
        for (std::size_t q = 0; q < kw; ++q) {
          const auto sj = static_cast<std::ptrdiff_t>(j + q) - hw;
          if (!in_range(sj, w)) continue;
          acc += xv[static_cast<std::size_t>(si) * w + static_cast<std::size_t>(sj)] * wv[p * kw + q];
        }
        out[i * w + j] += acc;
      }
    }
  }
  return make_result({h, w}, std::move(out), {x, weight, bias},
                     [h, w, kh, kw, hh, hw, in_range](Node& self) {
                       const auto& g = self.grad;
                       const auto& xv = self.inputs[0]->value;
                       const auto& wv = self.inputs[1]->value;
                       auto* gx = grad_of(self, 0);
                       auto* gw = grad_of(self, 1);
                       auto* gb = grad_of(self, 2);
                       for (std::size_t i = 0; i < h; ++i) {
                         for (std::size_t j = 0; j < w; ++j) {
                           const double dy = g[i * w + j];
                           if (gb) (*gb)[0] += dy;
                           for (std::size_t p = 0; p < kh; ++p) {
                             const auto si = static_cast<std::ptrdiff_t>(i + p) - hh;
                             if (!in_range(si, h)) continue;
                             for (std::size_t q = 0; q < kw; ++q) {
                               const auto sj = static_cast<std::ptrdiff_t>(j + q) - hw;
                               if (!in_range(sj, w)) continue;
                               const std::size_t src =
                                   static_cast<std::size_t>(si) * w + static_cast<std::size_t>(sj);
                               if (gw) (*gw)[p * kw + q] += dy * xv[src];
                               if (gx) (*gx)[src] += dy * wv[p * kw + q];
                             }
                           }
                         }
                       }
                     });
}

Tensor concat_last(const Tensor& a, const Tensor& b) {
  if (a.rank() == 0 || a.rank() > 2 || a.rank() != b.rank()) {
    shape_fail("concat_last", "needs two rank-1 or two rank-2 tensors, got " + shape_str(a.shape()) +
                                  " and " + shape_str(b.shape()));
  }
  if (a.rank() == 2 && a.dim(0) != b.dim(0)) {
    shape_fail("concat_last", "leading extents differ: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
  check_finite(a, "concat_last");
  check_finite(b, "concat_last");
  const std::size_t rows = a.rows(), ca = a.cols(), cb = b.cols(), c = ca + cb;
  auto av = a.values();
  auto bv = b.values();
  std::vector<double> out(rows * c);
  for (std::size_t r = 0; r < rows; ++r) {
    std::copy_n(&av[r * ca], ca, &out[r * c]);
    std::copy_n(&bv[r * cb], cb, &out[r * c + ca]);
  }
  Shape shape = a.rank() == 2 ? Shape{rows, c} : Shape{c};
  return make_result(std::move(shape), std::move(out), {a, b}, [rows, ca, cb, c](Node& self) {
    if (auto* ga = grad_of(self, 0)) {
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < ca; ++j) (*ga)[r * ca + j] += self.grad[r * c + j];
    }
    if (auto* gb = grad_of(self, 1)) {
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < cb; ++j) (*gb)[r * cb + j] += self.grad[r * c + ca + j];
    }
  });
}

Tensor slice(const Tensor& a, std::size_t axis, std::size_t begin, std::size_t end) {
  if (a.rank() == 0 || a.rank() > 2 || axis >= a.rank()) {
    shape_fail("slice", "axis " + std::to_string(axis) + " invalid for " + shape_str(a.shape()));
  }
  if (begin >= end || end > a.dim(axis)) {
    shape_fail("slice", "range [" + std::to_string(begin) + "," + std::to_string(end) +
                            ") invalid for extent " + std::to_string(a.dim(axis)));
  }
  check_finite(a, "slice");
  const std::size_t rows = a.rank() == 2 ? a.dim(0) : 1;
  const std::size_t cols = a.cols();
  const std::size_t r0 = (a.rank() == 2 && axis == 0) ? begin : 0;
  const std::size_t r1 = (a.rank() == 2 && axis == 0) ? end : rows;
  const std::size_t c0 = (axis == a.rank() - 1) ? begin : 0;
  const std::size_t c1 = (axis == a.rank() - 1) ? end : cols;
  const std::size_t orows = r1 - r0, ocols = c1 - c0;
  auto av = a.values();
  std::vector<double> out(orows * ocols);
  for (std::size_t r = 0; r < orows; ++r) std::copy_n(&av[(r0 + r) * cols + c0], ocols, &out[r * ocols]);
  Shape shape = a.rank() == 2 ? Shape{orows, ocols} : Shape{ocols};
  return make_result(std::move(shape), std::move(out), {a}, [orows, ocols, r0, c0, cols](Node& self) {
    auto* ga = grad_of(self, 0);
    if (!ga) return;
    for (std::size_t r = 0; r < orows; ++r)
      for (std::size_t j = 0; j < ocols; ++j) (*ga)[(r0 + r) * cols + c0 + j] += self.grad[r * ocols + j];
  });
}

Tensor transpose(const Tensor& a) {
  require_rank(a, 2, "transpose");
  check_finite(a, "transpose");
  const std::size_t m = a.dim(0), n = a.dim(1);
  auto av = a.values();
  std::vector<double> out(m * n);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j * m + i] = av[i * n + j];
  return make_result({n, m}, std::move(out), {a}, [m, n](Node& self) {
    auto* ga = grad_of(self, 0);
    if (!ga) return;
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) (*ga)[i * n + j] += self.grad[j * m + i];
  });
}

Tensor reshape(const Tensor& a, Shape shape) {
  check_shape(shape);
  if (shape_numel(shape) != a.numel()) {
    shape_fail("reshape", "cannot view " + shape_str(a.shape()) + " as " + shape_str(shape));
  }
  check_finite(a, "reshape");
  std::vector<double> out(a.values().begin(), a.values().end());
  return make_result(std::move(shape), std::move(out), {a}, [](Node& self) {
    auto* ga = grad_of(self, 0);
    if (!ga) return;
    for (std::size_t i = 0; i < self.grad.size(); ++i) (*ga)[i] += self.grad[i];
  });
}

Tensor sum(const Tensor& a) {
  check_finite(a, "sum");
  double s = 0.0;
  for (double v : a.values()) s += v;
  return make_result({}, {s}, {a}, [](Node& self) {
    auto* ga = grad_of(self, 0);
    if (!ga) return;
    for (auto& g : *ga) g += self.grad[0];
  });
}

Tensor mean(const Tensor& a) {
  check_finite(a, "mean");
  double s = 0.0;
  for (double v : a.values()) s += v;
  const double inv = 1.0 / static_cast<double>(a.numel());
  return make_result({}, {s * inv}, {a}, [inv](Node& self) {
    auto* ga = grad_of(self, 0);
    if (!ga) return;
    for (auto& g : *ga) g += self.grad[0] * inv;
  });
}

std::string_view op_name(OpKind kind) {
  switch (kind) {
    case OpKind::matmul: return "matmul";
    case OpKind::add: return "add";
    case OpKind::sub: return "sub";
    case OpKind::scale: return "scale";
    case OpKind::mul: return "mul";
    case OpKind::relu: return "relu";
    case OpKind::tanh: return "tanh";
    case OpKind::abs: return "abs";
    case OpKind::square: return "square";
    case OpKind::softmax_last: return "softmax_last";
    case OpKind::log_softmax_last: return "log_softmax_last";
    case OpKind::layer_norm_last: return "layer_norm_last";
    case OpKind::conv1d_same: return "conv1d_same";
    case OpKind::conv2d_same: return "conv2d_same";
    case OpKind::concat_last: return "concat_last";
    case OpKind::slice: return "slice";
    case OpKind::transpose: return "transpose";
    case OpKind::reshape: return "reshape";
    case OpKind::sum: return "sum";
    case OpKind::mean: return "mean";
  }
  return "?";
}

std::span<const OpKind> all_op_kinds() {
  static constexpr std::array kinds = {
      OpKind::matmul,       OpKind::add,          OpKind::sub,          OpKind::scale,
      OpKind::mul,          OpKind::relu,         OpKind::tanh,         OpKind::abs,
      OpKind::square,       OpKind::softmax_last, OpKind::log_softmax_last,
      OpKind::layer_norm_last, OpKind::conv1d_same, OpKind::conv2d_same, OpKind::concat_last,
      OpKind::slice,        OpKind::transpose,    OpKind::reshape,      OpKind::sum,
      OpKind::mean};
  return kinds;
}

// ---------------------------------------------------------------------------

std::string_view group_name(Group g) {
  switch (g) {
    case Group::encoder: return "encoder";
    case Group::generator: return "generator";
    case Group::discriminator: return "discriminator";
    case Group::decoder: return "decoder";
  }
  return "?";
}

std::optional<Group> group_from_name(std::string_view name) {
  const auto dot = name.find('.');
  const auto prefix = name.substr(0, dot);
  for (Group g : kAllGroups) {
    if (prefix == group_name(g)) return g;
  }
  return std::nullopt;
}

Tensor ParameterStore::add(const std::string& name, Shape shape, std::vector<double> values,
                           bool grad_enabled) {
  if (params_.count(name)) throw std::invalid_argument("duplicate parameter name: " + name);
  Tensor t(std::move(shape), std::move(values), grad_enabled);
  params_.emplace(name, t);
  return t;
}

const Tensor& ParameterStore::at(const std::string& name) const {
  auto it = params_.find(name);
  if (it == params_.end()) throw std::out_of_range("unknown parameter: " + name);
  return it->second;
}

std::size_t ParameterStore::scalar_count() const {
  std::size_t n = 0;
  for (const auto& [_, t] : params_) n += t.numel();
  return n;
}

std::size_t ParameterStore::scalar_count(Group g) const {
  std::size_t n = 0;
  for (const auto& [name, t] : params_) {
    if (group_from_name(name) == g) n += t.numel();
  }
  return n;
}

void ParameterStore::set_trainable(Group g, bool trainable) { trainable_[g] = trainable; }
bool ParameterStore::trainable(Group g) const { return trainable_.at(g); }

bool ParameterStore::trainable(const std::string& name) const {
  auto g = group_from_name(name);
  return g && trainable(*g);
}

std::uint64_t ParameterStore::group_hash(Group g) const {
  std::uint64_t h = 1469598103934665603ULL;
  auto mix = [&h](const void* data, std::size_t len) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < len; ++i) {
      h ^= p[i];
      h *= 1099511628211ULL;
    }
  };
  for (const auto& [name, t] : params_) {
    if (group_from_name(name) != g) continue;
    mix(name.data(), name.size());
    mix(t.values().data(), t.numel() * sizeof(double));
  }
  return h;
}

// ---------------------------------------------------------------------------

GradientMap backward(const Tensor& loss, const ParameterStore& params) {
  Tape* tape = Tape::active();
  if (!tape) throw std::logic_error("backward: no active tape");
  for (const auto& [_, t] : params.entries()) {
    t.node()->grad.assign(t.numel(), 0.0);
  }
  tape->backward(loss);
  GradientMap grads;
  for (const auto& [name, t] : params.entries()) {
    grads.emplace(name, Tensor(t.shape(), t.node()->grad));
  }
  return grads;
}

double finite_diff_check(const std::function<Tensor()>& f, Tensor& leaf, double step) {
  if (!leaf.grad_enabled()) throw std::invalid_argument("finite_diff_check: leaf must be grad-enabled");
  std::vector<double> analytic;
  {
    Tape tape;
    leaf.node()->grad.assign(leaf.numel(), 0.0);
    Tensor y = f();
    if (y.numel() != 1) throw ShapeError("finite_diff_check: f must return a scalar");
    if (!std::isfinite(y.item())) return std::numeric_limits<double>::infinity();
    tape.backward(y);
    analytic = leaf.node()->grad;
    if (analytic.size() != leaf.numel()) analytic.assign(leaf.numel(), 0.0);
  }
  NoGradGuard no_grad;
  auto values = leaf.mutable_values();
  double worst = 0.0;
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double orig = values[i];
    double fp = 0.0, fm = 0.0;
    try {
      values[i] = orig + step;
      fp = f().item();
      values[i] = orig - step;
      fm = f().item();
    } catch (const NumericError&) {
      fp = std::numeric_limits<double>::quiet_NaN();
    }
    values[i] = orig;
    if (!std::isfinite(fp) || !std::isfinite(fm)) return std::numeric_limits<double>::infinity();
    const double numeric = (fp - fm) / (2.0 * step);
    const double err = std::fabs(analytic[i] - numeric) / std::max(1.0, std::fabs(analytic[i]));
    worst = std::max(worst, err);
  }
  return worst;
}

double finite_diff_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x, double step) {
  Tensor leaf(x.shape(), std::vector<double>(x.values().begin(), x.values().end()), true);
  return finite_diff_check([&] { return f(leaf); }, leaf, step);
}

}  // namespace jepkd
