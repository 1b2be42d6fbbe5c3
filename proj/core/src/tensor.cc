#include "modnic/tensor.h"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <sstream>
#include <stdexcept>
#include <unordered_set>

namespace modnic {

namespace {

std::atomic<uint64_t> g_next_seq{1};
thread_local bool t_grad_enabled = true;

void require(bool cond, const std::string& what) {
  if (!cond) throw std::invalid_argument(what);
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw std::invalid_argument(std::string(op) + ": shape mismatch " +
                                shape_string(a.shape()) + " vs " +
                                shape_string(b.shape()));
  }
}

bool wants_grad(const std::shared_ptr<detail::Node>& n) {
  return n->requires_grad;
}

// Geometry shared by conv2d and conv_transpose2d. "x" is the high-resolution
// side of a cross-correlation, "y" the strided side.
struct ConvGeom {
  int batch, cx, h, w, cy, ho, wo, k, stride, pad;

  // Output columns whose tap kw lands inside [0, w).
  void col_range(int kw, int& lo, int& hi) const {
    const int a = pad - kw;
    lo = a > 0 ? (a + stride - 1) / stride : 0;
    const int b = w - 1 + pad - kw;
    hi = b < 0 ? -1 : std::min(wo - 1, b / stride);
  }
};

// y[b,cy] += K[cy,cx] (*) x[b,cx]
void conv_gather(const ConvGeom& g, const double* x, const double* kernel,
                 double* y) {
  const int kk = g.k * g.k;
  for (int b = 0; b < g.batch; ++b) {
    for (int co = 0; co < g.cy; ++co) {
      double* yplane = y + (static_cast<size_t>(b) * g.cy + co) * g.ho * g.wo;
      for (int ci = 0; ci < g.cx; ++ci) {
        const double* xplane =
            x + (static_cast<size_t>(b) * g.cx + ci) * g.h * g.w;
        const double* kp = kernel + (static_cast<size_t>(co) * g.cx + ci) * kk;
        for (int kh = 0; kh < g.k; ++kh) {
          for (int oh = 0; oh < g.ho; ++oh) {
            const int ih = oh * g.stride - g.pad + kh;
            if (ih < 0 || ih >= g.h) continue;
            const double* xrow = xplane + static_cast<size_t>(ih) * g.w;
            double* yrow = yplane + static_cast<size_t>(oh) * g.wo;
            for (int kw = 0; kw < g.k; ++kw) {
              int lo, hi;
              g.col_range(kw, lo, hi);
              const double wgt = kp[kh * g.k + kw];
              const int off = kw - g.pad;
              for (int ow = lo; ow <= hi; ++ow) {
                yrow[ow] += wgt * xrow[ow * g.stride + off];
              }
            }
          }
        }
      }
    }
  }
}

// x[b,cx] += K[cy,cx]^T (*) y[b,cy]
void conv_scatter(const ConvGeom& g, const double* y, const double* kernel,
                  double* x) {
  const int kk = g.k * g.k;
  for (int b = 0; b < g.batch; ++b) {
    for (int co = 0; co < g.cy; ++co) {
      const double* yplane =
          y + (static_cast<size_t>(b) * g.cy + co) * g.ho * g.wo;
      for (int ci = 0; ci < g.cx; ++ci) {
        double* xplane = x + (static_cast<size_t>(b) * g.cx + ci) * g.h * g.w;
        const double* kp = kernel + (static_cast<size_t>(co) * g.cx + ci) * kk;
        for (int kh = 0; kh < g.k; ++kh) {
          for (int oh = 0; oh < g.ho; ++oh) {
            const int ih = oh * g.stride - g.pad + kh;
            if (ih < 0 || ih >= g.h) continue;
            double* xrow = xplane + static_cast<size_t>(ih) * g.w;
            const double* yrow = yplane + static_cast<size_t>(oh) * g.wo;
            for (int kw = 0; kw < g.k; ++kw) {
              int lo, hi;
              g.col_range(kw, lo, hi);
              const double wgt = kp[kh * g.k + kw];
              const int off = kw - g.pad;
              for (int ow = lo; ow <= hi; ++ow) {
                xrow[ow * g.stride + off] += wgt * yrow[ow];
              }
            }
          }
        }
      }
    }
  }
}

// dK[cy,cx] += sum_b y[b,cy] (*) x[b,cx]
void conv_kernel_grad(const ConvGeom& g, const double* x, const double* y,
                      double* dkernel) {
  const int kk = g.k * g.k;
  for (int b = 0; b < g.batch; ++b) {
    for (int co = 0; co < g.cy; ++co) {
      const double* yplane =
          y + (static_cast<size_t>(b) * g.cy + co) * g.ho * g.wo;
      for (int ci = 0; ci < g.cx; ++ci) {
        const double* xplane =
            x + (static_cast<size_t>(b) * g.cx + ci) * g.h * g.w;
        double* kp = dkernel + (static_cast<size_t>(co) * g.cx + ci) * kk;
        for (int kh = 0; kh < g.k; ++kh) {
          for (int kw = 0; kw < g.k; ++kw) {
            int lo, hi;
            g.col_range(kw, lo, hi);
            const int off = kw - g.pad;
            double acc = 0.0;
            for (int oh = 0; oh < g.ho; ++oh) {
              const int ih = oh * g.stride - g.pad + kh;
              if (ih < 0 || ih >= g.h) continue;
              const double* xrow = xplane + static_cast<size_t>(ih) * g.w;
              const double* yrow = yplane + static_cast<size_t>(oh) * g.wo;
              for (int ow = lo; ow <= hi; ++ow) {
                acc += yrow[ow] * xrow[ow * g.stride + off];
              }
            }
            kp[kh * g.k + kw] += acc;
          }
        }
      }
    }
  }
}

void check_conv_args(const Tensor& input, const Tensor& kernel,
                     const Tensor& bias, int stride, int pad,
                     const char* op) {
  const std::string name(op);
  require(input.defined() && kernel.defined() && bias.defined(),
          name + ": undefined operand");
  require(input.rank() == 4, name + ": input must be rank 4, got " +
                                 shape_string(input.shape()));
  require(kernel.rank() == 4, name + ": kernel must be rank 4, got " +
                                  shape_string(kernel.shape()));
  const int k = kernel.dim(2);
  require(kernel.dim(3) == k, name + ": kernel must be square");
  require(k == 1 || k == 3 || k == 5,
          name + ": kernel size must be 1, 3 or 5, got " + std::to_string(k));
  require(stride == 1 || stride == 2,
          name + ": stride must be 1 or 2, got " + std::to_string(stride));
  require(pad >= 0, name + ": negative padding");
  require(bias.rank() == 1, name + ": bias must be rank 1");
}

double sigmoid_scalar(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

using UnaryBackward = double (*)(double x, double y);

Tensor unary_op(const Tensor& x, double (*fwd)(double), UnaryBackward deriv) {
  std::vector<double> out(x.numel());
  const auto in = x.values();
  for (size_t i = 0; i < out.size(); ++i) out[i] = fwd(in[i]);
  return Tensor::from_op(x.shape(), std::move(out), {x},
                         [deriv](detail::Node& self) {
                           auto& p = self.parents[0];
                           if (!wants_grad(p)) return;
                           auto& gp = p->ensure_grad();
                           for (size_t i = 0; i < gp.size(); ++i) {
                             gp[i] += self.grad[i] * deriv(p->data[i], self.data[i]);
                           }
                         });
}

}  // namespace

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

size_t shape_numel(const Shape& shape) {
  size_t n = 1;
  for (int d : shape) n *= static_cast<size_t>(d);
  return n;
}

std::vector<double>& detail::Node::ensure_grad() {
  if (grad.empty()) grad.assign(data.size(), 0.0);
  return grad;
}

// ---------------------------------------------------------------------------
// Tensor

Tensor::Tensor(Shape shape, bool requires_grad)
    : Tensor(shape, std::vector<double>(shape_numel(shape), 0.0),
             requires_grad) {}

Tensor::Tensor(Shape shape, std::vector<double> values, bool requires_grad) {
  for (int d : shape) {
    require(d > 0, "Tensor: dimensions must be positive, got " +
                       shape_string(shape));
  }
  require(values.size() == shape_numel(shape),
          "Tensor: " + std::to_string(values.size()) +
              " values do not fill shape " + shape_string(shape));
  for (double v : values) {
    require(std::isfinite(v), "Tensor: non-finite value");
  }
  node_ = std::make_shared<detail::Node>();
  node_->shape = std::move(shape);
  node_->data = std::move(values);
  node_->requires_grad = requires_grad;
  node_->seq = g_next_seq.fetch_add(1);
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return Tensor({1}, {value}, requires_grad);
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  const size_t n = shape_numel(shape);
  return Tensor(std::move(shape), std::vector<double>(n, value), requires_grad);
}

detail::Node& Tensor::node() const {
  if (!node_) throw std::logic_error("Tensor: undefined");
  return *node_;
}

const Shape& Tensor::shape() const { return node().shape; }

int Tensor::dim(int axis) const {
  const auto& s = shape();
  if (axis < 0) axis += static_cast<int>(s.size());
  require(axis >= 0 && axis < static_cast<int>(s.size()),
          "Tensor::dim: axis out of range");
  return s[axis];
}

size_t Tensor::numel() const { return node().data.size(); }

std::span<const double> Tensor::values() const { return node().data; }

std::span<double> Tensor::mutable_values() {
  if (!is_leaf()) {
    throw std::logic_error("Tensor: in-place write to a non-leaf tensor");
  }
  return node().data;
}

double Tensor::item() const {
  require(numel() == 1, "Tensor::item: tensor has " +
                            std::to_string(numel()) + " elements");
  return node().data[0];
}

bool Tensor::requires_grad() const { return node().requires_grad; }

Tensor& Tensor::set_requires_grad(bool on) {
  if (!is_leaf()) throw std::logic_error("set_requires_grad on non-leaf");
  node().requires_grad = on;
  return *this;
}

bool Tensor::is_leaf() const { return !node().backward_fn; }

std::span<const double> Tensor::grad() const { return node().grad; }

void Tensor::zero_grad() { node().grad.clear(); }

Tensor Tensor::detach() const {
  Tensor t(std::make_shared<detail::Node>());
  t.node_->shape = shape();
  t.node_->data = node().data;
  t.node_->seq = g_next_seq.fetch_add(1);
  return t;
}

Tensor Tensor::from_op(Shape shape, std::vector<double> data,
                       std::vector<Tensor> parents,
                       std::function<void(detail::Node&)> backward_fn) {
  auto node = std::make_shared<detail::Node>();
  node->shape = std::move(shape);
  node->data = std::move(data);
  node->seq = g_next_seq.fetch_add(1);
  bool any = false;
  if (t_grad_enabled) {
    for (const auto& p : parents) any = any || p.requires_grad();
  }
  if (any) {
    node->requires_grad = true;
    node->parents.reserve(parents.size());
    for (auto& p : parents) node->parents.push_back(p.node_);
    node->backward_fn = std::move(backward_fn);
  }
  return Tensor(std::move(node));
}

void backward(const Tensor& output) {
  require(output.numel() == 1,
          "backward: output must be a scalar, got shape " +
              shape_string(output.shape()));
  detail::Node& root = output.node();
  if (!root.requires_grad) return;

  // Collect the reachable graph, then replay in reverse execution order.
  std::vector<detail::Node*> order;
  std::unordered_set<const detail::Node*> seen;
  std::vector<detail::Node*> stack{&root};
  seen.insert(&root);
  while (!stack.empty()) {
    detail::Node* n = stack.back();
    stack.pop_back();
    order.push_back(n);
    for (auto& p : n->parents) {
      if (p->requires_grad && seen.insert(p.get()).second) {
        stack.push_back(p.get());
      }
    }
  }
  std::sort(order.begin(), order.end(),
            [](const detail::Node* a, const detail::Node* b) {
              return a->seq > b->seq;
            });

  root.ensure_grad()[0] += 1.0;
  for (detail::Node* n : order) {
    if (n->backward_fn && !n->grad.empty()) n->backward_fn(*n);
  }
  for (detail::Node* n : order) {
    if (n->backward_fn) {
      n->grad.clear();
      n->grad.shrink_to_fit();
    }
  }
}

bool grad_enabled() { return t_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(t_grad_enabled) {
  t_grad_enabled = false;
}

NoGradGuard::~NoGradGuard() { t_grad_enabled = previous_; }

// ---------------------------------------------------------------------------
// Convolutions

Tensor conv2d(const Tensor& input, const Tensor& kernel, const Tensor& bias,
              int stride, int pad) {
  check_conv_args(input, kernel, bias, stride, pad, "conv2d");
  ConvGeom g{};
  g.batch = input.dim(0);
  g.cx = input.dim(1);
  g.h = input.dim(2);
  g.w = input.dim(3);
  g.cy = kernel.dim(0);
  g.k = kernel.dim(2);
  g.stride = stride;
  g.pad = pad;
  require(kernel.dim(1) == g.cx,
          "conv2d: kernel " + shape_string(kernel.shape()) +
              " does not match input channels of " +
              shape_string(input.shape()));
  require(bias.dim(0) == g.cy, "conv2d: bias length " +
                                   std::to_string(bias.dim(0)) +
                                   " != output channels " +
                                   std::to_string(g.cy));
  const int hn = g.h + 2 * pad - g.k;
  const int wn = g.w + 2 * pad - g.k;
  require(hn >= 0 && wn >= 0, "conv2d: input " + shape_string(input.shape()) +
                                  " too small for kernel " +
                                  std::to_string(g.k));
  g.ho = hn / stride + 1;
  g.wo = wn / stride + 1;

  std::vector<double> out(static_cast<size_t>(g.batch) * g.cy * g.ho * g.wo);
  const size_t plane = static_cast<size_t>(g.ho) * g.wo;
  const auto bv = bias.values();
  for (int b = 0; b < g.batch; ++b) {
    for (int c = 0; c < g.cy; ++c) {
      std::fill_n(out.begin() + (static_cast<size_t>(b) * g.cy + c) * plane,
                  plane, bv[c]);
    }
  }
  conv_gather(g, input.values().data(), kernel.values().data(), out.data());

  return Tensor::from_op(
      {g.batch, g.cy, g.ho, g.wo}, std::move(out), {input, kernel, bias},
      [g, plane](detail::Node& self) {
        auto& in = self.parents[0];
        auto& kn = self.parents[1];
        auto& bs = self.parents[2];
        const double* gy = self.grad.data();
        if (wants_grad(in)) {
          conv_scatter(g, gy, kn->data.data(), in->ensure_grad().data());
        }
        if (wants_grad(kn)) {
          conv_kernel_grad(g, in->data.data(), gy, kn->ensure_grad().data());
        }
        if (wants_grad(bs)) {
          auto& gb = bs->ensure_grad();
          for (int b = 0; b < g.batch; ++b) {
            for (int c = 0; c < g.cy; ++c) {
              const double* p = gy + (static_cast<size_t>(b) * g.cy + c) * plane;
              double acc = 0.0;
              for (size_t i = 0; i < plane; ++i) acc += p[i];
              gb[c] += acc;
            }
          }
        }
      });
}

Tensor conv_transpose2d(const Tensor& input, const Tensor& kernel,
                        const Tensor& bias, int stride, int pad,
                        int output_padding) {
  check_conv_args(input, kernel, bias, stride, pad, "conv_transpose2d");
  require(output_padding >= 0 && output_padding < stride,
          "conv_transpose2d: output_padding must be in [0, stride)");
  // Viewed as the adjoint of a conv2d whose strided side is this input.
  ConvGeom g{};
  g.batch = input.dim(0);
  g.cy = input.dim(1);
  g.ho = input.dim(2);
  g.wo = input.dim(3);
  g.k = kernel.dim(2);
  g.stride = stride;
  g.pad = pad;
  require(kernel.dim(0) == g.cy,
          "conv_transpose2d: kernel " + shape_string(kernel.shape()) +
              " does not match input channels of " +
              shape_string(input.shape()));
  g.cx = kernel.dim(1);
  require(bias.dim(0) == g.cx, "conv_transpose2d: bias length " +
                                   std::to_string(bias.dim(0)) +
                                   " != output channels " +
                                   std::to_string(g.cx));
  g.h = (g.ho - 1) * stride - 2 * pad + g.k + output_padding;
  g.w = (g.wo - 1) * stride - 2 * pad + g.k + output_padding;
  require(g.h >= 1 && g.w >= 1,
          "conv_transpose2d: non-positive output size for input " +
              shape_string(input.shape()));

  std::vector<double> out(static_cast<size_t>(g.batch) * g.cx * g.h * g.w);
  const size_t plane = static_cast<size_t>(g.h) * g.w;
  const auto bv = bias.values();
  for (int b = 0; b < g.batch; ++b) {
    for (int c = 0; c < g.cx; ++c) {
      std::fill_n(out.begin() + (static_cast<size_t>(b) * g.cx + c) * plane,
                  plane, bv[c]);
    }
  }
  conv_scatter(g, input.values().data(), kernel.values().data(), out.data());

  return Tensor::from_op(
      {g.batch, g.cx, g.h, g.w}, std::move(out), {input, kernel, bias},
      [g, plane](detail::Node& self) {
        auto& in = self.parents[0];
        auto& kn = self.parents[1];
        auto& bs = self.parents[2];
        const double* gx = self.grad.data();
        if (wants_grad(in)) {
          conv_gather(g, gx, kn->data.data(), in->ensure_grad().data());
        }
        if (wants_grad(kn)) {
          conv_kernel_grad(g, gx, in->data.data(), kn->ensure_grad().data());
        }
        if (wants_grad(bs)) {
          auto& gb = bs->ensure_grad();
          for (int b = 0; b < g.batch; ++b) {
            for (int c = 0; c < g.cx; ++c) {
              const double* p = gx + (static_cast<size_t>(b) * g.cx + c) * plane;
              double acc = 0.0;
              for (size_t i = 0; i < plane; ++i) acc += p[i];
              gb[c] += acc;
            }
          }
        }
      });
}

// ---------------------------------------------------------------------------
// Dense

Tensor dense(const Tensor& input, const Tensor& weight, const Tensor& bias) {
  require(input.rank() == 2 && weight.rank() == 2 && bias.rank() == 1,
          "dense: expected input [B,n], weight [m,n], bias [m]");
  const int batch = input.dim(0);
  const int n = input.dim(1);
  const int m = weight.dim(0);
  require(weight.dim(1) == n, "dense: weight " + shape_string(weight.shape()) +
                                  " incompatible with input " +
                                  shape_string(input.shape()));
  require(bias.dim(0) == m, "dense: bias length mismatch");
  const auto x = input.values();
  const auto w = weight.values();
  const auto bv = bias.values();
  std::vector<double> out(static_cast<size_t>(batch) * m);
  for (int b = 0; b < batch; ++b) {
    for (int i = 0; i < m; ++i) {
      double acc = bv[i];
      for (int j = 0; j < n; ++j) acc += w[i * n + j] * x[b * n + j];
      out[b * m + i] = acc;
    }
  }
  return Tensor::from_op(
      {batch, m}, std::move(out), {input, weight, bias},
      [batch, n, m](detail::Node& self) {
        auto& in = self.parents[0];
        auto& wt = self.parents[1];
        auto& bs = self.parents[2];
        const auto& gy = self.grad;
        if (wants_grad(in)) {
          auto& gx = in->ensure_grad();
          for (int b = 0; b < batch; ++b)
            for (int i = 0; i < m; ++i)
              for (int j = 0; j < n; ++j)
                gx[b * n + j] += wt->data[i * n + j] * gy[b * m + i];
        }
        if (wants_grad(wt)) {
          auto& gw = wt->ensure_grad();
          for (int b = 0; b < batch; ++b)
            for (int i = 0; i < m; ++i)
              for (int j = 0; j < n; ++j)
                gw[i * n + j] += gy[b * m + i] * in->data[b * n + j];
        }
        if (wants_grad(bs)) {
          auto& gb = bs->ensure_grad();
          for (int b = 0; b < batch; ++b)
            for (int i = 0; i < m; ++i) gb[i] += gy[b * m + i];
        }
      });
}

// ---------------------------------------------------------------------------
// Pointwise

Tensor relu(const Tensor& x) {
  return unary_op(
      x, [](double v) { return v > 0.0 ? v : 0.0; },
      [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Tensor sigmoid(const Tensor& x) {
  return unary_op(x, sigmoid_scalar,
                  [](double, double y) { return y * (1.0 - y); });
}

Tensor tanh(const Tensor& x) {
  return unary_op(
      x, [](double v) { return std::tanh(v); },
      [](double, double y) { return 1.0 - y * y; });
}

Tensor softplus(const Tensor& x) {
  return unary_op(
      x,
      [](double v) { return std::max(v, 0.0) + std::log1p(std::exp(-std::abs(v))); },
      [](double v, double) { return sigmoid_scalar(v); });
}

Tensor neg(const Tensor& x) { return scale(x, -1.0); }

Tensor scale(const Tensor& x, double factor) {
  std::vector<double> out(x.numel());
  const auto in = x.values();
  for (size_t i = 0; i < out.size(); ++i) out[i] = factor * in[i];
  return Tensor::from_op(x.shape(), std::move(out), {x},
                         [factor](detail::Node& self) {
                           auto& p = self.parents[0];
                           if (!wants_grad(p)) return;
                           auto& gp = p->ensure_grad();
                           for (size_t i = 0; i < gp.size(); ++i) {
                             gp[i] += factor * self.grad[i];
                           }
                         });
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  std::vector<double> out(a.numel());
  const auto av = a.values();
  const auto bv = b.values();
  for (size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
  return Tensor::from_op(a.shape(), std::move(out), {a, b},
                         [](detail::Node& self) {
                           for (auto& p : self.parents) {
                             if (!wants_grad(p)) continue;
                             auto& gp = p->ensure_grad();
                             for (size_t i = 0; i < gp.size(); ++i) {
                               gp[i] += self.grad[i];
                             }
                           }
                         });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  std::vector<double> out(a.numel());
  const auto av = a.values();
  const auto bv = b.values();
  for (size_t i = 0; i < out.size(); ++i) out[i] = av[i] - bv[i];
  return Tensor::from_op(a.shape(), std::move(out), {a, b},
                         [](detail::Node& self) {
                           const double sign[2] = {1.0, -1.0};
                           for (int k = 0; k < 2; ++k) {
                             auto& p = self.parents[k];
                             if (!wants_grad(p)) continue;
                             auto& gp = p->ensure_grad();
                             for (size_t i = 0; i < gp.size(); ++i) {
                               gp[i] += sign[k] * self.grad[i];
                             }
                           }
                         });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  std::vector<double> out(a.numel());
  const auto av = a.values();
  const auto bv = b.values();
  for (size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
  return Tensor::from_op(a.shape(), std::move(out), {a, b},
                         [](detail::Node& self) {
                           auto& pa = self.parents[0];
                           auto& pb = self.parents[1];
                           if (wants_grad(pa)) {
                             auto& g = pa->ensure_grad();
                             for (size_t i = 0; i < g.size(); ++i) {
                               g[i] += self.grad[i] * pb->data[i];
                             }
                           }
                           if (wants_grad(pb)) {
                             auto& g = pb->ensure_grad();
                             for (size_t i = 0; i < g.size(); ++i) {
                               g[i] += self.grad[i] * pa->data[i];
                             }
                           }
                         });
}

Tensor broadcast_spatial(const Tensor& v, int height, int width) {
  require(v.rank() == 2, "broadcast_spatial: expected [B,C], got " +
                             shape_string(v.shape()));
  require(height >= 1 && width >= 1,
          "broadcast_spatial: spatial size must be positive");
  const int batch = v.dim(0);
  const int channels = v.dim(1);
  const size_t plane = static_cast<size_t>(height) * width;
  std::vector<double> out(static_cast<size_t>(batch) * channels * plane);
  const auto vv = v.values();
  for (size_t bc = 0; bc < vv.size(); ++bc) {
    std::fill_n(out.begin() + bc * plane, plane, vv[bc]);
  }
  return Tensor::from_op(
      {batch, channels, height, width}, std::move(out), {v},
      [plane](detail::Node& self) {
        auto& p = self.parents[0];
        if (!wants_grad(p)) return;
        auto& gp = p->ensure_grad();
        for (size_t bc = 0; bc < gp.size(); ++bc) {
          const double* g = self.grad.data() + bc * plane;
          double acc = 0.0;
          for (size_t i = 0; i < plane; ++i) acc += g[i];
          gp[bc] += acc;
        }
      });
}

// ---------------------------------------------------------------------------
// Reductions

Tensor sum(const Tensor& x) {
  double acc = 0.0;
  for (double v : x.values()) acc += v;
  return Tensor::from_op({1}, {acc}, {x}, [](detail::Node& self) {
    auto& p = self.parents[0];
    if (!wants_grad(p)) return;
    auto& gp = p->ensure_grad();
    for (double& g : gp) g += self.grad[0];
  });
}

Tensor mean(const Tensor& x) {
  return scale(sum(x), 1.0 / static_cast<double>(x.numel()));
}

}  // namespace modnic
