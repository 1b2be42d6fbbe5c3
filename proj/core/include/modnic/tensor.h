// Dense 64-bit tensors with a reverse-mode gradient tape.
//
// Every op that sees an operand with requires_grad() (and grad mode enabled)
// records a node stamped with a monotonically increasing sequence number.
// backward() replays the reachable nodes in strictly decreasing sequence
// order, so accumulation order is fixed and two identical runs produce
// bit-identical gradients.

#ifndef MODNIC_TENSOR_H_
#define MODNIC_TENSOR_H_

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace modnic {

using Shape = std::vector<int>;

std::string shape_string(const Shape& shape);
size_t shape_numel(const Shape& shape);

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until touched by backward
  bool requires_grad = false;
  uint64_t seq = 0;
  std::vector<std::shared_ptr<Node>> parents;
  // Reads this node's grad and accumulates into the parents' grads.
  std::function<void(Node&)> backward_fn;

  std::vector<double>& ensure_grad();
};

}  // namespace detail

class Tensor {
 public:
  Tensor() = default;
  // Zero-filled tensor.
  explicit Tensor(Shape shape, bool requires_grad = false);
  // Rejects size mismatch and non-finite values.
  Tensor(Shape shape, std::vector<double> values, bool requires_grad = false);

  static Tensor scalar(double value, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  int rank() const { return static_cast<int>(shape().size()); }
  int dim(int axis) const;
  size_t numel() const;

  std::span<const double> values() const;
  // Only leaves may be written in place (optimizer updates, initialization).
  std::span<double> mutable_values();
  double item() const;

  bool requires_grad() const;
  Tensor& set_requires_grad(bool on);
  bool is_leaf() const;
  // Empty span when no gradient has been accumulated.
  std::span<const double> grad() const;
  void zero_grad();

  // Fresh leaf holding a copy of the values.
  Tensor detach() const;

  // Low-level constructor for ops: creates the result node and wires it
  // into the tape when any parent requires grad and grad mode is on.
  static Tensor from_op(Shape shape, std::vector<double> data,
                        std::vector<Tensor> parents,
                        std::function<void(detail::Node&)> backward_fn);

  detail::Node& node() const;

 private:
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
  std::shared_ptr<detail::Node> node_;
};

// Runs reverse accumulation from a scalar output into every reachable node
// that requires grad. Leaf gradients accumulate across calls until
// zero_grad(); interior gradients are released afterwards.
void backward(const Tensor& output);

bool grad_enabled();

// Disables tape recording within its scope.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

// ---------------------------------------------------------------------------
// Operations. All reject shape mismatches with std::invalid_argument.

// Cross-correlation. input [B,Cin,H,W], kernel [Cout,Cin,k,k], bias [Cout].
Tensor conv2d(const Tensor& input, const Tensor& kernel, const Tensor& bias,
              int stride, int pad);

// Adjoint of conv2d with the same kernel tensor: kernel [Cin,Cout,k,k] where
// Cin is this op's input channel count. Output spatial size is
// (H-1)*stride - 2*pad + k + output_padding.
Tensor conv_transpose2d(const Tensor& input, const Tensor& kernel,
                        const Tensor& bias, int stride, int pad,
                        int output_padding = 0);

// input [B,n], weight [m,n], bias [m] -> [B,m].
Tensor dense(const Tensor& input, const Tensor& weight, const Tensor& bias);

Tensor relu(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor tanh(const Tensor& x);
Tensor softplus(const Tensor& x);
Tensor neg(const Tensor& x);
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, double factor);

// v [B,C] -> [B,C,H,W], every spatial position of (b,c) equal to v[b,c].
Tensor broadcast_spatial(const Tensor& v, int height, int width);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);

}  // namespace modnic

#endif  // MODNIC_TENSOR_H_
