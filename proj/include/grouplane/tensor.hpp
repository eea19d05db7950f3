#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace grouplane {

enum class Dtype { F32, F64 };

// Process-wide storage precision for newly created tensors. F32 quantizes
// every stored value through IEEE single precision; arithmetic stays double.
Dtype default_dtype();
void set_default_dtype(Dtype dtype);

// Whether ops record the graph needed for backward(). Off during inference.
bool grad_enabled();

struct NoGradGuard {
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

using Shape = std::vector<int64_t>;

int64_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

struct TensorNode {
  Shape shape;
  std::vector<double> values;
  Dtype dtype = Dtype::F64;
  bool requires_grad = false;   // leaf wants its grad kept
  bool on_grad_path = false;    // some ancestor (or itself) requires grad
  bool backward_ran = false;
  std::vector<double> grad;     // sized lazily, same length as values
  std::vector<std::shared_ptr<TensorNode>> parents;
  std::function<void(TensorNode&)> backward_fn;
  std::string op_name;

  void ensure_grad();
};

// Dense row-major tensor with optional reverse-mode gradient. Value-semantic
// handle over a shared node; nodes produced by ops are immutable.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::shared_ptr<TensorNode> node) : node_(std::move(node)) {}

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value);
  static Tensor from_values(Shape shape, std::vector<double> values,
                            bool requires_grad = false);
  static Tensor scalar(double value);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  int rank() const;
  int64_t dim(int axis) const;
  int64_t numel() const;
  Dtype dtype() const;

  std::span<const double> values() const;
  // Leaf tensors only (parameters, inputs); graph outputs are immutable.
  std::span<double> mutable_values();
  double at(std::initializer_list<int64_t> index) const;
  double item() const;

  bool requires_grad() const;
  void set_requires_grad(bool flag);
  bool has_grad() const;
  std::span<const double> grad() const;
  void zero_grad();

  // Reverse-mode sweep from a scalar. Each node is visited once in reverse
  // topological order; fan-out accumulates additively. Calling twice on the
  // same graph without a fresh forward is an error.
  void backward() const;

  std::shared_ptr<TensorNode> node() const { return node_; }

 private:
  std::shared_ptr<TensorNode> node_;
};

// Builds an op node: checks finiteness, applies the dtype policy and wires
// the backward closure when grad recording is active.
Tensor make_op(const char* name, const std::vector<Tensor>& inputs,
               Shape shape, std::vector<double> values,
               std::function<void(TensorNode&)> backward);

// ---- elementwise & arithmetic ----
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor neg(const Tensor& a);
Tensor scale(const Tensor& a, double c);
Tensor add_scalar(const Tensor& a, double c);
Tensor relu(const Tensor& a);
Tensor sigmoid(const Tensor& a);
// log with the input clamped below at kLogEps; gradient is 0 in the clamped
// region.
Tensor safe_log(const Tensor& a);
Tensor abs_value(const Tensor& a);

inline constexpr double kLogEps = 1e-12;

// ---- reductions & shape ----
Tensor softmax(const Tensor& a, int axis);
Tensor softmax_lastdim(const Tensor& a);
Tensor reduce_max(const Tensor& a, int axis, bool keepdim = false);
Tensor reduce_sum(const Tensor& a, int axis, bool keepdim = false);
Tensor sum_all(const Tensor& a);
Tensor reshape(const Tensor& a, Shape shape);
Tensor transpose_last2(const Tensor& a);
Tensor slice(const Tensor& a, int axis, int64_t start, int64_t length);
Tensor concat(const std::vector<Tensor>& parts, int axis);

// ---- linear algebra ----
// x: [..., K], w: [M, K], b: [M] (optional, pass undefined Tensor to skip).
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b);

struct Conv2dSpec {
  int groups = 1;
  int stride_h = 1;
  int stride_w = 1;
  int pad_h = 0;
  int pad_w = 0;
};

// x: [B, Cin, H, W], w: [Cout, Cin/groups, kh, kw], b: [Cout] (optional).
// Output channel block j depends only on input channel block j.
Tensor conv2d_grouped(const Tensor& x, const Tensor& w, const Tensor& b,
                      const Conv2dSpec& spec);

}  // namespace grouplane
