#include "grouplane/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <chrono>
#include <cstdlib>
#include <cstdio>
#include <map>
#include <sstream>
#include <stdexcept>
#include <unordered_set>

namespace grouplane {

namespace {

thread_local Dtype g_default_dtype = Dtype::F64;
thread_local bool g_grad_enabled = true;

void quantize_f32(std::vector<double>& values) {
  for (double& v : values) v = static_cast<double>(static_cast<float>(v));
}

[[noreturn]] void fail(const std::string& msg) { throw std::runtime_error(msg); }

void check_same_shape(const char* name, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    fail(std::string(name) + ": shape mismatch " + shape_str(a.shape()) +
         " vs " + shape_str(b.shape()));
  }
}

void check_finite(const char* name, const std::vector<double>& values) {
  for (double v : values) {
    if (!std::isfinite(v)) {
      fail(std::string(name) + ": non-finite value in forward output");
    }
  }
}

// outer * extent * inner decomposition around `axis`.
struct AxisSplit {
  int64_t outer = 1;
  int64_t extent = 1;
  int64_t inner = 1;
};

AxisSplit split_axis(const Shape& shape, int axis) {
  AxisSplit s;
  for (int i = 0; i < static_cast<int>(shape.size()); ++i) {
    if (i < axis) {
      s.outer *= shape[i];
    } else if (i == axis) {
      s.extent = shape[i];
    } else {
      s.inner *= shape[i];
    }
  }
  return s;
}

void check_axis(const char* name, const Tensor& t, int axis) {
  if (axis < 0 || axis >= t.rank()) {
    fail(std::string(name) + ": axis " + std::to_string(axis) +
         " out of range for rank " + std::to_string(t.rank()));
  }
}

// C[M x N] += A[M x K] * B[K x N]. Each C element is accumulated over p in
// increasing order by exactly one thread, so results are bitwise
// reproducible at any thread count. Rows are processed four at a time to
// cut the streaming traffic over B.
void mm_nn(const double* a, const double* b, double* c, int64_t m, int64_t k,
           int64_t n) {
#pragma omp parallel for schedule(static)
  for (int64_t i0 = 0; i0 < m; i0 += 4) {
    if (i0 + 4 <= m) {
      double* c0 = c + (i0 + 0) * n;
      double* c1 = c + (i0 + 1) * n;
      double* c2 = c + (i0 + 2) * n;
      double* c3 = c + (i0 + 3) * n;
      for (int64_t p = 0; p < k; ++p) {
        const double a0 = a[(i0 + 0) * k + p];
        const double a1 = a[(i0 + 1) * k + p];
        const double a2 = a[(i0 + 2) * k + p];
        const double a3 = a[(i0 + 3) * k + p];
        const double* brow = b + p * n;
        for (int64_t j = 0; j < n; ++j) {
          const double bv = brow[j];
          c0[j] += a0 * bv;
          c1[j] += a1 * bv;
          c2[j] += a2 * bv;
          c3[j] += a3 * bv;
        }
      }
    } else {
      for (int64_t i = i0; i < m; ++i) {
        double* crow = c + i * n;
        for (int64_t p = 0; p < k; ++p) {
          const double av = a[i * k + p];
          const double* brow = b + p * n;
          for (int64_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
      }
    }
  }
}

// Dot product over eight independent accumulators; the reduction tree is
// fixed, so results stay deterministic while the dependency chain shortens
// enough to vectorize.
double dot8(const double* a, const double* b, int64_t k) {
  double acc[8] = {0, 0, 0, 0, 0, 0, 0, 0};
  int64_t p = 0;
  for (; p + 8 <= k; p += 8) {
    for (int u = 0; u < 8; ++u) acc[u] += a[p + u] * b[p + u];
  }
  for (; p < k; ++p) acc[p % 8] += a[p] * b[p];
  return ((acc[0] + acc[1]) + (acc[2] + acc[3])) +
         ((acc[4] + acc[5]) + (acc[6] + acc[7]));
}

// C[M x N] += A[M x K] * B[N x K]^T
void mm_nt(const double* a, const double* b, double* c, int64_t m, int64_t k,
           int64_t n) {
#pragma omp parallel for schedule(static)
  for (int64_t i0 = 0; i0 < m; i0 += 4) {
    const int64_t ilim = std::min<int64_t>(i0 + 4, m);
    for (int64_t j = 0; j < n; ++j) {
      const double* brow = b + j * k;
      for (int64_t i = i0; i < ilim; ++i) {
        c[i * n + j] += dot8(a + i * k, brow, k);
      }
    }
  }
}

// C[K x N] += A[M x K]^T * B[M x N]
void mm_tn(const double* a, const double* b, double* c, int64_t m, int64_t k,
           int64_t n) {
#pragma omp parallel for schedule(static)
  for (int64_t i0 = 0; i0 < k; i0 += 4) {
    if (i0 + 4 <= k) {
      double* c0 = c + (i0 + 0) * n;
      double* c1 = c + (i0 + 1) * n;
      double* c2 = c + (i0 + 2) * n;
      double* c3 = c + (i0 + 3) * n;
      for (int64_t p = 0; p < m; ++p) {
        const double a0 = a[p * k + i0 + 0];
        const double a1 = a[p * k + i0 + 1];
        const double a2 = a[p * k + i0 + 2];
        const double a3 = a[p * k + i0 + 3];
        const double* brow = b + p * n;
        for (int64_t j = 0; j < n; ++j) {
          const double bv = brow[j];
          c0[j] += a0 * bv;
          c1[j] += a1 * bv;
          c2[j] += a2 * bv;
          c3[j] += a3 * bv;
        }
      }
    } else {
      for (int64_t i = i0; i < k; ++i) {
        double* crow = c + i * n;
        for (int64_t p = 0; p < m; ++p) {
          const double av = a[p * k + i];
          const double* brow = b + p * n;
          for (int64_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
      }
    }
  }
}

struct ConvDims {
  int64_t batch, cin, h, w;
  int64_t cout, cin_g, kh, kw;
  int64_t ho, wo;
  int64_t groups;
};

ConvDims conv_dims(const Tensor& x, const Tensor& w, const Conv2dSpec& spec) {
  if (x.rank() != 4) fail("conv2d: input must be rank 4");
  if (w.rank() != 4) fail("conv2d: weight must be rank 4");
  ConvDims d;
  d.batch = x.dim(0);
  d.cin = x.dim(1);
  d.h = x.dim(2);
  d.w = x.dim(3);
  d.cout = w.dim(0);
  d.cin_g = w.dim(1);
  d.kh = w.dim(2);
  d.kw = w.dim(3);
  d.groups = spec.groups;
  if (d.groups <= 0) fail("conv2d: groups must be positive");
  if (d.cin % d.groups != 0 || d.cout % d.groups != 0) {
    fail("conv2d: groups must divide both channel counts");
  }
  if (d.cin / d.groups != d.cin_g) {
    fail("conv2d: weight channel extent disagrees with input/groups");
  }
  const int64_t ph = spec.pad_h, pw = spec.pad_w;
  if (d.h + 2 * ph < d.kh || d.w + 2 * pw < d.kw) {
    fail("conv2d: kernel does not fit padded input");
  }
  d.ho = (d.h + 2 * ph - d.kh) / spec.stride_h + 1;
  d.wo = (d.w + 2 * pw - d.kw) / spec.stride_w + 1;
  return d;
}

// col is [(cin_g*kh*kw) x (ho*wo)] for one (batch, group) block.
void im2col(const double* x, const ConvDims& d, const Conv2dSpec& spec,
            int64_t b, int64_t g, double* col) {
  const int64_t plane = d.h * d.w;
  const double* xg = x + (b * d.cin + g * d.cin_g) * plane;
  int64_t row = 0;
  for (int64_t c = 0; c < d.cin_g; ++c) {
    for (int64_t ki = 0; ki < d.kh; ++ki) {
      for (int64_t kj = 0; kj < d.kw; ++kj, ++row) {
        double* dst = col + row * (d.ho * d.wo);
        for (int64_t oi = 0; oi < d.ho; ++oi) {
          const int64_t ii = oi * spec.stride_h + ki - spec.pad_h;
          for (int64_t oj = 0; oj < d.wo; ++oj) {
            const int64_t jj = oj * spec.stride_w + kj - spec.pad_w;
            double v = 0.0;
            if (ii >= 0 && ii < d.h && jj >= 0 && jj < d.w) {
              v = xg[c * plane + ii * d.w + jj];
            }
            dst[oi * d.wo + oj] = v;
          }
        }
      }
    }
  }
}

void col2im_acc(const double* col, const ConvDims& d, const Conv2dSpec& spec,
                int64_t b, int64_t g, double* dx) {
  const int64_t plane = d.h * d.w;
  double* xg = dx + (b * d.cin + g * d.cin_g) * plane;
  int64_t row = 0;
  for (int64_t c = 0; c < d.cin_g; ++c) {
    for (int64_t ki = 0; ki < d.kh; ++ki) {
      for (int64_t kj = 0; kj < d.kw; ++kj, ++row) {
        const double* src = col + row * (d.ho * d.wo);
        for (int64_t oi = 0; oi < d.ho; ++oi) {
          const int64_t ii = oi * spec.stride_h + ki - spec.pad_h;
          if (ii < 0 || ii >= d.h) continue;
          for (int64_t oj = 0; oj < d.wo; ++oj) {
            const int64_t jj = oj * spec.stride_w + kj - spec.pad_w;
            if (jj < 0 || jj >= d.w) continue;
            xg[c * plane + ii * d.w + jj] += src[oi * d.wo + oj];
          }
        }
      }
    }
  }
}

}  // namespace

Dtype default_dtype() { return g_default_dtype; }
void set_default_dtype(Dtype dtype) { g_default_dtype = dtype; }

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : prev_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = prev_; }

int64_t shape_numel(const Shape& shape) {
  int64_t n = 1;
  for (int64_t e : shape) n *= e;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ",";
    os << shape[i];
  }
  os << "]";
  return os.str();
}

void TensorNode::ensure_grad() {
  if (grad.empty()) grad.assign(values.size(), 0.0);
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  return from_values(std::move(shape), {}, requires_grad);
}

Tensor Tensor::full(Shape shape, double value) {
  const int64_t n = shape_numel(shape);
  return from_values(std::move(shape), std::vector<double>(n, value));
}

Tensor Tensor::from_values(Shape shape, std::vector<double> values,
                           bool requires_grad) {
  for (int64_t e : shape) {
    if (e <= 0) fail("tensor: extents must be positive, got " + shape_str(shape));
  }
  const int64_t n = shape_numel(shape);
  if (values.empty()) values.assign(n, 0.0);
  if (static_cast<int64_t>(values.size()) != n) {
    fail("tensor: data length does not match shape " + shape_str(shape));
  }
  check_finite("tensor", values);
  auto node = std::make_shared<TensorNode>();
  node->shape = std::move(shape);
  node->dtype = g_default_dtype;
  if (node->dtype == Dtype::F32) quantize_f32(values);
  node->values = std::move(values);
  node->requires_grad = requires_grad;
  node->on_grad_path = requires_grad;
  node->op_name = "leaf";
  return Tensor(std::move(node));
}

Tensor Tensor::scalar(double value) { return from_values({1}, {value}); }

const Shape& Tensor::shape() const { return node_->shape; }
int Tensor::rank() const { return static_cast<int>(node_->shape.size()); }
int64_t Tensor::dim(int axis) const { return node_->shape.at(axis); }
int64_t Tensor::numel() const { return static_cast<int64_t>(node_->values.size()); }
Dtype Tensor::dtype() const { return node_->dtype; }

std::span<const double> Tensor::values() const {
  return {node_->values.data(), node_->values.size()};
}

std::span<double> Tensor::mutable_values() {
  if (!node_->parents.empty() || node_->backward_fn) {
    fail("tensor: op outputs are immutable; only leaves may be mutated");
  }
  return {node_->values.data(), node_->values.size()};
}

double Tensor::at(std::initializer_list<int64_t> index) const {
  if (static_cast<int>(index.size()) != rank()) fail("tensor::at: rank mismatch");
  int64_t flat = 0;
  int i = 0;
  for (int64_t idx : index) {
    if (idx < 0 || idx >= node_->shape[i]) fail("tensor::at: index out of range");
    flat = flat * node_->shape[i] + idx;
    ++i;
  }
  return node_->values[flat];
}

double Tensor::item() const {
  if (numel() != 1) fail("tensor::item: tensor is not scalar");
  return node_->values[0];
}

bool Tensor::requires_grad() const { return node_->requires_grad; }

void Tensor::set_requires_grad(bool flag) {
  if (!node_->parents.empty()) fail("tensor: requires_grad is settable on leaves only");
  node_->requires_grad = flag;
  node_->on_grad_path = flag;
}

bool Tensor::has_grad() const { return node_ && !node_->grad.empty(); }

std::span<const double> Tensor::grad() const {
  if (node_->grad.empty()) fail("tensor::grad: no gradient present");
  return {node_->grad.data(), node_->grad.size()};
}

void Tensor::zero_grad() { node_->grad.clear(); }

void Tensor::backward() const {
  if (!node_) fail("backward: undefined tensor");
  if (numel() != 1) fail("backward: loss must be scalar");
  if (node_->backward_ran) {
    fail("backward: called twice on the same graph without a fresh forward");
  }
  if (!node_->on_grad_path) {
    fail("backward: graph is detached (no tracked inputs require grad)");
  }

  // Iterative reverse topological order over parents.
  std::vector<TensorNode*> order;
  std::unordered_set<TensorNode*> visited;
  std::vector<std::pair<TensorNode*, size_t>> stack;
  stack.emplace_back(node_.get(), 0);
  visited.insert(node_.get());
  while (!stack.empty()) {
    auto& [n, next] = stack.back();
    if (next < n->parents.size()) {
      TensorNode* p = n->parents[next++].get();
      if (p->on_grad_path && visited.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }

  node_->ensure_grad();
  node_->grad[0] = 1.0;
  static const bool profile = std::getenv("GROUPLANE_PROFILE_BACKWARD") != nullptr;
  if (profile) {
    static std::map<std::string, double> op_seconds;
    static int calls = 0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
      TensorNode* n = *it;
      const auto t0 = std::chrono::steady_clock::now();
      if (n->backward_fn && !n->grad.empty()) n->backward_fn(*n);
      op_seconds[n->op_name] +=
          std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
              .count();
      if (!n->requires_grad) n->grad.clear();
    }
    if (++calls % 6 == 0) {
      for (const auto& [op, s] : op_seconds) {
        std::fprintf(stderr, "backward %-18s %.3fs\n", op.c_str(), s);
      }
    }
  } else {
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
      TensorNode* n = *it;
      if (n->backward_fn && !n->grad.empty()) n->backward_fn(*n);
      if (!n->requires_grad) n->grad.clear();
    }
  }
  node_->backward_ran = true;
}

Tensor make_op(const char* name, const std::vector<Tensor>& inputs, Shape shape,
               std::vector<double> values,
               std::function<void(TensorNode&)> backward) {
  if (static_cast<int64_t>(values.size()) != shape_numel(shape)) {
    fail(std::string(name) + ": output buffer does not match shape");
  }
  check_finite(name, values);
  auto node = std::make_shared<TensorNode>();
  node->shape = std::move(shape);
  node->dtype = g_default_dtype;
  if (node->dtype == Dtype::F32) quantize_f32(values);
  node->values = std::move(values);
  node->op_name = name;
  bool track = g_grad_enabled;
  if (track) {
    track = false;
    for (const Tensor& t : inputs) {
      if (t.defined() && t.node()->on_grad_path) {
        track = true;
        break;
      }
    }
  }
  if (track) {
    node->on_grad_path = true;
    for (const Tensor& t : inputs) {
      if (t.defined()) node->parents.push_back(t.node());
    }
    node->backward_fn = std::move(backward);
  }
  return Tensor(std::move(node));
}

// ---------------------------------------------------------------------------
// elementwise & arithmetic

Tensor add(const Tensor& a, const Tensor& b) {
  check_same_shape("add", a, b);
  std::vector<double> out(a.numel());
  const auto av = a.values(), bv = b.values();
  for (size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
  auto an = a.node(), bn = b.node();
  return make_op("add", {a, b}, a.shape(), std::move(out), [an, bn](TensorNode& self) {
    an->ensure_grad();
    bn->ensure_grad();
    for (size_t i = 0; i < self.grad.size(); ++i) {
      an->grad[i] += self.grad[i];
      bn->grad[i] += self.grad[i];
    }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  check_same_shape("sub", a, b);
  std::vector<double> out(a.numel());
  const auto av = a.values(), bv = b.values();
  for (size_t i = 0; i < out.size(); ++i) out[i] = av[i] - bv[i];
  auto an = a.node(), bn = b.node();
  return make_op("sub", {a, b}, a.shape(), std::move(out), [an, bn](TensorNode& self) {
    an->ensure_grad();
    bn->ensure_grad();
    for (size_t i = 0; i < self.grad.size(); ++i) {
      an->grad[i] += self.grad[i];
      bn->grad[i] -= self.grad[i];
    }
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  check_same_shape("mul", a, b);
  std::vector<double> out(a.numel());
  const auto av = a.values(), bv = b.values();
  for (size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
  auto an = a.node(), bn = b.node();
  return make_op("mul", {a, b}, a.shape(), std::move(out), [an, bn](TensorNode& self) {
    an->ensure_grad();
    bn->ensure_grad();
    for (size_t i = 0; i < self.grad.size(); ++i) {
      an->grad[i] += self.grad[i] * bn->values[i];
      bn->grad[i] += self.grad[i] * an->values[i];
    }
  });
}

Tensor neg(const Tensor& a) { return scale(a, -1.0); }

Tensor scale(const Tensor& a, double c) {
  std::vector<double> out(a.numel());
  const auto av = a.values();
  for (size_t i = 0; i < out.size(); ++i) out[i] = av[i] * c;
  auto an = a.node();
  return make_op("scale", {a}, a.shape(), std::move(out), [an, c](TensorNode& self) {
    an->ensure_grad();
    for (size_t i = 0; i < self.grad.size(); ++i) an->grad[i] += self.grad[i] * c;
  });
}

Tensor add_scalar(const Tensor& a, double c) {
  std::vector<double> out(a.numel());
  const auto av = a.values();
  for (size_t i = 0; i < out.size(); ++i) out[i] = av[i] + c;
  auto an = a.node();
  return make_op("add_scalar", {a}, a.shape(), std::move(out), [an](TensorNode& self) {
    an->ensure_grad();
    for (size_t i = 0; i < self.grad.size(); ++i) an->grad[i] += self.grad[i];
  });
}

Tensor relu(const Tensor& a) {
  std::vector<double> out(a.numel());
  const auto av = a.values();
  for (size_t i = 0; i < out.size(); ++i) out[i] = av[i] > 0.0 ? av[i] : 0.0;
  auto an = a.node();
  return make_op("relu", {a}, a.shape(), std::move(out), [an](TensorNode& self) {
    an->ensure_grad();
    for (size_t i = 0; i < self.grad.size(); ++i) {
      if (an->values[i] > 0.0) an->grad[i] += self.grad[i];
    }
  });
}

Tensor sigmoid(const Tensor& a) {
  std::vector<double> out(a.numel());
  const auto av = a.values();
  for (size_t i = 0; i < out.size(); ++i) {
    const double x = av[i];
    if (x >= 0.0) {
      out[i] = 1.0 / (1.0 + std::exp(-x));
    } else {
      const double e = std::exp(x);
      out[i] = e / (1.0 + e);
    }
  }
  auto an = a.node();
  return make_op("sigmoid", {a}, a.shape(), std::move(out), [an](TensorNode& self) {
    an->ensure_grad();
    for (size_t i = 0; i < self.grad.size(); ++i) {
      const double y = self.values[i];
      an->grad[i] += self.grad[i] * y * (1.0 - y);
    }
  });
}

Tensor safe_log(const Tensor& a) {
  std::vector<double> out(a.numel());
  const auto av = a.values();
  for (size_t i = 0; i < out.size(); ++i) out[i] = std::log(std::max(av[i], kLogEps));
  auto an = a.node();
  return make_op("safe_log", {a}, a.shape(), std::move(out), [an](TensorNode& self) {
    an->ensure_grad();
    for (size_t i = 0; i < self.grad.size(); ++i) {
      const double x = an->values[i];
      if (x > kLogEps) an->grad[i] += self.grad[i] / x;
    }
  });
}

Tensor abs_value(const Tensor& a) {
  std::vector<double> out(a.numel());
  const auto av = a.values();
  for (size_t i = 0; i < out.size(); ++i) out[i] = std::fabs(av[i]);
  auto an = a.node();
  return make_op("abs", {a}, a.shape(), std::move(out), [an](TensorNode& self) {
    an->ensure_grad();
    for (size_t i = 0; i < self.grad.size(); ++i) {
      const double x = an->values[i];
      if (x > 0.0) {
        an->grad[i] += self.grad[i];
      } else if (x < 0.0) {
        an->grad[i] -= self.grad[i];
      }
    }
  });
}

// ---------------------------------------------------------------------------
// reductions & shape

Tensor softmax(const Tensor& a, int axis) {
  check_axis("softmax", a, axis);
  const AxisSplit s = split_axis(a.shape(), axis);
  if (s.extent < 1) fail("softmax: empty axis");
  std::vector<double> out(a.numel());
  const auto av = a.values();
  for (int64_t o = 0; o < s.outer; ++o) {
    for (int64_t in = 0; in < s.inner; ++in) {
      const int64_t base = o * s.extent * s.inner + in;
      double mx = -std::numeric_limits<double>::infinity();
      for (int64_t e = 0; e < s.extent; ++e) mx = std::max(mx, av[base + e * s.inner]);
      double sum = 0.0;
      for (int64_t e = 0; e < s.extent; ++e) {
        const double v = std::exp(av[base + e * s.inner] - mx);
        out[base + e * s.inner] = v;
        sum += v;
      }
      for (int64_t e = 0; e < s.extent; ++e) out[base + e * s.inner] /= sum;
    }
  }
  auto an = a.node();
  return make_op("softmax", {a}, a.shape(), std::move(out), [an, s](TensorNode& self) {
    an->ensure_grad();
    for (int64_t o = 0; o < s.outer; ++o) {
      for (int64_t in = 0; in < s.inner; ++in) {
        const int64_t base = o * s.extent * s.inner + in;
        double dot = 0.0;
        for (int64_t e = 0; e < s.extent; ++e) {
          const int64_t i = base + e * s.inner;
          dot += self.grad[i] * self.values[i];
        }
        for (int64_t e = 0; e < s.extent; ++e) {
          const int64_t i = base + e * s.inner;
          an->grad[i] += (self.grad[i] - dot) * self.values[i];
        }
      }
    }
  });
}

Tensor softmax_lastdim(const Tensor& a) { return softmax(a, a.rank() - 1); }

Tensor reduce_max(const Tensor& a, int axis, bool keepdim) {
  check_axis("reduce_max", a, axis);
  const AxisSplit s = split_axis(a.shape(), axis);
  if (s.extent < 1) fail("reduce_max: empty axis");
  std::vector<double> out(s.outer * s.inner);
  std::vector<int64_t> argmax(s.outer * s.inner);
  const auto av = a.values();
  for (int64_t o = 0; o < s.outer; ++o) {
    for (int64_t in = 0; in < s.inner; ++in) {
      const int64_t base = o * s.extent * s.inner + in;
      double best = av[base];
      int64_t best_i = base;
      for (int64_t e = 1; e < s.extent; ++e) {
        const double v = av[base + e * s.inner];
        if (v > best) {  // strict: first occurrence wins ties
          best = v;
          best_i = base + e * s.inner;
        }
      }
      out[o * s.inner + in] = best;
      argmax[o * s.inner + in] = best_i;
    }
  }
  Shape shape = a.shape();
  if (keepdim) {
    shape[axis] = 1;
  } else {
    shape.erase(shape.begin() + axis);
    if (shape.empty()) shape = {1};
  }
  auto an = a.node();
  return make_op("reduce_max", {a}, std::move(shape), std::move(out),
                 [an, argmax = std::move(argmax)](TensorNode& self) {
                   an->ensure_grad();
                   for (size_t i = 0; i < self.grad.size(); ++i) {
                     an->grad[argmax[i]] += self.grad[i];
                   }
                 });
}

Tensor reduce_sum(const Tensor& a, int axis, bool keepdim) {
  check_axis("reduce_sum", a, axis);
  const AxisSplit s = split_axis(a.shape(), axis);
  std::vector<double> out(s.outer * s.inner, 0.0);
  const auto av = a.values();
  for (int64_t o = 0; o < s.outer; ++o) {
    for (int64_t e = 0; e < s.extent; ++e) {
      const int64_t base = (o * s.extent + e) * s.inner;
      for (int64_t in = 0; in < s.inner; ++in) out[o * s.inner + in] += av[base + in];
    }
  }
  Shape shape = a.shape();
  if (keepdim) {
    shape[axis] = 1;
  } else {
    shape.erase(shape.begin() + axis);
    if (shape.empty()) shape = {1};
  }
  auto an = a.node();
  return make_op("reduce_sum", {a}, std::move(shape), std::move(out),
                 [an, s](TensorNode& self) {
                   an->ensure_grad();
                   for (int64_t o = 0; o < s.outer; ++o) {
                     for (int64_t e = 0; e < s.extent; ++e) {
                       const int64_t base = (o * s.extent + e) * s.inner;
                       for (int64_t in = 0; in < s.inner; ++in) {
                         an->grad[base + in] += self.grad[o * s.inner + in];
                       }
                     }
                   }
                 });
}

Tensor sum_all(const Tensor& a) {
  double sum = 0.0;
  for (double v : a.values()) sum += v;
  auto an = a.node();
  return make_op("sum_all", {a}, {1}, {sum}, [an](TensorNode& self) {
    an->ensure_grad();
    const double g = self.grad[0];
    for (double& gv : an->grad) gv += g;
  });
}

Tensor reshape(const Tensor& a, Shape shape) {
  if (shape_numel(shape) != a.numel()) {
    fail("reshape: element count mismatch " + shape_str(a.shape()) + " -> " +
         shape_str(shape));
  }
  std::vector<double> out(a.values().begin(), a.values().end());
  auto an = a.node();
  return make_op("reshape", {a}, std::move(shape), std::move(out),
                 [an](TensorNode& self) {
                   an->ensure_grad();
                   for (size_t i = 0; i < self.grad.size(); ++i) {
                     an->grad[i] += self.grad[i];
                   }
                 });
}

Tensor transpose_last2(const Tensor& a) {
  if (a.rank() < 2) fail("transpose_last2: rank must be >= 2");
  Shape shape = a.shape();
  const int64_t h = shape[shape.size() - 2];
  const int64_t w = shape[shape.size() - 1];
  std::swap(shape[shape.size() - 2], shape[shape.size() - 1]);
  const int64_t outer = a.numel() / (h * w);
  std::vector<double> out(a.numel());
  const auto av = a.values();
  for (int64_t o = 0; o < outer; ++o) {
    const int64_t base = o * h * w;
    for (int64_t i = 0; i < h; ++i) {
      for (int64_t j = 0; j < w; ++j) {
        out[base + j * h + i] = av[base + i * w + j];
      }
    }
  }
  auto an = a.node();
  return make_op("transpose_last2", {a}, std::move(shape), std::move(out),
                 [an, outer, h, w](TensorNode& self) {
                   an->ensure_grad();
                   for (int64_t o = 0; o < outer; ++o) {
                     const int64_t base = o * h * w;
                     for (int64_t i = 0; i < h; ++i) {
                       for (int64_t j = 0; j < w; ++j) {
                         an->grad[base + i * w + j] += self.grad[base + j * h + i];
                       }
                     }
                   }
                 });
}

Tensor slice(const Tensor& a, int axis, int64_t start, int64_t length) {
  check_axis("slice", a, axis);
  if (start < 0 || length <= 0 || start + length > a.dim(axis)) {
    fail("slice: range out of bounds");
  }
  const AxisSplit s = split_axis(a.shape(), axis);
  Shape shape = a.shape();
  shape[axis] = length;
  std::vector<double> out(shape_numel(shape));
  const auto av = a.values();
  for (int64_t o = 0; o < s.outer; ++o) {
    const double* src = av.data() + (o * s.extent + start) * s.inner;
    double* dst = out.data() + o * length * s.inner;
    std::memcpy(dst, src, sizeof(double) * length * s.inner);
  }
  auto an = a.node();
  return make_op("slice", {a}, std::move(shape), std::move(out),
                 [an, s, start, length](TensorNode& self) {
                   an->ensure_grad();
                   for (int64_t o = 0; o < s.outer; ++o) {
                     const double* src = self.grad.data() + o * length * s.inner;
                     double* dst = an->grad.data() + (o * s.extent + start) * s.inner;
                     for (int64_t i = 0; i < length * s.inner; ++i) dst[i] += src[i];
                   }
                 });
}

Tensor concat(const std::vector<Tensor>& parts, int axis) {
  if (parts.empty()) fail("concat: no inputs");
  check_axis("concat", parts[0], axis);
  Shape shape = parts[0].shape();
  int64_t total = 0;
  for (const Tensor& p : parts) {
    Shape ps = p.shape();
    if (static_cast<int>(ps.size()) != static_cast<int>(shape.size())) {
      fail("concat: rank mismatch");
    }
    for (int i = 0; i < static_cast<int>(ps.size()); ++i) {
      if (i != axis && ps[i] != shape[i]) fail("concat: extent mismatch off-axis");
    }
    total += ps[axis];
  }
  shape[axis] = total;
  const AxisSplit s = split_axis(shape, axis);
  std::vector<double> out(shape_numel(shape));
  int64_t offset = 0;
  for (const Tensor& p : parts) {
    const int64_t ext = p.dim(axis);
    const auto pv = p.values();
    for (int64_t o = 0; o < s.outer; ++o) {
      std::memcpy(out.data() + (o * total + offset) * s.inner,
                  pv.data() + o * ext * s.inner, sizeof(double) * ext * s.inner);
    }
    offset += ext;
  }
  std::vector<std::shared_ptr<TensorNode>> nodes;
  std::vector<int64_t> extents;
  for (const Tensor& p : parts) {
    nodes.push_back(p.node());
    extents.push_back(p.dim(axis));
  }
  return make_op("concat", parts, std::move(shape), std::move(out),
                 [nodes, extents, s, total](TensorNode& self) {
                   int64_t offset = 0;
                   for (size_t k = 0; k < nodes.size(); ++k) {
                     nodes[k]->ensure_grad();
                     const int64_t ext = extents[k];
                     for (int64_t o = 0; o < s.outer; ++o) {
                       const double* src =
                           self.grad.data() + (o * total + offset) * s.inner;
                       double* dst = nodes[k]->grad.data() + o * ext * s.inner;
                       for (int64_t i = 0; i < ext * s.inner; ++i) dst[i] += src[i];
                     }
                     offset += ext;
                   }
                 });
}

// ---------------------------------------------------------------------------
// linear algebra

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  if (w.rank() != 2) fail("linear: weight must be rank 2");
  const int64_t k = w.dim(1);
  const int64_t m = w.dim(0);
  if (x.rank() < 1 || x.shape().back() != k) {
    fail("linear: inner extents disagree (" + shape_str(x.shape()) + " vs " +
         shape_str(w.shape()) + ")");
  }
  if (b.defined() && (b.rank() != 1 || b.dim(0) != m)) {
    fail("linear: bias extent disagrees with weight rows");
  }
  const int64_t rows = x.numel() / k;
  std::vector<double> out(rows * m, 0.0);
  mm_nt(x.values().data(), w.values().data(), out.data(), rows, k, m);
  if (b.defined()) {
    const auto bv = b.values();
    for (int64_t r = 0; r < rows; ++r) {
      for (int64_t j = 0; j < m; ++j) out[r * m + j] += bv[j];
    }
  }
  Shape shape = x.shape();
  shape.back() = m;
  auto xn = x.node(), wn = w.node();
  auto bn = b.defined() ? b.node() : nullptr;
  return make_op("linear", {x, w, b}, std::move(shape), std::move(out),
                 [xn, wn, bn, rows, k, m](TensorNode& self) {
                   xn->ensure_grad();
                   wn->ensure_grad();
                   // dx[rows,k] += dy[rows,m] * w[m,k]
                   mm_nn(self.grad.data(), wn->values.data(), xn->grad.data(),
                         rows, m, k);
                   // dw[m,k] += dy[rows,m]^T * x[rows,k]
                   mm_tn(self.grad.data(), xn->values.data(), wn->grad.data(),
                         rows, m, k);
                   if (bn) {
                     bn->ensure_grad();
                     for (int64_t r = 0; r < rows; ++r) {
                       for (int64_t j = 0; j < m; ++j) {
                         bn->grad[j] += self.grad[r * m + j];
                       }
                     }
                   }
                 });
}

Tensor conv2d_grouped(const Tensor& x, const Tensor& w, const Tensor& b,
                      const Conv2dSpec& spec) {
  const ConvDims d = conv_dims(x, w, spec);
  if (b.defined() && (b.rank() != 1 || b.dim(0) != d.cout)) {
    fail("conv2d: bias extent disagrees with output channels");
  }
  const int64_t cout_g = d.cout / d.groups;
  const int64_t kdim = d.cin_g * d.kh * d.kw;
  const int64_t cells = d.ho * d.wo;
  std::vector<double> out(d.batch * d.cout * cells, 0.0);
  std::vector<double> col(kdim * cells);
  const double* xv = x.values().data();
  const double* wv = w.values().data();
  for (int64_t bi = 0; bi < d.batch; ++bi) {
    for (int64_t g = 0; g < d.groups; ++g) {
      im2col(xv, d, spec, bi, g, col.data());
      double* yg = out.data() + (bi * d.cout + g * cout_g) * cells;
      mm_nn(wv + g * cout_g * kdim, col.data(), yg, cout_g, kdim, cells);
    }
  }
  if (b.defined()) {
    const auto bv = b.values();
    for (int64_t bi = 0; bi < d.batch; ++bi) {
      for (int64_t c = 0; c < d.cout; ++c) {
        double* row = out.data() + (bi * d.cout + c) * cells;
        for (int64_t p = 0; p < cells; ++p) row[p] += bv[c];
      }
    }
  }
  auto xn = x.node(), wn = w.node();
  auto bn = b.defined() ? b.node() : nullptr;
  return make_op(
      "conv2d_grouped", {x, w, b}, {d.batch, d.cout, d.ho, d.wo}, std::move(out),
      [xn, wn, bn, d, spec, cout_g, kdim, cells](TensorNode& self) {
        xn->ensure_grad();
        wn->ensure_grad();
        std::vector<double> col(kdim * cells);
        std::vector<double> dcol(kdim * cells);
        for (int64_t bi = 0; bi < d.batch; ++bi) {
          for (int64_t g = 0; g < d.groups; ++g) {
            const double* dyg =
                self.grad.data() + (bi * d.cout + g * cout_g) * cells;
            // dW[cout_g,kdim] += dy[cout_g,cells] * col[kdim,cells]^T
            im2col(xn->values.data(), d, spec, bi, g, col.data());
            mm_nt(dyg, col.data(), wn->grad.data() + g * cout_g * kdim, cout_g,
                  cells, kdim);
            // dcol[kdim,cells] = w[cout_g,kdim]^T * dy[cout_g,cells]
            std::fill(dcol.begin(), dcol.end(), 0.0);
            mm_tn(wn->values.data() + g * cout_g * kdim, dyg, dcol.data(),
                  cout_g, kdim, cells);
            col2im_acc(dcol.data(), d, spec, bi, g, xn->grad.data());
          }
        }
        if (bn) {
          bn->ensure_grad();
          for (int64_t bi = 0; bi < d.batch; ++bi) {
            for (int64_t c = 0; c < d.cout; ++c) {
              const double* row = self.grad.data() + (bi * d.cout + c) * cells;
              double acc = 0.0;
              for (int64_t p = 0; p < cells; ++p) acc += row[p];
              bn->grad[c] += acc;
            }
          }
        }
      });
}

}  // namespace grouplane
