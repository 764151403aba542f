#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <sstream>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "ustrack/common.hpp"

namespace ustrack {

using Shape = std::vector<int>;

inline std::int64_t numel(const Shape& s) {
  std::int64_t n = 1;
  for (int d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
  os << ']';
  return os.str();
}

// When enabled, every op and backward pass verifies that no value or grad is
// NaN or infinite. Off by default; tests and training audits switch it on.
inline std::atomic<bool>& checked_mode_flag() {
  static std::atomic<bool> f{false};
  return f;
}
inline void set_checked_mode(bool on) { checked_mode_flag().store(on); }
inline bool checked_mode() { return checked_mode_flag().load(); }

// Thread-local tape switch. Inference paths disable it so forward passes do
// not allocate graph nodes.
inline bool& grad_mode() {
  thread_local bool enabled = true;
  return enabled;
}

struct NoGradGuard {
  bool prev;
  NoGradGuard() : prev(grad_mode()) { grad_mode() = false; }
  ~NoGradGuard() { grad_mode() = prev; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;
};

namespace detail {

struct TensorNode {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // sized lazily on first backward touch
  bool requires_grad = false;
  bool leaf = true;
  std::vector<std::shared_ptr<TensorNode>> parents;
  std::function<void(TensorNode&)> backward;

  void ensure_grad() {
    if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
  }
};

inline void check_finite(const std::vector<double>& v, const char* what) {
  if (!checked_mode()) return;
  for (double x : v) {
    if (!std::isfinite(x))
      throw std::runtime_error(std::string("checked mode: non-finite ") + what);
  }
}

}  // namespace detail

class Tensor {
 public:
  Tensor() = default;

  static Tensor from(std::vector<double> values, Shape shape,
                     bool requires_grad = false) {
    if (static_cast<std::int64_t>(values.size()) != numel(shape))
      throw std::invalid_argument("Tensor::from: " + std::to_string(values.size()) +
                                  " values for shape " + shape_str(shape));
    auto n = std::make_shared<detail::TensorNode>();
    n->shape = std::move(shape);
    n->value = std::move(values);
    n->requires_grad = requires_grad;
    detail::check_finite(n->value, "value");
    return Tensor(std::move(n));
  }

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    std::vector<double> v(static_cast<std::size_t>(numel(shape)), 0.0);
    return from(std::move(v), std::move(shape), requires_grad);
  }

  static Tensor full(Shape shape, double fill, bool requires_grad = false) {
    std::vector<double> v(static_cast<std::size_t>(numel(shape)), fill);
    return from(std::move(v), std::move(shape), requires_grad);
  }

  static Tensor scalar(double v, bool requires_grad = false) {
    return from({v}, {1}, requires_grad);
  }

  bool defined() const { return static_cast<bool>(n_); }
  const Shape& shape() const { return node().shape; }
  int rank() const { return static_cast<int>(node().shape.size()); }
  int dim(int i) const { return node().shape.at(static_cast<std::size_t>(i)); }
  std::size_t size() const { return node().value.size(); }

  const std::vector<double>& values() const { return node().value; }
  std::vector<double>& values_mut() { return node().value; }
  double item() const {
    if (size() != 1)
      throw std::invalid_argument("item(): tensor has shape " + shape_str(shape()));
    return node().value[0];
  }
  double at(std::size_t i) const { return node().value.at(i); }

  bool requires_grad() const { return node().requires_grad; }
  void set_requires_grad(bool on) {
    if (!node().leaf)
      throw std::invalid_argument("set_requires_grad: only leaf tensors");
    node().requires_grad = on;
  }
  bool is_leaf() const { return node().leaf; }

  bool has_grad() const { return node().grad.size() == node().value.size(); }
  const std::vector<double>& grad() const {
    if (!has_grad())
      throw std::runtime_error("grad(): no gradient; run backward first");
    return node().grad;
  }
  void zero_grad() { node().grad.assign(node().value.size(), 0.0); }

  detail::TensorNode& node() const {
    if (!n_) throw std::runtime_error("use of undefined Tensor");
    return *n_;
  }
  const std::shared_ptr<detail::TensorNode>& handle() const { return n_; }

  explicit Tensor(std::shared_ptr<detail::TensorNode> n) : n_(std::move(n)) {}

 private:
  std::shared_ptr<detail::TensorNode> n_;
};

namespace detail {

// Builds a tape node. If grad mode is off or no parent requires grad, the
// node carries no edges and the graph stays unallocated behind it.
inline Tensor make_op(Shape shape, std::vector<double> value,
                      std::vector<Tensor> parents,
                      std::function<void(TensorNode&)> backward) {
  auto n = std::make_shared<TensorNode>();
  n->shape = std::move(shape);
  n->value = std::move(value);
  check_finite(n->value, "value");
  bool track = grad_mode();
  bool any = false;
  if (track) {
    for (const auto& p : parents) any = any || p.node().requires_grad;
  }
  if (track && any) {
    n->requires_grad = true;
    n->leaf = false;
    n->parents.reserve(parents.size());
    for (auto& p : parents) n->parents.push_back(p.handle());
    n->backward = std::move(backward);
  }
  return Tensor(std::move(n));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Primitive ops
// ---------------------------------------------------------------------------

// y = W x + b with W [m x n], x [n], b [m].
inline Tensor affine(const Tensor& x, const Tensor& W, const Tensor& b) {
  if (x.rank() != 1 || W.rank() != 2 || b.rank() != 1 || W.dim(1) != x.dim(0) ||
      W.dim(0) != b.dim(0))
    throw std::invalid_argument("affine: dimension mismatch W" + shape_str(W.shape()) +
                                " x" + shape_str(x.shape()) + " b" + shape_str(b.shape()));
  const int m = W.dim(0), n = W.dim(1);
  const auto& wv = W.values();
  const auto& xv = x.values();
  const auto& bv = b.values();
  std::vector<double> y(static_cast<std::size_t>(m));
  for (int i = 0; i < m; ++i) {
    const double* row = wv.data() + static_cast<std::size_t>(i) * n;
    double acc = bv[static_cast<std::size_t>(i)];
    for (int j = 0; j < n; ++j) acc += row[j] * xv[static_cast<std::size_t>(j)];
    y[static_cast<std::size_t>(i)] = acc;
  }
  return detail::make_op(
      {m}, std::move(y), {x, W, b}, [m, n](detail::TensorNode& self) {
        auto& xn = *self.parents[0];
        auto& wn = *self.parents[1];
        auto& bn = *self.parents[2];
        const auto& g = self.grad;
        if (xn.requires_grad) {
          xn.ensure_grad();
          for (int j = 0; j < n; ++j) {
            double acc = 0.0;
            for (int i = 0; i < m; ++i)
              acc += wn.value[static_cast<std::size_t>(i) * n + j] * g[static_cast<std::size_t>(i)];
            xn.grad[static_cast<std::size_t>(j)] += acc;
          }
        }
        if (wn.requires_grad) {
          wn.ensure_grad();
          for (int i = 0; i < m; ++i) {
            double gi = g[static_cast<std::size_t>(i)];
            double* row = wn.grad.data() + static_cast<std::size_t>(i) * n;
            for (int j = 0; j < n; ++j) row[j] += gi * xn.value[static_cast<std::size_t>(j)];
          }
        }
        if (bn.requires_grad) {
          bn.ensure_grad();
          for (int i = 0; i < m; ++i) bn.grad[static_cast<std::size_t>(i)] += g[static_cast<std::size_t>(i)];
        }
      });
}

// Multi-channel 2D convolution: x [C,H,W], k [F,C,kh,kw], optional bias [F].
// Zero padding, floor output shape. Single fused tape node.
inline Tensor conv2d_stack(const Tensor& x, const Tensor& k, const Tensor& bias,
                           int stride, int pad) {
  if (x.rank() != 3 || k.rank() != 4)
    throw std::invalid_argument("conv2d_stack: expected x[C,H,W], k[F,C,kh,kw], got x" +
                                shape_str(x.shape()) + " k" + shape_str(k.shape()));
  if (stride < 1 || pad < 0)
    throw std::invalid_argument("conv2d_stack: stride must be >=1 and pad >=0");
  const int C = x.dim(0), H = x.dim(1), W = x.dim(2);
  const int F = k.dim(0), kh = k.dim(2), kw = k.dim(3);
  if (k.dim(1) != C)
    throw std::invalid_argument("conv2d_stack: kernel channels " + std::to_string(k.dim(1)) +
                                " != input channels " + std::to_string(C));
  if (H + 2 * pad < kh || W + 2 * pad < kw)
    throw std::invalid_argument("conv2d_stack: kernel " + std::to_string(kh) + "x" +
                                std::to_string(kw) + " larger than padded input " +
                                std::to_string(H + 2 * pad) + "x" + std::to_string(W + 2 * pad));
  const bool has_bias = bias.defined();
  if (has_bias && (bias.rank() != 1 || bias.dim(0) != F))
    throw std::invalid_argument("conv2d_stack: bias shape " + shape_str(bias.shape()));
  const int OH = (H + 2 * pad - kh) / stride + 1;
  const int OW = (W + 2 * pad - kw) / stride + 1;

  const auto& xv = x.values();
  const auto& kv = k.values();
  std::vector<double> y(static_cast<std::size_t>(F) * OH * OW, 0.0);
  for (int f = 0; f < F; ++f) {
    const double bv = has_bias ? bias.values()[static_cast<std::size_t>(f)] : 0.0;
    for (int oy = 0; oy < OH; ++oy) {
      const int iy0 = oy * stride - pad;
      const int ky_lo = std::max(0, -iy0);
      const int ky_hi = std::min(kh, H - iy0);
      for (int ox = 0; ox < OW; ++ox) {
        const int ix0 = ox * stride - pad;
        const int kx_lo = std::max(0, -ix0);
        const int kx_hi = std::min(kw, W - ix0);
        double acc = bv;
        for (int c = 0; c < C; ++c) {
          const double* xc = xv.data() + (static_cast<std::size_t>(c) * H) * W;
          const double* kc = kv.data() +
                             ((static_cast<std::size_t>(f) * C + c) * kh) * kw;
          for (int ky = ky_lo; ky < ky_hi; ++ky) {
            const double* xrow = xc + static_cast<std::size_t>(iy0 + ky) * W + ix0;
            const double* krow = kc + static_cast<std::size_t>(ky) * kw;
            for (int kx = kx_lo; kx < kx_hi; ++kx) acc += xrow[kx] * krow[kx];
          }
        }
        y[(static_cast<std::size_t>(f) * OH + oy) * OW + ox] = acc;
      }
    }
  }

  std::vector<Tensor> parents = {x, k};
  if (has_bias) parents.push_back(bias);
  return detail::make_op(
      {F, OH, OW}, std::move(y), std::move(parents),
      [C, H, W, F, kh, kw, OH, OW, stride, pad, has_bias](detail::TensorNode& self) {
        auto& xn = *self.parents[0];
        auto& kn = *self.parents[1];
        detail::TensorNode* bn = has_bias ? self.parents[2].get() : nullptr;
        const bool gx = xn.requires_grad;
        const bool gk = kn.requires_grad;
        const bool gb = bn && bn->requires_grad;
        if (gx) xn.ensure_grad();
        if (gk) kn.ensure_grad();
        if (gb) bn->ensure_grad();
        const auto& g = self.grad;
        for (int f = 0; f < F; ++f) {
          for (int oy = 0; oy < OH; ++oy) {
            const int iy0 = oy * stride - pad;
            const int ky_lo = std::max(0, -iy0);
            const int ky_hi = std::min(kh, H - iy0);
            for (int ox = 0; ox < OW; ++ox) {
              const double go = g[(static_cast<std::size_t>(f) * OH + oy) * OW + ox];
              if (go == 0.0) continue;
              const int ix0 = ox * stride - pad;
              const int kx_lo = std::max(0, -ix0);
              const int kx_hi = std::min(kw, W - ix0);
              if (gb) bn->grad[static_cast<std::size_t>(f)] += go;
              for (int c = 0; c < C; ++c) {
                const std::size_t xoff = (static_cast<std::size_t>(c) * H) * W;
                const std::size_t koff = ((static_cast<std::size_t>(f) * C + c) * kh) * kw;
                for (int ky = ky_lo; ky < ky_hi; ++ky) {
                  const std::size_t xrow = xoff + static_cast<std::size_t>(iy0 + ky) * W + ix0;
                  const std::size_t krow = koff + static_cast<std::size_t>(ky) * kw;
                  for (int kx = kx_lo; kx < kx_hi; ++kx) {
                    if (gx) xn.grad[xrow + kx] += kn.value[krow + kx] * go;
                    if (gk) kn.grad[krow + kx] += xn.value[xrow + kx] * go;
                  }
                }
              }
            }
          }
        }
      });
}

// Single-channel convenience wrapper: x [H,W], k [kh,kw].
inline Tensor conv2d(const Tensor& x, const Tensor& k, int stride, int pad);

inline Tensor reshape(const Tensor& x, Shape shape) {
  if (numel(shape) != static_cast<std::int64_t>(x.size()))
    throw std::invalid_argument("reshape: cannot view " + shape_str(x.shape()) +
                                " as " + shape_str(shape));
  return detail::make_op(std::move(shape), x.values(), {x},
                         [](detail::TensorNode& self) {
                           auto& p = *self.parents[0];
                           if (!p.requires_grad) return;
                           p.ensure_grad();
                           for (std::size_t i = 0; i < self.grad.size(); ++i)
                             p.grad[i] += self.grad[i];
                         });
}

inline Tensor conv2d(const Tensor& x, const Tensor& k, int stride, int pad) {
  if (x.rank() != 2 || k.rank() != 2)
    throw std::invalid_argument("conv2d: expected x[H,W], k[kh,kw], got x" +
                                shape_str(x.shape()) + " k" + shape_str(k.shape()));
  Tensor x3 = reshape(x, {1, x.dim(0), x.dim(1)});
  Tensor k4 = reshape(k, {1, 1, k.dim(0), k.dim(1)});
  Tensor y = conv2d_stack(x3, k4, Tensor(), stride, pad);
  return reshape(y, {y.dim(1), y.dim(2)});
}

enum class Act { Sigmoid, Tanh, Relu };

inline Tensor activation(const Tensor& x, Act kind) {
  std::vector<double> y(x.size());
  const auto& xv = x.values();
  switch (kind) {
    case Act::Sigmoid:
      for (std::size_t i = 0; i < y.size(); ++i) y[i] = 1.0 / (1.0 + std::exp(-xv[i]));
      break;
    case Act::Tanh:
      for (std::size_t i = 0; i < y.size(); ++i) y[i] = std::tanh(xv[i]);
      break;
    case Act::Relu:
      for (std::size_t i = 0; i < y.size(); ++i) y[i] = xv[i] > 0.0 ? xv[i] : 0.0;
      break;
  }
  return detail::make_op(x.shape(), std::move(y), {x},
                         [kind](detail::TensorNode& self) {
                           auto& p = *self.parents[0];
                           if (!p.requires_grad) return;
                           p.ensure_grad();
                           const auto& g = self.grad;
                           const auto& y = self.value;
                           switch (kind) {
                             case Act::Sigmoid:
                               for (std::size_t i = 0; i < g.size(); ++i)
                                 p.grad[i] += g[i] * y[i] * (1.0 - y[i]);
                               break;
                             case Act::Tanh:
                               for (std::size_t i = 0; i < g.size(); ++i)
                                 p.grad[i] += g[i] * (1.0 - y[i] * y[i]);
                               break;
                             case Act::Relu:
                               for (std::size_t i = 0; i < g.size(); ++i)
                                 p.grad[i] += y[i] > 0.0 ? g[i] : 0.0;
                               break;
                           }
                         });
}

namespace detail {
inline void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape())
    throw std::invalid_argument(std::string(op) + ": shape mismatch " +
                                shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}
}  // namespace detail

inline Tensor add(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "add");
  std::vector<double> y(a.size());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = a.values()[i] + b.values()[i];
  return detail::make_op(a.shape(), std::move(y), {a, b},
                         [](detail::TensorNode& self) {
                           for (int s = 0; s < 2; ++s) {
                             auto& p = *self.parents[static_cast<std::size_t>(s)];
                             if (!p.requires_grad) continue;
                             p.ensure_grad();
                             for (std::size_t i = 0; i < self.grad.size(); ++i)
                               p.grad[i] += self.grad[i];
                           }
                         });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "sub");
  std::vector<double> y(a.size());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = a.values()[i] - b.values()[i];
  return detail::make_op(a.shape(), std::move(y), {a, b},
                         [](detail::TensorNode& self) {
                           auto& pa = *self.parents[0];
                           auto& pb = *self.parents[1];
                           if (pa.requires_grad) {
                             pa.ensure_grad();
                             for (std::size_t i = 0; i < self.grad.size(); ++i)
                               pa.grad[i] += self.grad[i];
                           }
                           if (pb.requires_grad) {
                             pb.ensure_grad();
                             for (std::size_t i = 0; i < self.grad.size(); ++i)
                               pb.grad[i] -= self.grad[i];
                           }
                         });
}

// Elementwise (Hadamard) product.
inline Tensor mul(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "mul");
  std::vector<double> y(a.size());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = a.values()[i] * b.values()[i];
  return detail::make_op(a.shape(), std::move(y), {a, b},
                         [](detail::TensorNode& self) {
                           auto& pa = *self.parents[0];
                           auto& pb = *self.parents[1];
                           if (pa.requires_grad) {
                             pa.ensure_grad();
                             for (std::size_t i = 0; i < self.grad.size(); ++i)
                               pa.grad[i] += self.grad[i] * pb.value[i];
                           }
                           if (pb.requires_grad) {
                             pb.ensure_grad();
                             for (std::size_t i = 0; i < self.grad.size(); ++i)
                               pb.grad[i] += self.grad[i] * pa.value[i];
                           }
                         });
}

inline Tensor scale(const Tensor& x, double c) {
  std::vector<double> y(x.size());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = x.values()[i] * c;
  return detail::make_op(x.shape(), std::move(y), {x},
                         [c](detail::TensorNode& self) {
                           auto& p = *self.parents[0];
                           if (!p.requires_grad) return;
                           p.ensure_grad();
                           for (std::size_t i = 0; i < self.grad.size(); ++i)
                             p.grad[i] += self.grad[i] * c;
                         });
}

inline Tensor add_scalar(const Tensor& x, double c) {
  std::vector<double> y(x.size());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = x.values()[i] + c;
  return detail::make_op(x.shape(), std::move(y), {x},
                         [](detail::TensorNode& self) {
                           auto& p = *self.parents[0];
                           if (!p.requires_grad) return;
                           p.ensure_grad();
                           for (std::size_t i = 0; i < self.grad.size(); ++i)
                             p.grad[i] += self.grad[i];
                         });
}

// Scalar view of one element.
inline Tensor pick(const Tensor& x, std::size_t index) {
  if (index >= x.size())
    throw std::invalid_argument("pick: index " + std::to_string(index) +
                                " out of range for " + shape_str(x.shape()));
  return detail::make_op({1}, {x.values()[index]}, {x},
                         [index](detail::TensorNode& self) {
                           auto& p = *self.parents[0];
                           if (!p.requires_grad) return;
                           p.ensure_grad();
                           p.grad[index] += self.grad[0];
                         });
}

inline Tensor sum(const Tensor& x) {
  double acc = 0.0;
  for (double v : x.values()) acc += v;
  return detail::make_op({1}, {acc}, {x}, [](detail::TensorNode& self) {
    auto& p = *self.parents[0];
    if (!p.requires_grad) return;
    p.ensure_grad();
    const double g = self.grad[0];
    for (std::size_t i = 0; i < p.grad.size(); ++i) p.grad[i] += g;
  });
}

inline Tensor mean(const Tensor& x) {
  return scale(sum(x), 1.0 / static_cast<double>(x.size()));
}

// Nearest-neighbor sampling of a [C,H,W] map over an axis-aligned window,
// resampled to [C,oh,ow]. The window is given by its top-left corner and
// extent in source coordinates. Used both for feature upsampling (window =
// whole map) and ROI feature extraction.
inline Tensor sample_window(const Tensor& x, double x0, double y0, double w,
                            double h, int oh, int ow) {
  if (x.rank() != 3)
    throw std::invalid_argument("sample_window: expected [C,H,W], got " +
                                shape_str(x.shape()));
  if (oh < 1 || ow < 1 || !(w > 0.0) || !(h > 0.0))
    throw std::invalid_argument("sample_window: non-positive window or output size");
  const int C = x.dim(0), H = x.dim(1), W = x.dim(2);
  std::vector<int> iy(static_cast<std::size_t>(oh)), ix(static_cast<std::size_t>(ow));
  for (int i = 0; i < oh; ++i) {
    int v = static_cast<int>(std::floor(y0 + (i + 0.5) * h / oh));
    iy[static_cast<std::size_t>(i)] = std::clamp(v, 0, H - 1);
  }
  for (int j = 0; j < ow; ++j) {
    int v = static_cast<int>(std::floor(x0 + (j + 0.5) * w / ow));
    ix[static_cast<std::size_t>(j)] = std::clamp(v, 0, W - 1);
  }
  std::vector<double> y(static_cast<std::size_t>(C) * oh * ow);
  const auto& xv = x.values();
  for (int c = 0; c < C; ++c)
    for (int i = 0; i < oh; ++i)
      for (int j = 0; j < ow; ++j)
        y[(static_cast<std::size_t>(c) * oh + i) * ow + j] =
            xv[(static_cast<std::size_t>(c) * H + iy[static_cast<std::size_t>(i)]) * W +
               ix[static_cast<std::size_t>(j)]];
  return detail::make_op(
      {C, oh, ow}, std::move(y), {x},
      [C, H, W, oh, ow, iy = std::move(iy), ix = std::move(ix)](detail::TensorNode& self) {
        auto& p = *self.parents[0];
        if (!p.requires_grad) return;
        p.ensure_grad();
        for (int c = 0; c < C; ++c)
          for (int i = 0; i < oh; ++i)
            for (int j = 0; j < ow; ++j)
              p.grad[(static_cast<std::size_t>(c) * H + iy[static_cast<std::size_t>(i)]) * W +
                     ix[static_cast<std::size_t>(j)]] +=
                  self.grad[(static_cast<std::size_t>(c) * oh + i) * ow + j];
      });
}

inline Tensor resize_nearest(const Tensor& x, int oh, int ow) {
  if (x.rank() != 3)
    throw std::invalid_argument("resize_nearest: expected [C,H,W], got " +
                                shape_str(x.shape()));
  return sample_window(x, 0.0, 0.0, static_cast<double>(x.dim(2)),
                       static_cast<double>(x.dim(1)), oh, ow);
}

// ---------------------------------------------------------------------------
// Reverse pass
// ---------------------------------------------------------------------------

// Populates grads of every reachable tensor that requires grad. Leaf grads
// accumulate across calls; intermediate grads are reset per call. Ordering is
// a deterministic post-order walk, so identical graphs replay identically.
inline void backward(const Tensor& loss) {
  if (loss.size() != 1)
    throw std::invalid_argument("backward: loss must be scalar, got shape " +
                                shape_str(loss.shape()));
  detail::TensorNode* root = &loss.node();
  if (!root->requires_grad) return;  // constant graph, nothing to do

  std::vector<detail::TensorNode*> order;
  std::unordered_set<detail::TensorNode*> done;
  std::vector<std::pair<detail::TensorNode*, std::size_t>> stack;
  stack.emplace_back(root, 0);
  while (!stack.empty()) {
    auto& [node, idx] = stack.back();
    if (done.count(node)) {
      stack.pop_back();
      continue;
    }
    if (idx < node->parents.size()) {
      detail::TensorNode* parent = node->parents[idx].get();
      ++idx;
      if (parent->requires_grad && !done.count(parent)) stack.emplace_back(parent, 0);
    } else {
      done.insert(node);
      order.push_back(node);
      stack.pop_back();
    }
  }

  for (detail::TensorNode* n : order) {
    if (n->leaf)
      n->ensure_grad();  // accumulates across backward calls
    else
      n->grad.assign(n->value.size(), 0.0);
  }
  root->grad[0] += 1.0;

  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    detail::TensorNode* n = *it;
    if (n->backward) {
      n->backward(*n);
      if (checked_mode()) {
        for (const auto& p : n->parents)
          if (p->requires_grad) detail::check_finite(p->grad, "grad");
      }
    }
  }
}

inline void clear_grads(const std::vector<Tensor>& params) {
  for (const auto& p : params) const_cast<Tensor&>(p).zero_grad();
}

// Max over all parameter entries of |analytic - central difference| scaled by
// max(1, |analytic|). f must rebuild its graph from the given leaves on every
// call.
inline double grad_check(const std::function<Tensor()>& f,
                         const std::vector<Tensor>& params, double h = 1e-5) {
  clear_grads(params);
  Tensor loss = f();
  backward(loss);
  std::vector<std::vector<double>> analytic;
  analytic.reserve(params.size());
  for (const auto& p : params)
    analytic.push_back(p.has_grad() ? p.node().grad
                                    : std::vector<double>(p.size(), 0.0));

  double worst = 0.0;
  NoGradGuard ng;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    auto& v = const_cast<Tensor&>(params[pi]).values_mut();
    for (std::size_t i = 0; i < v.size(); ++i) {
      const double orig = v[i];
      v[i] = orig + h;
      const double fp = f().item();
      v[i] = orig - h;
      const double fm = f().item();
      v[i] = orig;
      const double fd = (fp - fm) / (2.0 * h);
      const double a = analytic[pi][i];
      const double dev = std::abs(a - fd) / std::max(1.0, std::abs(a));
      worst = std::max(worst, dev);
    }
  }
  return worst;
}

}  // namespace ustrack
