#pragma once

#include <array>
#include <cmath>
#include <string>
#include <vector>

#include "ustrack/box.hpp"
#include "ustrack/common.hpp"
#include "ustrack/tensor.hpp"

namespace ustrack {

// Weights of the combined detector objective (classification, mask, box).
struct LossWeights {
  double cls = 0.2;
  double mask = 0.2;
  double box = 0.6;
};

struct MarginConfig {
  double margin_gamma = 1.0;  // decision boundary of the hinge
  double eps = 1e-6;          // keeps the gradient-norm denominator away from 0
  std::vector<std::string> layers = {"input", "hidden"};
};

struct MaskLossConfig {
  int margin_m = 2;           // angular margin multiplier, >= 1
  double weight_decay = 1e-4; // Frobenius penalty on the pixel classifier
};

// Robust (smooth-L1) loss: 0.5u^2 for |u| < 1, |u| - 0.5 otherwise.
inline double smooth_l1(double u) {
  const double a = std::abs(u);
  return a < 1.0 ? 0.5 * u * u : a - 0.5;
}

// Elementwise taped version.
inline Tensor smooth_l1(const Tensor& u) {
  std::vector<double> y(u.size());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = smooth_l1(u.values()[i]);
  return detail::make_op(u.shape(), std::move(y), {u},
                         [](detail::TensorNode& self) {
                           auto& p = *self.parents[0];
                           if (!p.requires_grad) return;
                           p.ensure_grad();
                           for (std::size_t i = 0; i < self.grad.size(); ++i) {
                             const double x = p.value[i];
                             const double d = std::abs(x) < 1.0 ? x : (x > 0.0 ? 1.0 : -1.0);
                             p.grad[i] += self.grad[i] * d;
                           }
                         });
}

// Piecewise angular margin profile: (-1)^k cos(m*theta) - 2k on
// [k*pi/m, (k+1)*pi/m]. Continuous and nonincreasing on [0, pi].
inline double margin_phi(double theta, int m) {
  constexpr double kPi = 3.14159265358979323846;
  if (m < 1) throw std::invalid_argument("margin_phi: m must be >= 1");
  if (theta < 0.0 || theta > kPi)
    throw std::invalid_argument("margin_phi: theta " + std::to_string(theta) +
                                " outside [0, pi]");
  int k = static_cast<int>(std::floor(theta * m / kPi));
  k = std::min(k, m - 1);
  const double sign = (k % 2 == 0) ? 1.0 : -1.0;
  return sign * std::cos(m * theta) - 2.0 * k;
}

// Attention box-regression objective: squared delta error plus the mean
// squared intensity difference over the intersection region. The patch term
// is a data-dependent constant; gradients flow through the deltas.
inline Tensor attention_loss(const Tensor& pred_delta, const BoxDelta& gt,
                             const std::vector<double>& u,
                             const std::vector<double>& v,
                             int intersection_pixels) {
  if (pred_delta.size() != 4)
    throw std::invalid_argument("attention_loss: predicted delta must have 4 entries, got " +
                                shape_str(pred_delta.shape()));
  Tensor gt_t = Tensor::from({gt.tx, gt.ty, gt.tw, gt.th}, {4});
  Tensor diff = sub(pred_delta, gt_t);
  Tensor loss = sum(mul(diff, diff));

  if (intersection_pixels <= 0) {
    log_warn("attention_loss: empty intersection, patch term omitted");
    return loss;
  }
  if (u.size() != v.size())
    throw std::invalid_argument("attention_loss: patch size mismatch " +
                                std::to_string(u.size()) + " vs " + std::to_string(v.size()));
  double patch = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i) {
    const double d = u[i] - v[i];
    patch += d * d;
  }
  patch /= static_cast<double>(intersection_pixels);
  return add_scalar(loss, patch);
}

// Gradients of the two class scores with respect to one layer's activations,
// captured by the caller before building the hinge. The norms act as
// constants in the backward pass (no second-order terms).
struct LayerGrads {
  std::string layer;
  std::vector<double> grad_other;
  std::vector<double> grad_true;
};

// Large-margin classification hinge for one sample: for each configured
// layer l, max{0, gamma + (f_other - f_true) / (eps + ||grad_l(f_other) -
// grad_l(f_true)||_2)}, summed over layers.
inline Tensor margin_cls_loss(const Tensor& f_other, const Tensor& f_true,
                              const std::vector<LayerGrads>& layer_grads,
                              const MarginConfig& cfg) {
  if (f_other.size() != 1 || f_true.size() != 1)
    throw std::invalid_argument("margin_cls_loss: class scores must be scalars");
  Tensor diff = sub(f_other, f_true);
  Tensor total;
  for (const auto& layer : cfg.layers) {
    const LayerGrads* found = nullptr;
    for (const auto& lg : layer_grads)
      if (lg.layer == layer) {
        found = &lg;
        break;
      }
    if (!found || found->grad_other.empty() ||
        found->grad_other.size() != found->grad_true.size())
      throw std::invalid_argument("margin_cls_loss: missing gradient for layer '" +
                                  layer + "'");
    double norm_sq = 0.0;
    for (std::size_t i = 0; i < found->grad_other.size(); ++i) {
      const double d = found->grad_other[i] - found->grad_true[i];
      norm_sq += d * d;
    }
    const double denom = cfg.eps + std::sqrt(norm_sq);
    Tensor term = activation(add_scalar(scale(diff, 1.0 / denom), cfg.margin_gamma),
                             Act::Relu);
    total = total.defined() ? add(total, term) : term;
  }
  return total;
}

inline Tensor margin_cls_loss(const std::array<Tensor, 2>& f_scores,
                              const std::vector<LayerGrads>& layer_grads,
                              int true_class, const MarginConfig& cfg) {
  if (true_class != 0 && true_class != 1)
    throw std::invalid_argument("margin_cls_loss: true_class must be 0 or 1");
  return margin_cls_loss(f_scores[static_cast<std::size_t>(1 - true_class)],
                         f_scores[static_cast<std::size_t>(true_class)], layer_grads, cfg);
}

namespace detail {

// Chebyshev T_m and its derivative m*U_{m-1}, evaluated at c.
inline std::pair<double, double> chebyshev_t(double c, int m) {
  double t_prev = 1.0, t_cur = c;       // T_0, T_1
  double u_prev = 1.0, u_cur = 2.0 * c; // U_0, U_1
  if (m == 0) return {1.0, 0.0};
  if (m == 1) return {c, 1.0};
  for (int j = 2; j <= m; ++j) {
    const double t_next = 2.0 * c * t_cur - t_prev;
    t_prev = t_cur;
    t_cur = t_next;
    if (j < m) {
      const double u_next = 2.0 * c * u_cur - u_prev;
      u_prev = u_cur;
      u_cur = u_next;
    }
  }
  return {t_cur, static_cast<double>(m) * u_cur};
}

inline double softplus(double u) {
  return std::max(u, 0.0) + std::log1p(std::exp(-std::abs(u)));
}

}  // namespace detail

// Large-margin softmax over binary pixel labels. features is [P,d] (one row
// per pixel), weights is [2,d] (one row per class). Returns the mean of
// -log(e^{|w_y||x| phi(theta_y)} / (e^{|w_y||x| phi(theta_y)} + e^{w_o . x}))
// over pixels with nonzero features, plus weight_decay * ||W||_F^2.
// Zero-norm pixels are skipped and counted. Single fused tape node with
// analytic gradients; cos(m*theta) is evaluated as a Chebyshev polynomial of
// cos(theta) so no inverse trig enters the derivative.
inline Tensor mask_loss(const Tensor& features, const Tensor& weights,
                        const std::vector<int>& labels, const MaskLossConfig& cfg,
                        int* skipped_out = nullptr) {
  constexpr double kPi = 3.14159265358979323846;
  if (features.rank() != 2 || weights.rank() != 2 || weights.dim(0) != 2 ||
      weights.dim(1) != features.dim(1))
    throw std::invalid_argument("mask_loss: want features[P,d], weights[2,d]; got " +
                                shape_str(features.shape()) + " and " +
                                shape_str(weights.shape()));
  if (cfg.margin_m < 1) throw std::invalid_argument("mask_loss: margin m must be >= 1");
  if (cfg.weight_decay < 0.0)
    throw std::invalid_argument("mask_loss: negative weight decay");
  const int P = features.dim(0), d = features.dim(1);
  if (static_cast<int>(labels.size()) != P)
    throw std::invalid_argument("mask_loss: label count " + std::to_string(labels.size()) +
                                " != pixel count " + std::to_string(P));
  const int m = cfg.margin_m;
  const auto& xv = features.values();
  const auto& wv = weights.values();

  double wnorm_sq[2] = {0.0, 0.0};
  for (int j = 0; j < 2; ++j)
    for (int q = 0; q < d; ++q) {
      const double w = wv[static_cast<std::size_t>(j) * d + q];
      wnorm_sq[j] += w * w;
    }

  int skipped = 0;
  double total = 0.0;
  std::vector<double> z_other(static_cast<std::size_t>(P)), z_true(static_cast<std::size_t>(P));
  std::vector<char> valid(static_cast<std::size_t>(P), 0);
  std::vector<double> r_all(static_cast<std::size_t>(P)), c_all(static_cast<std::size_t>(P));
  for (int i = 0; i < P; ++i) {
    const double* x = xv.data() + static_cast<std::size_t>(i) * d;
    double r_sq = 0.0;
    for (int q = 0; q < d; ++q) r_sq += x[q] * x[q];
    if (r_sq == 0.0) {
      ++skipped;
      continue;
    }
    const int t = labels[static_cast<std::size_t>(i)] ? 1 : 0;
    const int o = 1 - t;
    const double r = std::sqrt(r_sq);
    const double nt = std::max(std::sqrt(wnorm_sq[t]), 1e-12);
    double dot_t = 0.0, dot_o = 0.0;
    for (int q = 0; q < d; ++q) {
      dot_t += wv[static_cast<std::size_t>(t) * d + q] * x[q];
      dot_o += wv[static_cast<std::size_t>(o) * d + q] * x[q];
    }
    const double c = std::clamp(dot_t / (nt * r), -1.0, 1.0);
    const double theta = std::acos(c);
    int k = static_cast<int>(std::floor(theta * m / kPi));
    k = std::min(k, m - 1);
    const double sign = (k % 2 == 0) ? 1.0 : -1.0;
    const double phi = sign * detail::chebyshev_t(c, m).first - 2.0 * k;
    const double zt = nt * r * phi;
    const double zo = dot_o;  // |w_o||x| cos(theta_o) is exactly the dot product
    total += detail::softplus(zo - zt);
    valid[static_cast<std::size_t>(i)] = 1;
    z_other[static_cast<std::size_t>(i)] = zo;
    z_true[static_cast<std::size_t>(i)] = zt;
    r_all[static_cast<std::size_t>(i)] = r;
    c_all[static_cast<std::size_t>(i)] = c;
  }
  const int n_valid = P - skipped;
  if (skipped > 0)
    log_warn("mask_loss: skipped " + std::to_string(skipped) + " zero-norm pixel(s)");
  if (skipped_out) *skipped_out = skipped;
  double value = n_valid > 0 ? total / n_valid : 0.0;
  value += cfg.weight_decay * (wnorm_sq[0] + wnorm_sq[1]);

  std::vector<int> labels_c(labels);
  return detail::make_op(
      {1}, {value}, {features, weights},
      [P, d, m, cfg, labels_c = std::move(labels_c), valid = std::move(valid),
       z_other = std::move(z_other), z_true = std::move(z_true), r_all = std::move(r_all),
       c_all = std::move(c_all), n_valid](detail::TensorNode& self) {
        constexpr double kPiL = 3.14159265358979323846;
        auto& xn = *self.parents[0];
        auto& wn = *self.parents[1];
        const bool gx = xn.requires_grad;
        const bool gw = wn.requires_grad;
        if (gx) xn.ensure_grad();
        if (gw) wn.ensure_grad();
        const double g = self.grad[0];
        double nrm[2];
        for (int j = 0; j < 2; ++j) {
          double s = 0.0;
          for (int q = 0; q < d; ++q) {
            const double w = wn.value[static_cast<std::size_t>(j) * d + q];
            s += w * w;
          }
          nrm[j] = std::max(std::sqrt(s), 1e-12);
        }
        const double inv_n = n_valid > 0 ? 1.0 / n_valid : 0.0;
        for (int i = 0; i < P; ++i) {
          if (!valid[static_cast<std::size_t>(i)]) continue;
          const int t = labels_c[static_cast<std::size_t>(i)] ? 1 : 0;
          const int o = 1 - t;
          const double* x = xn.value.data() + static_cast<std::size_t>(i) * d;
          const double* wt = wn.value.data() + static_cast<std::size_t>(t) * d;
          const double* wo = wn.value.data() + static_cast<std::size_t>(o) * d;
          const double r = r_all[static_cast<std::size_t>(i)];
          const double c = c_all[static_cast<std::size_t>(i)];
          const double nt = nrm[t];
          const double u = z_other[static_cast<std::size_t>(i)] - z_true[static_cast<std::size_t>(i)];
          const double s = 1.0 / (1.0 + std::exp(-u));  // dL/dz_other
          const double go = g * inv_n * s;
          const double gt = -go;
          const double theta = std::acos(c);
          int k = static_cast<int>(std::floor(theta * m / kPiL));
          k = std::min(k, m - 1);
          const double sign = (k % 2 == 0) ? 1.0 : -1.0;
          auto [tm, dtm] = detail::chebyshev_t(c, m);
          const double phi = sign * tm - 2.0 * k;
          const double dphi = sign * dtm;
          for (int q = 0; q < d; ++q) {
            // z_true = nt * r * phi(c)
            const double dzt_dx =
                nt * phi * x[q] / r + dphi * wt[q] - nt * dphi * c * x[q] / r;
            const double dzt_dwt =
                r * phi * wt[q] / nt + dphi * x[q] - r * dphi * c * wt[q] / nt;
            if (gx) {
              xn.grad[static_cast<std::size_t>(i) * d + q] += go * wo[q] + gt * dzt_dx;
            }
            if (gw) {
              wn.grad[static_cast<std::size_t>(o) * d + q] += go * x[q];
              wn.grad[static_cast<std::size_t>(t) * d + q] += gt * dzt_dwt;
            }
          }
        }
        if (gw && cfg.weight_decay > 0.0) {
          for (std::size_t q = 0; q < wn.value.size(); ++q)
            wn.grad[q] += g * 2.0 * cfg.weight_decay * wn.value[q];
        }
      });
}

// Center regression objective: sum of smooth-L1 over x and y residuals of
// every (prediction, target) pair. Box size is fixed, so only the two center
// offsets are regressed.
inline Tensor box_loss(const std::vector<Tensor>& pred_deltas,
                       const std::vector<std::pair<double, double>>& target_deltas) {
  if (pred_deltas.size() != target_deltas.size())
    throw std::invalid_argument("box_loss: " + std::to_string(pred_deltas.size()) +
                                " predictions vs " + std::to_string(target_deltas.size()) +
                                " targets");
  Tensor total = Tensor::scalar(0.0);
  for (std::size_t i = 0; i < pred_deltas.size(); ++i) {
    const auto& p = pred_deltas[i];
    if (p.size() != 2)
      throw std::invalid_argument("box_loss: prediction " + std::to_string(i) +
                                  " must have 2 entries (tx, ty)");
    Tensor target = Tensor::from({target_deltas[i].first, target_deltas[i].second}, {2});
    total = add(total, sum(smooth_l1(sub(p, target))));
  }
  return total;
}

inline Tensor combined_loss(const Tensor& l_cls, const Tensor& l_mask,
                            const Tensor& l_box, const LossWeights& w) {
  if (w.cls < 0.0 || w.mask < 0.0 || w.box < 0.0)
    throw std::invalid_argument("combined_loss: negative weight");
  return add(add(scale(l_cls, w.cls), scale(l_mask, w.mask)), scale(l_box, w.box));
}

// Binary cross-entropy on a logit; plumbing for the proposal objectness head.
inline Tensor bce_logit(const Tensor& z, double target) {
  if (z.size() != 1) throw std::invalid_argument("bce_logit: logit must be scalar");
  const double zv = z.item();
  const double value = detail::softplus(zv) - target * zv;
  return detail::make_op({1}, {value}, {z}, [target](detail::TensorNode& self) {
    auto& p = *self.parents[0];
    if (!p.requires_grad) return;
    p.ensure_grad();
    const double s = 1.0 / (1.0 + std::exp(-p.value[0]));
    p.grad[0] += self.grad[0] * (s - target);
  });
}

}  // namespace ustrack
