// Independent reference implementations used as test oracles. Everything in
// this header is written directly from first principles and must stay
// decoupled from the library code paths it checks.
#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

namespace oracle {

constexpr double kPi = 3.14159265358979323846;

// Central finite difference of a scalar function of one variable.
inline double central_diff(const std::function<double(double)>& f, double x,
                           double h = 1e-5) {
  return (f(x + h) - f(x - h)) / (2.0 * h);
}

// --- box geometry -----------------------------------------------------------

struct RectTLBR {
  double x0, y0, x1, y1;
};

inline RectTLBR to_rect(double cx, double cy, double w, double h) {
  return {cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2};
}

inline double rect_iou(const RectTLBR& a, const RectTLBR& b) {
  const double iw = std::max(0.0, std::min(a.x1, b.x1) - std::max(a.x0, b.x0));
  const double ih = std::max(0.0, std::min(a.y1, b.y1) - std::max(a.y0, b.y0));
  const double inter = iw * ih;
  const double area_a = (a.x1 - a.x0) * (a.y1 - a.y0);
  const double area_b = (b.x1 - b.x0) * (b.y1 - b.y0);
  const double uni = area_a + area_b - inter;
  return uni > 0 ? inter / uni : 0.0;
}

struct AnchorSpec {
  double cx, cy, size;
};

// Brute-force sliding-window enumeration: walk a generous integer multiple
// range of the stride around the region center, keep centers inside the
// region, filter by IoU against the reference.
inline std::vector<AnchorSpec> brute_force_anchors(double rcx, double rcy, double rw,
                                                   double rh,
                                                   const std::vector<double>& scales,
                                                   int stride, double ref_cx,
                                                   double ref_cy, double ref_w,
                                                   double ref_h, double min_iou) {
  std::vector<AnchorSpec> out;
  const RectTLBR ref = to_rect(ref_cx, ref_cy, ref_w, ref_h);
  const int limit = 4000;
  for (int gy = -limit; gy <= limit; ++gy) {
    const double cy = rcy + gy * static_cast<double>(stride);
    if (cy < rcy - rh / 2 || cy > rcy + rh / 2) continue;
    for (int gx = -limit; gx <= limit; ++gx) {
      const double cx = rcx + gx * static_cast<double>(stride);
      if (cx < rcx - rw / 2 || cx > rcx + rw / 2) continue;
      for (double s : scales) {
        if (rect_iou(to_rect(cx, cy, s, s), ref) > min_iou)
          out.push_back({cx, cy, s});
      }
    }
  }
  return out;
}

// --- LSTM single step, scalar-by-scalar -------------------------------------

struct ScalarLstmParams {
  // gate order: input, forget, cell, output
  double w_in[4], w_rec[4], b_in[4], b_rec[4];
};

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// Direct transliteration of the six recurrence equations for a width-1 cell.
inline void scalar_lstm_step(const ScalarLstmParams& p, double x, double h_prev,
                             double c_prev, double* h_out, double* c_out) {
  const double i = sigmoid(p.w_in[0] * x + p.b_in[0] + p.w_rec[0] * h_prev + p.b_rec[0]);
  const double f = sigmoid(p.w_in[1] * x + p.b_in[1] + p.w_rec[1] * h_prev + p.b_rec[1]);
  const double g = std::tanh(p.w_in[2] * x + p.b_in[2] + p.w_rec[2] * h_prev + p.b_rec[2]);
  const double o = sigmoid(p.w_in[3] * x + p.b_in[3] + p.w_rec[3] * h_prev + p.b_rec[3]);
  const double c = f * c_prev + i * g;
  *c_out = c;
  *h_out = o * std::tanh(c);
}

// --- angular-margin mask loss, direct transliteration ------------------------

// Uses acos and the piecewise profile directly; the library path uses a
// Chebyshev evaluation instead, so agreement is a genuine cross-check.
inline double scalar_mask_loss(const std::vector<std::vector<double>>& features,
                               const std::vector<std::vector<double>>& weights,
                               const std::vector<int>& labels, int m, double lambda,
                               int* skipped = nullptr) {
  auto norm = [](const std::vector<double>& v) {
    double s = 0;
    for (double x : v) s += x * x;
    return std::sqrt(s);
  };
  auto dot = [](const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
  };
  double total = 0.0;
  int used = 0, skip = 0;
  for (std::size_t i = 0; i < features.size(); ++i) {
    const auto& x = features[i];
    const double r = norm(x);
    if (r == 0.0) {
      ++skip;
      continue;
    }
    const int t = labels[i] ? 1 : 0;
    const int o = 1 - t;
    const double nt = norm(weights[static_cast<std::size_t>(t)]);
    const double no = norm(weights[static_cast<std::size_t>(o)]);
    const double cos_t =
        std::clamp(dot(weights[static_cast<std::size_t>(t)], x) / (nt * r), -1.0, 1.0);
    const double cos_o =
        std::clamp(dot(weights[static_cast<std::size_t>(o)], x) / (no * r), -1.0, 1.0);
    const double theta = std::acos(cos_t);
    int k = static_cast<int>(std::floor(theta * m / kPi));
    k = std::min(k, m - 1);
    const double phi = ((k % 2 == 0) ? 1.0 : -1.0) * std::cos(m * theta) - 2.0 * k;
    const double zt = nt * r * phi;
    const double zo = no * r * cos_o;
    total += -std::log(std::exp(zt) / (std::exp(zt) + std::exp(zo)));
    ++used;
  }
  double fro = 0.0;
  for (const auto& w : weights)
    for (double v : w) fro += v * v;
  if (skipped) *skipped = skip;
  return (used > 0 ? total / used : 0.0) + lambda * fro;
}

// --- selection, exhaustive ----------------------------------------------------

struct SelCandidate {
  double x, y, score;
};

inline std::size_t brute_force_select(const std::vector<SelCandidate>& cands,
                                      double px, double py, double gamma) {
  std::size_t best = 0;
  double best_val = -1.0;
  double best_dist = 0.0;
  for (std::size_t i = 0; i < cands.size(); ++i) {
    const double dist = std::sqrt((cands[i].x - px) * (cands[i].x - px) +
                                  (cands[i].y - py) * (cands[i].y - py));
    const double val = gamma * cands[i].score + (1.0 - gamma) / (1.0 + std::exp(dist));
    if (i == 0 || val > best_val || (val == best_val && dist < best_dist)) {
      best = i;
      best_val = val;
      best_dist = dist;
    }
  }
  return best;
}

// --- summary statistics, brute force ------------------------------------------

struct RefSummary {
  double mean, stddev, p95, max;
};

inline RefSummary reference_summary(std::vector<double> v) {
  RefSummary s{};
  const std::size_t n = v.size();
  double acc = 0;
  for (double e : v) acc += e;
  s.mean = acc / static_cast<double>(n);
  double var = 0;
  for (double e : v) var += (e - s.mean) * (e - s.mean);
  s.stddev = std::sqrt(var / static_cast<double>(n));
  std::sort(v.begin(), v.end());
  std::size_t rank = static_cast<std::size_t>(std::ceil(0.95 * static_cast<double>(n)));
  if (rank < 1) rank = 1;
  s.p95 = v[rank - 1];
  s.max = v[n - 1];
  return s;
}

}  // namespace oracle
