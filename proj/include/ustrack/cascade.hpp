#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <string>
#include <vector>

#include "ustrack/box.hpp"
#include "ustrack/checkpoint.hpp"
#include "ustrack/common.hpp"
#include "ustrack/image.hpp"
#include "ustrack/losses.hpp"
#include "ustrack/lstm.hpp"
#include "ustrack/rng.hpp"
#include "ustrack/tensor.hpp"

namespace ustrack {

namespace model_detail {

inline Tensor uniform_init(Shape shape, int fan_in, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(std::max(fan_in, 1)));
  std::vector<double> v(static_cast<std::size_t>(numel(shape)));
  for (auto& x : v) x = rng.uniform(-bound, bound);
  return Tensor::from(std::move(v), std::move(shape), true);
}

}  // namespace model_detail

// ---------------------------------------------------------------------------
// Attention network: small conv encoder on the fixed search patch, emitting
// four box deltas relative to the patch box.
// ---------------------------------------------------------------------------

struct AttentionConfig {
  int patch = 100;
  int gt_box = 64;  // side of the square ground-truth attention box
  int c1 = 4;
  int c2 = 8;
  int fc = 32;
};

struct AttentionModel {
  AttentionConfig cfg;
  Tensor k1, b1;  // 1 -> c1, 5x5 stride 4 pad 2
  Tensor k2, b2;  // c1 -> c2, 3x3 stride 2 pad 1
  Tensor k3, b3;  // c2 -> c2, 3x3 stride 2 pad 1
  Tensor w_fc, b_fc;
  Tensor w_out, b_out;

  static AttentionModel init(const AttentionConfig& cfg, Rng& rng) {
    AttentionModel m;
    m.cfg = cfg;
    m.k1 = model_detail::uniform_init({cfg.c1, 1, 5, 5}, 25, rng);
    m.b1 = model_detail::uniform_init({cfg.c1}, 25, rng);
    m.k2 = model_detail::uniform_init({cfg.c2, cfg.c1, 3, 3}, 9 * cfg.c1, rng);
    m.b2 = model_detail::uniform_init({cfg.c2}, 9 * cfg.c1, rng);
    m.k3 = model_detail::uniform_init({cfg.c2, cfg.c2, 3, 3}, 9 * cfg.c2, rng);
    m.b3 = model_detail::uniform_init({cfg.c2}, 9 * cfg.c2, rng);
    const int spatial = spatial_dim(cfg.patch);
    const int flat = cfg.c2 * spatial * spatial;
    m.w_fc = model_detail::uniform_init({cfg.fc, flat}, flat, rng);
    m.b_fc = model_detail::uniform_init({cfg.fc}, flat, rng);
    m.w_out = model_detail::uniform_init({4, cfg.fc}, cfg.fc, rng);
    m.b_out = model_detail::uniform_init({4}, cfg.fc, rng);
    return m;
  }

  // 100 -> 25 -> 13 -> 7 with the fixed conv geometry.
  static int spatial_dim(int patch) {
    int s = (patch + 2 * 2 - 5) / 4 + 1;
    s = (s + 2 * 1 - 3) / 2 + 1;
    s = (s + 2 * 1 - 3) / 2 + 1;
    return s;
  }

  // Taped forward to the four deltas; input must match the configured patch.
  Tensor forward_deltas(const Image& patch) const {
    if (patch.width != cfg.patch || patch.height != cfg.patch)
      throw std::invalid_argument("attention: patch must be " + std::to_string(cfg.patch) +
                                  "x" + std::to_string(cfg.patch) + ", got " +
                                  std::to_string(patch.width) + "x" +
                                  std::to_string(patch.height));
    Tensor x = patch.to_tensor();
    Tensor h1 = activation(conv2d_stack(x, k1, b1, 4, 2), Act::Relu);
    Tensor h2 = activation(conv2d_stack(h1, k2, b2, 2, 1), Act::Relu);
    Tensor h3 = activation(conv2d_stack(h2, k3, b3, 2, 1), Act::Relu);
    Tensor flat = reshape(h3, {static_cast<int>(h3.size())});
    Tensor fc = activation(affine(flat, w_fc, b_fc), Act::Relu);
    return affine(fc, w_out, b_out);
  }

  Box patch_box() const {
    const double half = cfg.patch / 2.0;
    return Box{half, half, static_cast<double>(cfg.patch), static_cast<double>(cfg.patch)};
  }

  NamedParams named() const {
    return {{"att.k1", k1},     {"att.b1", b1},   {"att.k2", k2},   {"att.b2", b2},
            {"att.k3", k3},     {"att.b3", b3},   {"att.w_fc", w_fc},
            {"att.b_fc", b_fc}, {"att.w_out", w_out}, {"att.b_out", b_out}};
  }

  std::vector<Tensor> all() const {
    std::vector<Tensor> out;
    for (auto& [n, t] : named()) out.push_back(t);
    return out;
  }
};

// Predicted attention box in patch coordinates, clipped to the patch.
inline Box attention_forward(const AttentionModel& m, const Image& patch) {
  NoGradGuard ng;
  Tensor d = m.forward_deltas(patch);
  const auto& v = d.values();
  Box decoded = decode(BoxDelta{v[0], v[1], v[2], v[3]}, m.patch_box());
  return clip_box(decoded, m.cfg.patch, m.cfg.patch, 4.0);
}

// ---------------------------------------------------------------------------
// Detector: conv backbone, two-scale merge, anchor proposal stage and the
// three heads, plus the recurrent refinement heads.
// ---------------------------------------------------------------------------

struct DetectorConfig {
  int patch = 100;
  int c1 = 8, c2 = 16, c3 = 32;  // backbone channels, stride 2 each
  int roi = 7;
  int feature_dim = 128;
  int cls_hidden = 32;
  int lstm_hidden = 64;
  int lstm_window = 5;
  int mask_grid = 20;
  int mask_pixel_dim = 4;
  double box_size = 20.0;  // fixed landmark box side
  std::vector<double> anchor_scales = {16.0, 20.0, 24.0, 28.0};
  int anchor_stride = 4;
  double anchor_min_iou = 0.3;
  // What the anchor-overlap filter compares against: a fixed-size box at the
  // attention center (default), the attention box itself, or no filter.
  enum class FilterRef { AttentionCenter, AttentionBox, None };
  FilterRef filter_ref = FilterRef::AttentionCenter;
  int rpn_preselect = 16;  // objectness-ranked anchors kept before the heads
  int top_k = 8;

  int merged_stride() const { return 4; }
  int merged_dim() const {
    const int s1 = (patch + 2 - 3) / 2 + 1;
    return (s1 + 2 - 3) / 2 + 1;
  }
};

// One scored landmark hypothesis.
struct Candidate {
  Box box;                       // fixed-size box in patch coordinates
  double score = 0.0;            // landmark probability in [0,1]
  std::vector<double> mask;      // mask_grid^2 values in [0,1]
  std::vector<double> feature;   // recurrent input feature
  Box anchor;                    // source anchor
  int anchor_index = 0;          // position in the generated anchor list
};

struct DetectorModel {
  DetectorConfig cfg;
  // backbone
  Tensor k1, b1, k2, b2, k3, b3;
  Tensor k_lateral, b_lateral;  // 1x1 projection c3 -> c2 for the merge
  Tensor k_obj, b_obj;          // 1x1 objectness over the merged map
  Tensor w_roi, b_roi;          // flattened ROI -> feature
  // single-frame heads
  Tensor w_cls1_raw, b_cls1_raw, w_cls2_raw, b_cls2_raw;
  Tensor w_box_raw, b_box_raw;
  // recurrent refinement heads
  LstmParams lstm;
  Tensor w_cls1, b_cls1, w_cls2, b_cls2;
  Tensor w_box, b_box;
  // mask decoder: per-pixel features and the final pixel classifier
  Tensor w_mask, b_mask;  // feature -> mask_grid^2 * mask_pixel_dim
  Tensor w_mask_cls;      // [2, mask_pixel_dim]

  static DetectorModel init(const DetectorConfig& cfg, Rng& rng) {
    DetectorModel m;
    m.cfg = cfg;
    m.k1 = model_detail::uniform_init({cfg.c1, 1, 3, 3}, 9, rng);
    m.b1 = model_detail::uniform_init({cfg.c1}, 9, rng);
    m.k2 = model_detail::uniform_init({cfg.c2, cfg.c1, 3, 3}, 9 * cfg.c1, rng);
    m.b2 = model_detail::uniform_init({cfg.c2}, 9 * cfg.c1, rng);
    m.k3 = model_detail::uniform_init({cfg.c3, cfg.c2, 3, 3}, 9 * cfg.c2, rng);
    m.b3 = model_detail::uniform_init({cfg.c3}, 9 * cfg.c2, rng);
    m.k_lateral = model_detail::uniform_init({cfg.c2, cfg.c3, 1, 1}, cfg.c3, rng);
    m.b_lateral = model_detail::uniform_init({cfg.c2}, cfg.c3, rng);
    m.k_obj = model_detail::uniform_init({1, cfg.c2, 1, 1}, cfg.c2, rng);
    m.b_obj = model_detail::uniform_init({1}, cfg.c2, rng);
    const int flat = cfg.c2 * cfg.roi * cfg.roi;
    m.w_roi = model_detail::uniform_init({cfg.feature_dim, flat}, flat, rng);
    m.b_roi = model_detail::uniform_init({cfg.feature_dim}, flat, rng);
    m.w_cls1_raw = model_detail::uniform_init({cfg.cls_hidden, cfg.feature_dim}, cfg.feature_dim, rng);
    m.b_cls1_raw = model_detail::uniform_init({cfg.cls_hidden}, cfg.feature_dim, rng);
    m.w_cls2_raw = model_detail::uniform_init({2, cfg.cls_hidden}, cfg.cls_hidden, rng);
    m.b_cls2_raw = model_detail::uniform_init({2}, cfg.cls_hidden, rng);
    m.w_box_raw = model_detail::uniform_init({2, cfg.feature_dim}, cfg.feature_dim, rng);
    m.b_box_raw = model_detail::uniform_init({2}, cfg.feature_dim, rng);
    m.lstm = LstmParams::init(cfg.feature_dim, cfg.lstm_hidden, rng);
    m.w_cls1 = model_detail::uniform_init({cfg.cls_hidden, cfg.lstm_hidden}, cfg.lstm_hidden, rng);
    m.b_cls1 = model_detail::uniform_init({cfg.cls_hidden}, cfg.lstm_hidden, rng);
    m.w_cls2 = model_detail::uniform_init({2, cfg.cls_hidden}, cfg.cls_hidden, rng);
    m.b_cls2 = model_detail::uniform_init({2}, cfg.cls_hidden, rng);
    m.w_box = model_detail::uniform_init({2, cfg.lstm_hidden}, cfg.lstm_hidden, rng);
    m.b_box = model_detail::uniform_init({2}, cfg.lstm_hidden, rng);
    const int mask_out = cfg.mask_grid * cfg.mask_grid * cfg.mask_pixel_dim;
    m.w_mask = model_detail::uniform_init({mask_out, cfg.feature_dim}, cfg.feature_dim, rng);
    m.b_mask = model_detail::uniform_init({mask_out}, cfg.feature_dim, rng);
    m.w_mask_cls = model_detail::uniform_init({2, cfg.mask_pixel_dim}, cfg.mask_pixel_dim, rng);
    return m;
  }

  // Merged two-scale feature map [c2, D, D] at stride 4 over the patch.
  Tensor backbone(const Image& patch) const {
    if (patch.width != cfg.patch || patch.height != cfg.patch)
      throw std::invalid_argument("detector: patch must be " + std::to_string(cfg.patch) +
                                  "x" + std::to_string(cfg.patch) + ", got " +
                                  std::to_string(patch.width) + "x" +
                                  std::to_string(patch.height));
    Tensor x = patch.to_tensor();
    Tensor p1 = activation(conv2d_stack(x, k1, b1, 2, 1), Act::Relu);
    Tensor p2 = activation(conv2d_stack(p1, k2, b2, 2, 1), Act::Relu);
    Tensor p3 = activation(conv2d_stack(p2, k3, b3, 2, 1), Act::Relu);
    Tensor up = resize_nearest(conv2d_stack(p3, k_lateral, b_lateral, 1, 0),
                               p2.dim(1), p2.dim(2));
    return add(p2, up);
  }

  Tensor objectness_map(const Tensor& merged) const {
    return conv2d_stack(merged, k_obj, b_obj, 1, 0);
  }

  // Flat index of the anchor center on the merged map.
  std::size_t map_index(const Tensor& merged, const Box& anchor) const {
    const int D = merged.dim(1);
    const double s = static_cast<double>(cfg.merged_stride());
    int gx = static_cast<int>(std::floor(anchor.cx / s));
    int gy = static_cast<int>(std::floor(anchor.cy / s));
    gx = std::clamp(gx, 0, D - 1);
    gy = std::clamp(gy, 0, D - 1);
    return static_cast<std::size_t>(gy) * D + gx;
  }

  // ROI feature: nearest-neighbor crop of the anchor window to roi x roi,
  // flattened through one affine layer.
  Tensor roi_feature(const Tensor& merged, const Box& anchor) const {
    const double s = static_cast<double>(cfg.merged_stride());
    Tensor win = sample_window(merged, anchor.left() / s, anchor.top() / s,
                               anchor.w / s, anchor.h / s, cfg.roi, cfg.roi);
    Tensor flat = reshape(win, {static_cast<int>(win.size())});
    return activation(affine(flat, w_roi, b_roi), Act::Relu);
  }

  struct ClsOut {
    Tensor input;   // the head's input activation
    Tensor hidden;  // last hidden activation
    Tensor scores;  // two class scores (non-landmark, landmark)
  };

  ClsOut cls_head_raw(const Tensor& feat) const {
    Tensor h = activation(affine(feat, w_cls1_raw, b_cls1_raw), Act::Relu);
    return {feat, h, affine(h, w_cls2_raw, b_cls2_raw)};
  }

  ClsOut cls_head_refined(const Tensor& hidden_state) const {
    Tensor h = activation(affine(hidden_state, w_cls1, b_cls1), Act::Relu);
    return {hidden_state, h, affine(h, w_cls2, b_cls2)};
  }

  Tensor box_head_raw(const Tensor& feat) const { return affine(feat, w_box_raw, b_box_raw); }
  Tensor box_head_refined(const Tensor& h) const { return affine(h, w_box, b_box); }

  // Per-pixel mask features [grid^2, pixel_dim].
  Tensor mask_features(const Tensor& feat) const {
    Tensor flat = affine(feat, w_mask, b_mask);
    return reshape(flat, {cfg.mask_grid * cfg.mask_grid, cfg.mask_pixel_dim});
  }

  // Landmark probability per pixel from the current parameter values.
  std::vector<double> mask_values(const Tensor& mask_feat) const {
    const int P = mask_feat.dim(0), d = mask_feat.dim(1);
    const auto& x = mask_feat.values();
    const auto& w = w_mask_cls.values();
    std::vector<double> out(static_cast<std::size_t>(P));
    for (int i = 0; i < P; ++i) {
      double z0 = 0.0, z1 = 0.0;
      for (int q = 0; q < d; ++q) {
        z0 += w[static_cast<std::size_t>(q)] * x[static_cast<std::size_t>(i) * d + q];
        z1 += w[static_cast<std::size_t>(d + q)] * x[static_cast<std::size_t>(i) * d + q];
      }
      out[static_cast<std::size_t>(i)] = 1.0 / (1.0 + std::exp(z0 - z1));
    }
    return out;
  }

  Box apply_center_delta(const Box& anchor, double tx, double ty) const {
    return Box{anchor.cx + tx * anchor.w, anchor.cy + ty * anchor.h, cfg.box_size,
               cfg.box_size};
  }

  Box patch_box() const {
    const double half = cfg.patch / 2.0;
    return Box{half, half, static_cast<double>(cfg.patch), static_cast<double>(cfg.patch)};
  }

  // Anchor set inside the search region, filtered per the configured rule.
  std::vector<Box> propose_anchors(const Box& attn) const {
    switch (cfg.filter_ref) {
      case DetectorConfig::FilterRef::AttentionCenter:
        return generate_anchors(attn, cfg.anchor_scales, cfg.anchor_stride,
                                Box{attn.cx, attn.cy, cfg.box_size, cfg.box_size},
                                cfg.anchor_min_iou);
      case DetectorConfig::FilterRef::AttentionBox:
        return generate_anchors(attn, cfg.anchor_scales, cfg.anchor_stride, attn,
                                cfg.anchor_min_iou);
      case DetectorConfig::FilterRef::None:
        return generate_anchors(patch_box(), cfg.anchor_scales, cfg.anchor_stride,
                                patch_box(), 0.0);
    }
    return {};
  }

  NamedParams named() const {
    NamedParams out = {
        {"det.k1", k1},           {"det.b1", b1},
        {"det.k2", k2},           {"det.b2", b2},
        {"det.k3", k3},           {"det.b3", b3},
        {"det.k_lateral", k_lateral}, {"det.b_lateral", b_lateral},
        {"det.k_obj", k_obj},     {"det.b_obj", b_obj},
        {"det.w_roi", w_roi},     {"det.b_roi", b_roi},
        {"det.w_cls1_raw", w_cls1_raw}, {"det.b_cls1_raw", b_cls1_raw},
        {"det.w_cls2_raw", w_cls2_raw}, {"det.b_cls2_raw", b_cls2_raw},
        {"det.w_box_raw", w_box_raw},   {"det.b_box_raw", b_box_raw},
        {"det.w_cls1", w_cls1},   {"det.b_cls1", b_cls1},
        {"det.w_cls2", w_cls2},   {"det.b_cls2", b_cls2},
        {"det.w_box", w_box},     {"det.b_box", b_box},
        {"det.w_mask", w_mask},   {"det.b_mask", b_mask},
        {"det.w_mask_cls", w_mask_cls}};
    for (auto& p : lstm.named("det.lstm")) out.push_back(p);
    return out;
  }

  std::vector<Tensor> all() const {
    std::vector<Tensor> out;
    for (auto& [n, t] : named()) out.push_back(t);
    return out;
  }
};

// Softmax probability of the landmark class from a two-score tensor.
inline double landmark_probability(const Tensor& scores) {
  const double z0 = scores.values()[0];
  const double z1 = scores.values()[1];
  return 1.0 / (1.0 + std::exp(z0 - z1));
}

// Single-frame detection: anchors in the attention region, objectness
// preselection, then the raw heads. Candidates are sorted by score
// descending with ties broken by anchor index, and capped at top_k.
inline std::vector<Candidate> detector_forward(const DetectorModel& m, const Image& patch,
                                               const Box& attn) {
  NoGradGuard ng;
  const auto anchors = m.propose_anchors(attn);
  if (anchors.empty()) return {};

  Tensor merged = m.backbone(patch);
  std::vector<int> order(anchors.size());
  std::iota(order.begin(), order.end(), 0);
  if (static_cast<int>(anchors.size()) > m.cfg.rpn_preselect) {
    Tensor obj = m.objectness_map(merged);
    std::vector<double> objv(anchors.size());
    for (std::size_t i = 0; i < anchors.size(); ++i)
      objv[i] = obj.values()[m.map_index(merged, anchors[i])];
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
      if (objv[static_cast<std::size_t>(a)] != objv[static_cast<std::size_t>(b)])
        return objv[static_cast<std::size_t>(a)] > objv[static_cast<std::size_t>(b)];
      return a < b;
    });
    order.resize(static_cast<std::size_t>(m.cfg.rpn_preselect));
  }

  std::vector<Candidate> cands;
  cands.reserve(order.size());
  for (int idx : order) {
    const Box& anchor = anchors[static_cast<std::size_t>(idx)];
    Tensor feat = m.roi_feature(merged, anchor);
    auto cls = m.cls_head_raw(feat);
    Tensor bd = m.box_head_raw(feat);
    Candidate c;
    c.anchor = anchor;
    c.anchor_index = idx;
    c.score = landmark_probability(cls.scores);
    c.box = m.apply_center_delta(anchor, bd.values()[0], bd.values()[1]);
    c.mask = m.mask_values(m.mask_features(feat));
    c.feature = feat.values();
    cands.push_back(std::move(c));
  }
  std::sort(cands.begin(), cands.end(), [](const Candidate& a, const Candidate& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.anchor_index < b.anchor_index;
  });
  if (static_cast<int>(cands.size()) > m.cfg.top_k)
    cands.resize(static_cast<std::size_t>(m.cfg.top_k));
  return cands;
}

struct RefinedCandidate {
  double score = 0.0;
  Box box;
};

// Recurrent refinement: the classification and box heads consume the LSTM
// hidden state built from the track's recent feature window; the mask output
// is left untouched.
inline std::vector<RefinedCandidate> lstm_refine(
    const DetectorModel& m, const std::vector<Candidate>& cands,
    const std::vector<std::vector<double>>& history) {
  NoGradGuard ng;
  std::vector<RefinedCandidate> out;
  out.reserve(cands.size());
  for (const auto& c : cands) {
    Tensor feat = Tensor::from(c.feature, {m.cfg.feature_dim});
    auto window = make_window(history, feat, m.cfg.lstm_window, m.cfg.feature_dim);
    Tensor h = lstm_window(m.lstm, window, LstmState::zero(m.cfg.lstm_hidden));
    auto cls = m.cls_head_refined(h);
    Tensor bd = m.box_head_refined(h);
    RefinedCandidate r;
    r.score = landmark_probability(cls.scores);
    r.box = m.apply_center_delta(c.anchor, bd.values()[0], bd.values()[1]);
    out.push_back(r);
  }
  return out;
}

// Detached copy of a two-layer classification head; computes the per-layer
// gradients of both class scores that feed the margin hinge denominators.
struct DetachedClsHead {
  Tensor w1, b1, w2, b2;

  static DetachedClsHead from(const Tensor& w1_, const Tensor& b1_, const Tensor& w2_,
                              const Tensor& b2_) {
    return {Tensor::from(w1_.values(), w1_.shape()), Tensor::from(b1_.values(), b1_.shape()),
            Tensor::from(w2_.values(), w2_.shape()), Tensor::from(b2_.values(), b2_.shape())};
  }

  // Layer ids: "input" (head input) and "hidden" (last hidden activation).
  std::vector<LayerGrads> layer_grads(const std::vector<double>& input_values,
                                      int true_class) const {
    Tensor in = Tensor::from(input_values, {static_cast<int>(input_values.size())}, true);
    Tensor hidden = activation(affine(in, w1, b1), Act::Relu);
    Tensor scores = affine(hidden, w2, b2);
    const int other = 1 - true_class;

    backward(pick(scores, static_cast<std::size_t>(other)));
    std::vector<double> in_other = in.grad();
    std::vector<double> hid_other = hidden.node().grad;
    in.zero_grad();
    backward(pick(scores, static_cast<std::size_t>(true_class)));
    std::vector<double> in_true = in.grad();
    std::vector<double> hid_true = hidden.node().grad;

    return {LayerGrads{"input", std::move(in_other), std::move(in_true)},
            LayerGrads{"hidden", std::move(hid_other), std::move(hid_true)}};
  }
};

// ---------------------------------------------------------------------------
// Full cascade + checkpointing
// ---------------------------------------------------------------------------

struct CascadeModel {
  AttentionModel attention;
  DetectorModel detector;

  NamedParams named() const {
    NamedParams out = attention.named();
    for (auto& p : detector.named()) out.push_back(p);
    return out;
  }

  std::vector<Tensor> all() const {
    std::vector<Tensor> out = attention.all();
    for (auto& t : detector.all()) out.push_back(t);
    return out;
  }

  std::map<std::string, std::string> manifest() const {
    std::map<std::string, std::string> m;
    auto put = [&](const std::string& k, auto v) { m[k] = std::to_string(v); };
    put("att.patch", attention.cfg.patch);
    put("att.gt_box", attention.cfg.gt_box);
    put("att.c1", attention.cfg.c1);
    put("att.c2", attention.cfg.c2);
    put("att.fc", attention.cfg.fc);
    put("det.patch", detector.cfg.patch);
    put("det.c1", detector.cfg.c1);
    put("det.c2", detector.cfg.c2);
    put("det.c3", detector.cfg.c3);
    put("det.roi", detector.cfg.roi);
    put("det.feature_dim", detector.cfg.feature_dim);
    put("det.cls_hidden", detector.cfg.cls_hidden);
    put("det.lstm_hidden", detector.cfg.lstm_hidden);
    put("det.lstm_window", detector.cfg.lstm_window);
    put("det.mask_grid", detector.cfg.mask_grid);
    put("det.mask_pixel_dim", detector.cfg.mask_pixel_dim);
    put("det.box_size", detector.cfg.box_size);
    put("det.anchor_stride", detector.cfg.anchor_stride);
    put("det.anchor_min_iou", detector.cfg.anchor_min_iou);
    put("det.filter_ref", static_cast<int>(detector.cfg.filter_ref));
    put("det.rpn_preselect", detector.cfg.rpn_preselect);
    put("det.top_k", detector.cfg.top_k);
    std::string scales;
    for (double s : detector.cfg.anchor_scales)
      scales += (scales.empty() ? "" : ",") + std::to_string(s);
    m["det.anchor_scales"] = scales;
    return m;
  }

  void save(const std::string& path) const { write_checkpoint(path, manifest(), named()); }

  static CascadeModel load(const std::string& path) {
    Checkpoint ck = read_checkpoint(path);
    auto geti = [&](const char* k) { return std::stoi(ck.manifest_at(k)); };
    auto getd = [&](const char* k) { return std::stod(ck.manifest_at(k)); };
    AttentionConfig ac;
    ac.patch = geti("att.patch");
    ac.gt_box = geti("att.gt_box");
    ac.c1 = geti("att.c1");
    ac.c2 = geti("att.c2");
    ac.fc = geti("att.fc");
    DetectorConfig dc;
    dc.patch = geti("det.patch");
    dc.c1 = geti("det.c1");
    dc.c2 = geti("det.c2");
    dc.c3 = geti("det.c3");
    dc.roi = geti("det.roi");
    dc.feature_dim = geti("det.feature_dim");
    dc.cls_hidden = geti("det.cls_hidden");
    dc.lstm_hidden = geti("det.lstm_hidden");
    dc.lstm_window = geti("det.lstm_window");
    dc.mask_grid = geti("det.mask_grid");
    dc.mask_pixel_dim = geti("det.mask_pixel_dim");
    dc.box_size = getd("det.box_size");
    dc.anchor_stride = geti("det.anchor_stride");
    dc.anchor_min_iou = getd("det.anchor_min_iou");
    dc.filter_ref = static_cast<DetectorConfig::FilterRef>(geti("det.filter_ref"));
    dc.rpn_preselect = geti("det.rpn_preselect");
    dc.top_k = geti("det.top_k");
    dc.anchor_scales.clear();
    {
      std::string s = ck.manifest_at("det.anchor_scales");
      std::size_t pos = 0;
      while (pos < s.size()) {
        const auto comma = s.find(',', pos);
        dc.anchor_scales.push_back(std::stod(s.substr(pos, comma - pos)));
        if (comma == std::string::npos) break;
        pos = comma + 1;
      }
    }
    Rng rng(0);
    CascadeModel model{AttentionModel::init(ac, rng), DetectorModel::init(dc, rng)};
    for (auto& [name, tensor] : model.named()) {
      const Tensor& stored = ck.find(name);
      if (stored.shape() != tensor.shape())
        throw DataError("checkpoint: shape mismatch for '" + name + "': stored " +
                        shape_str(stored.shape()) + " vs model " + shape_str(tensor.shape()));
      const_cast<Tensor&>(tensor).values_mut() = stored.values();
    }
    return model;
  }
};

}  // namespace ustrack
