#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <numeric>
#include <string>
#include <vector>

#include "ustrack/cascade.hpp"
#include "ustrack/common.hpp"
#include "ustrack/dataio.hpp"
#include "ustrack/losses.hpp"
#include "ustrack/rng.hpp"

namespace ustrack {

struct TrainConfig {
  double learning_rate = 1e-3;
  double momentum = 0.9;
  int max_epochs = 150;
  double delta_stop = 1e-3;
  std::uint64_t seed = 7;
  std::string preset = "synth";

  int positives_per_frame = 2;   // proposals with the greatest gt overlap
  double positive_min_iou = 0.1; // below this no anchor counts as positive
  double negative_max_iou = 0.3;
  bool include_reference_frame = true;
  bool audit_gradients = true;
  double mask_disk_radius = 6.0;

  LossWeights weights;
  MarginConfig margin;
  MaskLossConfig mask_cfg;

  // Stage lengths for the full cascade; -1 means "use max_epochs".
  int attention_epochs = -1;
  int detector_epochs = -1;
  int joint_epochs = 20;

  int stage_epochs(int configured) const {
    return configured >= 0 ? configured : max_epochs;
  }

  // Hyperparameters exactly as reported for the original full-scale setup.
  static TrainConfig paper_preset() {
    TrainConfig c;
    c.preset = "paper";
    c.learning_rate = 1e-6;
    c.max_epochs = 1000;
    c.delta_stop = 1e-3;
    c.momentum = 0.0;
    return c;
  }

  static TrainConfig synth_preset() {
    TrainConfig c;
    c.preset = "synth";
    return c;
  }

  static TrainConfig by_name(const std::string& name) {
    if (name == "paper") return paper_preset();
    if (name == "synth") return synth_preset();
    throw ConfigError("unknown training preset '" + name + "'");
  }
};

struct TrainingPair {
  Image patch;           // search patch from the annotated frame
  Image ref_patch;       // same window in the reference (first) frame
  BoxDelta gt_attention; // target attention box relative to the patch box
  double lm_x = 0.0;     // landmark in patch coordinates
  double lm_y = 0.0;
  std::vector<int> mask_target;  // binary disk in the fixed-size box frame
  int frame_index = 0;
  int sequence_id = 0;
  int landmark_id = 0;
};

struct ExtractionResult {
  std::vector<TrainingPair> pairs;
  int dropped = 0;  // landmark outside the search patch
};

// One (landmark, annotated frame) pair per entry. The input patch is pinned
// at the first-frame landmark; the target is the gt_box-sized box centered
// on the frame's annotated position.
inline ExtractionResult extract_training_pairs(const SequenceBundle& bundle,
                                               int patch_size, int gt_box,
                                               bool include_reference_frame = true,
                                               int sequence_id = 0,
                                               double mask_disk_radius = 6.0,
                                               int mask_grid = 20) {
  bundle.validate();
  ExtractionResult out;
  const Box patch_box{patch_size / 2.0, patch_size / 2.0,
                      static_cast<double>(patch_size), static_cast<double>(patch_size)};
  for (int li = 0; li < bundle.landmark_count(); ++li) {
    const auto& ann = bundle.landmarks[static_cast<std::size_t>(li)];
    const auto& first = ann.front();
    for (const auto& a : ann) {
      if (a.frame == 0 && !include_reference_frame) continue;
      auto [ox, oy] = patch_origin(first.x, first.y, patch_size);
      const double lx = a.x - ox;
      const double ly = a.y - oy;
      if (lx < 0.0 || lx >= patch_size || ly < 0.0 || ly >= patch_size) {
        ++out.dropped;
        continue;
      }
      TrainingPair p;
      p.patch = crop_patch(bundle.frames[static_cast<std::size_t>(a.frame)], first.x,
                           first.y, patch_size);
      p.ref_patch = crop_patch(bundle.frames[0], first.x, first.y, patch_size);
      p.gt_attention = encode(Box{lx, ly, static_cast<double>(gt_box),
                                  static_cast<double>(gt_box)},
                              patch_box);
      p.lm_x = lx;
      p.lm_y = ly;
      p.mask_target.assign(static_cast<std::size_t>(mask_grid) * mask_grid, 0);
      const double half = mask_grid / 2.0;
      for (int i = 0; i < mask_grid; ++i)
        for (int j = 0; j < mask_grid; ++j) {
          const double dx = j + 0.5 - half;
          const double dy = i + 0.5 - half;
          if (dx * dx + dy * dy <= mask_disk_radius * mask_disk_radius)
            p.mask_target[static_cast<std::size_t>(i) * mask_grid + j] = 1;
        }
      p.frame_index = a.frame;
      p.sequence_id = sequence_id;
      p.landmark_id = li;
      out.pairs.push_back(std::move(p));
    }
  }
  return out;
}

// --- stop rule ---------------------------------------------------------------

// trace[0] is the pre-training loss; trace[e] the loss after epoch e.
// Returns the epoch (1-based) after which training stops: the first epoch
// whose decrease over the previous loss falls below delta_stop, and never
// past max_epochs.
inline int stop_epoch(const std::vector<double>& trace, double delta_stop,
                      int max_epochs) {
  const int epochs = static_cast<int>(trace.size()) - 1;
  for (int e = 1; e <= std::min(epochs, max_epochs); ++e) {
    const double decrease = trace[static_cast<std::size_t>(e - 1)] -
                            trace[static_cast<std::size_t>(e)];
    if (decrease < delta_stop) return e;
  }
  return std::min(epochs, max_epochs);
}

// --- optimizer ---------------------------------------------------------------

struct Sgd {
  double lr;
  double momentum;
  std::vector<std::vector<double>> velocity;

  Sgd(double lr_, double momentum_) : lr(lr_), momentum(momentum_) {}

  void step(const std::vector<Tensor>& params) {
    if (velocity.size() != params.size()) {
      velocity.assign(params.size(), {});
      for (std::size_t i = 0; i < params.size(); ++i)
        velocity[i].assign(params[i].size(), 0.0);
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
      if (!params[i].has_grad()) continue;
      auto& v = velocity[i];
      auto& val = const_cast<Tensor&>(params[i]).values_mut();
      const auto& g = params[i].grad();
      for (std::size_t j = 0; j < val.size(); ++j) {
        v[j] = momentum * v[j] + g[j];
        val[j] -= lr * v[j];
      }
    }
  }
};

// --- loss bookkeeping ---------------------------------------------------------

struct EpochLoss {
  int epoch = 0;
  double total = 0.0;
  double cls = 0.0;
  double mask = 0.0;
  double box = 0.0;
  double att = 0.0;
};

struct TrainHistory {
  std::vector<EpochLoss> rows;
  double audit_deviation = -1.0;  // max relative deviation of the sampled audit
  int skipped_pairs = 0;          // pairs without a positive anchor

  std::vector<double> totals_with_baseline(double baseline) const {
    std::vector<double> t{baseline};
    for (const auto& r : rows) t.push_back(r.total);
    return t;
  }
};

inline void write_loss_csv(const std::string& path, const std::vector<EpochLoss>& rows) {
  std::ofstream os(path);
  if (!os) throw DataError("cannot write loss history '" + path + "'");
  os << "epoch,L,Lcls,Lmask,Lbox,Latt\n";
  char buf[256];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof(buf), "%d,%.17g,%.17g,%.17g,%.17g,%.17g\n", r.epoch,
                  r.total, r.cls, r.mask, r.box, r.att);
    os << buf;
  }
}

// --- attention training --------------------------------------------------------

struct AttentionLossInputs {
  std::vector<double> u, v;
  int n = 0;
};

// Intersection of the predicted and ground-truth attention boxes, rasterized
// inside the patch; U samples the current patch, V the reference patch.
inline AttentionLossInputs attention_patch_term(const Image& patch, const Image& ref,
                                                const Box& pred, const Box& gt) {
  AttentionLossInputs out;
  const int x0 = std::max(0, static_cast<int>(std::floor(std::max(pred.left(), gt.left()))));
  const int y0 = std::max(0, static_cast<int>(std::floor(std::max(pred.top(), gt.top()))));
  const int x1 = std::min(patch.width, static_cast<int>(std::ceil(std::min(pred.right(), gt.right()))));
  const int y1 = std::min(patch.height, static_cast<int>(std::ceil(std::min(pred.bottom(), gt.bottom()))));
  if (x1 <= x0 || y1 <= y0) return out;
  out.n = (x1 - x0) * (y1 - y0);
  out.u.reserve(static_cast<std::size_t>(out.n));
  out.v.reserve(static_cast<std::size_t>(out.n));
  for (int y = y0; y < y1; ++y)
    for (int x = x0; x < x1; ++x) {
      out.u.push_back(patch.at(x, y));
      out.v.push_back(ref.at(x, y));
    }
  return out;
}

inline Tensor attention_pair_loss(const AttentionModel& m, const TrainingPair& pair) {
  Tensor deltas = m.forward_deltas(pair.patch);
  const auto& dv = deltas.values();
  Box pred = decode(BoxDelta{dv[0], dv[1], dv[2], dv[3]}, m.patch_box());
  Box gt = decode(pair.gt_attention, m.patch_box());
  auto term = attention_patch_term(pair.patch, pair.ref_patch, pred, gt);
  return attention_loss(deltas, pair.gt_attention, term.u, term.v, term.n);
}

namespace trainer_detail {

inline std::vector<std::vector<const TrainingPair*>> group_batches(
    const std::vector<TrainingPair>& pairs) {
  std::map<int, std::vector<const TrainingPair*>> by_seq;
  for (const auto& p : pairs) by_seq[p.sequence_id].push_back(&p);
  std::vector<std::vector<const TrainingPair*>> out;
  for (auto& [id, vec] : by_seq) {
    std::stable_sort(vec.begin(), vec.end(), [](const TrainingPair* a, const TrainingPair* b) {
      if (a->landmark_id != b->landmark_id) return a->landmark_id < b->landmark_id;
      return a->frame_index < b->frame_index;
    });
    out.push_back(std::move(vec));
  }
  return out;
}

// Finite-difference audit of a few randomly sampled parameter entries against
// the analytic gradients already present on the tensors.
inline double audit_sample(const std::function<Tensor()>& loss_fn,
                           const std::vector<Tensor>& params, Rng& rng, int samples) {
  backward(loss_fn());
  double worst = 0.0;
  NoGradGuard ng;
  for (int s = 0; s < samples; ++s) {
    const std::size_t pi = rng.uniform_index(params.size());
    auto& t = const_cast<Tensor&>(params[pi]);
    if (t.size() == 0) continue;
    const std::size_t j = rng.uniform_index(t.size());
    const double analytic = t.has_grad() ? t.grad()[j] : 0.0;
    const double h = 1e-5;
    auto& vals = t.values_mut();
    const double orig = vals[j];
    vals[j] = orig + h;
    const double fp = loss_fn().item();
    vals[j] = orig - h;
    const double fm = loss_fn().item();
    vals[j] = orig;
    const double fd = (fp - fm) / (2.0 * h);
    worst = std::max(worst, std::abs(analytic - fd) / std::max(1.0, std::abs(analytic)));
  }
  clear_grads(params);
  return worst;
}

}  // namespace trainer_detail

struct AttentionTrainResult {
  AttentionModel model;
  TrainHistory history;
};

inline AttentionTrainResult train_attention(const std::vector<TrainingPair>& pairs,
                                            const TrainConfig& cfg,
                                            AttentionModel* warm_start = nullptr,
                                            const AttentionConfig& acfg = {}) {
  if (pairs.empty()) throw std::invalid_argument("train_attention: no training pairs");
  Rng rng(cfg.seed);
  AttentionModel model = warm_start ? *warm_start : AttentionModel::init(acfg, rng);
  auto params = model.all();
  Sgd opt(cfg.learning_rate, cfg.momentum);
  auto batches = trainer_detail::group_batches(pairs);

  auto epoch_pass = [&](bool update) {
    double total = 0.0;
    for (const auto& batch : batches) {
      Tensor loss;
      {
        std::unique_ptr<NoGradGuard> ng;
        if (!update) ng = std::make_unique<NoGradGuard>();
        for (const TrainingPair* p : batch) {
          Tensor l = attention_pair_loss(model, *p);
          loss = loss.defined() ? add(loss, l) : l;
        }
      }
      total += loss.item();
      if (update) {
        Tensor scaled = scale(loss, 1.0 / static_cast<double>(batch.size()));
        backward(scaled);
        opt.step(params);
        clear_grads(params);
      }
    }
    return total / static_cast<double>(pairs.size());
  };

  TrainHistory hist;
  double prev = epoch_pass(false);
  const int epochs = cfg.stage_epochs(cfg.attention_epochs);
  for (int e = 1; e <= epochs; ++e) {
    const double loss = epoch_pass(true);
    if (!std::isfinite(loss))
      throw DivergenceError("train_attention: non-finite loss at epoch " + std::to_string(e), e);
    hist.rows.push_back(EpochLoss{e, loss, 0.0, 0.0, 0.0, loss});
    const double decrease = prev - loss;
    prev = loss;
    if (decrease < cfg.delta_stop) break;
  }
  return {model, hist};
}

// --- detector / full-cascade training ------------------------------------------

namespace trainer_detail {

struct SampleAnchors {
  std::vector<Box> positives;
  std::vector<Box> negatives;
};

// Positives: anchors with the greatest overlap with the fixed-size box at the
// annotated landmark. Negatives: uniform draws from the whole-patch grid with
// overlap below the negative cap, one per positive.
inline SampleAnchors pick_anchors(const DetectorModel& m, const Box& region,
                                  const TrainingPair& pair, const TrainConfig& cfg,
                                  Rng& rng) {
  SampleAnchors out;
  const Box gt_box{pair.lm_x, pair.lm_y, m.cfg.box_size, m.cfg.box_size};
  auto region_anchors = generate_anchors(
      region, m.cfg.anchor_scales, m.cfg.anchor_stride,
      Box{region.cx, region.cy, m.cfg.box_size, m.cfg.box_size}, 0.0);
  std::vector<std::pair<double, std::size_t>> ranked;
  for (std::size_t i = 0; i < region_anchors.size(); ++i) {
    const double v = iou(region_anchors[i], gt_box);
    if (v > cfg.positive_min_iou) ranked.emplace_back(v, i);
  }
  std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first > b.first;
    return a.second < b.second;
  });
  const int n_pos = std::min<int>(cfg.positives_per_frame, static_cast<int>(ranked.size()));
  for (int i = 0; i < n_pos; ++i)
    out.positives.push_back(region_anchors[ranked[static_cast<std::size_t>(i)].second]);

  if (n_pos == 0) return out;
  auto all_anchors = generate_anchors(m.patch_box(), m.cfg.anchor_scales,
                                      m.cfg.anchor_stride, m.patch_box(), 0.0);
  int guard = 0;
  while (static_cast<int>(out.negatives.size()) < n_pos && guard++ < 10000) {
    const Box& a = all_anchors[rng.uniform_index(all_anchors.size())];
    if (iou(a, gt_box) < cfg.negative_max_iou) out.negatives.push_back(a);
  }
  return out;
}

struct PairLossTerms {
  Tensor cls, mask, box;
  bool has_positive = false;
  std::vector<double> best_feature;  // greatest-overlap proposal, for the window
};

// Supervision for one training pair: margin classification on both head
// paths, objectness, center regression and the angular-margin mask loss.
// History features from earlier frames enter the recurrent window as
// constants; gradients flow through the current frame and the LSTM unroll.
inline PairLossTerms detector_pair_loss(const DetectorModel& m, const TrainingPair& pair,
                                        const Box& region,
                                        const std::vector<std::vector<double>>& history,
                                        const TrainConfig& cfg, Rng& neg_rng) {
  PairLossTerms out;
  auto sampled = pick_anchors(m, region, pair, cfg, neg_rng);
  if (sampled.positives.empty()) return out;
  out.has_positive = true;

  Tensor merged = m.backbone(pair.patch);
  Tensor obj_map = m.objectness_map(merged);
  const Box gt_box{pair.lm_x, pair.lm_y, m.cfg.box_size, m.cfg.box_size};

  DetachedClsHead raw_head = DetachedClsHead::from(m.w_cls1_raw, m.b_cls1_raw,
                                                   m.w_cls2_raw, m.b_cls2_raw);
  DetachedClsHead ref_head = DetachedClsHead::from(m.w_cls1, m.b_cls1, m.w_cls2, m.b_cls2);

  Tensor cls_total = Tensor::scalar(0.0);
  Tensor mask_total = Tensor::scalar(0.0);
  std::vector<Tensor> box_preds;
  std::vector<std::pair<double, double>> box_targets;

  auto add_cls = [&](const DetectorModel::ClsOut& cls_out, const DetachedClsHead& head,
                     int true_class) {
    auto grads = head.layer_grads(cls_out.input.values(), true_class);
    Tensor f_true = pick(cls_out.scores, static_cast<std::size_t>(true_class));
    Tensor f_other = pick(cls_out.scores, static_cast<std::size_t>(1 - true_class));
    cls_total = add(cls_total, margin_cls_loss(f_other, f_true, grads, cfg.margin));
  };

  auto process = [&](const Box& anchor, bool positive) {
    Tensor feat = m.roi_feature(merged, anchor);
    add_cls(m.cls_head_raw(feat), raw_head, positive ? 1 : 0);

    auto window = make_window(history, feat, m.cfg.lstm_window, m.cfg.feature_dim);
    Tensor hidden = lstm_window(m.lstm, window, LstmState::zero(m.cfg.lstm_hidden));
    add_cls(m.cls_head_refined(hidden), ref_head, positive ? 1 : 0);

    Tensor obj_logit = pick(obj_map, m.map_index(merged, anchor));
    cls_total = add(cls_total, bce_logit(obj_logit, positive ? 1.0 : 0.0));

    if (!positive) return;
    const BoxDelta target = encode(gt_box, anchor);
    box_preds.push_back(m.box_head_raw(feat));
    box_targets.emplace_back(target.tx, target.ty);
    box_preds.push_back(m.box_head_refined(hidden));
    box_targets.emplace_back(target.tx, target.ty);

    // Mask labels over the anchor-centered fixed-size grid.
    const int grid = m.cfg.mask_grid;
    std::vector<int> labels(static_cast<std::size_t>(grid) * grid, 0);
    const double tlx = anchor.cx - grid / 2.0;
    const double tly = anchor.cy - grid / 2.0;
    for (int i = 0; i < grid; ++i)
      for (int j = 0; j < grid; ++j) {
        const double px = tlx + j + 0.5;
        const double py = tly + i + 0.5;
        const double dx = px - pair.lm_x;
        const double dy = py - pair.lm_y;
        if (dx * dx + dy * dy <= cfg.mask_disk_radius * cfg.mask_disk_radius)
          labels[static_cast<std::size_t>(i) * grid + j] = 1;
      }
    mask_total = add(mask_total, mask_loss(m.mask_features(feat), m.w_mask_cls, labels,
                                           cfg.mask_cfg));
  };

  double best_iou = -1.0;
  for (const auto& anchor : sampled.positives) {
    process(anchor, true);
    const double v = iou(anchor, gt_box);
    if (v > best_iou) best_iou = v;
  }
  for (const auto& anchor : sampled.negatives) process(anchor, false);

  // Feature of the greatest-overlap proposal feeds the next frame's window.
  {
    NoGradGuard ng;
    Tensor f = m.roi_feature(merged, sampled.positives.front());
    out.best_feature = f.values();
  }

  out.cls = cls_total;
  out.mask = scale(mask_total, 1.0 / static_cast<double>(sampled.positives.size()));
  out.box = box_loss(box_preds, box_targets);
  return out;
}

}  // namespace trainer_detail

struct DetectorTrainResult {
  DetectorModel model;
  TrainHistory history;
};

struct CascadeTrainResult {
  CascadeModel model;
  TrainHistory history;  // concatenated stages, global epoch counter
};

// Shared epoch loop for detector-only and joint training. When `attention`
// is non-null the predicted attention box gates the anchors and the
// attention loss joins the objective; otherwise the ground-truth attention
// box is the teacher region.
namespace trainer_detail {

struct StageResult {
  TrainHistory history;
};

inline StageResult run_detector_stage(DetectorModel& det, AttentionModel* attention,
                                      const std::vector<TrainingPair>& pairs,
                                      const TrainConfig& cfg, int epochs,
                                      int epoch_offset, Rng& rng) {
  auto batches = group_batches(pairs);
  std::vector<Tensor> params = det.all();
  if (attention)
    for (auto& t : attention->all()) params.push_back(t);
  Sgd opt(cfg.learning_rate, cfg.momentum);
  TrainHistory hist;
  const int att_gt_box = attention ? attention->cfg.gt_box : 64;

  struct EpochAccum {
    double cls = 0, mask = 0, box = 0, att = 0, total = 0;
    int pairs = 0, skipped = 0;
  };

  auto epoch_pass = [&](int epoch_index, bool update) {
    EpochAccum acc;
    for (const auto& batch : batches) {
      Tensor batch_loss;
      std::map<int, std::vector<std::vector<double>>> histories;  // landmark -> features
      Rng neg_rng = rng.fork(static_cast<std::uint64_t>(epoch_index) * 10007 + 13);
      std::unique_ptr<NoGradGuard> ng;
      if (!update) ng = std::make_unique<NoGradGuard>();
      for (const TrainingPair* p : batch) {
        auto& history = histories[p->landmark_id];
        Box region;
        Tensor att_loss_term;
        if (attention) {
          Tensor deltas = attention->forward_deltas(p->patch);
          const auto& dv = deltas.values();
          Box pred = decode(BoxDelta{dv[0], dv[1], dv[2], dv[3]}, attention->patch_box());
          region = clip_box(pred, det.cfg.patch, det.cfg.patch, 4.0);
          Box gt = decode(p->gt_attention, attention->patch_box());
          auto term = attention_patch_term(p->patch, p->ref_patch, pred, gt);
          att_loss_term = attention_loss(deltas, p->gt_attention, term.u, term.v, term.n);
        } else {
          region = clip_box(Box{p->lm_x, p->lm_y, static_cast<double>(att_gt_box),
                                static_cast<double>(att_gt_box)},
                            det.cfg.patch, det.cfg.patch, 4.0);
        }
        auto terms = detector_pair_loss(det, *p, region, history, cfg, neg_rng);
        if (!terms.has_positive) {
          ++acc.skipped;
          continue;
        }
        history.push_back(terms.best_feature);
        const std::size_t keep = static_cast<std::size_t>(det.cfg.lstm_window - 1);
        while (history.size() > keep) history.erase(history.begin());

        Tensor pair_loss = combined_loss(terms.cls, terms.mask, terms.box, cfg.weights);
        acc.cls += terms.cls.item();
        acc.mask += terms.mask.item();
        acc.box += terms.box.item();
        if (att_loss_term.defined()) {
          pair_loss = add(pair_loss, att_loss_term);
          acc.att += att_loss_term.item();
        }
        acc.total += pair_loss.item();
        ++acc.pairs;
        batch_loss = batch_loss.defined() ? add(batch_loss, pair_loss) : pair_loss;
      }
      if (update && batch_loss.defined()) {
        backward(scale(batch_loss, 1.0 / std::max(1, acc.pairs)));
        opt.step(params);
        clear_grads(params);
      }
    }
    return acc;
  };

  auto audit = [&]() {
    if (!cfg.audit_gradients || batches.empty()) return -1.0;
    Rng audit_rng = rng.fork(999);
    const auto& batch = batches.front();
    auto loss_fn = [&]() {
      Tensor loss = Tensor::scalar(0.0);
      std::map<int, std::vector<std::vector<double>>> histories;
      Rng neg_rng = audit_rng.fork(7);
      int count = 0;
      for (const TrainingPair* p : batch) {
        if (count++ >= 2) break;  // a couple of pairs keeps the audit cheap
        Box region = clip_box(Box{p->lm_x, p->lm_y, static_cast<double>(att_gt_box),
                                  static_cast<double>(att_gt_box)},
                              det.cfg.patch, det.cfg.patch, 4.0);
        auto terms = detector_pair_loss(det, *p, region, histories[p->landmark_id], cfg,
                                        neg_rng);
        if (!terms.has_positive) continue;
        loss = add(loss, combined_loss(terms.cls, terms.mask, terms.box, cfg.weights));
      }
      return loss;
    };
    clear_grads(params);
    Rng pick_rng = rng.fork(1000);
    const double dev = audit_sample(loss_fn, params, pick_rng, 3);
    if (dev > 1e-3)
      log_warn("gradient audit deviation " + std::to_string(dev) + " above 1e-3");
    return dev;
  };

  hist.audit_deviation = audit();
  EpochAccum base = epoch_pass(0, false);
  double prev = base.pairs > 0 ? base.total / base.pairs
                               : std::numeric_limits<double>::infinity();
  hist.skipped_pairs = base.skipped;
  for (int e = 1; e <= epochs; ++e) {
    EpochAccum acc = epoch_pass(e, true);
    if (acc.pairs == 0)
      throw DataError("detector training: every pair lacked a positive anchor");
    const double loss = acc.total / acc.pairs;
    if (!std::isfinite(loss))
      throw DivergenceError("detector training: non-finite loss at epoch " +
                            std::to_string(e), e);
    hist.rows.push_back(EpochLoss{epoch_offset + e, loss, acc.cls / acc.pairs,
                                  acc.mask / acc.pairs, acc.box / acc.pairs,
                                  acc.pairs ? acc.att / acc.pairs : 0.0});
    hist.skipped_pairs = acc.skipped;
    const double decrease = prev - loss;
    prev = loss;
    if (decrease < cfg.delta_stop) break;
  }
  return {hist};
}

}  // namespace trainer_detail

// Detector trained against ground-truth attention regions (teacher forcing).
inline DetectorTrainResult train_detector(const std::vector<TrainingPair>& pairs,
                                          const TrainConfig& cfg,
                                          const DetectorConfig& dcfg = {}) {
  if (pairs.empty()) throw std::invalid_argument("train_detector: no training pairs");
  Rng rng(cfg.seed);
  DetectorModel det = DetectorModel::init(dcfg, rng);
  auto stage = trainer_detail::run_detector_stage(det, nullptr, pairs, cfg,
                                                  cfg.stage_epochs(cfg.detector_epochs), 0, rng);
  return {det, stage.history};
}

// Staged pretraining (attention, then detector on teacher regions) followed
// by joint fine-tuning through the predicted attention box.
inline CascadeTrainResult train_full(const std::vector<TrainingPair>& pairs,
                                     const TrainConfig& cfg,
                                     const AttentionConfig& acfg = {},
                                     const DetectorConfig& dcfg = {}) {
  if (pairs.empty()) throw std::invalid_argument("train_full: no training pairs");
  Rng rng(cfg.seed);

  auto att_result = train_attention(pairs, cfg, nullptr, acfg);
  TrainHistory hist = att_result.history;

  Rng det_rng = rng.fork(2);
  DetectorModel det = DetectorModel::init(dcfg, det_rng);
  int offset = static_cast<int>(hist.rows.size());
  auto det_stage = trainer_detail::run_detector_stage(
      det, nullptr, pairs, cfg, cfg.stage_epochs(cfg.detector_epochs), offset, det_rng);
  for (auto& r : det_stage.history.rows) hist.rows.push_back(r);
  hist.audit_deviation = det_stage.history.audit_deviation;
  hist.skipped_pairs = det_stage.history.skipped_pairs;

  CascadeModel model{att_result.model, det};
  if (cfg.joint_epochs > 0) {
    Rng joint_rng = rng.fork(3);
    TrainConfig joint_cfg = cfg;
    joint_cfg.audit_gradients = false;
    offset = static_cast<int>(hist.rows.size());
    auto joint_stage = trainer_detail::run_detector_stage(
        model.detector, &model.attention, pairs, joint_cfg, cfg.joint_epochs, offset,
        joint_rng);
    for (auto& r : joint_stage.history.rows) hist.rows.push_back(r);
  }
  return {model, hist};
}

// --- cross validation -----------------------------------------------------------

struct Fold {
  std::vector<std::string> train_ids;
  std::vector<std::string> test_ids;
};

// Seeded partition into five subsets with sizes as equal as possible
// (24 -> {5,5,5,5,4}); every id lands in exactly one test subset.
inline std::vector<Fold> five_fold_split(std::vector<std::string> ids,
                                         std::uint64_t seed) {
  constexpr int kFolds = 5;
  const int n = static_cast<int>(ids.size());
  if (n < kFolds)
    throw std::invalid_argument("five_fold_split: need at least 5 ids, got " +
                                std::to_string(n));
  Rng rng(seed);
  for (int i = n - 1; i > 0; --i) {
    const int j = static_cast<int>(rng.uniform_index(static_cast<std::uint64_t>(i + 1)));
    std::swap(ids[static_cast<std::size_t>(i)], ids[static_cast<std::size_t>(j)]);
  }
  const int base = n / kFolds;
  const int rem = n % kFolds;
  std::vector<Fold> folds(kFolds);
  int pos = 0;
  for (int f = 0; f < kFolds; ++f) {
    const int size = base + (f < rem ? 1 : 0);
    for (int i = 0; i < size; ++i)
      folds[static_cast<std::size_t>(f)].test_ids.push_back(ids[static_cast<std::size_t>(pos + i)]);
    pos += size;
  }
  for (int f = 0; f < kFolds; ++f)
    for (int g = 0; g < kFolds; ++g)
      if (g != f)
        for (const auto& id : folds[static_cast<std::size_t>(g)].test_ids)
          folds[static_cast<std::size_t>(f)].train_ids.push_back(id);
  return folds;
}

}  // namespace ustrack
