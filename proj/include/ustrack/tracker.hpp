#pragma once

#include <deque>
#include <string>
#include <vector>

#include "ustrack/cascade.hpp"
#include "ustrack/dataio.hpp"
#include "ustrack/image.hpp"
#include "ustrack/select.hpp"

namespace ustrack {

struct TrackerConfig {
  bool use_attention = true;  // off: search the whole patch, no overlap filter
  bool use_lstm = true;       // off: selection consumes the single-frame heads
  SelectionConfig selection;
};

struct TrackPoint {
  double x = 0.0;
  double y = 0.0;
  double score = 0.0;
  bool lost = false;
};

// Per-landmark tracking state machine over one sequence. The search patch
// stays centered on the first-frame annotation; each frame runs attention,
// detection, recurrent refinement and the similarity-based selection.
class Tracker {
 public:
  Tracker(const CascadeModel& model, TrackerConfig cfg = {})
      : model_(&model), cfg_(cfg) {}

  // First-frame annotations define the patch centers and initial positions.
  void init(const SequenceBundle& bundle) {
    states_.clear();
    for (const auto& ann : bundle.landmarks) {
      if (ann.empty() || ann.front().frame != 0)
        throw DataError("tracker: landmark without first-frame annotation");
      LandmarkState s;
      s.patch_cx = ann.front().x;
      s.patch_cy = ann.front().y;
      s.prev_x = ann.front().x;
      s.prev_y = ann.front().y;
      states_.push_back(std::move(s));
    }
  }

  int landmark_count() const { return static_cast<int>(states_.size()); }

  TrackPoint track_landmark(const Image& frame, int landmark) {
    LandmarkState& st = states_.at(static_cast<std::size_t>(landmark));
    const int patch_size = model_->detector.cfg.patch;
    Image patch = crop_patch(frame, st.patch_cx, st.patch_cy, patch_size);
    auto [ox, oy] = patch_origin(st.patch_cx, st.patch_cy, patch_size);

    Box attn = cfg_.use_attention ? attention_forward(model_->attention, patch)
                                  : model_->detector.patch_box();
    DetectorModel det = model_->detector;  // shares parameters, local config
    if (!cfg_.use_attention) det.cfg.filter_ref = DetectorConfig::FilterRef::None;

    auto cands = detector_forward(det, patch, attn);
    TrackPoint out;
    if (cands.empty()) {
      log_warn("tracker: no candidates for landmark " + std::to_string(landmark) +
               ", keeping previous position");
      out.x = st.prev_x;
      out.y = st.prev_y;
      out.score = 0.0;
      out.lost = true;
      return out;
    }

    std::vector<ScoredPosition> scored(cands.size());
    if (cfg_.use_lstm) {
      auto refined = lstm_refine(det, cands, st.history);
      for (std::size_t i = 0; i < cands.size(); ++i)
        scored[i] = ScoredPosition{ox + refined[i].box.cx, oy + refined[i].box.cy,
                                   refined[i].score};
    } else {
      for (std::size_t i = 0; i < cands.size(); ++i)
        scored[i] = ScoredPosition{ox + cands[i].box.cx, oy + cands[i].box.cy,
                                   cands[i].score};
    }

    auto idx = select_index(scored, st.prev_x, st.prev_y, cfg_.selection);
    const std::size_t k = *idx;  // nonempty by the check above
    out.x = scored[k].x;
    out.y = scored[k].y;
    out.score = scored[k].score;
    out.lost = false;

    st.prev_x = out.x;
    st.prev_y = out.y;
    st.history.push_back(cands[k].feature);
    const std::size_t keep = static_cast<std::size_t>(model_->detector.cfg.lstm_window - 1);
    while (st.history.size() > keep) st.history.erase(st.history.begin());
    return out;
  }

  std::vector<TrackPoint> track_frame(const Image& frame) {
    std::vector<TrackPoint> out;
    out.reserve(states_.size());
    for (int li = 0; li < landmark_count(); ++li) out.push_back(track_landmark(frame, li));
    return out;
  }

 private:
  struct LandmarkState {
    double patch_cx = 0.0, patch_cy = 0.0;
    double prev_x = 0.0, prev_y = 0.0;
    std::vector<std::vector<double>> history;  // oldest first
  };

  const CascadeModel* model_;
  TrackerConfig cfg_;
  std::vector<LandmarkState> states_;
};

}  // namespace ustrack
