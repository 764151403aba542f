#pragma once

#include <cmath>
#include <optional>
#include <vector>

#include "ustrack/common.hpp"

namespace ustrack {

struct SelectionConfig {
  double tradeoff = 0.5;       // weight of the detection score vs the motion prior
  bool literal_argmin = false; // comparison switch: minimize instead of maximize
};

struct ScoredPosition {
  double x = 0.0;
  double y = 0.0;
  double score = 0.0;  // detection score in [0,1]
};

// Motion-continuity term: 1 / (1 + e^dist), in (0, 0.5].
inline double selection_distance_term(double dist) {
  return 1.0 / (1.0 + std::exp(dist));
}

inline double selection_combined_score(double score, double dist, double tradeoff) {
  return tradeoff * score + (1.0 - tradeoff) * selection_distance_term(dist);
}

// Picks the candidate with the best combined score (highest by default; the
// literal_argmin switch flips the comparison). Ties break toward the smaller
// distance to the previous position, then toward the earlier list index.
// Empty candidate list signals a lost track via nullopt.
inline std::optional<std::size_t> select_index(const std::vector<ScoredPosition>& cands,
                                               double prev_x, double prev_y,
                                               const SelectionConfig& cfg) {
  if (cfg.tradeoff < 0.0 || cfg.tradeoff > 1.0)
    throw std::invalid_argument("select: tradeoff outside [0,1]");
  if (cands.empty()) {
    log_warn("select: empty candidate list, track lost");
    return std::nullopt;
  }
  std::size_t best = 0;
  double best_combined = 0.0;
  double best_dist = 0.0;
  for (std::size_t i = 0; i < cands.size(); ++i) {
    const double dist = std::hypot(cands[i].x - prev_x, cands[i].y - prev_y);
    const double combined = selection_combined_score(cands[i].score, dist, cfg.tradeoff);
    if (i == 0) {
      best_combined = combined;
      best_dist = dist;
      continue;
    }
    const bool better = cfg.literal_argmin ? combined < best_combined
                                           : combined > best_combined;
    if (better || (combined == best_combined && dist < best_dist)) {
      best = i;
      best_combined = combined;
      best_dist = dist;
    }
  }
  return best;
}

inline std::optional<ScoredPosition> select(const std::vector<ScoredPosition>& cands,
                                            double prev_x, double prev_y,
                                            const SelectionConfig& cfg) {
  auto idx = select_index(cands, prev_x, prev_y, cfg);
  if (!idx) return std::nullopt;
  return cands[*idx];
}

}  // namespace ustrack
