#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "ustrack/common.hpp"
#include "ustrack/dataio.hpp"
#include "ustrack/tracker.hpp"

namespace ustrack {

// Euclidean tracking error in millimetres.
inline double tracking_error(double pred_x, double pred_y, double gt_x, double gt_y,
                             double spacing_mm) {
  if (!(spacing_mm > 0.0))
    throw std::invalid_argument("tracking_error: spacing must be positive");
  return std::hypot(pred_x - gt_x, pred_y - gt_y) * spacing_mm;
}

struct Summary {
  double mean = 0.0;
  double stddev = 0.0;  // population standard deviation
  double p95 = 0.0;     // nearest-rank 95th percentile
  double max = 0.0;
  int n = 0;
};

inline Summary summarize(const std::vector<double>& errors) {
  if (errors.empty()) throw std::invalid_argument("summarize: empty error series");
  Summary s;
  s.n = static_cast<int>(errors.size());
  double acc = 0.0;
  for (double e : errors) acc += e;
  s.mean = acc / s.n;
  double var = 0.0;
  for (double e : errors) var += (e - s.mean) * (e - s.mean);
  s.stddev = std::sqrt(var / s.n);
  std::vector<double> sorted(errors);
  std::sort(sorted.begin(), sorted.end());
  const int rank = static_cast<int>(std::ceil(0.95 * s.n));  // 1-based nearest rank
  s.p95 = sorted[static_cast<std::size_t>(std::max(rank, 1) - 1)];
  s.max = sorted.back();
  return s;
}

// Per-landmark error series tagged with its scanner source.
struct LandmarkSeries {
  std::string source;
  int landmark_id = 0;
  std::vector<double> errors_mm;
};

struct SourceRow {
  std::string source;
  int n_landmarks = 0;
  double mean = 0.0;
  double stddev = 0.0;
  double p95 = 0.0;
  double ave_max = 0.0;  // mean over landmarks of each landmark's max error
};

struct TrackReport {
  std::vector<SourceRow> rows;  // per source, sorted by tag; "ALL" row last
  double fps = 0.0;             // optional, filled by the benchmark path

  static const char* csv_header() { return "source,N,mean_mm,std_mm,p95_mm,ave_max_mm"; }

  std::string to_csv() const {
    std::ostringstream os;
    os << csv_header() << "\n";
    char buf[256];
    for (const auto& r : rows) {
      std::snprintf(buf, sizeof(buf), "%s,%d,%.6f,%.6f,%.6f,%.6f\n", r.source.c_str(),
                    r.n_landmarks, r.mean, r.stddev, r.p95, r.ave_max);
      os << buf;
    }
    return os.str();
  }

  std::string to_text() const {
    std::ostringstream os;
    char buf[256];
    std::snprintf(buf, sizeof(buf), "%-8s %4s %10s %9s %9s %18s\n", "Source", "N",
                  "Mean (mm)", "Std (mm)", "95% (mm)", "AVE.MaxError(mm)");
    os << buf;
    for (const auto& r : rows) {
      std::snprintf(buf, sizeof(buf), "%-8s %4d %10.3f %9.3f %9.3f %18.3f\n",
                    r.source.c_str(), r.n_landmarks, r.mean, r.stddev, r.p95, r.ave_max);
      os << buf;
    }
    return os.str();
  }
};

// Groups landmark series by source tag and pools the per-frame errors; the
// ALL row pools every error across sources. Unfamiliar tags fall into OTHER.
inline TrackReport aggregate_report(const std::vector<LandmarkSeries>& series) {
  if (series.empty()) throw std::invalid_argument("aggregate_report: no landmark series");
  static const std::set<std::string> known = {"CIL", "ETH", "ICR", "MED",
                                              "MED1", "MED2", "SYN"};
  std::map<std::string, std::vector<const LandmarkSeries*>> groups;
  for (const auto& s : series) {
    std::string tag = s.source;
    if (!known.count(tag)) {
      log_warn("aggregate_report: unknown source tag '" + tag + "', grouping under OTHER");
      tag = "OTHER";
    }
    groups[tag].push_back(&s);
  }

  auto build_row = [](const std::string& tag,
                      const std::vector<const LandmarkSeries*>& members) {
    std::vector<double> pooled;
    double max_acc = 0.0;
    for (const auto* m : members) {
      pooled.insert(pooled.end(), m->errors_mm.begin(), m->errors_mm.end());
      max_acc += summarize(m->errors_mm).max;
    }
    Summary s = summarize(pooled);
    SourceRow row;
    row.source = tag;
    row.n_landmarks = static_cast<int>(members.size());
    row.mean = s.mean;
    row.stddev = s.stddev;
    row.p95 = s.p95;
    row.ave_max = max_acc / members.size();
    return row;
  };

  TrackReport report;
  for (const auto& [tag, members] : groups) report.rows.push_back(build_row(tag, members));
  std::vector<const LandmarkSeries*> everyone;
  for (const auto& s : series) everyone.push_back(&s);
  report.rows.push_back(build_row("ALL", everyone));
  return report;
}

// --- throughput ------------------------------------------------------------------

struct FpsReport {
  double fps = 0.0;            // full per-frame tracking step (patch crop included)
  double fps_excl_prep = 0.0;  // with the patch-crop preprocessing time removed
  double mean_ms = 0.0;
  double p50_ms = 0.0;
  double p95_ms = 0.0;
  int frames_timed = 0;
};

// Times track_frame calls only: frames are already decoded in the bundle, so
// file I/O never enters the measurement. The first `warmup` frames run
// untimed. A crop-only pass estimates the preprocessing share so both
// inclusive and exclusive throughput can be reported.
inline FpsReport fps_benchmark(Tracker& tracker, const SequenceBundle& bundle,
                               int warmup = 5) {
  using clock = std::chrono::steady_clock;
  tracker.init(bundle);
  std::vector<double> lat_ms;
  const int total = bundle.frame_count();
  for (int t = 1; t < total; ++t) {
    const auto t0 = clock::now();
    tracker.track_frame(bundle.frames[static_cast<std::size_t>(t)]);
    const auto t1 = clock::now();
    if (t > warmup)
      lat_ms.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
  }
  FpsReport rep;
  rep.frames_timed = static_cast<int>(lat_ms.size());
  if (lat_ms.empty()) return rep;
  double sum = 0.0;
  for (double v : lat_ms) sum += v;
  rep.mean_ms = sum / lat_ms.size();
  rep.fps = 1000.0 / rep.mean_ms;
  std::vector<double> sorted(lat_ms);
  std::sort(sorted.begin(), sorted.end());
  rep.p50_ms = sorted[sorted.size() / 2];
  rep.p95_ms = sorted[static_cast<std::size_t>(
      std::max<int>(1, static_cast<int>(std::ceil(0.95 * sorted.size()))) - 1)];

  // Preprocessing share: crop the same patches without running the model.
  const auto& first_ann = bundle.landmarks;
  const auto c0 = clock::now();
  int crops = 0;
  for (int t = warmup + 1; t < total; ++t) {
    for (const auto& ann : first_ann) {
      volatile double sink = crop_patch(bundle.frames[static_cast<std::size_t>(t)],
                                        ann.front().x, ann.front().y, 100)
                                 .px[0];
      (void)sink;
      ++crops;
    }
  }
  const auto c1 = clock::now();
  const double crop_ms =
      crops > 0 ? std::chrono::duration<double, std::milli>(c1 - c0).count() /
                      rep.frames_timed
                : 0.0;
  const double excl = std::max(rep.mean_ms - crop_ms, 1e-9);
  rep.fps_excl_prep = 1000.0 / excl;
  return rep;
}

}  // namespace ustrack
