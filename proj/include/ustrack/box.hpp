#pragma once

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

namespace ustrack {

// Center-parameterized rectangle in continuous pixel coordinates.
struct Box {
  double cx = 0.0;
  double cy = 0.0;
  double w = 0.0;
  double h = 0.0;

  double left() const { return cx - 0.5 * w; }
  double right() const { return cx + 0.5 * w; }
  double top() const { return cy - 0.5 * h; }
  double bottom() const { return cy + 0.5 * h; }
  double area() const { return w * h; }
};

// Anchor-relative encoding (dimensionless offsets; log-scaled extents).
struct BoxDelta {
  double tx = 0.0;
  double ty = 0.0;
  double tw = 0.0;
  double th = 0.0;
};

inline void require_positive_extent(const Box& b, const char* what) {
  if (!(b.w > 0.0) || !(b.h > 0.0))
    throw std::invalid_argument(std::string(what) + ": non-positive box extent " +
                                std::to_string(b.w) + "x" + std::to_string(b.h));
}

// Intersection over union; symmetric, in [0,1]. Areas come from the same
// corner values as the intersection so identical boxes give exactly 1.
inline double iou(const Box& a, const Box& b) {
  const double ix = std::max(0.0, std::min(a.right(), b.right()) -
                                      std::max(a.left(), b.left()));
  const double iy = std::max(0.0, std::min(a.bottom(), b.bottom()) -
                                      std::max(a.top(), b.top()));
  const double inter = ix * iy;
  const double area_a = (a.right() - a.left()) * (a.bottom() - a.top());
  const double area_b = (b.right() - b.left()) * (b.bottom() - b.top());
  const double uni = area_a + area_b - inter;
  return uni > 0.0 ? std::min(inter / uni, 1.0) : 0.0;
}

inline BoxDelta encode(const Box& gt, const Box& anchor) {
  require_positive_extent(gt, "encode(gt)");
  require_positive_extent(anchor, "encode(anchor)");
  return BoxDelta{(gt.cx - anchor.cx) / anchor.w, (gt.cy - anchor.cy) / anchor.h,
                  std::log(gt.w / anchor.w), std::log(gt.h / anchor.h)};
}

inline Box decode(const BoxDelta& d, const Box& anchor) {
  require_positive_extent(anchor, "decode(anchor)");
  return Box{anchor.cx + d.tx * anchor.w, anchor.cy + d.ty * anchor.h,
             anchor.w * std::exp(d.tw), anchor.h * std::exp(d.th)};
}

// Clips box edges to [0,width]x[0,height], keeping extents at least min_size.
inline Box clip_box(const Box& b, double width, double height,
                    double min_size = 1.0) {
  double l = std::clamp(b.left(), 0.0, width);
  double r = std::clamp(b.right(), 0.0, width);
  double t = std::clamp(b.top(), 0.0, height);
  double bo = std::clamp(b.bottom(), 0.0, height);
  double w = std::max(r - l, min_size);
  double h = std::max(bo - t, min_size);
  double cx = std::clamp(0.5 * (l + r), 0.5 * w, width - 0.5 * w);
  double cy = std::clamp(0.5 * (t + bo), 0.5 * h, height - 0.5 * h);
  return Box{cx, cy, w, h};
}

// Square anchors on a stride grid centered on the region center: along each
// axis the grid offsets are m*stride for every integer m keeping the anchor
// center inside the region. One anchor per (grid point, scale), kept when
// iou(anchor, reference) > min_iou. Order: row-major over the grid (y outer,
// x inner, increasing coordinate), then scales in the given order.
inline std::vector<Box> generate_anchors(const Box& region,
                                         const std::vector<double>& scales,
                                         int stride, const Box& reference,
                                         double min_iou) {
  require_positive_extent(region, "generate_anchors(region)");
  require_positive_extent(reference, "generate_anchors(reference)");
  if (scales.empty())
    throw std::invalid_argument("generate_anchors: empty scale list");
  if (stride < 1) throw std::invalid_argument("generate_anchors: stride must be >= 1");
  if (min_iou < 0.0 || min_iou > 1.0)
    throw std::invalid_argument("generate_anchors: min_iou outside [0,1]");

  const int mx = static_cast<int>(std::floor(0.5 * region.w / stride));
  const int my = static_cast<int>(std::floor(0.5 * region.h / stride));
  std::vector<Box> out;
  for (int gy = -my; gy <= my; ++gy) {
    const double cy = region.cy + gy * static_cast<double>(stride);
    for (int gx = -mx; gx <= mx; ++gx) {
      const double cx = region.cx + gx * static_cast<double>(stride);
      for (double s : scales) {
        Box a{cx, cy, s, s};
        if (iou(a, reference) > min_iou) out.push_back(a);
      }
    }
  }
  return out;
}

}  // namespace ustrack
