#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "ustrack/common.hpp"
#include "ustrack/tensor.hpp"

namespace ustrack {

// Grayscale image, intensities in [0,1], row-major. Coordinates are
// (x = column, y = row) with the origin at the top-left pixel center.
struct Image {
  int width = 0;
  int height = 0;
  std::vector<double> px;

  Image() = default;
  Image(int w, int h, double fill = 0.0)
      : width(w), height(h), px(static_cast<std::size_t>(w) * h, fill) {}

  double at(int x, int y) const {
    return px[static_cast<std::size_t>(y) * width + x];
  }
  double& at(int x, int y) { return px[static_cast<std::size_t>(y) * width + x]; }

  Tensor to_tensor() const {
    return Tensor::from(px, {1, height, width});
  }
};

// --- PGM (P5) read/write; 8-bit by default, 16-bit accepted on read. -------

inline void write_pgm(const std::string& path, const Image& img) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("write_pgm: cannot open '" + path + "'");
  os << "P5\n" << img.width << " " << img.height << "\n255\n";
  std::vector<unsigned char> buf(img.px.size());
  for (std::size_t i = 0; i < buf.size(); ++i) {
    const double v = std::clamp(img.px[i], 0.0, 1.0);
    buf[i] = static_cast<unsigned char>(std::lround(v * 255.0));
  }
  os.write(reinterpret_cast<const char*>(buf.data()),
           static_cast<std::streamsize>(buf.size()));
  if (!os) throw DataError("write_pgm: write failed for '" + path + "'");
}

inline Image read_pgm(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("read_pgm: cannot open '" + path + "'");
  std::string magic;
  is >> magic;
  if (magic != "P5") throw DataError("read_pgm: '" + path + "' is not binary PGM");
  auto next_int = [&]() {
    // skip whitespace and '#' comment lines
    int c = is.peek();
    while (is && (std::isspace(c) || c == '#')) {
      if (c == '#') {
        std::string line;
        std::getline(is, line);
      } else {
        is.get();
      }
      c = is.peek();
    }
    long v = -1;
    is >> v;
    if (!is || v < 0) throw DataError("read_pgm: bad header in '" + path + "'");
    return v;
  };
  const long w = next_int();
  const long h = next_int();
  const long maxval = next_int();
  if (w <= 0 || h <= 0 || (maxval != 255 && maxval != 65535))
    throw DataError("read_pgm: unsupported header in '" + path + "'");
  is.get();  // single whitespace after maxval
  Image img(static_cast<int>(w), static_cast<int>(h));
  if (maxval == 255) {
    std::vector<unsigned char> buf(img.px.size());
    is.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    if (!is) throw DataError("read_pgm: truncated pixel data in '" + path + "'");
    for (std::size_t i = 0; i < buf.size(); ++i) img.px[i] = buf[i] / 255.0;
  } else {
    std::vector<unsigned char> buf(img.px.size() * 2);
    is.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    if (!is) throw DataError("read_pgm: truncated pixel data in '" + path + "'");
    for (std::size_t i = 0; i < img.px.size(); ++i) {
      const unsigned v = (static_cast<unsigned>(buf[2 * i]) << 8) | buf[2 * i + 1];
      img.px[i] = v / 65535.0;
    }
  }
  return img;
}

// Top-left corner of the size x size patch centered at (cx, cy); the center
// is rounded to the nearest pixel before the patch grid is laid down.
inline std::pair<int, int> patch_origin(double cx, double cy, int size) {
  const int icx = static_cast<int>(std::lround(cx));
  const int icy = static_cast<int>(std::lround(cy));
  return {icx - size / 2, icy - size / 2};
}

// size x size crop centered at (cx, cy); out-of-frame pixels are zero.
// Input intensities are already in [0,1], so the scale contract holds.
inline Image crop_patch(const Image& frame, double cx, double cy, int size) {
  if (size < 1) throw std::invalid_argument("crop_patch: size must be >= 1");
  auto [x0, y0] = patch_origin(cx, cy, size);
  Image out(size, size);
  const int sx_lo = std::max(0, -x0);
  const int sx_hi = std::min(size, frame.width - x0);
  const int sy_lo = std::max(0, -y0);
  const int sy_hi = std::min(size, frame.height - y0);
  if (sx_hi <= sx_lo) return out;
  for (int y = sy_lo; y < sy_hi; ++y) {
    const double* src = frame.px.data() + static_cast<std::size_t>(y0 + y) * frame.width + (x0 + sx_lo);
    double* dst = out.px.data() + static_cast<std::size_t>(y) * size + sx_lo;
    std::copy(src, src + (sx_hi - sx_lo), dst);
  }
  return out;
}

}  // namespace ustrack
