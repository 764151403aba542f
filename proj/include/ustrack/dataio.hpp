#pragma once

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "ustrack/common.hpp"
#include "ustrack/image.hpp"
#include "ustrack/rng.hpp"

namespace ustrack {

struct Annotation {
  int frame = 0;
  double x = 0.0;
  double y = 0.0;
};

// One loaded sequence: frames, per-landmark annotations, acquisition
// metadata. Immutable after load/generation.
struct SequenceBundle {
  std::string name;
  std::vector<Image> frames;
  double spacing_mm = 1.0;  // isotropic pixel spacing
  double hz = 0.0;          // frame rate
  std::string source_tag = "SYN";
  std::vector<std::vector<Annotation>> landmarks;

  int frame_count() const { return static_cast<int>(frames.size()); }
  int landmark_count() const { return static_cast<int>(landmarks.size()); }

  void validate() const {
    if (frames.empty()) throw DataError("sequence '" + name + "': no frames");
    for (const auto& f : frames)
      if (f.width != frames[0].width || f.height != frames[0].height)
        throw DataError("sequence '" + name + "': frames differ in size");
    if (landmarks.empty()) throw DataError("sequence '" + name + "': no landmarks");
    for (std::size_t li = 0; li < landmarks.size(); ++li) {
      const auto& ann = landmarks[li];
      if (ann.empty())
        throw DataError("sequence '" + name + "': landmark " + std::to_string(li) +
                        " has no annotations");
      if (ann.front().frame != 0)
        throw DataError("sequence '" + name + "': landmark " + std::to_string(li) +
                        " missing first-frame annotation");
      int prev = -1;
      for (std::size_t r = 0; r < ann.size(); ++r) {
        if (ann[r].frame <= prev)
          throw DataError("sequence '" + name + "': landmark " + std::to_string(li) +
                          " row " + std::to_string(r) + ": non-monotone frame index " +
                          std::to_string(ann[r].frame));
        if (ann[r].frame >= frame_count())
          throw DataError("sequence '" + name + "': landmark " + std::to_string(li) +
                          " row " + std::to_string(r) + ": frame index " +
                          std::to_string(ann[r].frame) + " >= frame count " +
                          std::to_string(frame_count()));
        prev = ann[r].frame;
      }
    }
    if (spacing_mm < 0.27 || spacing_mm > 0.77)
      log_warn("sequence '" + name + "': spacing " + std::to_string(spacing_mm) +
               " mm/px outside the usual 0.27..0.77 range");
  }
};

// --- directory layout -------------------------------------------------------
// <dir>/manifest.txt       key=value: spacing_mm, hz, source_tag
// <dir>/frame_00000.pgm    ordered 8/16-bit grayscale frames
// <dir>/landmark_00.csv    rows "frame_index,x,y", header optional

namespace io_detail {

inline std::map<std::string, std::string> read_kv_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw DataError("cannot open '" + path + "'");
  std::map<std::string, std::string> kv;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw DataError("'" + path + "': malformed line '" + line + "'");
    std::string key = line.substr(0, eq);
    std::string val = line.substr(eq + 1);
    auto trim = [](std::string& s) {
      const auto b = s.find_first_not_of(" \t\r");
      const auto e = s.find_last_not_of(" \t\r");
      s = (b == std::string::npos) ? "" : s.substr(b, e - b + 1);
    };
    trim(key);
    trim(val);
    kv[key] = val;
  }
  return kv;
}

inline std::string frame_name(int index) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "frame_%05d.pgm", index);
  return buf;
}

inline std::string landmark_name(int index) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "landmark_%02d.csv", index);
  return buf;
}

inline std::vector<Annotation> read_annotation_csv(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw DataError("cannot open '" + path + "'");
  std::vector<Annotation> out;
  std::string line;
  int row = 0;
  while (std::getline(is, line)) {
    ++row;
    if (line.empty() || line[0] == '#') continue;
    if (row == 1 && line.find_first_not_of("frame_indx,y \t\r") == std::string::npos)
      continue;  // header line
    std::istringstream ls(line);
    Annotation a;
    char c1 = 0, c2 = 0;
    if (!(ls >> a.frame >> c1 >> a.x >> c2 >> a.y) || c1 != ',' || c2 != ',')
      throw DataError("'" + path + "' row " + std::to_string(row) + ": expected 'frame_index,x,y'");
    out.push_back(a);
  }
  return out;
}

}  // namespace io_detail

inline SequenceBundle load_sequence(const std::string& dir) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(dir)) throw DataError("'" + dir + "' is not a directory");
  SequenceBundle b;
  b.name = fs::path(dir).filename().string();

  const auto kv = io_detail::read_kv_file((fs::path(dir) / "manifest.txt").string());
  auto need = [&](const char* key) {
    auto it = kv.find(key);
    if (it == kv.end())
      throw DataError("'" + dir + "/manifest.txt': missing key '" + key + "'");
    return it->second;
  };
  try {
    b.spacing_mm = std::stod(need("spacing_mm"));
    b.hz = std::stod(need("hz"));
  } catch (const std::invalid_argument&) {
    throw DataError("'" + dir + "/manifest.txt': non-numeric spacing_mm or hz");
  }
  b.source_tag = need("source_tag");

  for (int i = 0;; ++i) {
    const fs::path p = fs::path(dir) / io_detail::frame_name(i);
    if (!fs::exists(p)) break;
    try {
      b.frames.push_back(read_pgm(p.string()));
    } catch (const DataError& e) {
      throw DataError("frame " + std::to_string(i) + ": " + e.what());
    }
  }
  if (b.frames.empty()) throw DataError("'" + dir + "': no frame_*.pgm files");

  for (int i = 0;; ++i) {
    const fs::path p = fs::path(dir) / io_detail::landmark_name(i);
    if (!fs::exists(p)) break;
    b.landmarks.push_back(io_detail::read_annotation_csv(p.string()));
  }
  b.validate();
  return b;
}

inline void save_sequence(const SequenceBundle& b, const std::string& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  {
    std::ofstream os(fs::path(dir) / "manifest.txt");
    if (!os) throw DataError("cannot write manifest in '" + dir + "'");
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", b.spacing_mm);
    os << "spacing_mm=" << buf << "\n";
    std::snprintf(buf, sizeof(buf), "%.17g", b.hz);
    os << "hz=" << buf << "\n";
    os << "source_tag=" << b.source_tag << "\n";
  }
  for (std::size_t i = 0; i < b.frames.size(); ++i)
    write_pgm((fs::path(dir) / io_detail::frame_name(static_cast<int>(i))).string(),
              b.frames[i]);
  for (std::size_t li = 0; li < b.landmarks.size(); ++li) {
    std::ofstream os(fs::path(dir) / io_detail::landmark_name(static_cast<int>(li)));
    if (!os) throw DataError("cannot write landmark csv in '" + dir + "'");
    os << "frame_index,x,y\n";
    char buf[128];
    for (const auto& a : b.landmarks[li]) {
      std::snprintf(buf, sizeof(buf), "%d,%.17g,%.17g\n", a.frame, a.x, a.y);
      os << buf;
    }
  }
}

// --- synthetic sequences ----------------------------------------------------

// Free-breathing stand-in: a bright blob following a sinusoid with drift and
// occasional decaying jump transients, surrounded by similar-looking
// distractor blobs, under multiplicative Rayleigh speckle.
struct SynthConfig {
  int width = 128;
  int height = 128;
  int frames = 60;
  double hz = 15.0;
  double spacing_mm = 0.5;

  double blob_amp = 0.8;       // landmark blob peak intensity
  double blob_sigma = 3.0;     // Gaussian radius of the blob
  double base_level = 0.12;    // background brightness

  double motion_amp_px = 8.0;  // A
  double motion_hz = 0.25;     // f
  double phase = 0.0;
  double drift_px_per_frame = 0.03;

  double jump_prob = 0.02;     // per-frame probability of an abrupt transient
  double jump_mag_px = 12.0;
  double jump_decay_frames = 3.0;

  double speckle = 0.35;       // 0 disables; blend weight of the Rayleigh field
  int distractors = 2;
  double distractor_amp = 0.65;
  double distractor_min_dist = 15.0;

  std::uint64_t seed = 1;
};

inline SequenceBundle synth_sequence(const SynthConfig& cfg) {
  if (cfg.width < 32 || cfg.height < 32 || cfg.frames < 1)
    throw ConfigError("synth_sequence: image size or frame count too small");
  if (cfg.jump_prob < 0.0 || cfg.jump_prob > 1.0)
    throw ConfigError("synth_sequence: jump_prob outside [0,1]");
  if (cfg.speckle < 0.0 || cfg.speckle > 1.0)
    throw ConfigError("synth_sequence: speckle outside [0,1]");
  const double x0 = cfg.width / 2.0;
  const double y0 = cfg.height / 2.0;
  const double excursion = std::abs(cfg.motion_amp_px) +
                           std::abs(cfg.drift_px_per_frame) * (cfg.frames - 1) +
                           std::abs(cfg.jump_mag_px);
  // The tracker's search patch is 100x100 around the first-frame position;
  // keep the whole path well inside it and inside the frame.
  const double patch_margin = 50.0 - 10.0;
  if (excursion > patch_margin)
    throw ConfigError("synth_sequence: motion excursion " + std::to_string(excursion) +
                      " px would leave the search patch");
  if (x0 + excursion > cfg.width - 8.0 || x0 - excursion < 8.0 ||
      y0 + excursion > cfg.height - 8.0 || y0 - excursion < 8.0)
    throw ConfigError("synth_sequence: motion excursion leaves the frame");

  Rng rng(cfg.seed);
  Rng jump_rng = rng.fork(1);
  Rng speckle_rng = rng.fork(2);
  Rng distractor_rng = rng.fork(3);

  // Landmark path.
  constexpr double kTau = 2.0 * 3.14159265358979323846;
  std::vector<std::pair<double, double>> path(static_cast<std::size_t>(cfg.frames));
  double jx = 0.0, jy = 0.0;
  const double decay = std::exp(-1.0 / std::max(cfg.jump_decay_frames, 1e-6));
  for (int t = 0; t < cfg.frames; ++t) {
    if (t > 0) {
      jx *= decay;
      jy *= decay;
      if (jump_rng.uniform() < cfg.jump_prob) {
        const double ang = jump_rng.uniform(0.0, kTau);
        jx += cfg.jump_mag_px * std::cos(ang);
        jy += cfg.jump_mag_px * std::sin(ang);
      }
    }
    const double arg = kTau * cfg.motion_hz * t / cfg.hz + cfg.phase;
    const double px = x0 + cfg.motion_amp_px * std::sin(arg) + cfg.drift_px_per_frame * t + jx;
    const double py = y0 + 0.6 * cfg.motion_amp_px * std::sin(arg + 1.3) +
                      0.5 * cfg.drift_px_per_frame * t + jy;
    path[static_cast<std::size_t>(t)] = {px, py};
  }

  // Distractor placement: inside the search patch, away from the whole path.
  std::vector<std::pair<double, double>> dis;
  for (int i = 0; i < cfg.distractors; ++i) {
    bool placed = false;
    for (int tries = 0; tries < 4000 && !placed; ++tries) {
      const double dx = distractor_rng.uniform(x0 - 42.0, x0 + 42.0);
      const double dy = distractor_rng.uniform(y0 - 42.0, y0 + 42.0);
      bool ok = dx > 6.0 && dx < cfg.width - 6.0 && dy > 6.0 && dy < cfg.height - 6.0;
      for (const auto& p : path) {
        if (!ok) break;
        const double dd = std::hypot(dx - p.first, dy - p.second);
        if (dd < cfg.distractor_min_dist) ok = false;
      }
      for (const auto& o : dis) {
        if (!ok) break;
        if (std::hypot(dx - o.first, dy - o.second) < 10.0) ok = false;
      }
      if (ok) {
        dis.emplace_back(dx, dy);
        placed = true;
      }
    }
    if (!placed)
      throw ConfigError("synth_sequence: cannot place distractor " + std::to_string(i) +
                        " at distance >= " + std::to_string(cfg.distractor_min_dist));
  }

  SequenceBundle b;
  b.name = "synth";
  b.spacing_mm = cfg.spacing_mm;
  b.hz = cfg.hz;
  b.source_tag = "SYN";
  b.landmarks.resize(1);

  const double rayleigh_sigma = std::sqrt(2.0 / 3.14159265358979323846);  // mean-1 field
  for (int t = 0; t < cfg.frames; ++t) {
    Image img(cfg.width, cfg.height, cfg.base_level);
    auto add_blob = [&](double bx, double by, double amp) {
      const double s2 = 2.0 * cfg.blob_sigma * cfg.blob_sigma;
      const int reach = static_cast<int>(std::ceil(4.0 * cfg.blob_sigma));
      const int x_lo = std::max(0, static_cast<int>(bx) - reach);
      const int x_hi = std::min(cfg.width - 1, static_cast<int>(bx) + reach);
      const int y_lo = std::max(0, static_cast<int>(by) - reach);
      const int y_hi = std::min(cfg.height - 1, static_cast<int>(by) + reach);
      for (int y = y_lo; y <= y_hi; ++y)
        for (int x = x_lo; x <= x_hi; ++x) {
          const double d2 = (x - bx) * (x - bx) + (y - by) * (y - by);
          img.at(x, y) += amp * std::exp(-d2 / s2);
        }
    };
    const auto [px, py] = path[static_cast<std::size_t>(t)];
    add_blob(px, py, cfg.blob_amp);
    for (const auto& dpos : dis) add_blob(dpos.first, dpos.second, cfg.distractor_amp);
    if (cfg.speckle > 0.0) {
      for (auto& v : img.px) {
        const double field = (1.0 - cfg.speckle) + cfg.speckle * speckle_rng.rayleigh(rayleigh_sigma);
        v *= field;
      }
    }
    // Quantize like the on-disk format so the in-memory pipeline and the
    // saved/loaded pipeline see identical pixels.
    for (auto& v : img.px)
      v = std::lround(std::clamp(v, 0.0, 1.0) * 255.0) / 255.0;
    b.frames.push_back(std::move(img));
    b.landmarks[0].push_back(Annotation{t, px, py});
  }
  b.validate();
  return b;
}

}  // namespace ustrack
