#include "tafnet/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "tafnet/config.hpp"
#include "tafnet/image_io.hpp"

namespace tafnet {

namespace fs = std::filesystem;
using nlohmann::json;

void SynthConfig::validate() const {
  if (image_h < 32 || image_h % 32 != 0 || image_w < 32 || image_w % 32 != 0) {
    throw std::invalid_argument("SynthConfig: image size " + std::to_string(image_h) +
                                "x" + std::to_string(image_w) +
                                " must be divisible by 32");
  }
  if (count_min < 0 || count_max < count_min) {
    throw std::invalid_argument("SynthConfig: bad crowd count range");
  }
  if (radius_min <= 0.0 || radius_max < radius_min) {
    throw std::invalid_argument("SynthConfig: bad person radius range");
  }
  if (bright_fraction < 0.0 || bright_fraction > 1.0) {
    throw std::invalid_argument("SynthConfig: bright_fraction must be in [0,1]");
  }
  // bright scenes must favor RGB, dark scenes must favor thermal
  if (!(rgb_snr_bright > rgb_snr_dark) || !(thermal_snr_dark > thermal_snr_bright) ||
      !(rgb_snr_bright > thermal_snr_bright) || !(thermal_snr_dark > rgb_snr_dark)) {
    throw std::invalid_argument(
        "SynthConfig: snr parameters must satisfy the bright/dark contrast ordering");
  }
  if (noise_sigma <= 0.0) {
    throw std::invalid_argument("SynthConfig: noise_sigma must be > 0");
  }
  if (misalignment_max < 0.0) {
    throw std::invalid_argument("SynthConfig: misalignment_max must be >= 0");
  }
  if (train_count < 0 || val_count < 0 || test_count < 0) {
    throw std::invalid_argument("SynthConfig: split sizes must be >= 0");
  }
}

namespace {

constexpr double kRgbBgBright = 0.45;
constexpr double kRgbBgDark = 0.06;
constexpr double kThermalBg = 0.25;

double snap8(double v) {
  const double clamped = std::min(std::max(v, 0.0), 1.0);
  return std::lround(clamped * 255.0) / 255.0;
}

// Smooth radial falloff, zero outside the radius.
void render_blob(Tensor4& img, int channel, double cx, double cy, double radius,
                 double amplitude) {
  const int h = img.shape.h, w = img.shape.w;
  const int y0 = std::max(0, int(std::floor(cy - radius)));
  const int y1 = std::min(h - 1, int(std::ceil(cy + radius)));
  const int x0 = std::max(0, int(std::floor(cx - radius)));
  const int x1 = std::min(w - 1, int(std::ceil(cx + radius)));
  const double r2 = radius * radius;
  for (int y = y0; y <= y1; ++y) {
    for (int x = x0; x <= x1; ++x) {
      const double dx = (x + 0.5) - cx;
      const double dy = (y + 0.5) - cy;
      const double d2 = dx * dx + dy * dy;
      if (d2 >= r2) continue;
      const double t = 1.0 - d2 / r2;
      img.at(0, channel, y, x) += amplitude * t * t;
    }
  }
}

}  // namespace

SceneLayout sample_scene_layout(Rng& rng, const SynthConfig& cfg) {
  SceneLayout layout;
  layout.illumination =
      rng.bernoulli(cfg.bright_fraction) ? Illumination::bright : Illumination::dark;
  const int count = rng.uniform_int(cfg.count_min, cfg.count_max);
  layout.blobs.reserve(count);
  for (int i = 0; i < count; ++i) {
    BlobSpec blob;
    blob.x = rng.uniform(0.0, double(cfg.image_w));
    blob.y = rng.uniform(0.0, double(cfg.image_h));
    blob.radius = rng.uniform(cfg.radius_min, cfg.radius_max);
    blob.amp_jitter = rng.uniform(0.8, 1.2);
    blob.thermal_dx = rng.uniform(-cfg.misalignment_max, cfg.misalignment_max);
    blob.thermal_dy = rng.uniform(-cfg.misalignment_max, cfg.misalignment_max);
    layout.blobs.push_back(blob);
  }
  return layout;
}

ScenePair render_scene(const SceneLayout& layout, Rng& rng, const SynthConfig& cfg,
                       std::string id) {
  ScenePair pair;
  pair.id = std::move(id);
  pair.illumination = layout.illumination;
  const bool bright = layout.illumination == Illumination::bright;

  const int h = cfg.image_h, w = cfg.image_w;
  pair.rgb = Tensor4(Shape4{1, 3, h, w}, bright ? kRgbBgBright : kRgbBgDark);
  pair.thermal = Tensor4(Shape4{1, 1, h, w}, kThermalBg);

  const double rgb_amp =
      (bright ? cfg.rgb_snr_bright : cfg.rgb_snr_dark) * cfg.noise_sigma;
  const double thermal_amp =
      (bright ? cfg.thermal_snr_bright : cfg.thermal_snr_dark) * cfg.noise_sigma;

  pair.points.reserve(layout.blobs.size());
  for (const BlobSpec& blob : layout.blobs) {
    pair.points.push_back(Point{blob.x, blob.y});
    for (int c = 0; c < 3; ++c) {
      render_blob(pair.rgb, c, blob.x, blob.y, blob.radius, rgb_amp * blob.amp_jitter);
    }
    render_blob(pair.thermal, 0, blob.x + blob.thermal_dx, blob.y + blob.thermal_dy,
                blob.radius, thermal_amp * blob.amp_jitter);
  }

  for (double& v : pair.rgb.data) v = snap8(v + rng.normal(0.0, cfg.noise_sigma));
  for (double& v : pair.thermal.data) v = snap8(v + rng.normal(0.0, cfg.noise_sigma));
  return pair;
}

ScenePair generate_scene(Rng& rng, const SynthConfig& cfg, std::string id) {
  cfg.validate();
  const SceneLayout layout = sample_scene_layout(rng, cfg);
  return render_scene(layout, rng, cfg, std::move(id));
}

std::vector<ScenePair> generate_split(const SynthConfig& cfg, const std::string& split,
                                      int count) {
  uint64_t split_tag = 0;
  for (char c : split) split_tag = split_tag * 131 + uint8_t(c);
  std::vector<ScenePair> pairs;
  pairs.reserve(count);
  for (int i = 0; i < count; ++i) {
    char id[64];
    std::snprintf(id, sizeof(id), "%s_%04d", split.c_str(), i);
    Rng rng(mix_seed(mix_seed(cfg.seed, split_tag), uint64_t(i)));
    pairs.push_back(generate_scene(rng, cfg, id));
  }
  return pairs;
}

void write_split(const std::vector<ScenePair>& pairs, const fs::path& dir,
                 const std::string& split) {
  const fs::path split_dir = dir / split;
  fs::create_directories(split_dir);
  std::ofstream ann(split_dir / "annotations.jsonl", std::ios::trunc);
  if (!ann) {
    throw std::runtime_error("write_split: cannot open '" +
                             (split_dir / "annotations.jsonl").string() + "'");
  }
  for (const ScenePair& p : pairs) {
    write_ppm(p.rgb, split_dir / (p.id + ".rgb.ppm"));
    write_pgm(p.thermal, split_dir / (p.id + ".thermal.pgm"));
    json rec;
    rec["id"] = p.id;
    rec["illumination"] = illumination_name(p.illumination);
    json pts = json::array();
    for (const Point& pt : p.points) pts.push_back(json::array({pt.x, pt.y}));
    rec["points"] = pts;
    ann << rec.dump() << "\n";
  }
}

std::vector<ScenePair> read_split(const fs::path& dir, const std::string& split) {
  const fs::path split_dir = dir / split;
  const fs::path ann_path = split_dir / "annotations.jsonl";
  if (!fs::is_directory(split_dir)) {
    throw std::runtime_error("read_split: no such split directory '" +
                             split_dir.string() + "'");
  }
  std::ifstream ann(ann_path);
  if (!ann) {
    throw std::runtime_error("read_split: cannot open '" + ann_path.string() + "'");
  }

  std::vector<ScenePair> pairs;
  std::set<std::string> seen_ids;
  std::set<std::string> referenced_files{"annotations.jsonl"};
  std::string line;
  int lineno = 0;
  while (std::getline(ann, line)) {
    ++lineno;
    if (line.empty()) continue;
    const std::string where = ann_path.string() + ":" + std::to_string(lineno);
    json rec;
    try {
      rec = json::parse(line);
    } catch (const json::exception& e) {
      throw std::runtime_error(where + ": malformed record: " + e.what());
    }
    if (!rec.is_object() || !rec.contains("id") || !rec.contains("illumination") ||
        !rec.contains("points")) {
      throw std::runtime_error(where + ": record must have id, illumination, points");
    }

    ScenePair p;
    try {
      p.id = rec.at("id").get<std::string>();
      p.illumination = illumination_from_name(rec.at("illumination").get<std::string>());
      for (const auto& pt : rec.at("points")) {
        if (!pt.is_array() || pt.size() != 2) {
          throw std::invalid_argument("points must be [x,y] pairs");
        }
        p.points.push_back(Point{pt[0].get<double>(), pt[1].get<double>()});
      }
    } catch (const std::exception& e) {
      throw std::runtime_error(where + ": malformed record: " + e.what());
    }
    if (!seen_ids.insert(p.id).second) {
      throw std::runtime_error(where + ": duplicate id '" + p.id + "'");
    }

    const std::string rgb_name = p.id + ".rgb.ppm";
    const std::string thermal_name = p.id + ".thermal.pgm";
    p.rgb = read_ppm(split_dir / rgb_name);
    p.thermal = read_pgm(split_dir / thermal_name);
    referenced_files.insert(rgb_name);
    referenced_files.insert(thermal_name);
    if (p.rgb.shape.h != p.thermal.shape.h || p.rgb.shape.w != p.thermal.shape.w) {
      throw std::runtime_error(where + ": id '" + p.id +
                               "': rgb and thermal image sizes disagree");
    }
    for (const Point& pt : p.points) {
      if (pt.x < 0.0 || pt.x >= p.rgb.shape.w || pt.y < 0.0 || pt.y >= p.rgb.shape.h) {
        throw std::runtime_error(where + ": id '" + p.id + "': point (" +
                                 std::to_string(pt.x) + "," + std::to_string(pt.y) +
                                 ") outside image bounds");
      }
    }
    pairs.push_back(std::move(p));
  }

  for (const auto& entry : fs::directory_iterator(split_dir)) {
    const std::string name = entry.path().filename().string();
    if (!referenced_files.count(name)) {
      throw std::runtime_error("read_split: unreferenced file '" +
                               entry.path().string() + "'");
    }
  }
  return pairs;
}

NormStats compute_norm_stats(const std::vector<ScenePair>& pairs) {
  if (pairs.empty()) {
    throw std::invalid_argument("compute_norm_stats: empty split");
  }
  NormStats stats;
  std::array<double, 4> sum{}, sumsq{};
  std::array<int64_t, 4> n{};
  for (const ScenePair& p : pairs) {
    for (int c = 0; c < 3; ++c) {
      for (int y = 0; y < p.rgb.shape.h; ++y) {
        for (int x = 0; x < p.rgb.shape.w; ++x) {
          const double v = p.rgb.at(0, c, y, x);
          sum[c] += v;
          sumsq[c] += v * v;
          ++n[c];
        }
      }
    }
    for (double v : p.thermal.data) {
      sum[3] += v;
      sumsq[3] += v * v;
      ++n[3];
    }
  }
  for (int c = 0; c < 4; ++c) {
    stats.mean[c] = sum[c] / double(n[c]);
    const double var = std::max(0.0, sumsq[c] / double(n[c]) - stats.mean[c] * stats.mean[c]);
    stats.stddev[c] = std::max(std::sqrt(var), 1e-12);
  }
  return stats;
}

namespace {

constexpr const char* kChannelNames[4] = {"r", "g", "b", "t"};

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

void write_norm_stats(const NormStats& stats, const fs::path& file) {
  std::ofstream f(file, std::ios::trunc);
  if (!f) {
    throw std::runtime_error("norm stats: cannot open '" + file.string() + "'");
  }
  f << "# per-channel normalization constants\n";
  for (int c = 0; c < 4; ++c) {
    f << kChannelNames[c] << "_mean=" << fmt(stats.mean[c]) << "\n";
    f << kChannelNames[c] << "_std=" << fmt(stats.stddev[c]) << "\n";
  }
}

NormStats read_norm_stats(const fs::path& file) {
  std::ifstream f(file);
  if (!f) {
    throw std::runtime_error("norm stats: missing constants file '" + file.string() +
                             "'");
  }
  std::stringstream ss;
  ss << f.rdbuf();
  auto kv = parse_config_text(ss.str(), file.string());
  NormStats stats;
  for (int c = 0; c < 4; ++c) {
    const std::string mkey = std::string(kChannelNames[c]) + "_mean";
    const std::string skey = std::string(kChannelNames[c]) + "_std";
    if (!kv.count(mkey) || !kv.count(skey)) {
      throw std::runtime_error("norm stats '" + file.string() + "': missing key " + mkey);
    }
    stats.mean[c] = std::stod(kv.at(mkey));
    stats.stddev[c] = std::stod(kv.at(skey));
  }
  return stats;
}

std::filesystem::path norm_stats_path(const fs::path& dataset_dir) {
  return dataset_dir / "normalization.txt";
}

void generate_dataset(const SynthConfig& cfg, const fs::path& dir) {
  cfg.validate();
  const auto train = generate_split(cfg, "train", cfg.train_count);
  const auto val = generate_split(cfg, "val", cfg.val_count);
  const auto test = generate_split(cfg, "test", cfg.test_count);
  write_split(train, dir, "train");
  write_split(val, dir, "val");
  write_split(test, dir, "test");
  write_norm_stats(compute_norm_stats(train), norm_stats_path(dir));
}

std::pair<Tensor4, Tensor4> normalize_pair(const ScenePair& pair, const NormStats& stats) {
  Tensor4 rgb = pair.rgb;
  for (int c = 0; c < 3; ++c) {
    const double m = stats.mean[c], s = stats.stddev[c];
    for (int y = 0; y < rgb.shape.h; ++y) {
      for (int x = 0; x < rgb.shape.w; ++x) {
        rgb.at(0, c, y, x) = (rgb.at(0, c, y, x) - m) / s;
      }
    }
  }
  Tensor4 thermal = pair.thermal;
  for (double& v : thermal.data) v = (v - stats.mean[3]) / stats.stddev[3];
  return {std::move(rgb), std::move(thermal)};
}

Tensor4 denormalize(const Tensor4& t, const NormStats& stats, bool thermal) {
  Tensor4 out = t;
  for (int c = 0; c < out.shape.c; ++c) {
    const int ch = thermal ? 3 : c;
    const double m = stats.mean[ch], s = stats.stddev[ch];
    for (int y = 0; y < out.shape.h; ++y) {
      for (int x = 0; x < out.shape.w; ++x) {
        out.at(0, c, y, x) = out.at(0, c, y, x) * s + m;
      }
    }
  }
  return out;
}

}  // namespace tafnet
