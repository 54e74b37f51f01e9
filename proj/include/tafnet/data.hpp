#pragma once

#include <array>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "tafnet/rng.hpp"
#include "tafnet/tensor.hpp"
#include "tafnet/types.hpp"

namespace tafnet {

// One RGB-T sample. Images are (1,3,H,W) / (1,1,H,W) with values in [0,1],
// already snapped to the 8-bit grid so disk round-trips are lossless.
// Annotation points are in the RGB frame.
struct ScenePair {
  std::string id;
  Illumination illumination = Illumination::bright;
  Tensor4 rgb;
  Tensor4 thermal;
  PointAnnotations points;
};

// Contrast parameters model the paper-motivated asymmetry: people stand
// out in RGB when bright and in thermal when dark. Thermal blob centers
// jitter independently by up to misalignment_max pixels per axis.
struct SynthConfig {
  int image_h = 64, image_w = 64;
  int count_min = 3, count_max = 30;
  double radius_min = 3.0, radius_max = 6.0;
  double bright_fraction = 0.5;
  double rgb_snr_bright = 6.0, rgb_snr_dark = 0.3;
  double thermal_snr_bright = 0.4, thermal_snr_dark = 6.0;
  double noise_sigma = 0.05;
  double misalignment_max = 2.0;
  int train_count = 200, val_count = 40, test_count = 160;
  uint64_t seed = 1;

  void validate() const;
};

// Sampled placement of one person blob. The annotation point is (x, y);
// the thermal rendering uses (x + thermal_dx, y + thermal_dy).
struct BlobSpec {
  double x = 0.0, y = 0.0;
  double radius = 0.0;
  double amp_jitter = 1.0;
  double thermal_dx = 0.0, thermal_dy = 0.0;
};

struct SceneLayout {
  Illumination illumination = Illumination::bright;
  std::vector<BlobSpec> blobs;
};

SceneLayout sample_scene_layout(Rng& rng, const SynthConfig& cfg);
ScenePair render_scene(const SceneLayout& layout, Rng& rng, const SynthConfig& cfg,
                       std::string id);
ScenePair generate_scene(Rng& rng, const SynthConfig& cfg, std::string id);

// Each id gets an independent rng stream derived from the master seed.
std::vector<ScenePair> generate_split(const SynthConfig& cfg, const std::string& split,
                                      int count);

// Layout under <dir>/<split>/: "<id>.rgb.ppm", "<id>.thermal.pgm" per image
// and one "annotations.jsonl" with {"id", "illumination", "points"} records.
void write_split(const std::vector<ScenePair>& pairs, const std::filesystem::path& dir,
                 const std::string& split);
std::vector<ScenePair> read_split(const std::filesystem::path& dir,
                                  const std::string& split);

// Per-channel standardization constants (R, G, B, T), computed once from
// the training split and stored next to it.
struct NormStats {
  std::array<double, 4> mean{};
  std::array<double, 4> stddev{};
};

NormStats compute_norm_stats(const std::vector<ScenePair>& pairs);
void write_norm_stats(const NormStats& stats, const std::filesystem::path& file);
NormStats read_norm_stats(const std::filesystem::path& file);

// Generates train/val/test splits, writes them plus normalization.txt.
void generate_dataset(const SynthConfig& cfg, const std::filesystem::path& dir);

// (rgb, thermal) standardized with the stored constants.
std::pair<Tensor4, Tensor4> normalize_pair(const ScenePair& pair, const NormStats& stats);
Tensor4 denormalize(const Tensor4& t, const NormStats& stats, bool thermal);

std::filesystem::path norm_stats_path(const std::filesystem::path& dataset_dir);

}  // namespace tafnet
