#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "tafnet/autograd.hpp"
#include "tafnet/layers.hpp"

namespace tafnet {

// Model variants, in ascending order of machinery:
//   baseline     - one stream on the 4-channel concat, no IIM, no aux streams
//   iim_no_attn  - three streams + IIM without channel/spatial attention
//   full         - three streams + IIM with attention on the thermal context
enum class Variant { baseline, iim_no_attn, full };

std::string variant_name(Variant v);
Variant variant_from_name(const std::string& name);

struct TafnetConfig {
  double width_multiplier = 0.25;
  int input_h = 64;
  int input_w = 64;
  Variant variant = Variant::full;
  PyramidConfig pyramid;
  AttentionConfig attention;
  double gate_init = 0.0;

  void validate() const;  // throws naming the offending field
  std::string canonical_text() const;
  static TafnetConfig from_canonical_text(const std::string& text);
};

struct ForwardHooks {
  // Test hook: read both gate weights as exactly 0 instead of sigmoid(g),
  // so residual contributions vanish and the forward pass must match the
  // baseline bit for bit.
  bool force_zero_gates = false;
};

// The three-stream network. Streams are fully independent VGG16 stacks:
// "main" consumes the 4-channel RGB+thermal concat, "aux.rgb" the RGB
// image, "aux.t" the thermal image. After each stage the IIM folds the
// two auxiliary features into the main feature; the improved feature
// feeds only the next main stage. Stage-5 output goes through the
// regression header to the density map at 1/8 input resolution.
class TafnetModel {
 public:
  TafnetConfig cfg;
  ParamStore params;

  static TafnetModel build(const TafnetConfig& cfg, uint64_t seed);

  // rgb (n,3,H,W), thermal (n,1,H,W); H and W divisible by 32.
  Var forward(Tape* tape, const Var& rgb, const Var& thermal,
              const ForwardHooks& hooks = {}) const;

  // stage is 1-based. The three features must share shapes.
  Var iim_forward(Tape* tape, int stage, const Var& f_t, const Var& f_rgb,
                  const Var& f_c, const ForwardHooks& hooks = {}) const;

  // f5 -> upsample x4 -> 3x3 conv/relu -> 3x3 conv/relu -> 1x1 conv/relu.
  Var regression_header(Tape* tape, const Var& f5) const;

  const std::vector<VggStageConfig>& main_plan() const { return main_plan_; }
  const std::vector<VggStageConfig>& rgb_plan() const { return rgb_plan_; }
  const std::vector<VggStageConfig>& thermal_plan() const { return t_plan_; }

 private:
  std::vector<VggStageConfig> main_plan_, rgb_plan_, t_plan_;
  int head1_ = 0, head2_ = 0;
};

// Per-item spatial sums of a single-channel density map.
std::vector<double> count_per_item(const Tensor4& density);

// Versioned binary container: magic, format version, canonical config
// text, then one record per parameter (name, shape, little-endian f64
// values). Round-trips bit-exactly.
void save_checkpoint(const TafnetModel& model, const std::filesystem::path& path);
TafnetModel load_checkpoint(const std::filesystem::path& path);

}  // namespace tafnet
