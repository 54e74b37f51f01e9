#pragma once

#include <span>
#include <string>
#include <vector>

#include "tafnet/autograd.hpp"
#include "tafnet/ops.hpp"
#include "tafnet/rng.hpp"

namespace tafnet {

// One VGG16 stage: conv_count x (3x3 conv, pad 1 -> relu), then 2x2 maxpool.
struct VggStageConfig {
  int stage_index = 1;  // 1..5
  int conv_count = 2;
  int in_channels = 3;
  int out_channels = 64;
};

// Five-stage plan with conv counts {2,2,3,3,3} and channel widths
// round(width_multiplier * {64,128,256,512,512}). Multiplier 1 reproduces
// VGG16 exactly. Every stage must end up with >= 4 channels.
std::vector<VggStageConfig> vgg_plan(double width_multiplier, int input_channels);

struct AttentionConfig {
  int reduction_ratio = 4;
  int spatial_kernel = 7;
  void validate() const;
};

struct PyramidConfig {
  std::vector<int> bin_sizes = {1, 2, 3, 6};
  void validate() const;
};

// Weight init: zero-mean normal with std sqrt(2/fan_in); biases zero.
Tensor4 he_conv_init(int c_out, int c_in, int k, Rng& rng);
Tensor4 he_linear_init(int d_out, int d_in, Rng& rng);

void init_vgg_stream(ParamStore& params, const std::string& prefix,
                     std::span<const VggStageConfig> plan, Rng& rng);
Var vgg_stage_forward(Tape* tape, const Var& x, const ParamStore& params,
                      const std::string& prefix, const VggStageConfig& cfg);

// CBAM-style channel attention: sigmoid(MLP(avgpool) + MLP(maxpool)) with a
// shared two-layer MLP, bottleneck max(1, C / reduction_ratio).
void init_channel_attention(ParamStore& params, const std::string& prefix,
                            int channels, const AttentionConfig& cfg, Rng& rng);
Var channel_attention(Tape* tape, const Var& f, const ParamStore& params,
                      const std::string& prefix, const AttentionConfig& cfg);

// CBAM-style spatial attention: kxk conv over [channel-mean; channel-max],
// sigmoid, per-pixel gate.
void init_spatial_attention(ParamStore& params, const std::string& prefix,
                            const AttentionConfig& cfg, Rng& rng);
Var spatial_attention(Tape* tape, const Var& f, const ParamStore& params,
                      const std::string& prefix, const AttentionConfig& cfg);

// Pool to bin x bin (clamped per axis to the feature size), then upsample
// back to the input size.
Var pyramid_branch(Tape* tape, const Var& f, int bin);

// PSPNet-style context extractor: concat the input with every pyramid
// branch, project back to the input channel count with a 1x1 conv, relu.
// Output shape always equals input shape.
void init_pyramid_pooling(ParamStore& params, const std::string& prefix,
                          int channels, const PyramidConfig& cfg, Rng& rng);
Var pyramid_pooling(Tape* tape, const Var& f, const ParamStore& params,
                    const std::string& prefix, const PyramidConfig& cfg);

}  // namespace tafnet
