#include "tafnet/layers.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace tafnet {

std::vector<VggStageConfig> vgg_plan(double width_multiplier, int input_channels) {
  if (width_multiplier <= 0.0) {
    throw std::invalid_argument("vgg_plan: width_multiplier must be positive");
  }
  static constexpr int kBaseWidths[5] = {64, 128, 256, 512, 512};
  static constexpr int kConvCounts[5] = {2, 2, 3, 3, 3};
  std::vector<VggStageConfig> plan(5);
  int in = input_channels;
  for (int i = 0; i < 5; ++i) {
    const int out = int(std::llround(width_multiplier * kBaseWidths[i]));
    if (out < 4) {
      throw std::invalid_argument(
          "vgg_plan: width_multiplier " + std::to_string(width_multiplier) +
          " gives stage " + std::to_string(i + 1) + " only " + std::to_string(out) +
          " channels (minimum 4)");
    }
    plan[i] = VggStageConfig{i + 1, kConvCounts[i], in, out};
    in = out;
  }
  return plan;
}

void AttentionConfig::validate() const {
  if (reduction_ratio < 1) {
    throw std::invalid_argument("AttentionConfig: reduction_ratio must be >= 1");
  }
  if (spatial_kernel < 1 || spatial_kernel % 2 == 0) {
    throw std::invalid_argument("AttentionConfig: spatial_kernel must be odd and >= 1");
  }
}

void PyramidConfig::validate() const {
  if (bin_sizes.empty()) {
    throw std::invalid_argument("PyramidConfig: bin_sizes must not be empty");
  }
  for (size_t i = 0; i < bin_sizes.size(); ++i) {
    if (bin_sizes[i] < 1) {
      throw std::invalid_argument("PyramidConfig: bin sizes must be >= 1");
    }
    if (i > 0 && bin_sizes[i] < bin_sizes[i - 1]) {
      throw std::invalid_argument("PyramidConfig: bin_sizes must be sorted ascending");
    }
  }
}

Tensor4 he_conv_init(int c_out, int c_in, int k, Rng& rng) {
  Tensor4 w(Shape4{c_out, c_in, k, k});
  const double std = std::sqrt(2.0 / (double(c_in) * k * k));
  for (double& v : w.data) v = rng.normal(0.0, std);
  return w;
}

Tensor4 he_linear_init(int d_out, int d_in, Rng& rng) {
  Tensor4 w(Shape4{d_out, d_in, 1, 1});
  const double std = std::sqrt(2.0 / double(d_in));
  for (double& v : w.data) v = rng.normal(0.0, std);
  return w;
}

namespace {

std::string conv_name(const std::string& prefix, int stage, int conv) {
  return prefix + ".stage" + std::to_string(stage) + ".conv" + std::to_string(conv);
}

}  // namespace

void init_vgg_stream(ParamStore& params, const std::string& prefix,
                     std::span<const VggStageConfig> plan, Rng& rng) {
  for (const VggStageConfig& st : plan) {
    int in = st.in_channels;
    for (int j = 1; j <= st.conv_count; ++j) {
      const std::string base = conv_name(prefix, st.stage_index, j);
      params.create(base + ".weight", he_conv_init(st.out_channels, in, 3, rng));
      params.create(base + ".bias", Tensor4(Shape4{1, st.out_channels, 1, 1}));
      in = st.out_channels;
    }
  }
}

Var vgg_stage_forward(Tape* tape, const Var& x, const ParamStore& params,
                      const std::string& prefix, const VggStageConfig& cfg) {
  const Shape4 xs = x.shape();
  check_shape(xs.c == cfg.in_channels,
              "vgg_stage_forward: stage " + std::to_string(cfg.stage_index) +
                  " expects " + std::to_string(cfg.in_channels) + " channels, got " + xs.str());
  check_shape(xs.h % 2 == 0 && xs.w % 2 == 0,
              "vgg_stage_forward: spatial dims must be even, got " + xs.str());
  Var h = x;
  for (int j = 1; j <= cfg.conv_count; ++j) {
    const std::string base = conv_name(prefix, cfg.stage_index, j);
    h = ops::conv2d(tape, h, params.at(base + ".weight").var,
                    params.at(base + ".bias").var, /*stride=*/1, /*pad=*/1);
    h = ops::relu(tape, h);
  }
  return ops::maxpool2d(tape, h);
}

void init_channel_attention(ParamStore& params, const std::string& prefix,
                            int channels, const AttentionConfig& cfg, Rng& rng) {
  cfg.validate();
  const int hidden = std::max(1, channels / cfg.reduction_ratio);
  params.create(prefix + ".mlp1.weight", he_linear_init(hidden, channels, rng));
  params.create(prefix + ".mlp1.bias", Tensor4(Shape4{1, hidden, 1, 1}));
  params.create(prefix + ".mlp2.weight", he_linear_init(channels, hidden, rng));
  params.create(prefix + ".mlp2.bias", Tensor4(Shape4{1, channels, 1, 1}));
}

Var channel_attention(Tape* tape, const Var& f, const ParamStore& params,
                      const std::string& prefix, const AttentionConfig& cfg) {
  const Var& w1 = params.at(prefix + ".mlp1.weight").var;
  const Var& b1 = params.at(prefix + ".mlp1.bias").var;
  const Var& w2 = params.at(prefix + ".mlp2.weight").var;
  const Var& b2 = params.at(prefix + ".mlp2.bias").var;

  auto mlp = [&](const Var& pooled) {
    Var h = ops::linear(tape, pooled, w1, b1);
    h = ops::relu(tape, h);
    return ops::linear(tape, h, w2, b2);
  };
  Var avg_path = mlp(ops::global_avg(tape, f));
  Var max_path = mlp(ops::global_max(tape, f));
  Var s = ops::sigmoid(tape, ops::add(tape, avg_path, max_path));
  return ops::scale_channels(tape, f, s);
}

void init_spatial_attention(ParamStore& params, const std::string& prefix,
                            const AttentionConfig& cfg, Rng& rng) {
  cfg.validate();
  params.create(prefix + ".conv.weight", he_conv_init(1, 2, cfg.spatial_kernel, rng));
  params.create(prefix + ".conv.bias", Tensor4(Shape4{1, 1, 1, 1}));
}

Var spatial_attention(Tape* tape, const Var& f, const ParamStore& params,
                      const std::string& prefix, const AttentionConfig& cfg) {
  Var descriptor = ops::concat_channels(tape, ops::channel_mean(tape, f),
                                        ops::channel_max(tape, f));
  Var m = ops::conv2d(tape, descriptor, params.at(prefix + ".conv.weight").var,
                      params.at(prefix + ".conv.bias").var, /*stride=*/1,
                      /*pad=*/(cfg.spatial_kernel - 1) / 2);
  m = ops::sigmoid(tape, m);
  return ops::scale_pixels(tape, f, m);
}

Var pyramid_branch(Tape* tape, const Var& f, int bin) {
  const Shape4 fs = f.shape();
  const int bh = std::min(bin, fs.h);
  const int bw = std::min(bin, fs.w);
  Var pooled = ops::adaptive_avgpool2d(tape, f, bh, bw);
  return ops::bilinear_upsample(tape, pooled, fs.h, fs.w);
}

void init_pyramid_pooling(ParamStore& params, const std::string& prefix,
                          int channels, const PyramidConfig& cfg, Rng& rng) {
  cfg.validate();
  const int in = channels * (1 + int(cfg.bin_sizes.size()));
  params.create(prefix + ".proj.weight", he_conv_init(channels, in, 1, rng));
  params.create(prefix + ".proj.bias", Tensor4(Shape4{1, channels, 1, 1}));
}

Var pyramid_pooling(Tape* tape, const Var& f, const ParamStore& params,
                    const std::string& prefix, const PyramidConfig& cfg) {
  std::vector<Var> parts;
  parts.reserve(1 + cfg.bin_sizes.size());
  parts.push_back(f);
  for (int bin : cfg.bin_sizes) {
    parts.push_back(pyramid_branch(tape, f, bin));
  }
  Var cat = ops::concat_channels(tape, std::span<const Var>(parts));
  Var proj = ops::conv2d(tape, cat, params.at(prefix + ".proj.weight").var,
                         params.at(prefix + ".proj.bias").var, /*stride=*/1, /*pad=*/0);
  return ops::relu(tape, proj);
}

}  // namespace tafnet
