#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "tafnet/grad_check.hpp"
#include "tafnet/layers.hpp"

using namespace tafnet;

namespace {

Tensor4 randn(Shape4 s, Rng& rng, double scale = 1.0) {
  Tensor4 t(s);
  for (double& v : t.data) v = rng.normal(0.0, scale);
  return t;
}

}  // namespace

TEST_CASE("vgg_plan reproduces VGG16 at multiplier 1 and scales down") {
  const auto plan = vgg_plan(1.0, 3);
  const int widths[5] = {64, 128, 256, 512, 512};
  const int convs[5] = {2, 2, 3, 3, 3};
  int in = 3;
  for (int i = 0; i < 5; ++i) {
    CHECK(plan[i].out_channels == widths[i]);
    CHECK(plan[i].conv_count == convs[i]);
    CHECK(plan[i].in_channels == in);
    in = widths[i];
  }

  const auto small = vgg_plan(0.125, 1);
  CHECK(small[0].out_channels == 8);
  CHECK(small[4].out_channels == 64);

  CHECK_THROWS_AS(vgg_plan(0.01, 3), std::invalid_argument);  // below 4 channels
}

TEST_CASE("vgg stage shapes") {
  SUBCASE("width 1, stage 1 on 1x3x64x64 gives 1x64x32x32") {
    Rng rng(1);
    ParamStore ps;
    const auto plan = vgg_plan(1.0, 3);
    init_vgg_stream(ps, "v", std::span<const VggStageConfig>(&plan[0], 1), rng);
    Var x = make_const(randn(Shape4{1, 3, 64, 64}, rng));
    Var y = vgg_stage_forward(nullptr, x, ps, "v", plan[0]);
    CHECK(y.shape() == Shape4{1, 64, 32, 32});
  }
  SUBCASE("width 0.125, stage 5 on 1x64x4x4 gives 1x64x2x2") {
    Rng rng(2);
    ParamStore ps;
    const auto plan = vgg_plan(0.125, 3);
    init_vgg_stream(ps, "v", std::span<const VggStageConfig>(&plan[4], 1), rng);
    Var x = make_const(randn(Shape4{1, 64, 4, 4}, rng));
    Var y = vgg_stage_forward(nullptr, x, ps, "v", plan[4]);
    CHECK(y.shape() == Shape4{1, 64, 2, 2});
  }
}

TEST_CASE("vgg stage: zero weights and biases give a zero output") {
  Rng rng(3);
  ParamStore ps;
  const VggStageConfig stage{1, 2, 3, 8};
  init_vgg_stream(ps, "v", std::span<const VggStageConfig>(&stage, 1), rng);
  for (Parameter* p : ps.all()) {
    std::fill(p->value().data.begin(), p->value().data.end(), 0.0);
  }
  Var x = make_const(randn(Shape4{1, 3, 8, 8}, rng));
  Var y = vgg_stage_forward(nullptr, x, ps, "v", stage);
  for (double v : y.value->data) CHECK(v == 0.0);
}

TEST_CASE("vgg stage rejects wrong channels and odd spatial dims") {
  Rng rng(4);
  ParamStore ps;
  const VggStageConfig stage{1, 2, 3, 8};
  init_vgg_stream(ps, "v", std::span<const VggStageConfig>(&stage, 1), rng);
  Var bad_c = make_const(randn(Shape4{1, 4, 8, 8}, rng));
  CHECK_THROWS_AS(vgg_stage_forward(nullptr, bad_c, ps, "v", stage),
                  std::invalid_argument);
  Var odd = make_const(randn(Shape4{1, 3, 7, 8}, rng));
  CHECK_THROWS_AS(vgg_stage_forward(nullptr, odd, ps, "v", stage), std::invalid_argument);
}

TEST_CASE("five-stage chain emits (H/2^i, W/2^i) at every width multiplier") {
  for (double wm : {0.125, 0.25, 1.0}) {
    Rng rng(5);
    ParamStore ps;
    const auto plan = vgg_plan(wm, 3);
    init_vgg_stream(ps, "v", plan, rng);
    Var h = make_const(randn(Shape4{1, 3, 64, 64}, rng));
    for (int i = 0; i < 5; ++i) {
      h = vgg_stage_forward(nullptr, h, ps, "v", plan[i]);
      CHECK(h.shape() == Shape4{1, plan[i].out_channels, 64 >> (i + 1), 64 >> (i + 1)});
    }
  }
}

TEST_CASE("channel attention: zero MLP scales by exactly 0.5") {
  Rng rng(6);
  ParamStore ps;
  AttentionConfig cfg;
  init_channel_attention(ps, "ca", 8, cfg, rng);
  for (Parameter* p : ps.all()) {
    std::fill(p->value().data.begin(), p->value().data.end(), 0.0);
  }
  Tensor4 f = randn(Shape4{2, 8, 4, 4}, rng);
  Var out = channel_attention(nullptr, make_const(f), ps, "ca", cfg);
  for (size_t i = 0; i < f.size(); ++i) CHECK(out.value->data[i] == 0.5 * f.data[i]);
}

TEST_CASE("channel attention: zero input stays zero; gate stays in (0,1)") {
  Rng rng(7);
  ParamStore ps;
  AttentionConfig cfg;
  init_channel_attention(ps, "ca", 8, cfg, rng);

  Var zero = make_const(Tensor4(Shape4{1, 8, 4, 4}, 0.0));
  Var out = channel_attention(nullptr, zero, ps, "ca", cfg);
  for (double v : out.value->data) CHECK(v == 0.0);

  for (int trial = 0; trial < 10; ++trial) {
    Tensor4 f = randn(Shape4{2, 8, 5, 5}, rng);
    Var o = channel_attention(nullptr, make_const(f), ps, "ca", cfg);
    for (size_t i = 0; i < f.size(); ++i) {
      CHECK(std::abs(o.value->data[i]) <= std::abs(f.data[i]));
    }
  }
}

TEST_CASE("spatial attention: zero conv scales by 0.5; gate never amplifies") {
  Rng rng(8);
  ParamStore ps;
  AttentionConfig cfg;
  init_spatial_attention(ps, "sa", cfg, rng);
  for (Parameter* p : ps.all()) {
    std::fill(p->value().data.begin(), p->value().data.end(), 0.0);
  }
  Tensor4 f = randn(Shape4{1, 4, 6, 6}, rng);
  Var out = spatial_attention(nullptr, make_const(f), ps, "sa", cfg);
  for (size_t i = 0; i < f.size(); ++i) CHECK(out.value->data[i] == 0.5 * f.data[i]);

  Rng rng2(9);
  ParamStore ps2;
  init_spatial_attention(ps2, "sa", cfg, rng2);
  for (int trial = 0; trial < 10; ++trial) {
    Tensor4 g = randn(Shape4{2, 4, 6, 6}, rng2);
    Var o = spatial_attention(nullptr, make_const(g), ps2, "sa", cfg);
    for (size_t i = 0; i < g.size(); ++i) {
      CHECK(std::abs(o.value->data[i]) <= std::abs(g.data[i]));
    }
    Var z = spatial_attention(nullptr, make_const(Tensor4(Shape4{1, 4, 6, 6}, 0.0)),
                              ps2, "sa", cfg);
    for (double v : z.value->data) CHECK(v == 0.0);
  }
}

TEST_CASE("attention chain gradient check stays under 1e-6") {
  for (uint64_t seed = 1; seed <= 5; ++seed) {
    Rng rng(seed);
    ParamStore ps;
    AttentionConfig cfg;
    init_channel_attention(ps, "ca", 8, cfg, rng);
    init_spatial_attention(ps, "sa", cfg, rng);
    for (Parameter* p : ps.all()) {
      for (double& v : p->value().data) v *= 0.5;  // keep gates off the rails
    }
    Parameter& x = ps.create("x", randn(Shape4{2, 8, 6, 6}, rng, 0.5));
    Var r = make_const(randn(Shape4{2, 8, 6, 6}, rng));
    auto f = [&](Tape* t) {
      Var h = channel_attention(t, x.var, ps, "ca", cfg);
      h = spatial_attention(t, h, ps, "sa", cfg);
      return ops::sum_all(t, ops::mul(t, h, r));
    };
    CHECK(grad_check(f, ps.all()).max_rel_err < 1e-6);
  }
}

TEST_CASE("pyramid pooling: constant input with mass-preserving projection") {
  Rng rng(10);
  ParamStore ps;
  PyramidConfig cfg;
  const int c = 3;
  init_pyramid_pooling(ps, "pyr", c, cfg, rng);
  // each output channel takes weight 1 from its own copy in the raw-input
  // group, 0 elsewhere: weights sum to 1 per output channel
  Parameter& w = ps.at("pyr.proj.weight");
  std::fill(w.value().data.begin(), w.value().data.end(), 0.0);
  for (int o = 0; o < c; ++o) w.value().at(o, o, 0, 0) = 1.0;
  Parameter& b = ps.at("pyr.proj.bias");
  std::fill(b.value().data.begin(), b.value().data.end(), 0.0);

  const double k = 2.75;
  Var f = make_const(Tensor4(Shape4{1, c, 12, 12}, k));
  Var out = pyramid_pooling(nullptr, f, ps, "pyr", cfg);
  for (double v : out.value->data) CHECK(v == k);
}

TEST_CASE("pyramid pooling output shape equals input shape") {
  Rng rng(11);
  SUBCASE("spec example: bins {1,2,3,6} on 1x8x24x24") {
    ParamStore ps;
    PyramidConfig cfg;
    init_pyramid_pooling(ps, "pyr", 8, cfg, rng);
    Var f = make_const(randn(Shape4{1, 8, 24, 24}, rng));
    CHECK(pyramid_pooling(nullptr, f, ps, "pyr", cfg).shape() == f.shape());
  }
  SUBCASE("grid of sizes and bin configurations, with clamping") {
    for (std::vector<int> bins : {std::vector<int>{1}, {1, 2}, {1, 2, 3, 6}, {2, 4, 8}}) {
      for (int hw : {2, 5, 8, 16}) {
        ParamStore ps;
        PyramidConfig cfg;
        cfg.bin_sizes = bins;
        init_pyramid_pooling(ps, "pyr", 4, cfg, rng);
        Var f = make_const(randn(Shape4{2, 4, hw, hw + 2}, rng));
        CHECK(pyramid_pooling(nullptr, f, ps, "pyr", cfg).shape() == f.shape());
      }
    }
  }
}

// Independent pool+interpolate oracle: floor-rule bin means, then the
// align-corners=false coordinate formula, written directly.
static double pyramid_branch_oracle(const Tensor4& f, int bin, int oy, int ox) {
  const int h = f.shape.h, w = f.shape.w;
  const int bh = std::min(bin, h), bw = std::min(bin, w);
  auto pooled = [&](int r, int c) {
    const int y0 = r * h / bh, y1 = (r + 1) * h / bh;
    const int x0 = c * w / bw, x1 = (c + 1) * w / bw;
    double s = 0.0;
    for (int y = y0; y < y1; ++y) {
      for (int x = x0; x < x1; ++x) s += f.at(0, 0, y, x);
    }
    return s / ((y1 - y0) * (x1 - x0));
  };
  auto axis = [](int out, int in, int o, int& i0, int& i1, double& t) {
    double src = (o + 0.5) * double(in) / out - 0.5;
    src = std::min(std::max(src, 0.0), double(in - 1));
    i0 = int(std::floor(src));
    i1 = std::min(i0 + 1, in - 1);
    t = src - i0;
  };
  int y0, y1, x0, x1;
  double ty, tx;
  axis(h, bh, oy, y0, y1, ty);
  axis(w, bw, ox, x0, x1, tx);
  const double top = pooled(y0, x0) + tx * (pooled(y0, x1) - pooled(y0, x0));
  const double bot = pooled(y1, x0) + tx * (pooled(y1, x1) - pooled(y1, x0));
  return top + ty * (bot - top);
}

TEST_CASE("pyramid branch on a 6x6 ramp matches the brute-force oracle") {
  Tensor4 ramp(Shape4{1, 1, 6, 6});
  for (int i = 0; i < 36; ++i) ramp.data[i] = i + 1;
  for (int bin : {1, 2}) {
    Var branch = pyramid_branch(nullptr, make_const(ramp), bin);
    for (int y = 0; y < 6; ++y) {
      for (int x = 0; x < 6; ++x) {
        CHECK(branch.value->at(0, 0, y, x) ==
              doctest::Approx(pyramid_branch_oracle(ramp, bin, y, x)).epsilon(1e-12));
      }
    }
  }
}

TEST_CASE("composite blocks pass grad_check end-to-end") {
  for (uint64_t seed = 1; seed <= 3; ++seed) {
    Rng rng(seed);
    ParamStore ps;
    PyramidConfig cfg;
    init_pyramid_pooling(ps, "pyr", 4, cfg, rng);
    Parameter& x = ps.create("x", randn(Shape4{2, 4, 6, 6}, rng));
    Var r = make_const(randn(Shape4{2, 4, 6, 6}, rng));
    auto f = [&](Tape* t) {
      return ops::sum_all(t, ops::mul(t, pyramid_pooling(t, x.var, ps, "pyr", cfg), r));
    };
    GradCheckOptions opts;
    opts.coords_per_param = 8;
    opts.sample_seed = seed;
    opts.min_grad_mag = 1e-3;
    opts.validate_step = true;
    CHECK(grad_check(f, ps.all(), opts).max_rel_err < 1e-5);
  }
}

TEST_CASE("config validation") {
  AttentionConfig bad_attn;
  bad_attn.spatial_kernel = 4;
  CHECK_THROWS_AS(bad_attn.validate(), std::invalid_argument);
  bad_attn.spatial_kernel = 7;
  bad_attn.reduction_ratio = 0;
  CHECK_THROWS_AS(bad_attn.validate(), std::invalid_argument);

  PyramidConfig bad_pyr;
  bad_pyr.bin_sizes = {3, 1};
  CHECK_THROWS_AS(bad_pyr.validate(), std::invalid_argument);
  bad_pyr.bin_sizes = {};
  CHECK_THROWS_AS(bad_pyr.validate(), std::invalid_argument);
}
