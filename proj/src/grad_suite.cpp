#include "tafnet/grad_suite.hpp"

#include <functional>

#include "tafnet/grad_check.hpp"
#include "tafnet/layers.hpp"
#include "tafnet/loss.hpp"
#include "tafnet/model.hpp"
#include "tafnet/ops.hpp"

namespace tafnet {

namespace {

constexpr double kOpTol = 1e-6;
constexpr double kBlockTol = 1e-5;
constexpr double kEndToEndTol = 1e-4;

Tensor4 randn(Shape4 s, Rng& rng, double scale = 1.0) {
  Tensor4 t(s);
  for (double& v : t.data) v = rng.normal(0.0, scale);
  return t;
}

// Probe weights with |r| in [0.5, 1.5]: a near-zero weight would shrink
// the matching coordinate's gradient below the finite-difference
// resolution.
Tensor4 rand_probe(Shape4 s, Rng& rng) {
  Tensor4 t(s);
  for (double& v : t.data) {
    v = rng.uniform(0.5, 1.5) * (rng.bernoulli(0.5) ? 1.0 : -1.0);
  }
  return t;
}

// Central differences at step 1e-4, the roundoff/truncation optimum for
// loss magnitudes around 10-100; coordinates are sampled for the larger
// block parameters.
GradCheckOptions block_opts(uint64_t seed) {
  GradCheckOptions o;
  o.eps = 1e-5;
  o.coords_per_param = 8;
  o.sample_seed = mix_seed(seed, 0xB10C);
  o.min_grad_mag = 1e-3;
  o.validate_step = true;
  return o;
}

// Ops that are linear in each argument have zero FD truncation error, so a
// large step just lowers the cancellation noise.
GradCheckOptions linear_op_opts() {
  GradCheckOptions o;
  o.eps = 1e-3;
  return o;
}

// Scalar probe: sum(out * R) with fixed random R keeps every output
// coordinate's gradient O(1).
Var probe(Tape* tape, const Var& out, const Var& r) {
  return ops::sum_all(tape, ops::mul(tape, out, r));
}

// Zero-initialized biases put relu pre-activations exactly at the kink
// wherever every upstream unit is dead (the bias IS the pre-activation
// there), and finite differences are meaningless at a non-differentiable
// point. Shifting biases makes the probe point differentiable.
void randomize_biases(ParamStore& ps, Rng& rng, double scale) {
  for (Parameter* p : ps.all()) {
    if (p->name.size() >= 5 && p->name.rfind(".bias") == p->name.size() - 5) {
      for (double& v : p->value().data) v += rng.normal(0.0, scale);
    }
  }
}

// Keeps sigmoid gates away from saturation at the probe point; a gate near
// 0 or 1 makes true gradients so small that central differences hit their
// cancellation noise floor.
void scale_params(ParamStore& ps, const std::string& prefix, double factor) {
  for (Parameter* p : ps.all()) {
    if (p->name.rfind(prefix, 0) == 0) {
      for (double& v : p->value().data) v *= factor;
    }
  }
}

using Case = std::function<double(uint64_t seed)>;

double worst_over_seeds(const Case& one, int num_seeds, uint64_t base_seed) {
  double worst = 0.0;
  for (int i = 0; i < num_seeds; ++i) {
    worst = std::max(worst, one(base_seed + uint64_t(i)));
  }
  return worst;
}

double check_conv(uint64_t seed, int stride, int pad) {
  Rng rng(seed);
  ParamStore ps;
  Parameter& x = ps.create("x", randn(Shape4{2, 3, 8, 8}, rng));
  Parameter& w = ps.create("w", randn(Shape4{4, 3, 3, 3}, rng, 0.5));
  Parameter& b = ps.create("b", randn(Shape4{1, 4, 1, 1}, rng, 0.5));
  Var r = make_const(rand_probe(
      ops::conv2d(nullptr, x.var, w.var, b.var, stride, pad).shape(), rng));
  auto f = [&](Tape* t) {
    return probe(t, ops::conv2d(t, x.var, w.var, b.var, stride, pad), r);
  };
  Parameter* params[] = {&x, &w, &b};
  return grad_check(f, params, linear_op_opts()).max_rel_err;
}

double check_unary(uint64_t seed, const std::function<Var(Tape*, const Var&)>& op,
                   Shape4 in_shape, double eps = 1e-5) {
  Rng rng(seed);
  ParamStore ps;
  Parameter& x = ps.create("x", randn(in_shape, rng));
  Var r = make_const(rand_probe(op(nullptr, x.var).shape(), rng));
  auto f = [&](Tape* t) { return probe(t, op(t, x.var), r); };
  Parameter* params[] = {&x};
  GradCheckOptions o;
  o.eps = eps;
  return grad_check(f, params, o).max_rel_err;
}

double check_binary(uint64_t seed,
                    const std::function<Var(Tape*, const Var&, const Var&)>& op,
                    Shape4 a_shape, Shape4 b_shape) {
  Rng rng(seed);
  ParamStore ps;
  Parameter& a = ps.create("a", randn(a_shape, rng));
  Parameter& b = ps.create("b", randn(b_shape, rng));
  Var r = make_const(rand_probe(op(nullptr, a.var, b.var).shape(), rng));
  auto f = [&](Tape* t) { return probe(t, op(t, a.var, b.var), r); };
  Parameter* params[] = {&a, &b};
  return grad_check(f, params, linear_op_opts()).max_rel_err;
}

double check_attention_chain(uint64_t seed) {
  Rng rng(seed);
  ParamStore ps;
  AttentionConfig cfg;
  init_channel_attention(ps, "ca", 8, cfg, rng);
  init_spatial_attention(ps, "sa", cfg, rng);
  scale_params(ps, "ca", 0.5);
  scale_params(ps, "sa", 0.5);
  Parameter& x = ps.create("x", randn(Shape4{2, 8, 6, 6}, rng, 0.5));
  Var r = make_const(rand_probe(Shape4{2, 8, 6, 6}, rng));
  auto f = [&](Tape* t) {
    Var h = channel_attention(t, x.var, ps, "ca", cfg);
    h = spatial_attention(t, h, ps, "sa", cfg);
    return probe(t, h, r);
  };
  return grad_check(f, ps.all(), block_opts(seed)).max_rel_err;
}

double check_pyramid(uint64_t seed) {
  Rng rng(seed);
  ParamStore ps;
  PyramidConfig cfg;
  init_pyramid_pooling(ps, "pyr", 4, cfg, rng);
  Parameter& x = ps.create("x", randn(Shape4{2, 4, 6, 6}, rng));
  Var r = make_const(rand_probe(Shape4{2, 4, 6, 6}, rng));
  auto f = [&](Tape* t) { return probe(t, pyramid_pooling(t, x.var, ps, "pyr", cfg), r); };
  return grad_check(f, ps.all(), block_opts(seed)).max_rel_err;
}

double check_vgg_stage(uint64_t seed) {
  Rng rng(seed);
  ParamStore ps;
  const VggStageConfig stage{1, 2, 3, 8};
  init_vgg_stream(ps, "s", std::span<const VggStageConfig>(&stage, 1), rng);
  randomize_biases(ps, rng, 0.1);
  Parameter& x = ps.create("x", randn(Shape4{1, 3, 8, 8}, rng));
  Var r = make_const(rand_probe(Shape4{1, 8, 4, 4}, rng));
  auto f = [&](Tape* t) { return probe(t, vgg_stage_forward(t, x.var, ps, "s", stage), r); };
  return grad_check(f, ps.all(), block_opts(seed)).max_rel_err;
}

double check_iim(uint64_t seed) {
  TafnetConfig cfg;
  cfg.width_multiplier = 0.125;
  cfg.variant = Variant::full;
  TafnetModel model = TafnetModel::build(cfg, seed);
  const int c1 = model.main_plan()[0].out_channels;
  scale_params(model.params, "iim.stage1.ca", 0.5);
  scale_params(model.params, "iim.stage1.sa", 0.5);

  Rng rng(mix_seed(seed, 77));
  randomize_biases(model.params, rng, 0.1);
  ParamStore inputs;
  Parameter& ft = inputs.create("f_t", randn(Shape4{1, c1, 8, 8}, rng, 0.5));
  Parameter& frgb = inputs.create("f_rgb", randn(Shape4{1, c1, 8, 8}, rng, 0.5));
  Parameter& fc = inputs.create("f_c", randn(Shape4{1, c1, 8, 8}, rng, 0.5));
  Var r = make_const(rand_probe(Shape4{1, c1, 8, 8}, rng));

  std::vector<Parameter*> params{&ft, &frgb, &fc};
  for (Parameter* p : model.params.all()) {
    if (p->name.rfind("iim.stage1.", 0) == 0) params.push_back(p);
  }
  auto f = [&](Tape* t) {
    return probe(t, model.iim_forward(t, 1, ft.var, frgb.var, fc.var), r);
  };
  return grad_check(f, params, block_opts(seed)).max_rel_err;
}

double check_header(uint64_t seed) {
  TafnetConfig cfg;
  cfg.width_multiplier = 0.125;
  TafnetModel model = TafnetModel::build(cfg, seed);
  const int c5 = model.main_plan()[4].out_channels;

  Rng rng(mix_seed(seed, 78));
  randomize_biases(model.params, rng, 0.1);
  ParamStore inputs;
  Parameter& f5 = inputs.create("f5", randn(Shape4{1, c5, 2, 2}, rng));
  Var r = make_const(rand_probe(Shape4{1, 1, 8, 8}, rng));

  std::vector<Parameter*> params{&f5};
  for (Parameter* p : model.params.all()) {
    if (p->name.rfind("header.", 0) == 0) params.push_back(p);
  }
  auto f = [&](Tape* t) { return probe(t, model.regression_header(t, f5.var), r); };
  return grad_check(f, params, block_opts(seed)).max_rel_err;
}

double check_bayes_loss(uint64_t seed) {
  Rng rng(seed);
  ParamStore ps;
  Tensor4 density = randn(Shape4{1, 1, 8, 8}, rng, 0.1);
  for (double& v : density.data) v = std::abs(v);
  Parameter& m = ps.create("m", std::move(density));

  PointAnnotations points;
  for (int i = 0; i < 3; ++i) {
    points.push_back(Point{rng.uniform(0.0, 64.0), rng.uniform(0.0, 64.0)});
  }
  BayesLossOptions opts;
  opts.background_margin = 9.6;
  auto f = [&](Tape* t) { return bayesian_loss(t, m.var, points, opts); };
  Parameter* params[] = {&m};
  GradCheckOptions gopts;
  gopts.eps = 1e-4;
  return grad_check(f, params, gopts).max_rel_err;
}

double check_end_to_end(uint64_t seed) {
  TafnetConfig cfg;  // width 0.25, 64x64, full
  TafnetModel model = TafnetModel::build(cfg, seed);

  Rng rng(mix_seed(seed, 79));
  randomize_biases(model.params, rng, 0.1);
  Var rgb = make_const(randn(Shape4{1, 3, 64, 64}, rng, 0.5));
  Var thermal = make_const(randn(Shape4{1, 1, 64, 64}, rng, 0.5));
  PointAnnotations points;
  for (int i = 0; i < 4; ++i) {
    points.push_back(Point{rng.uniform(0.0, 64.0), rng.uniform(0.0, 64.0)});
  }
  BayesLossOptions bl;
  bl.background_margin = 0.15 * 64;

  auto all = model.params.all();
  Rng pick(mix_seed(seed, 80));
  pick.shuffle(all);
  all.resize(std::max<size_t>(1, all.size() / 10));  // random 10% of parameters

  auto f = [&](Tape* t) {
    Var density = model.forward(t, rgb, thermal);
    return bayesian_loss(t, density, points, bl);
  };
  GradCheckOptions opts;
  opts.coords_per_param = 2;
  opts.sample_seed = mix_seed(seed, 81);
  opts.min_grad_mag = 1e-3;
  opts.validate_step = true;
  return grad_check(f, all, opts).max_rel_err;
}

}  // namespace

std::vector<GradSuiteEntry> run_grad_suite(int num_seeds, uint64_t base_seed) {
  std::vector<GradSuiteEntry> entries;
  auto add = [&](const std::string& name, double tol, const Case& one) {
    entries.push_back({name, worst_over_seeds(one, num_seeds, base_seed), tol});
  };

  add("conv2d", kOpTol, [](uint64_t s) { return check_conv(s, 1, 1); });
  add("conv2d_strided", kOpTol, [](uint64_t s) { return check_conv(s, 2, 0); });
  add("maxpool2d", kOpTol, [](uint64_t s) {
    return check_unary(s, [](Tape* t, const Var& x) { return ops::maxpool2d(t, x); },
                       Shape4{2, 3, 8, 8});
  });
  add("adaptive_avgpool2d", kOpTol, [](uint64_t s) {
    return check_unary(
        s, [](Tape* t, const Var& x) { return ops::adaptive_avgpool2d(t, x, 3, 5); },
        Shape4{2, 3, 8, 8}, 1e-3);
  });
  add("bilinear_upsample", kOpTol, [](uint64_t s) {
    return check_unary(
        s, [](Tape* t, const Var& x) { return ops::bilinear_upsample(t, x, 9, 10); },
        Shape4{2, 3, 4, 5}, 1e-3);
  });
  add("relu", kOpTol, [](uint64_t s) {
    return check_unary(s, [](Tape* t, const Var& x) { return ops::relu(t, x); },
                       Shape4{2, 4, 8, 8});
  });
  add("sigmoid", kOpTol, [](uint64_t s) {
    return check_unary(s, [](Tape* t, const Var& x) { return ops::sigmoid(t, x); },
                       Shape4{2, 4, 8, 8});
  });
  add("add", kOpTol, [](uint64_t s) {
    return check_binary(
        s, [](Tape* t, const Var& a, const Var& b) { return ops::add(t, a, b); },
        Shape4{2, 3, 4, 4}, Shape4{2, 3, 4, 4});
  });
  add("sub", kOpTol, [](uint64_t s) {
    return check_binary(
        s, [](Tape* t, const Var& a, const Var& b) { return ops::sub(t, a, b); },
        Shape4{2, 3, 4, 4}, Shape4{2, 3, 4, 4});
  });
  add("mul", kOpTol, [](uint64_t s) {
    return check_binary(
        s, [](Tape* t, const Var& a, const Var& b) { return ops::mul(t, a, b); },
        Shape4{2, 3, 4, 4}, Shape4{2, 3, 4, 4});
  });
  add("scale_channels", kOpTol, [](uint64_t s) {
    return check_binary(
        s,
        [](Tape* t, const Var& a, const Var& b) { return ops::scale_channels(t, a, b); },
        Shape4{2, 4, 6, 6}, Shape4{2, 4, 1, 1});
  });
  add("scale_channels_shared", kOpTol, [](uint64_t s) {
    return check_binary(
        s,
        [](Tape* t, const Var& a, const Var& b) { return ops::scale_channels(t, a, b); },
        Shape4{2, 4, 6, 6}, Shape4{1, 4, 1, 1});
  });
  add("scale_pixels", kOpTol, [](uint64_t s) {
    return check_binary(
        s, [](Tape* t, const Var& a, const Var& b) { return ops::scale_pixels(t, a, b); },
        Shape4{2, 4, 6, 6}, Shape4{2, 1, 6, 6});
  });
  add("scale_scalar", kOpTol, [](uint64_t s) {
    return check_binary(
        s, [](Tape* t, const Var& a, const Var& b) { return ops::scale_scalar(t, a, b); },
        Shape4{2, 4, 6, 6}, Shape4{1, 1, 1, 1});
  });
  add("concat_channels", kOpTol, [](uint64_t s) {
    return check_binary(
        s,
        [](Tape* t, const Var& a, const Var& b) { return ops::concat_channels(t, a, b); },
        Shape4{2, 3, 4, 4}, Shape4{2, 2, 4, 4});
  });
  add("sum_all", kOpTol, [](uint64_t s) {
    return check_unary(
        s, [](Tape* t, const Var& x) { return ops::sum_all(t, ops::mul(t, x, x)); },
        Shape4{2, 3, 4, 4});
  });
  add("global_avg", kOpTol, [](uint64_t s) {
    return check_unary(s, [](Tape* t, const Var& x) { return ops::global_avg(t, x); },
                       Shape4{2, 4, 6, 6}, 1e-3);
  });
  add("global_max", kOpTol, [](uint64_t s) {
    return check_unary(s, [](Tape* t, const Var& x) { return ops::global_max(t, x); },
                       Shape4{2, 4, 6, 6});
  });
  add("channel_mean", kOpTol, [](uint64_t s) {
    return check_unary(s, [](Tape* t, const Var& x) { return ops::channel_mean(t, x); },
                       Shape4{2, 4, 6, 6}, 1e-3);
  });
  add("channel_max", kOpTol, [](uint64_t s) {
    return check_unary(s, [](Tape* t, const Var& x) { return ops::channel_max(t, x); },
                       Shape4{2, 4, 6, 6});
  });
  add("linear", kOpTol, [](uint64_t s) {
    Rng rng(s);
    ParamStore ps;
    Parameter& x = ps.create("x", randn(Shape4{3, 5, 1, 1}, rng));
    Parameter& w = ps.create("w", randn(Shape4{2, 5, 1, 1}, rng));
    Parameter& b = ps.create("b", randn(Shape4{1, 2, 1, 1}, rng));
    Var r = make_const(rand_probe(Shape4{3, 2, 1, 1}, rng));
    auto f = [&](Tape* t) { return probe(t, ops::linear(t, x.var, w.var, b.var), r); };
    return grad_check(f, ps.all(), linear_op_opts()).max_rel_err;
  });
  add("select_item", kOpTol, [](uint64_t s) {
    return check_unary(s, [](Tape* t, const Var& x) { return ops::select_item(t, x, 1); },
                       Shape4{3, 2, 4, 4}, 1e-3);
  });

  add("vgg_stage", kBlockTol, check_vgg_stage);
  add("attention_chain", kOpTol, check_attention_chain);
  add("pyramid_pooling", kBlockTol, check_pyramid);
  add("iim", kBlockTol, check_iim);
  add("regression_header", kBlockTol, check_header);
  add("bayesian_loss", kOpTol, check_bayes_loss);
  add("end_to_end", kEndToEndTol, check_end_to_end);

  return entries;
}

bool grad_suite_passed(const std::vector<GradSuiteEntry>& entries) {
  for (const GradSuiteEntry& e : entries) {
    if (!e.passed()) return false;
  }
  return true;
}

}  // namespace tafnet
