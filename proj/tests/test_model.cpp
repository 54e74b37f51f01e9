#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "tafnet/grad_check.hpp"
#include "tafnet/model.hpp"
#include "tafnet/ops.hpp"

using namespace tafnet;
namespace fs = std::filesystem;

namespace {

Tensor4 randn(Shape4 s, Rng& rng, double scale = 1.0) {
  Tensor4 t(s);
  for (double& v : t.data) v = rng.normal(0.0, scale);
  return t;
}

TafnetConfig small_cfg(Variant v) {
  TafnetConfig cfg;
  cfg.width_multiplier = 0.125;
  cfg.variant = v;
  return cfg;
}

void copy_shared_params(const TafnetModel& src, TafnetModel& dst) {
  for (const Parameter* p : src.params.all()) {
    if (p->name.rfind("main.", 0) == 0 || p->name.rfind("header.", 0) == 0) {
      dst.params.at(p->name).value() = p->value();
    }
  }
}

}  // namespace

TEST_CASE("baseline builds no aux or iim parameters") {
  TafnetModel m = TafnetModel::build(small_cfg(Variant::baseline), 1);
  for (const Parameter* p : m.params.all()) {
    CHECK(p->name.rfind("aux.", 0) != 0);
    CHECK(p->name.rfind("iim.", 0) != 0);
  }
  TafnetModel full = TafnetModel::build(small_cfg(Variant::full), 1);
  bool has_aux = false, has_iim = false, has_attn = false;
  for (const Parameter* p : full.params.all()) {
    has_aux = has_aux || p->name.rfind("aux.", 0) == 0;
    has_iim = has_iim || p->name.rfind("iim.", 0) == 0;
    has_attn = has_attn || p->name.find(".ca.") != std::string::npos;
  }
  CHECK(has_aux);
  CHECK(has_iim);
  CHECK(has_attn);

  TafnetModel no_attn = TafnetModel::build(small_cfg(Variant::iim_no_attn), 1);
  for (const Parameter* p : no_attn.params.all()) {
    CHECK(p->name.find(".ca.") == std::string::npos);
    CHECK(p->name.find(".sa.") == std::string::npos);
  }
}

TEST_CASE("two builds with the same seed are bitwise identical") {
  TafnetModel a = TafnetModel::build(small_cfg(Variant::full), 42);
  TafnetModel b = TafnetModel::build(small_cfg(Variant::full), 42);
  const auto pa = a.params.all(), pb = b.params.all();
  REQUIRE(pa.size() == pb.size());
  for (size_t i = 0; i < pa.size(); ++i) {
    CHECK(pa[i]->name == pb[i]->name);
    CHECK(pa[i]->value().bitwise_equal(pb[i]->value()));
  }
  TafnetModel c = TafnetModel::build(small_cfg(Variant::full), 43);
  CHECK_FALSE(c.params.at("main.stage1.conv1.weight")
                  .value()
                  .bitwise_equal(a.params.at("main.stage1.conv1.weight").value()));
}

TEST_CASE("width 0.25 on 64x64: main stage-5 feature is (n,128,2,2)") {
  TafnetConfig cfg;  // defaults: width 0.25, 64x64
  cfg.variant = Variant::baseline;
  TafnetModel m = TafnetModel::build(cfg, 7);
  CHECK(m.main_plan()[4].out_channels == 128);

  Rng rng(7);
  Var rgb = make_const(randn(Shape4{1, 3, 64, 64}, rng));
  Var th = make_const(randn(Shape4{1, 1, 64, 64}, rng));
  Var h = ops::concat_channels(nullptr, rgb, th);
  for (int i = 0; i < 5; ++i) {
    h = vgg_stage_forward(nullptr, h, m.params, "main", m.main_plan()[i]);
  }
  CHECK(h.shape() == Shape4{1, 128, 2, 2});
}

TEST_CASE("config validation and canonical text round-trip") {
  TafnetConfig cfg;
  cfg.input_h = 48;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg.input_h = 64;
  cfg.width_multiplier = -1;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);

  TafnetConfig good;
  good.width_multiplier = 0.5;
  good.variant = Variant::iim_no_attn;
  good.gate_init = -0.25;
  good.pyramid.bin_sizes = {1, 3};
  const TafnetConfig back = TafnetConfig::from_canonical_text(good.canonical_text());
  CHECK(back.canonical_text() == good.canonical_text());
  CHECK(back.variant == Variant::iim_no_attn);
  CHECK(back.pyramid.bin_sizes == std::vector<int>{1, 3});
}

TEST_CASE("zero-gate identity: full forward equals baseline bit for bit") {
  TafnetModel full = TafnetModel::build(small_cfg(Variant::full), 11);
  TafnetModel base = TafnetModel::build(small_cfg(Variant::baseline), 99);
  copy_shared_params(full, base);

  Rng rng(13);
  Var rgb = make_const(randn(Shape4{2, 3, 64, 64}, rng));
  Var th = make_const(randn(Shape4{2, 1, 64, 64}, rng));

  ForwardHooks hooks;
  hooks.force_zero_gates = true;
  Var m_full = full.forward(nullptr, rgb, th, hooks);
  Var m_base = base.forward(nullptr, rgb, th);
  CHECK(m_full.value->bitwise_equal(*m_base.value));

  // sanity: with live gates the outputs differ
  Var m_live = full.forward(nullptr, rgb, th);
  CHECK_FALSE(m_live.value->bitwise_equal(*m_base.value));
}

TEST_CASE("iim zero-gate hook returns the combination feature bit-exactly") {
  TafnetModel m = TafnetModel::build(small_cfg(Variant::full), 3);
  const int c1 = m.main_plan()[0].out_channels;
  Rng rng(4);
  Var ft = make_const(randn(Shape4{1, c1, 8, 8}, rng));
  Var frgb = make_const(randn(Shape4{1, c1, 8, 8}, rng));
  Var fc = make_const(randn(Shape4{1, c1, 8, 8}, rng));
  ForwardHooks hooks;
  hooks.force_zero_gates = true;
  Var out = m.iim_forward(nullptr, 1, ft, frgb, fc, hooks);
  CHECK(out.value->bitwise_equal(*fc.value));
}

TEST_CASE("iim symmetry: equal inputs and shared pyramid parameters") {
  TafnetModel m = TafnetModel::build(small_cfg(Variant::iim_no_attn), 5);
  // share one pyramid parameter set across the three paths
  for (const char* field : {".proj.weight", ".proj.bias"}) {
    const Tensor4& src = m.params.at(std::string("iim.stage1.pyr_t") + field).value();
    m.params.at(std::string("iim.stage1.pyr_rgb") + field).value() = src;
    m.params.at(std::string("iim.stage1.pyr_c") + field).value() = src;
  }
  const int c1 = m.main_plan()[0].out_channels;
  Rng rng(6);
  Var f = make_const(randn(Shape4{1, c1, 8, 8}, rng));
  Var out = m.iim_forward(nullptr, 1, f, f, f);
  CHECK(out.value->bitwise_equal(*f.value));
}

TEST_CASE("iim with gate_init 0 matches the hand-composed half-residual oracle") {
  TafnetModel m = TafnetModel::build(small_cfg(Variant::iim_no_attn), 8);
  const int c1 = m.main_plan()[0].out_channels;
  Rng rng(9);
  Var ft = make_const(randn(Shape4{1, c1, 8, 8}, rng));
  Var frgb = make_const(randn(Shape4{1, c1, 8, 8}, rng));
  Var fc = make_const(randn(Shape4{1, c1, 8, 8}, rng));

  Var got = m.iim_forward(nullptr, 1, ft, frgb, fc);

  // same constituent ops, composed by hand; sigmoid(0) = 0.5 exactly
  Var ci_t = pyramid_pooling(nullptr, ft, m.params, "iim.stage1.pyr_t", m.cfg.pyramid);
  Var ci_rgb =
      pyramid_pooling(nullptr, frgb, m.params, "iim.stage1.pyr_rgb", m.cfg.pyramid);
  Var ci_c = pyramid_pooling(nullptr, fc, m.params, "iim.stage1.pyr_c", m.cfg.pyramid);
  Var half = make_const(Tensor4::scalar(0.5));
  Var expect = ops::add(
      nullptr, fc,
      ops::add(nullptr,
               ops::scale_scalar(nullptr, ops::sub(nullptr, ci_t, ci_c), half),
               ops::scale_scalar(nullptr, ops::sub(nullptr, ci_rgb, ci_c), half)));
  CHECK(got.value->bitwise_equal(*expect.value));
}

TEST_CASE("baseline forward equals the hand-composed stage chain") {
  TafnetModel m = TafnetModel::build(small_cfg(Variant::baseline), 15);
  Rng rng(16);
  Var rgb = make_const(randn(Shape4{1, 3, 64, 64}, rng));
  Var th = make_const(randn(Shape4{1, 1, 64, 64}, rng));

  Var got = m.forward(nullptr, rgb, th);

  Var h = ops::concat_channels(nullptr, rgb, th);
  for (int i = 0; i < 5; ++i) {
    h = vgg_stage_forward(nullptr, h, m.params, "main", m.main_plan()[i]);
  }
  Var expect = m.regression_header(nullptr, h);
  CHECK(got.value->bitwise_equal(*expect.value));
}

TEST_CASE("regression header: zero final conv gives a zero density map") {
  TafnetModel m = TafnetModel::build(small_cfg(Variant::baseline), 17);
  for (const char* name : {"header.conv3.weight", "header.conv3.bias"}) {
    auto& v = m.params.at(name).value();
    std::fill(v.data.begin(), v.data.end(), 0.0);
  }
  Rng rng(18);
  Var rgb = make_const(randn(Shape4{1, 3, 64, 64}, rng));
  Var th = make_const(randn(Shape4{1, 1, 64, 64}, rng));
  Var density = m.forward(nullptr, rgb, th);
  for (double v : density.value->data) CHECK(v == 0.0);
  CHECK(count_per_item(*density.value)[0] == 0.0);
}

TEST_CASE("density map is at exactly 1/8 input resolution") {
  for (int size : {64, 96, 128}) {
    TafnetConfig cfg = small_cfg(Variant::baseline);
    cfg.input_h = cfg.input_w = size;
    TafnetModel m = TafnetModel::build(cfg, 19);
    Rng rng(20);
    Var rgb = make_const(randn(Shape4{1, 3, size, size}, rng));
    Var th = make_const(randn(Shape4{1, 1, size, size}, rng));
    Var density = m.forward(nullptr, rgb, th);
    CHECK(density.shape() == Shape4{1, 1, size / 8, size / 8});
  }
}

TEST_CASE("forward output is non-negative for 100 random inputs") {
  TafnetModel m = TafnetModel::build(small_cfg(Variant::full), 21);
  Rng rng(22);
  for (int trial = 0; trial < 100; ++trial) {
    Var rgb = make_const(randn(Shape4{1, 3, 32, 32}, rng));
    Var th = make_const(randn(Shape4{1, 1, 32, 32}, rng));
    Var density = m.forward(nullptr, rgb, th);
    for (double v : density.value->data) CHECK(v >= 0.0);
  }
}

TEST_CASE("forward is deterministic and rejects bad input sizes") {
  TafnetModel m = TafnetModel::build(small_cfg(Variant::full), 23);
  Rng rng(24);
  Var rgb = make_const(randn(Shape4{1, 3, 64, 64}, rng));
  Var th = make_const(randn(Shape4{1, 1, 64, 64}, rng));
  Var a = m.forward(nullptr, rgb, th);
  Var b = m.forward(nullptr, rgb, th);
  CHECK(a.value->bitwise_equal(*b.value));

  Var bad = make_const(randn(Shape4{1, 3, 48, 64}, rng));
  Var bad_th = make_const(randn(Shape4{1, 1, 48, 64}, rng));
  CHECK_THROWS_AS(m.forward(nullptr, bad, bad_th), std::invalid_argument);
}

TEST_CASE("count_per_item") {
  CHECK(count_per_item(Tensor4(Shape4{1, 1, 5, 5}, 0.0))[0] == 0.0);
  Tensor4 single(Shape4{1, 1, 3, 3});
  single.at(0, 0, 1, 2) = 2.5;
  CHECK(count_per_item(single)[0] == 2.5);
  Tensor4 uniform(Shape4{2, 1, 40, 40}, 0.01);
  const auto counts = count_per_item(uniform);
  CHECK(counts[0] == doctest::Approx(16.0).epsilon(1e-9));
  CHECK(counts[1] == doctest::Approx(16.0).epsilon(1e-9));
  Tensor4 two_channel(Shape4{1, 2, 4, 4});
  CHECK_THROWS_AS(count_per_item(two_channel), std::invalid_argument);
}

TEST_CASE("checkpoint round-trip is bit-exact") {
  const fs::path dir = fs::temp_directory_path() / "tafnet_model_test";
  fs::create_directories(dir);
  const fs::path path = dir / "model.ckpt";

  TafnetConfig cfg = small_cfg(Variant::full);
  cfg.gate_init = 0.125;
  TafnetModel m = TafnetModel::build(cfg, 31);
  save_checkpoint(m, path);
  TafnetModel back = load_checkpoint(path);

  CHECK(back.cfg.canonical_text() == m.cfg.canonical_text());
  const auto pa = m.params.all(), pb = back.params.all();
  REQUIRE(pa.size() == pb.size());
  for (size_t i = 0; i < pa.size(); ++i) {
    CHECK(pa[i]->name == pb[i]->name);
    CHECK(pa[i]->value().bitwise_equal(pb[i]->value()));
  }

  // corrupting the file is detected
  {
    std::ofstream f(path, std::ios::binary | std::ios::app);
    f << "junk";
  }
  CHECK_THROWS_AS(load_checkpoint(path), std::runtime_error);
  CHECK_THROWS_AS(load_checkpoint(dir / "missing.ckpt"), std::runtime_error);
  fs::remove_all(dir);
}

TEST_CASE("full model end-to-end gradient check at desk shapes") {
  TafnetConfig cfg;  // width 0.25, full
  TafnetModel m = TafnetModel::build(cfg, 33);
  Rng rng(34);
  for (Parameter* p : m.params.all()) {
    if (p->name.size() >= 5 && p->name.rfind(".bias") == p->name.size() - 5) {
      for (double& v : p->value().data) v += rng.normal(0.0, 0.1);
    }
  }
  Var rgb = make_const(randn(Shape4{1, 3, 64, 64}, rng, 0.5));
  Var th = make_const(randn(Shape4{1, 1, 64, 64}, rng, 0.5));
  Var r = make_const(randn(Shape4{1, 1, 8, 8}, rng));
  auto f = [&](Tape* t) {
    return ops::sum_all(t, ops::mul(t, m.forward(t, rgb, th), r));
  };

  auto all = m.params.all();
  Rng pick(35);
  pick.shuffle(all);
  all.resize(all.size() / 10);

  GradCheckOptions opts;
  opts.coords_per_param = 2;
  opts.sample_seed = 36;
  opts.min_grad_mag = 1e-3;
  opts.validate_step = true;
  CHECK(grad_check(f, all, opts).max_rel_err < 1e-4);
}
