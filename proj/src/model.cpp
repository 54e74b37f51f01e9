#include "tafnet/model.hpp"

#include <algorithm>
#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

#include "tafnet/ops.hpp"

namespace tafnet {

std::string variant_name(Variant v) {
  switch (v) {
    case Variant::baseline: return "baseline";
    case Variant::iim_no_attn: return "iim_no_attn";
    case Variant::full: return "full";
  }
  throw std::logic_error("variant_name: bad enum value");
}

Variant variant_from_name(const std::string& name) {
  if (name == "baseline") return Variant::baseline;
  if (name == "iim_no_attn") return Variant::iim_no_attn;
  if (name == "full") return Variant::full;
  throw std::invalid_argument("variant: expected baseline|iim_no_attn|full, got '" +
                              name + "'");
}

void TafnetConfig::validate() const {
  if (width_multiplier <= 0.0) {
    throw std::invalid_argument("TafnetConfig: width_multiplier must be positive");
  }
  vgg_plan(width_multiplier, 4);  // throws if any stage falls below 4 channels
  if (input_h < 32 || input_h % 32 != 0 || input_w < 32 || input_w % 32 != 0) {
    throw std::invalid_argument("TafnetConfig: input_size " + std::to_string(input_h) +
                                "x" + std::to_string(input_w) +
                                " must be divisible by 32");
  }
  pyramid.validate();
  attention.validate();
  if (!std::isfinite(gate_init)) {
    throw std::invalid_argument("TafnetConfig: gate_init must be finite");
  }
}

namespace {

std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

std::string TafnetConfig::canonical_text() const {
  std::ostringstream os;
  os << "width_multiplier=" << fmt_double(width_multiplier) << "\n";
  os << "input_h=" << input_h << "\n";
  os << "input_w=" << input_w << "\n";
  os << "variant=" << variant_name(variant) << "\n";
  os << "pyramid_bins=";
  for (size_t i = 0; i < pyramid.bin_sizes.size(); ++i) {
    if (i) os << ",";
    os << pyramid.bin_sizes[i];
  }
  os << "\n";
  os << "attention_reduction=" << attention.reduction_ratio << "\n";
  os << "spatial_kernel=" << attention.spatial_kernel << "\n";
  os << "gate_init=" << fmt_double(gate_init) << "\n";
  return os.str();
}

TafnetConfig TafnetConfig::from_canonical_text(const std::string& text) {
  TafnetConfig cfg;
  cfg.pyramid.bin_sizes.clear();
  std::istringstream is(text);
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const size_t eq = line.find('=');
    if (eq == std::string::npos) {
      throw std::invalid_argument("TafnetConfig: malformed line '" + line + "'");
    }
    const std::string key = line.substr(0, eq), val = line.substr(eq + 1);
    if (key == "width_multiplier") {
      cfg.width_multiplier = std::stod(val);
    } else if (key == "input_h") {
      cfg.input_h = std::stoi(val);
    } else if (key == "input_w") {
      cfg.input_w = std::stoi(val);
    } else if (key == "variant") {
      cfg.variant = variant_from_name(val);
    } else if (key == "pyramid_bins") {
      std::istringstream bs(val);
      std::string tok;
      while (std::getline(bs, tok, ',')) cfg.pyramid.bin_sizes.push_back(std::stoi(tok));
    } else if (key == "attention_reduction") {
      cfg.attention.reduction_ratio = std::stoi(val);
    } else if (key == "spatial_kernel") {
      cfg.attention.spatial_kernel = std::stoi(val);
    } else if (key == "gate_init") {
      cfg.gate_init = std::stod(val);
    } else {
      throw std::invalid_argument("TafnetConfig: unknown key '" + key + "'");
    }
  }
  cfg.validate();
  return cfg;
}

TafnetModel TafnetModel::build(const TafnetConfig& cfg, uint64_t seed) {
  cfg.validate();
  TafnetModel m;
  m.cfg = cfg;
  m.main_plan_ = vgg_plan(cfg.width_multiplier, 4);
  m.rgb_plan_ = vgg_plan(cfg.width_multiplier, 3);
  m.t_plan_ = vgg_plan(cfg.width_multiplier, 1);

  Rng rng(seed);
  init_vgg_stream(m.params, "main", m.main_plan_, rng);

  if (cfg.variant != Variant::baseline) {
    init_vgg_stream(m.params, "aux.rgb", m.rgb_plan_, rng);
    init_vgg_stream(m.params, "aux.t", m.t_plan_, rng);
    for (int i = 0; i < 5; ++i) {
      const int c = m.main_plan_[i].out_channels;
      const std::string sp = "iim.stage" + std::to_string(i + 1);
      init_pyramid_pooling(m.params, sp + ".pyr_t", c, cfg.pyramid, rng);
      init_pyramid_pooling(m.params, sp + ".pyr_rgb", c, cfg.pyramid, rng);
      init_pyramid_pooling(m.params, sp + ".pyr_c", c, cfg.pyramid, rng);
      if (cfg.variant == Variant::full) {
        init_channel_attention(m.params, sp + ".ca", c, cfg.attention, rng);
        init_spatial_attention(m.params, sp + ".sa", cfg.attention, rng);
      }
      m.params.create(sp + ".gate_t", Tensor4::scalar(cfg.gate_init));
      m.params.create(sp + ".gate_rgb", Tensor4::scalar(cfg.gate_init));
    }
  }

  const int c5 = m.main_plan_[4].out_channels;
  m.head1_ = std::max(8, c5 / 4);
  m.head2_ = std::max(8, c5 / 8);
  m.params.create("header.conv1.weight", he_conv_init(m.head1_, c5, 3, rng));
  m.params.create("header.conv1.bias", Tensor4(Shape4{1, m.head1_, 1, 1}));
  m.params.create("header.conv2.weight", he_conv_init(m.head2_, m.head1_, 3, rng));
  m.params.create("header.conv2.bias", Tensor4(Shape4{1, m.head2_, 1, 1}));
  m.params.create("header.conv3.weight", he_conv_init(1, m.head2_, 1, rng));
  m.params.create("header.conv3.bias", Tensor4(Shape4{1, 1, 1, 1}));
  return m;
}

Var TafnetModel::iim_forward(Tape* tape, int stage, const Var& f_t,
                             const Var& f_rgb, const Var& f_c,
                             const ForwardHooks& hooks) const {
  if (cfg.variant == Variant::baseline) {
    throw std::invalid_argument("iim_forward: baseline variant has no IIM");
  }
  check_shape(f_t.shape() == f_rgb.shape() && f_t.shape() == f_c.shape(),
              "iim_forward: stage features must share shape, got " +
                  f_t.shape().str() + " / " + f_rgb.shape().str() + " / " +
                  f_c.shape().str());
  const std::string sp = "iim.stage" + std::to_string(stage);

  Var ci_t = pyramid_pooling(tape, f_t, params, sp + ".pyr_t", cfg.pyramid);
  Var ci_rgb = pyramid_pooling(tape, f_rgb, params, sp + ".pyr_rgb", cfg.pyramid);
  Var ci_c = pyramid_pooling(tape, f_c, params, sp + ".pyr_c", cfg.pyramid);

  if (cfg.variant == Variant::full) {
    ci_t = channel_attention(tape, ci_t, params, sp + ".ca", cfg.attention);
    ci_t = spatial_attention(tape, ci_t, params, sp + ".sa", cfg.attention);
  }

  Var ri_ct = ops::sub(tape, ci_t, ci_c);
  Var ri_crgb = ops::sub(tape, ci_rgb, ci_c);

  Var w_t, w_rgb;
  if (hooks.force_zero_gates) {
    w_t = make_const(Tensor4::scalar(0.0));
    w_rgb = make_const(Tensor4::scalar(0.0));
  } else {
    w_t = ops::sigmoid(tape, params.at(sp + ".gate_t").var);
    w_rgb = ops::sigmoid(tape, params.at(sp + ".gate_rgb").var);
  }
  Var gated = ops::add(tape, ops::scale_scalar(tape, ri_ct, w_t),
                       ops::scale_scalar(tape, ri_crgb, w_rgb));
  return ops::add(tape, f_c, gated);
}

Var TafnetModel::regression_header(Tape* tape, const Var& f5) const {
  const Shape4 fs = f5.shape();
  Var h = ops::bilinear_upsample(tape, f5, 4 * fs.h, 4 * fs.w);
  h = ops::relu(tape, ops::conv2d(tape, h, params.at("header.conv1.weight").var,
                                  params.at("header.conv1.bias").var, 1, 1));
  h = ops::relu(tape, ops::conv2d(tape, h, params.at("header.conv2.weight").var,
                                  params.at("header.conv2.bias").var, 1, 1));
  h = ops::relu(tape, ops::conv2d(tape, h, params.at("header.conv3.weight").var,
                                  params.at("header.conv3.bias").var, 1, 0));
  return h;
}

Var TafnetModel::forward(Tape* tape, const Var& rgb, const Var& thermal,
                         const ForwardHooks& hooks) const {
  const Shape4 rs = rgb.shape(), ts = thermal.shape();
  check_shape(rs.c == 3, "forward: rgb must have 3 channels, got " + rs.str());
  check_shape(ts.c == 1, "forward: thermal must have 1 channel, got " + ts.str());
  check_shape(rs.n == ts.n && rs.h == ts.h && rs.w == ts.w,
              "forward: rgb " + rs.str() + " and thermal " + ts.str() + " disagree");
  check_shape(rs.h % 32 == 0 && rs.w % 32 == 0,
              "forward: input " + std::to_string(rs.h) + "x" + std::to_string(rs.w) +
                  " must be divisible by 32");

  Var x_main = ops::concat_channels(tape, rgb, thermal);
  Var x_rgb = rgb, x_t = thermal;
  for (int i = 0; i < 5; ++i) {
    Var f_c = vgg_stage_forward(tape, x_main, params, "main", main_plan_[i]);
    if (cfg.variant == Variant::baseline) {
      x_main = f_c;
      continue;
    }
    Var f_rgb = vgg_stage_forward(tape, x_rgb, params, "aux.rgb", rgb_plan_[i]);
    Var f_t = vgg_stage_forward(tape, x_t, params, "aux.t", t_plan_[i]);
    x_main = iim_forward(tape, i + 1, f_t, f_rgb, f_c, hooks);
    x_rgb = f_rgb;
    x_t = f_t;
  }
  return regression_header(tape, x_main);
}

std::vector<double> count_per_item(const Tensor4& density) {
  check_shape(density.shape.c == 1,
              "count_per_item: density must have 1 channel, got " + density.shape.str());
  const int hw = density.shape.h * density.shape.w;
  std::vector<double> counts(density.shape.n);
  for (int n = 0; n < density.shape.n; ++n) {
    const double* p = &density.data[density.idx(n, 0, 0, 0)];
    double s = 0.0;
    for (int i = 0; i < hw; ++i) s += p[i];
    counts[n] = s;
  }
  return counts;
}

namespace {

constexpr char kMagic[8] = {'T', 'A', 'F', 'N', 'E', 'T', 'C', '1'};

void put_u32(std::string& out, uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(char((v >> (8 * i)) & 0xff));
}

void put_f64(std::string& out, double d) {
  uint64_t v;
  std::memcpy(&v, &d, 8);
  for (int i = 0; i < 8; ++i) out.push_back(char((v >> (8 * i)) & 0xff));
}

struct Reader {
  const std::string& buf;
  size_t pos = 0;
  std::string where;

  void need(size_t n) {
    if (pos + n > buf.size()) {
      throw std::runtime_error("checkpoint '" + where + "': truncated file");
    }
  }
  uint32_t u32() {
    need(4);
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= uint32_t(uint8_t(buf[pos++])) << (8 * i);
    return v;
  }
  double f64() {
    need(8);
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= uint64_t(uint8_t(buf[pos++])) << (8 * i);
    double d;
    std::memcpy(&d, &v, 8);
    return d;
  }
  std::string bytes(size_t n) {
    need(n);
    std::string s = buf.substr(pos, n);
    pos += n;
    return s;
  }
};

}  // namespace

void save_checkpoint(const TafnetModel& model, const std::filesystem::path& path) {
  std::string out;
  out.append(kMagic, 8);
  const std::string cfg_text = model.cfg.canonical_text();
  put_u32(out, uint32_t(cfg_text.size()));
  out += cfg_text;

  const auto params = model.params.all();
  put_u32(out, uint32_t(params.size()));
  for (const Parameter* p : params) {
    put_u32(out, uint32_t(p->name.size()));
    out += p->name;
    const Shape4 s = p->value().shape;
    put_u32(out, uint32_t(s.n));
    put_u32(out, uint32_t(s.c));
    put_u32(out, uint32_t(s.h));
    put_u32(out, uint32_t(s.w));
    for (double v : p->value().data) put_f64(out, v);
  }

  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) {
    throw std::runtime_error("checkpoint: cannot open '" + path.string() + "' for writing");
  }
  f.write(out.data(), std::streamsize(out.size()));
  if (!f) {
    throw std::runtime_error("checkpoint: write failed for '" + path.string() + "'");
  }
}

TafnetModel load_checkpoint(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) {
    throw std::runtime_error("checkpoint: cannot open '" + path.string() + "'");
  }
  std::string buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  Reader r{buf, 0, path.string()};

  if (r.bytes(8) != std::string(kMagic, 8)) {
    throw std::runtime_error("checkpoint '" + path.string() + "': bad magic");
  }
  const uint32_t cfg_len = r.u32();
  const TafnetConfig cfg = TafnetConfig::from_canonical_text(r.bytes(cfg_len));

  TafnetModel model = TafnetModel::build(cfg, /*seed=*/0);
  const uint32_t count = r.u32();
  if (count != model.params.size()) {
    throw std::runtime_error("checkpoint '" + path.string() + "': expected " +
                             std::to_string(model.params.size()) + " parameters, found " +
                             std::to_string(count));
  }
  for (uint32_t i = 0; i < count; ++i) {
    const uint32_t name_len = r.u32();
    const std::string name = r.bytes(name_len);
    Shape4 s;
    s.n = int(r.u32());
    s.c = int(r.u32());
    s.h = int(r.u32());
    s.w = int(r.u32());
    const Parameter* existing = model.params.find(name);
    if (!existing) {
      throw std::runtime_error("checkpoint '" + path.string() +
                               "': unknown parameter '" + name + "'");
    }
    Parameter& p = model.params.at(name);
    if (s != p.value().shape) {
      throw std::runtime_error("checkpoint '" + path.string() + "': parameter '" + name +
                               "' has shape " + s.str() + ", model expects " +
                               p.value().shape.str());
    }
    for (double& v : p.value().data) v = r.f64();
  }
  if (r.pos != buf.size()) {
    throw std::runtime_error("checkpoint '" + path.string() + "': trailing bytes");
  }
  return model;
}

}  // namespace tafnet
