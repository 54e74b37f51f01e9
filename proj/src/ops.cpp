#include "tafnet/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "tafnet/errors.hpp"

namespace tafnet {
namespace ops {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using CMapMat = Eigen::Map<const RowMat>;

namespace {

inline void debug_check_finite(const char* op, const Tensor4& t) {
#ifndef NDEBUG
  if (!t.all_finite()) {
    throw NumericError(std::string(op) + ": non-finite value in output");
  }
#else
  (void)op;
  (void)t;
#endif
}

inline Var make_out(Tape* tape, Shape4 s, bool any_tracked) {
  return make_var(Tensor4(s), tape != nullptr && any_tracked);
}

// col is (C*k*k) x (HO*WO), row-major.
void im2col(const double* x, int C, int H, int W, int k, int stride, int pad,
            int HO, int WO, double* col) {
  int row = 0;
  for (int c = 0; c < C; ++c) {
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx, ++row) {
        double* dst = col + size_t(row) * HO * WO;
        for (int oy = 0; oy < HO; ++oy) {
          const int iy = oy * stride - pad + ky;
          const bool row_in = iy >= 0 && iy < H;
          for (int ox = 0; ox < WO; ++ox) {
            const int ix = ox * stride - pad + kx;
            dst[oy * WO + ox] = (row_in && ix >= 0 && ix < W)
                                    ? x[(size_t(c) * H + iy) * W + ix]
                                    : 0.0;
          }
        }
      }
    }
  }
}

void col2im_add(const double* col, int C, int H, int W, int k, int stride,
                int pad, int HO, int WO, double* gx) {
  int row = 0;
  for (int c = 0; c < C; ++c) {
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx, ++row) {
        const double* src = col + size_t(row) * HO * WO;
        for (int oy = 0; oy < HO; ++oy) {
          const int iy = oy * stride - pad + ky;
          if (iy < 0 || iy >= H) continue;
          for (int ox = 0; ox < WO; ++ox) {
            const int ix = ox * stride - pad + kx;
            if (ix >= 0 && ix < W) {
              gx[(size_t(c) * H + iy) * W + ix] += src[oy * WO + ox];
            }
          }
        }
      }
    }
  }
}

}  // namespace

Var conv2d(Tape* tape, const Var& x, const Var& weight, const Var& bias,
           int stride, int pad) {
  const Shape4 xs = x.shape(), ws = weight.shape(), bs = bias.shape();
  check_shape(ws.h == ws.w, "conv2d: kernel must be square, weight " + ws.str());
  const int k = ws.h;
  check_shape(k % 2 == 1, "conv2d: kernel size must be odd, weight " + ws.str());
  check_shape(stride >= 1, "conv2d: stride must be >= 1, got " + std::to_string(stride));
  check_shape(pad >= 0, "conv2d: pad must be >= 0, got " + std::to_string(pad));
  check_shape(xs.c == ws.c, "conv2d: input channels do not match weight (input " +
                                xs.str() + ", weight " + ws.str() + ")");
  check_shape(bs.n == 1 && bs.c == ws.n && bs.h == 1 && bs.w == 1,
              "conv2d: bias must be (1," + std::to_string(ws.n) + ",1,1), got " + bs.str());
  const int HO = (xs.h + 2 * pad - k) / stride + 1;
  const int WO = (xs.w + 2 * pad - k) / stride + 1;
  check_shape(HO >= 1 && WO >= 1, "conv2d: empty output for input " + xs.str() +
                                      ", kernel " + std::to_string(k));

  const int cout = ws.n, cin = ws.c, ckk = cin * k * k, HW = HO * WO;
  Var out = make_out(tape, Shape4{xs.n, cout, HO, WO},
                     x.tracked() || weight.tracked() || bias.tracked());

  {
    std::vector<double> colbuf(size_t(ckk) * HW);
    CMapMat W(weight.value->data.data(), cout, ckk);
    Eigen::Map<const Eigen::VectorXd> bvec(bias.value->data.data(), cout);
    for (int n = 0; n < xs.n; ++n) {
      im2col(x.value->data.data() + x.value->idx(n, 0, 0, 0), cin, xs.h, xs.w,
             k, stride, pad, HO, WO, colbuf.data());
      CMapMat col(colbuf.data(), ckk, HW);
      MapMat O(out.value->data.data() + out.value->idx(n, 0, 0, 0), cout, HW);
      O.noalias() = W * col;
      O.colwise() += bvec;
    }
  }
  debug_check_finite("conv2d", *out.value);

  if (out.tracked()) {
    auto xv = x.value, wv = weight.value;
    auto og = out.grad, xg = x.grad, wg = weight.grad, bg = bias.grad;
    const int N = xs.n, H = xs.h, Wd = xs.w;
    tape->record([=]() {
      std::vector<double> colbuf((xg || wg) ? size_t(ckk) * HW : 0);
      CMapMat W(wv->data.data(), cout, ckk);
      for (int n = 0; n < N; ++n) {
        CMapMat gO(og->data.data() + og->idx(n, 0, 0, 0), cout, HW);
        if (wg || xg) {
          if (wg) {
            im2col(xv->data.data() + xv->idx(n, 0, 0, 0), cin, H, Wd, k,
                   stride, pad, HO, WO, colbuf.data());
            CMapMat col(colbuf.data(), ckk, HW);
            MapMat gW(wg->data.data(), cout, ckk);
            gW.noalias() += gO * col.transpose();
          }
          if (xg) {
            RowMat gcol = W.transpose() * gO;
            col2im_add(gcol.data(), cin, H, Wd, k, stride, pad, HO, WO,
                       xg->data.data() + xg->idx(n, 0, 0, 0));
          }
        }
        if (bg) {
          Eigen::Map<Eigen::VectorXd> gB(bg->data.data(), cout);
          gB.noalias() += gO.rowwise().sum();
        }
      }
    });
  }
  return out;
}

Var maxpool2d(Tape* tape, const Var& x) {
  const Shape4 xs = x.shape();
  check_shape(xs.h % 2 == 0 && xs.w % 2 == 0,
              "maxpool2d: H and W must be even, got " + xs.str());
  const int HO = xs.h / 2, WO = xs.w / 2;
  Var out = make_out(tape, Shape4{xs.n, xs.c, HO, WO}, x.tracked());

  auto argmax = std::make_shared<std::vector<int>>(out.value->size());
  const Tensor4& in = *x.value;
  Tensor4& o = *out.value;
  size_t oi = 0;
  for (int n = 0; n < xs.n; ++n) {
    for (int c = 0; c < xs.c; ++c) {
      for (int oy = 0; oy < HO; ++oy) {
        for (int ox = 0; ox < WO; ++ox, ++oi) {
          double best = -std::numeric_limits<double>::infinity();
          int besti = 0;
          for (int dy = 0; dy < 2; ++dy) {
            for (int dx = 0; dx < 2; ++dx) {
              const int iy = 2 * oy + dy, ix = 2 * ox + dx;
              const double v = in.at(n, c, iy, ix);
              if (v > best) {  // strict: ties keep the first scan position
                best = v;
                besti = int(in.idx(n, c, iy, ix));
              }
            }
          }
          o.data[oi] = best;
          (*argmax)[oi] = besti;
        }
      }
    }
  }
  debug_check_finite("maxpool2d", o);

  if (out.tracked()) {
    auto og = out.grad, xg = x.grad;
    tape->record([=]() {
      if (!xg) return;
      for (size_t i = 0; i < og->size(); ++i) {
        xg->data[(*argmax)[i]] += og->data[i];
      }
    });
  }
  return out;
}

Var adaptive_avgpool2d(Tape* tape, const Var& x, int out_h, int out_w) {
  const Shape4 xs = x.shape();
  check_shape(out_h >= 1 && out_w >= 1 && out_h <= xs.h && out_w <= xs.w,
              "adaptive_avgpool2d: target " + std::to_string(out_h) + "x" +
                  std::to_string(out_w) + " exceeds input " + xs.str());
  Var out = make_out(tape, Shape4{xs.n, xs.c, out_h, out_w}, x.tracked());

  const Tensor4& in = *x.value;
  Tensor4& o = *out.value;
  for (int n = 0; n < xs.n; ++n) {
    for (int c = 0; c < xs.c; ++c) {
      for (int oy = 0; oy < out_h; ++oy) {
        const int y0 = oy * xs.h / out_h, y1 = (oy + 1) * xs.h / out_h;
        for (int ox = 0; ox < out_w; ++ox) {
          const int x0 = ox * xs.w / out_w, x1 = (ox + 1) * xs.w / out_w;
          double s = 0.0;
          for (int iy = y0; iy < y1; ++iy) {
            for (int ix = x0; ix < x1; ++ix) s += in.at(n, c, iy, ix);
          }
          o.at(n, c, oy, ox) = s / ((y1 - y0) * (x1 - x0));
        }
      }
    }
  }
  debug_check_finite("adaptive_avgpool2d", o);

  if (out.tracked()) {
    auto og = out.grad, xg = x.grad;
    const int H = xs.h, W = xs.w, N = xs.n, C = xs.c;
    tape->record([=]() {
      if (!xg) return;
      for (int n = 0; n < N; ++n) {
        for (int c = 0; c < C; ++c) {
          for (int oy = 0; oy < out_h; ++oy) {
            const int y0 = oy * H / out_h, y1 = (oy + 1) * H / out_h;
            for (int ox = 0; ox < out_w; ++ox) {
              const int x0 = ox * W / out_w, x1 = (ox + 1) * W / out_w;
              const double g = og->at(n, c, oy, ox) / ((y1 - y0) * (x1 - x0));
              for (int iy = y0; iy < y1; ++iy) {
                for (int ix = x0; ix < x1; ++ix) xg->at(n, c, iy, ix) += g;
              }
            }
          }
        }
      }
    });
  }
  return out;
}

namespace {

struct LerpAxis {
  std::vector<int> i0, i1;
  std::vector<double> t;
};

LerpAxis make_lerp_axis(int in, int out) {
  LerpAxis ax;
  ax.i0.resize(out);
  ax.i1.resize(out);
  ax.t.resize(out);
  const double scale = double(in) / double(out);
  for (int o = 0; o < out; ++o) {
    double src = (o + 0.5) * scale - 0.5;
    src = std::min(std::max(src, 0.0), double(in - 1));
    const int i0 = int(std::floor(src));
    ax.i0[o] = i0;
    ax.i1[o] = std::min(i0 + 1, in - 1);
    ax.t[o] = src - i0;
  }
  return ax;
}

}  // namespace

Var bilinear_upsample(Tape* tape, const Var& x, int out_h, int out_w) {
  const Shape4 xs = x.shape();
  check_shape(out_h >= xs.h && out_w >= xs.w,
              "bilinear_upsample: target " + std::to_string(out_h) + "x" +
                  std::to_string(out_w) + " smaller than input " + xs.str());
  Var out = make_out(tape, Shape4{xs.n, xs.c, out_h, out_w}, x.tracked());

  auto ay = std::make_shared<LerpAxis>(make_lerp_axis(xs.h, out_h));
  auto axx = std::make_shared<LerpAxis>(make_lerp_axis(xs.w, out_w));
  const Tensor4& in = *x.value;
  Tensor4& o = *out.value;
  for (int n = 0; n < xs.n; ++n) {
    for (int c = 0; c < xs.c; ++c) {
      for (int oy = 0; oy < out_h; ++oy) {
        const int y0 = ay->i0[oy], y1 = ay->i1[oy];
        const double ty = ay->t[oy];
        for (int ox = 0; ox < out_w; ++ox) {
          const int x0 = axx->i0[ox], x1 = axx->i1[ox];
          const double tx = axx->t[ox];
          // lerp form keeps constant inputs bit-exact
          const double a = in.at(n, c, y0, x0);
          const double b = in.at(n, c, y0, x1);
          const double cc = in.at(n, c, y1, x0);
          const double d = in.at(n, c, y1, x1);
          const double top = a + tx * (b - a);
          const double bot = cc + tx * (d - cc);
          o.at(n, c, oy, ox) = top + ty * (bot - top);
        }
      }
    }
  }
  debug_check_finite("bilinear_upsample", o);

  if (out.tracked()) {
    auto og = out.grad, xg = x.grad;
    const int N = xs.n, C = xs.c;
    tape->record([=]() {
      if (!xg) return;
      for (int n = 0; n < N; ++n) {
        for (int c = 0; c < C; ++c) {
          for (int oy = 0; oy < out_h; ++oy) {
            const int y0 = ay->i0[oy], y1 = ay->i1[oy];
            const double ty = ay->t[oy];
            for (int ox = 0; ox < out_w; ++ox) {
              const int x0 = axx->i0[ox], x1 = axx->i1[ox];
              const double tx = axx->t[ox];
              const double g = og->at(n, c, oy, ox);
              xg->at(n, c, y0, x0) += (1 - ty) * (1 - tx) * g;
              xg->at(n, c, y0, x1) += (1 - ty) * tx * g;
              xg->at(n, c, y1, x0) += ty * (1 - tx) * g;
              xg->at(n, c, y1, x1) += ty * tx * g;
            }
          }
        }
      }
    });
  }
  return out;
}

Var relu(Tape* tape, const Var& x) {
  Var out = make_out(tape, x.shape(), x.tracked());
  const auto& in = x.value->data;
  auto& o = out.value->data;
  for (size_t i = 0; i < in.size(); ++i) o[i] = in[i] > 0.0 ? in[i] : 0.0;

  if (out.tracked()) {
    auto og = out.grad, xg = x.grad, xv = x.value;
    tape->record([=]() {
      if (!xg) return;
      for (size_t i = 0; i < og->size(); ++i) {
        if (xv->data[i] > 0.0) xg->data[i] += og->data[i];
      }
    });
  }
  return out;
}

Var sigmoid(Tape* tape, const Var& x) {
  Var out = make_out(tape, x.shape(), x.tracked());
  const auto& in = x.value->data;
  auto& o = out.value->data;
  for (size_t i = 0; i < in.size(); ++i) {
    const double v = in[i];
    if (v >= 0.0) {
      o[i] = 1.0 / (1.0 + std::exp(-v));
    } else {
      const double e = std::exp(v);
      o[i] = e / (1.0 + e);
    }
  }
  debug_check_finite("sigmoid", *out.value);

  if (out.tracked()) {
    auto og = out.grad, xg = x.grad, ov = out.value;
    tape->record([=]() {
      if (!xg) return;
      for (size_t i = 0; i < og->size(); ++i) {
        const double s = ov->data[i];
        xg->data[i] += og->data[i] * s * (1.0 - s);
      }
    });
  }
  return out;
}

namespace {

void check_same_shape(const char* op, const Var& a, const Var& b) {
  check_shape(a.shape() == b.shape(), std::string(op) + ": shape mismatch " +
                                          a.shape().str() + " vs " + b.shape().str());
}

}  // namespace

Var add(Tape* tape, const Var& a, const Var& b) {
  check_same_shape("add", a, b);
  Var out = make_out(tape, a.shape(), a.tracked() || b.tracked());
  for (size_t i = 0; i < out.value->size(); ++i) {
    out.value->data[i] = a.value->data[i] + b.value->data[i];
  }
  if (out.tracked()) {
    auto og = out.grad, ag = a.grad, bg = b.grad;
    tape->record([=]() {
      for (size_t i = 0; i < og->size(); ++i) {
        if (ag) ag->data[i] += og->data[i];
        if (bg) bg->data[i] += og->data[i];
      }
    });
  }
  return out;
}

Var sub(Tape* tape, const Var& a, const Var& b) {
  check_same_shape("sub", a, b);
  Var out = make_out(tape, a.shape(), a.tracked() || b.tracked());
  for (size_t i = 0; i < out.value->size(); ++i) {
    out.value->data[i] = a.value->data[i] - b.value->data[i];
  }
  if (out.tracked()) {
    auto og = out.grad, ag = a.grad, bg = b.grad;
    tape->record([=]() {
      for (size_t i = 0; i < og->size(); ++i) {
        if (ag) ag->data[i] += og->data[i];
        if (bg) bg->data[i] -= og->data[i];
      }
    });
  }
  return out;
}

Var mul(Tape* tape, const Var& a, const Var& b) {
  check_same_shape("mul", a, b);
  Var out = make_out(tape, a.shape(), a.tracked() || b.tracked());
  for (size_t i = 0; i < out.value->size(); ++i) {
    out.value->data[i] = a.value->data[i] * b.value->data[i];
  }
  debug_check_finite("mul", *out.value);
  if (out.tracked()) {
    auto og = out.grad, ag = a.grad, bg = b.grad, av = a.value, bv = b.value;
    tape->record([=]() {
      for (size_t i = 0; i < og->size(); ++i) {
        if (ag) ag->data[i] += og->data[i] * bv->data[i];
        if (bg) bg->data[i] += og->data[i] * av->data[i];
      }
    });
  }
  return out;
}

Var scale_channels(Tape* tape, const Var& x, const Var& s) {
  const Shape4 xs = x.shape(), ss = s.shape();
  check_shape((ss.n == xs.n || ss.n == 1) && ss.c == xs.c && ss.h == 1 && ss.w == 1,
              "scale_channels: scale " + ss.str() + " incompatible with input " + xs.str());
  Var out = make_out(tape, xs, x.tracked() || s.tracked());

  const int HW = xs.h * xs.w;
  for (int n = 0; n < xs.n; ++n) {
    const int sn = ss.n == 1 ? 0 : n;
    for (int c = 0; c < xs.c; ++c) {
      const double sv = s.value->at(sn, c, 0, 0);
      const double* xin = &x.value->data[x.value->idx(n, c, 0, 0)];
      double* op = &out.value->data[out.value->idx(n, c, 0, 0)];
      for (int i = 0; i < HW; ++i) op[i] = xin[i] * sv;
    }
  }
  debug_check_finite("scale_channels", *out.value);

  if (out.tracked()) {
    auto og = out.grad, xg = x.grad, sg = s.grad, xv = x.value, sv = s.value;
    const int N = xs.n, C = xs.c, bn = ss.n;
    tape->record([=]() {
      for (int n = 0; n < N; ++n) {
        const int sn = bn == 1 ? 0 : n;
        for (int c = 0; c < C; ++c) {
          const size_t base = xv->idx(n, c, 0, 0);
          const double scale = sv->at(sn, c, 0, 0);
          double acc = 0.0;
          for (int i = 0; i < HW; ++i) {
            const double g = og->data[base + i];
            if (xg) xg->data[base + i] += g * scale;
            acc += g * xv->data[base + i];
          }
          if (sg) sg->at(sn, c, 0, 0) += acc;
        }
      }
    });
  }
  return out;
}

Var scale_pixels(Tape* tape, const Var& x, const Var& m) {
  const Shape4 xs = x.shape(), ms = m.shape();
  check_shape(ms.n == xs.n && ms.c == 1 && ms.h == xs.h && ms.w == xs.w,
              "scale_pixels: map " + ms.str() + " incompatible with input " + xs.str());
  Var out = make_out(tape, xs, x.tracked() || m.tracked());

  const int HW = xs.h * xs.w;
  for (int n = 0; n < xs.n; ++n) {
    const double* mp = &m.value->data[m.value->idx(n, 0, 0, 0)];
    for (int c = 0; c < xs.c; ++c) {
      const double* xin = &x.value->data[x.value->idx(n, c, 0, 0)];
      double* op = &out.value->data[out.value->idx(n, c, 0, 0)];
      for (int i = 0; i < HW; ++i) op[i] = xin[i] * mp[i];
    }
  }
  debug_check_finite("scale_pixels", *out.value);

  if (out.tracked()) {
    auto og = out.grad, xg = x.grad, mg = m.grad, xv = x.value, mv = m.value;
    const int N = xs.n, C = xs.c;
    tape->record([=]() {
      for (int n = 0; n < N; ++n) {
        const size_t mbase = mv->idx(n, 0, 0, 0);
        for (int c = 0; c < C; ++c) {
          const size_t base = xv->idx(n, c, 0, 0);
          for (int i = 0; i < HW; ++i) {
            const double g = og->data[base + i];
            if (xg) xg->data[base + i] += g * mv->data[mbase + i];
            if (mg) mg->data[mbase + i] += g * xv->data[base + i];
          }
        }
      }
    });
  }
  return out;
}

Var scale_scalar(Tape* tape, const Var& x, const Var& s) {
  check_shape(s.shape().numel() == 1,
              "scale_scalar: scale must be a scalar, got " + s.shape().str());
  Var out = make_out(tape, x.shape(), x.tracked() || s.tracked());
  const double sv = s.value->data[0];
  for (size_t i = 0; i < out.value->size(); ++i) {
    out.value->data[i] = x.value->data[i] * sv;
  }
  debug_check_finite("scale_scalar", *out.value);

  if (out.tracked()) {
    auto og = out.grad, xg = x.grad, sg = s.grad, xv = x.value, svp = s.value;
    tape->record([=]() {
      const double scale = svp->data[0];
      double acc = 0.0;
      for (size_t i = 0; i < og->size(); ++i) {
        if (xg) xg->data[i] += og->data[i] * scale;
        acc += og->data[i] * xv->data[i];
      }
      if (sg) sg->data[0] += acc;
    });
  }
  return out;
}

Var concat_channels(Tape* tape, const Var& a, const Var& b) {
  const Var parts[2] = {a, b};
  return concat_channels(tape, std::span<const Var>(parts, 2));
}

Var concat_channels(Tape* tape, std::span<const Var> parts) {
  check_shape(!parts.empty(), "concat_channels: no inputs");
  const Shape4 first = parts[0].shape();
  int total_c = 0;
  bool tracked = false;
  for (const Var& p : parts) {
    const Shape4 ps = p.shape();
    check_shape(ps.n == first.n && ps.h == first.h && ps.w == first.w,
                "concat_channels: mismatched shapes " + first.str() + " vs " + ps.str());
    total_c += ps.c;
    tracked = tracked || p.tracked();
  }
  Var out = make_out(tape, Shape4{first.n, total_c, first.h, first.w}, tracked);

  const int HW = first.h * first.w;
  for (int n = 0; n < first.n; ++n) {
    int coff = 0;
    for (const Var& p : parts) {
      const int pc = p.shape().c;
      std::copy_n(&p.value->data[p.value->idx(n, 0, 0, 0)], size_t(pc) * HW,
                  &out.value->data[out.value->idx(n, coff, 0, 0)]);
      coff += pc;
    }
  }

  if (out.tracked()) {
    auto og = out.grad;
    std::vector<std::shared_ptr<Tensor4>> grads;
    std::vector<int> chans;
    for (const Var& p : parts) {
      grads.push_back(p.grad);
      chans.push_back(p.shape().c);
    }
    const int N = first.n;
    tape->record([=]() {
      for (int n = 0; n < N; ++n) {
        int coff = 0;
        for (size_t pi = 0; pi < grads.size(); ++pi) {
          if (grads[pi]) {
            const size_t cnt = size_t(chans[pi]) * HW;
            const double* src = &og->data[og->idx(n, coff, 0, 0)];
            double* dst = &grads[pi]->data[grads[pi]->idx(n, 0, 0, 0)];
            for (size_t i = 0; i < cnt; ++i) dst[i] += src[i];
          }
          coff += chans[pi];
        }
      }
    });
  }
  return out;
}

Var sum_all(Tape* tape, const Var& x) {
  Var out = make_out(tape, Shape4{1, 1, 1, 1}, x.tracked());
  out.value->data[0] = x.value->sum();
  if (out.tracked()) {
    auto og = out.grad, xg = x.grad;
    tape->record([=]() {
      if (!xg) return;
      const double g = og->data[0];
      for (double& v : xg->data) v += g;
    });
  }
  return out;
}

Var global_avg(Tape* tape, const Var& x) {
  const Shape4 xs = x.shape();
  Var out = make_out(tape, Shape4{xs.n, xs.c, 1, 1}, x.tracked());
  const int HW = xs.h * xs.w;
  for (int n = 0; n < xs.n; ++n) {
    for (int c = 0; c < xs.c; ++c) {
      const double* p = &x.value->data[x.value->idx(n, c, 0, 0)];
      double s = 0.0;
      for (int i = 0; i < HW; ++i) s += p[i];
      out.value->at(n, c, 0, 0) = s / HW;
    }
  }
  if (out.tracked()) {
    auto og = out.grad, xg = x.grad;
    const int N = xs.n, C = xs.c;
    tape->record([=]() {
      if (!xg) return;
      for (int n = 0; n < N; ++n) {
        for (int c = 0; c < C; ++c) {
          const double g = og->at(n, c, 0, 0) / HW;
          double* p = &xg->data[xg->idx(n, c, 0, 0)];
          for (int i = 0; i < HW; ++i) p[i] += g;
        }
      }
    });
  }
  return out;
}

Var global_max(Tape* tape, const Var& x) {
  const Shape4 xs = x.shape();
  Var out = make_out(tape, Shape4{xs.n, xs.c, 1, 1}, x.tracked());
  const int HW = xs.h * xs.w;
  auto argmax = std::make_shared<std::vector<size_t>>(size_t(xs.n) * xs.c);
  for (int n = 0; n < xs.n; ++n) {
    for (int c = 0; c < xs.c; ++c) {
      const size_t base = x.value->idx(n, c, 0, 0);
      double best = x.value->data[base];
      size_t besti = base;
      for (int i = 1; i < HW; ++i) {
        if (x.value->data[base + i] > best) {
          best = x.value->data[base + i];
          besti = base + i;
        }
      }
      out.value->at(n, c, 0, 0) = best;
      (*argmax)[size_t(n) * xs.c + c] = besti;
    }
  }
  if (out.tracked()) {
    auto og = out.grad, xg = x.grad;
    tape->record([=]() {
      if (!xg) return;
      for (size_t i = 0; i < argmax->size(); ++i) {
        xg->data[(*argmax)[i]] += og->data[i];
      }
    });
  }
  return out;
}

Var channel_mean(Tape* tape, const Var& x) {
  const Shape4 xs = x.shape();
  Var out = make_out(tape, Shape4{xs.n, 1, xs.h, xs.w}, x.tracked());
  const int HW = xs.h * xs.w;
  for (int n = 0; n < xs.n; ++n) {
    double* op = &out.value->data[out.value->idx(n, 0, 0, 0)];
    for (int i = 0; i < HW; ++i) {
      double s = 0.0;
      for (int c = 0; c < xs.c; ++c) s += x.value->data[x.value->idx(n, c, 0, 0) + i];
      op[i] = s / xs.c;
    }
  }
  if (out.tracked()) {
    auto og = out.grad, xg = x.grad;
    const int N = xs.n, C = xs.c;
    tape->record([=]() {
      if (!xg) return;
      for (int n = 0; n < N; ++n) {
        const size_t obase = og->idx(n, 0, 0, 0);
        for (int i = 0; i < HW; ++i) {
          const double g = og->data[obase + i] / C;
          for (int c = 0; c < C; ++c) xg->data[xg->idx(n, c, 0, 0) + i] += g;
        }
      }
    });
  }
  return out;
}

Var channel_max(Tape* tape, const Var& x) {
  const Shape4 xs = x.shape();
  Var out = make_out(tape, Shape4{xs.n, 1, xs.h, xs.w}, x.tracked());
  const int HW = xs.h * xs.w;
  auto argmax = std::make_shared<std::vector<size_t>>(size_t(xs.n) * HW);
  for (int n = 0; n < xs.n; ++n) {
    double* op = &out.value->data[out.value->idx(n, 0, 0, 0)];
    for (int i = 0; i < HW; ++i) {
      size_t besti = x.value->idx(n, 0, 0, 0) + i;
      double best = x.value->data[besti];
      for (int c = 1; c < xs.c; ++c) {
        const size_t ci = x.value->idx(n, c, 0, 0) + i;
        if (x.value->data[ci] > best) {
          best = x.value->data[ci];
          besti = ci;
        }
      }
      op[i] = best;
      (*argmax)[size_t(n) * HW + i] = besti;
    }
  }
  if (out.tracked()) {
    auto og = out.grad, xg = x.grad;
    tape->record([=]() {
      if (!xg) return;
      for (size_t i = 0; i < argmax->size(); ++i) {
        xg->data[(*argmax)[i]] += og->data[i];
      }
    });
  }
  return out;
}

Var linear(Tape* tape, const Var& x, const Var& weight, const Var& bias) {
  const Shape4 xs = x.shape(), ws = weight.shape(), bs = bias.shape();
  check_shape(xs.h == 1 && xs.w == 1, "linear: input must be (n,d,1,1), got " + xs.str());
  check_shape(ws.h == 1 && ws.w == 1, "linear: weight must be (d_out,d_in,1,1), got " + ws.str());
  check_shape(ws.c == xs.c, "linear: input dim does not match weight (input " +
                                xs.str() + ", weight " + ws.str() + ")");
  check_shape(bs.n == 1 && bs.c == ws.n && bs.h == 1 && bs.w == 1,
              "linear: bias must be (1," + std::to_string(ws.n) + ",1,1), got " + bs.str());
  const int N = xs.n, din = xs.c, dout = ws.n;
  Var out = make_out(tape, Shape4{N, dout, 1, 1},
                     x.tracked() || weight.tracked() || bias.tracked());
  {
    CMapMat X(x.value->data.data(), N, din);
    CMapMat W(weight.value->data.data(), dout, din);
    Eigen::Map<const Eigen::RowVectorXd> bvec(bias.value->data.data(), dout);
    MapMat O(out.value->data.data(), N, dout);
    O.noalias() = X * W.transpose();
    O.rowwise() += bvec;
  }
  debug_check_finite("linear", *out.value);

  if (out.tracked()) {
    auto xv = x.value, wv = weight.value;
    auto og = out.grad, xg = x.grad, wg = weight.grad, bg = bias.grad;
    tape->record([=]() {
      CMapMat gO(og->data.data(), N, dout);
      if (xg) {
        CMapMat W(wv->data.data(), dout, din);
        MapMat gX(xg->data.data(), N, din);
        gX.noalias() += gO * W;
      }
      if (wg) {
        CMapMat X(xv->data.data(), N, din);
        MapMat gW(wg->data.data(), dout, din);
        gW.noalias() += gO.transpose() * X;
      }
      if (bg) {
        Eigen::Map<Eigen::RowVectorXd> gB(bg->data.data(), dout);
        gB.noalias() += gO.colwise().sum();
      }
    });
  }
  return out;
}

Var select_item(Tape* tape, const Var& x, int item) {
  const Shape4 xs = x.shape();
  check_shape(item >= 0 && item < xs.n, "select_item: item " + std::to_string(item) +
                                            " out of range for " + xs.str());
  Var out = make_out(tape, Shape4{1, xs.c, xs.h, xs.w}, x.tracked());
  const size_t count = out.value->size();
  const size_t base = x.value->idx(item, 0, 0, 0);
  std::copy_n(&x.value->data[base], count, out.value->data.begin());

  if (out.tracked()) {
    auto og = out.grad, xg = x.grad;
    tape->record([=]() {
      if (!xg) return;
      for (size_t i = 0; i < count; ++i) xg->data[base + i] += og->data[i];
    });
  }
  return out;
}

}  // namespace ops
}  // namespace tafnet
