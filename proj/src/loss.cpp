#include "tafnet/loss.hpp"

#include <cmath>
#include <memory>
#include <vector>

#include "tafnet/errors.hpp"
#include "tafnet/ops.hpp"

namespace tafnet {

Var bayesian_loss(Tape* tape, const Var& density, const PointAnnotations& points,
                  const BayesLossOptions& opts) {
  const Shape4 ds = density.shape();
  check_shape(ds.n == 1 && ds.c == 1,
              "bayesian_loss: density must be (1,1,h,w), got " + ds.str());
  if (!(opts.sigma > 0.0)) {
    throw std::invalid_argument("bayesian_loss: sigma must be > 0, got " +
                                std::to_string(opts.sigma));
  }

  if (points.empty() && !opts.use_background) {
    return ops::sum_all(tape, density);
  }

  const int h = ds.h, w = ds.w, cells = h * w;
  const int n_pts = int(points.size());
  const int n_classes = n_pts + (opts.use_background ? 1 : 0);
  const double sigma = opts.sigma / opts.stride;
  const double margin = opts.background_margin / opts.stride;
  const double inv2s2 = 1.0 / (2.0 * sigma * sigma);

  // posterior[k * cells + m] = p(class k | cell m); constant w.r.t. M
  auto posterior = std::make_shared<std::vector<double>>(size_t(n_classes) * cells);
  {
    std::vector<double> logits(n_classes);
    for (int m = 0; m < cells; ++m) {
      const double cx = (m % w) + 0.5;
      const double cy = (m / w) + 0.5;
      double nearest2 = std::numeric_limits<double>::infinity();
      for (int k = 0; k < n_pts; ++k) {
        const double dx = cx - points[k].x / opts.stride;
        const double dy = cy - points[k].y / opts.stride;
        const double d2 = dx * dx + dy * dy;
        logits[k] = -d2 * inv2s2;
        nearest2 = std::min(nearest2, d2);
      }
      if (opts.use_background) {
        const double dbg = n_pts > 0 ? margin - std::sqrt(nearest2) : 0.0;
        logits[n_pts] = n_pts > 0 ? -dbg * dbg * inv2s2 : 0.0;
      }
      double lmax = logits[0];
      for (int k = 1; k < n_classes; ++k) lmax = std::max(lmax, logits[k]);
      double denom = 0.0;
      for (int k = 0; k < n_classes; ++k) denom += std::exp(logits[k] - lmax);
      for (int k = 0; k < n_classes; ++k) {
        (*posterior)[size_t(k) * cells + m] = std::exp(logits[k] - lmax) / denom;
      }
    }
  }

  // E[c_k] = sum_m posterior[k][m] * M[m]
  std::vector<double> expected(n_classes, 0.0);
  const double* mv = density.value->data.data();
  for (int k = 0; k < n_classes; ++k) {
    const double* row = posterior->data() + size_t(k) * cells;
    double acc = 0.0;
    for (int m = 0; m < cells; ++m) acc += row[m] * mv[m];
    expected[k] = acc;
  }

  double loss = 0.0;
  for (int k = 0; k < n_pts; ++k) loss += std::abs(1.0 - expected[k]);
  if (opts.use_background) loss += std::abs(expected[n_pts]);
  if (!std::isfinite(loss)) {
    throw NumericError("bayesian_loss: non-finite loss");
  }

  Var out = make_var(Tensor4::scalar(loss), tape != nullptr && density.tracked());
  if (out.tracked()) {
    auto og = out.grad, mg = density.grad;
    auto exp_copy = std::make_shared<std::vector<double>>(expected);
    tape->record([=]() {
      if (!mg) return;
      const double g = og->data[0];
      for (int k = 0; k < n_classes; ++k) {
        const double e = (*exp_copy)[k];
        double sign;
        if (k < n_pts) {
          // d|1 - E|/dE, subgradient 0 at E == 1
          sign = e < 1.0 ? -1.0 : (e > 1.0 ? 1.0 : 0.0);
        } else {
          sign = e > 0.0 ? 1.0 : (e < 0.0 ? -1.0 : 0.0);
        }
        if (sign == 0.0) continue;
        const double* row = posterior->data() + size_t(k) * cells;
        for (int m = 0; m < cells; ++m) mg->data[m] += g * sign * row[m];
      }
    });
  }
  return out;
}

Tensor4 gaussian_density_gt(const PointAnnotations& points_map, int h, int w,
                            double sigma_map) {
  if (!(sigma_map > 0.0)) {
    throw std::invalid_argument("gaussian_density_gt: sigma must be > 0");
  }
  Tensor4 out(Shape4{1, 1, h, w});
  std::vector<double> weights(size_t(h) * w);
  for (const Point& p : points_map) {
    double lmax = -std::numeric_limits<double>::infinity();
    for (int r = 0; r < h; ++r) {
      for (int c = 0; c < w; ++c) {
        const double dx = (c + 0.5) - p.x;
        const double dy = (r + 0.5) - p.y;
        const double l = -(dx * dx + dy * dy) / (2.0 * sigma_map * sigma_map);
        weights[size_t(r) * w + c] = l;
        lmax = std::max(lmax, l);
      }
    }
    double total = 0.0;
    for (double& v : weights) {
      v = std::exp(v - lmax);
      total += v;
    }
    for (size_t i = 0; i < weights.size(); ++i) out.data[i] += weights[i] / total;
  }
  return out;
}

}  // namespace tafnet
