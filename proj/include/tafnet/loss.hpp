#pragma once

#include "tafnet/autograd.hpp"
#include "tafnet/types.hpp"

namespace tafnet {

// Point-supervised counting loss over a single density map. Distances are
// measured in density-map units: annotation (x, y) in input pixels maps to
// (x/stride, y/stride), cell (r, c) is represented by its center
// (c + 0.5, r + 0.5), and sigma/background_margin scale by 1/stride.
//
// Posterior over annotations per cell: p(y_n | x_m) proportional to
// exp(-d(x_m, z_n)^2 / (2 sigma^2)). With the background class enabled, a
// cell's background likelihood uses distance (margin - d_nearest). The
// loss is sum_n |1 - E[c_n]| plus |0 - E[c_bg]| when background is on;
// with no annotations and background off it degenerates to sum(M).
struct BayesLossOptions {
  double sigma = 8.0;              // input pixels, > 0
  bool use_background = true;
  double background_margin = 9.6;  // input pixels
  int stride = 8;                  // input pixels per density cell
};

Var bayesian_loss(Tape* tape, const Var& density, const PointAnnotations& points,
                  const BayesLossOptions& opts);

// Sum of per-point discrete Gaussians evaluated at cell centers, each
// renormalized to total mass exactly 1, so the map sums to the point
// count. Points and sigma are in map units here.
Tensor4 gaussian_density_gt(const PointAnnotations& points_map, int h, int w,
                            double sigma_map);

}  // namespace tafnet
