#pragma once

#include <array>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "tafnet/tensor.hpp"
#include "tafnet/types.hpp"

namespace tafnet {

double mae(std::span<const double> preds, std::span<const double> gts);
double rmse(std::span<const double> preds, std::span<const double> gts);

// Sum of per-cell absolute count errors for one image on the 2^l x 2^l
// grid (l in 0..3). Cell boundaries follow the floor rule on the map grid;
// a point lying exactly on a boundary belongs to the higher-index cell.
// `points` must be in density-map coordinates.
double game_abs_error(const Tensor4& density, const PointAnnotations& points, int level);

// GAME(l): mean of game_abs_error over images. GAME(0) equals MAE.
double game(std::span<const Tensor4> densities,
            std::span<const PointAnnotations> points, int level);

struct EvalRow {
  std::string id;
  Illumination illumination = Illumination::bright;
  double gt_count = 0.0;
  double pred_count = 0.0;
};

struct SplitAggregate {
  int n = 0;
  std::array<double, 4> game{};  // GAME(0..3); levels above max_level stay 0
  double rmse = 0.0;
};

// Per-image counts plus aggregate GAME/RMSE for the whole split and the
// bright/dark subsets. A subset with no images is absent, not zero.
struct EvalReport {
  std::vector<EvalRow> rows;
  int max_level = 3;
  std::optional<SplitAggregate> all, bright, dark;

  // Stable text form (documented in the README): one "row" line per image,
  // then one "aggregate" line per split, "absent" for empty subsets.
  std::string to_text() const;
};

}  // namespace tafnet
