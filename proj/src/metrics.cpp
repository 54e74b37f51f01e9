#include "tafnet/metrics.hpp"

#include <cmath>
#include <cstdio>
#include <sstream>
#include <stdexcept>

namespace tafnet {

namespace {

void check_pair_lists(std::span<const double> preds, std::span<const double> gts,
                      const char* op) {
  if (preds.size() != gts.size()) {
    throw std::invalid_argument(std::string(op) + ": " + std::to_string(preds.size()) +
                                " predictions vs " + std::to_string(gts.size()) +
                                " ground truths");
  }
  if (preds.empty()) {
    throw std::invalid_argument(std::string(op) + ": empty input");
  }
}

// Index of the grid cell owning coordinate v: the largest j in [0, g)
// with floor(j * extent / g) <= v.
int cell_of(double v, int extent, int g) {
  int cell = 0;
  for (int j = g - 1; j >= 0; --j) {
    if (double(j * extent / g) <= v) {
      cell = j;
      break;
    }
  }
  return cell;
}

}  // namespace

double mae(std::span<const double> preds, std::span<const double> gts) {
  check_pair_lists(preds, gts, "mae");
  double acc = 0.0;
  for (size_t i = 0; i < preds.size(); ++i) acc += std::abs(preds[i] - gts[i]);
  return acc / double(preds.size());
}

double rmse(std::span<const double> preds, std::span<const double> gts) {
  check_pair_lists(preds, gts, "rmse");
  double acc = 0.0;
  for (size_t i = 0; i < preds.size(); ++i) {
    const double d = preds[i] - gts[i];
    acc += d * d;
  }
  return std::sqrt(acc / double(preds.size()));
}

double game_abs_error(const Tensor4& density, const PointAnnotations& points, int level) {
  if (level < 0 || level > 3) {
    throw std::invalid_argument("game: level must be in 0..3, got " +
                                std::to_string(level));
  }
  check_shape(density.shape.n == 1 && density.shape.c == 1,
              "game: density must be (1,1,h,w), got " + density.shape.str());
  const int h = density.shape.h, w = density.shape.w;
  const int g = 1 << level;

  std::vector<double> pred_cells(size_t(g) * g, 0.0);
  std::vector<double> gt_cells(size_t(g) * g, 0.0);
  for (int r = 0; r < h; ++r) {
    const int cr = cell_of(double(r), h, g);
    for (int c = 0; c < w; ++c) {
      const int cc = cell_of(double(c), w, g);
      pred_cells[size_t(cr) * g + cc] += density.at(0, 0, r, c);
    }
  }
  for (const Point& p : points) {
    const int cr = cell_of(p.y, h, g);
    const int cc = cell_of(p.x, w, g);
    gt_cells[size_t(cr) * g + cc] += 1.0;
  }

  double err = 0.0;
  for (size_t j = 0; j < pred_cells.size(); ++j) {
    err += std::abs(pred_cells[j] - gt_cells[j]);
  }
  return err;
}

double game(std::span<const Tensor4> densities,
            std::span<const PointAnnotations> points, int level) {
  if (densities.size() != points.size()) {
    throw std::invalid_argument("game: " + std::to_string(densities.size()) +
                                " maps vs " + std::to_string(points.size()) +
                                " annotation lists");
  }
  if (densities.empty()) {
    throw std::invalid_argument("game: empty input");
  }
  double acc = 0.0;
  for (size_t i = 0; i < densities.size(); ++i) {
    acc += game_abs_error(densities[i], points[i], level);
  }
  return acc / double(densities.size());
}

namespace {

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

void append_aggregate(std::ostringstream& os, const std::string& name,
                      const std::optional<SplitAggregate>& agg, int max_level) {
  os << "aggregate\t" << name;
  if (!agg) {
    os << "\tabsent\n";
    return;
  }
  os << "\t" << agg->n;
  for (int l = 0; l <= max_level; ++l) os << "\t" << fmt(agg->game[l]);
  os << "\t" << fmt(agg->rmse) << "\n";
}

}  // namespace

std::string EvalReport::to_text() const {
  std::ostringstream os;
  os << "# tafnet-eval-v1 max_level=" << max_level << "\n";
  os << "# row\tid\tillumination\tgt_count\tpred_count\n";
  for (const EvalRow& r : rows) {
    os << "row\t" << r.id << "\t" << illumination_name(r.illumination) << "\t"
       << fmt(r.gt_count) << "\t" << fmt(r.pred_count) << "\n";
  }
  os << "# aggregate\tsplit\tn\tgame0..game" << max_level << "\trmse\n";
  append_aggregate(os, "all", all, max_level);
  append_aggregate(os, "bright", bright, max_level);
  append_aggregate(os, "dark", dark, max_level);
  return os.str();
}

}  // namespace tafnet
