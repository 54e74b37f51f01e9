#include "tafnet/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>

#include "tafnet/errors.hpp"
#include "tafnet/ops.hpp"

namespace tafnet {

std::string loss_kind_name(LossKind k) {
  return k == LossKind::bayesian ? "bayesian" : "mse_on_gaussian_gt";
}

LossKind loss_kind_from_name(const std::string& name) {
  if (name == "bayesian") return LossKind::bayesian;
  if (name == "mse_on_gaussian_gt") return LossKind::mse_on_gaussian_gt;
  throw std::invalid_argument("loss: expected bayesian|mse_on_gaussian_gt, got '" +
                              name + "'");
}

void TrainConfig::validate() const {
  if (!(lr > 0.0)) throw std::invalid_argument("TrainConfig: lr must be > 0");
  if (weight_decay < 0.0) {
    throw std::invalid_argument("TrainConfig: weight_decay must be >= 0");
  }
  if (max_epochs < 0) throw std::invalid_argument("TrainConfig: max_epochs must be >= 0");
  if (val_start_epoch > max_epochs) {
    throw std::invalid_argument("TrainConfig: val_start_epoch " +
                                std::to_string(val_start_epoch) + " exceeds max_epochs " +
                                std::to_string(max_epochs));
  }
  if (batch_size < 1) throw std::invalid_argument("TrainConfig: batch_size must be >= 1");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
    throw std::invalid_argument("TrainConfig: betas must be in [0,1)");
  }
  if (!(adam_eps > 0.0)) throw std::invalid_argument("TrainConfig: adam_eps must be > 0");
  if (!(sigma > 0.0)) throw std::invalid_argument("TrainConfig: sigma must be > 0");
  if (!(background_margin_frac > 0.0)) {
    throw std::invalid_argument("TrainConfig: background_margin_frac must be > 0");
  }
}

void adam_step(ParamStore& params, AdamState& state, const TrainConfig& cfg) {
  state.t += 1;
  const double bc1 = 1.0 - std::pow(cfg.beta1, double(state.t));
  const double bc2 = 1.0 - std::pow(cfg.beta2, double(state.t));
  const double decay = 1.0 - cfg.lr * cfg.weight_decay;

  for (Parameter* p : params.all()) {
    const auto& g = p->grad().data;
    for (double gv : g) {
      if (!std::isfinite(gv)) {
        throw NumericError("adam_step: non-finite gradient in parameter '" + p->name +
                           "'");
      }
    }

    auto& [m, v] = state.moments[p->name];
    if (m.empty()) {
      m.assign(g.size(), 0.0);
      v.assign(g.size(), 0.0);
    }
    auto& theta = p->value().data;
    for (size_t i = 0; i < g.size(); ++i) {
      if (cfg.weight_decay != 0.0) theta[i] *= decay;
      m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
      v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      theta[i] -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.adam_eps);
    }
  }
}

std::string trace_to_text(const std::vector<EpochRecord>& trace) {
  std::ostringstream os;
  os << "# epoch\ttrain_loss\tval_game0\tval_rmse\tbest\n";
  char buf[64];
  for (const EpochRecord& r : trace) {
    os << r.epoch << "\t";
    std::snprintf(buf, sizeof(buf), "%.17g", r.train_loss);
    os << buf;
    if (r.validated) {
      std::snprintf(buf, sizeof(buf), "%.17g", r.val_game0);
      os << "\t" << buf;
      std::snprintf(buf, sizeof(buf), "%.17g", r.val_rmse);
      os << "\t" << buf;
      os << "\t" << (r.is_best ? 1 : 0);
    } else {
      os << "\t-\t-\t0";
    }
    os << "\n";
  }
  return os.str();
}

int best_epoch_of(const std::vector<EpochRecord>& trace) {
  int best = -1;
  double best_game0 = 0.0;
  for (const EpochRecord& r : trace) {
    if (!r.validated) continue;
    if (best < 0 || r.val_game0 < best_game0) {
      best = r.epoch;
      best_game0 = r.val_game0;
    }
  }
  return best;
}

namespace {

struct Batch {
  Var rgb;
  Var thermal;
  std::vector<const PointAnnotations*> points;
};

Batch make_batch(const std::vector<ScenePair>& pairs, const std::vector<size_t>& order,
                 size_t begin, size_t end, const NormStats& stats, bool zero_thermal) {
  const ScenePair& first = pairs[order[begin]];
  const int h = first.rgb.shape.h, w = first.rgb.shape.w;
  const int b = int(end - begin);
  Tensor4 rgb(Shape4{b, 3, h, w});
  Tensor4 thermal(Shape4{b, 1, h, w});
  Batch batch;
  for (int i = 0; i < b; ++i) {
    const ScenePair& p = pairs[order[begin + i]];
    check_shape(p.rgb.shape.h == h && p.rgb.shape.w == w,
                "batch: image sizes disagree (" + first.id + " vs " + p.id + ")");
    auto [nr, nt] = normalize_pair(p, stats);
    std::copy(nr.data.begin(), nr.data.end(), rgb.data.begin() + size_t(i) * nr.size());
    if (!zero_thermal) {
      std::copy(nt.data.begin(), nt.data.end(),
                thermal.data.begin() + size_t(i) * nt.size());
    }
    batch.points.push_back(&p.points);
  }
  batch.rgb = make_const(std::move(rgb));
  batch.thermal = make_const(std::move(thermal));
  return batch;
}

}  // namespace

EvalReport evaluate(const TafnetModel& model, const std::vector<ScenePair>& split,
                    const NormStats& stats, const EvalOptions& opts) {
  if (split.empty()) {
    throw std::invalid_argument("evaluate: empty split");
  }
  if (opts.max_level < 0 || opts.max_level > 3) {
    throw std::invalid_argument("evaluate: max_level must be in 0..3");
  }

  EvalReport report;
  report.max_level = opts.max_level;

  struct Acc {
    int n = 0;
    std::array<double, 4> game_sum{};
    double sq_sum = 0.0;
  };
  Acc acc_all, acc_bright, acc_dark;

  std::vector<size_t> order(split.size());
  std::iota(order.begin(), order.end(), 0);
  for (size_t i = 0; i < split.size(); ++i) {
    const ScenePair& pair = split[i];
    Batch batch = make_batch(split, order, i, i + 1, stats, opts.zero_thermal);
    const Var density = model.forward(nullptr, batch.rgb, batch.thermal);
    const Tensor4& map = *density.value;

    const int stride_h = pair.rgb.shape.h / map.shape.h;
    const int stride_w = pair.rgb.shape.w / map.shape.w;
    PointAnnotations pts_map;
    pts_map.reserve(pair.points.size());
    for (const Point& p : pair.points) {
      pts_map.push_back(Point{p.x / stride_w, p.y / stride_h});
    }

    EvalRow row;
    row.id = pair.id;
    row.illumination = pair.illumination;
    row.gt_count = double(pair.points.size());
    row.pred_count = count_per_item(map)[0];
    report.rows.push_back(row);

    const double diff = row.pred_count - row.gt_count;
    for (Acc* a : {&acc_all, pair.illumination == Illumination::bright ? &acc_bright
                                                                       : &acc_dark}) {
      a->n += 1;
      a->sq_sum += diff * diff;
      for (int l = 0; l <= opts.max_level; ++l) {
        a->game_sum[l] += game_abs_error(map, pts_map, l);
      }
    }
  }

  auto finish = [&](const Acc& a) -> std::optional<SplitAggregate> {
    if (a.n == 0) return std::nullopt;
    SplitAggregate s;
    s.n = a.n;
    for (int l = 0; l <= opts.max_level; ++l) s.game[l] = a.game_sum[l] / a.n;
    s.rmse = std::sqrt(a.sq_sum / a.n);
    return s;
  };
  report.all = finish(acc_all);
  report.bright = finish(acc_bright);
  report.dark = finish(acc_dark);
  return report;
}

TrainResult train(TafnetModel& model, const std::vector<ScenePair>& train_split,
                  const std::vector<ScenePair>& val_split, const NormStats& stats,
                  const TrainConfig& cfg, const std::filesystem::path& out_dir) {
  cfg.validate();
  if (train_split.empty()) throw std::invalid_argument("train: empty training split");
  if (val_split.empty()) throw std::invalid_argument("train: empty validation split");
  std::filesystem::create_directories(out_dir);

  const int input_h = train_split[0].rgb.shape.h;
  const int input_w = train_split[0].rgb.shape.w;
  BayesLossOptions bl;
  bl.sigma = cfg.sigma;
  bl.use_background = cfg.background;
  bl.background_margin = cfg.background_margin_frac * std::min(input_h, input_w);
  bl.stride = 8;

  AdamState adam;
  TrainResult result;
  const size_t n = train_split.size();

  for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    std::vector<size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    Rng shuffle_rng(mix_seed(mix_seed(cfg.seed, 0x5AFE11FFULL), uint64_t(epoch)));
    shuffle_rng.shuffle(order);

    double loss_sum = 0.0;
    int batch_index = 0;
    for (size_t begin = 0; begin < n; begin += size_t(cfg.batch_size), ++batch_index) {
      const size_t end = std::min(begin + size_t(cfg.batch_size), n);
      const int b = int(end - begin);
      Batch batch = make_batch(train_split, order, begin, end, stats, false);

      Tape tape;
      Var density = model.forward(&tape, batch.rgb, batch.thermal);

      Var loss;
      if (cfg.loss == LossKind::bayesian) {
        Var acc;
        for (int i = 0; i < b; ++i) {
          Var item = ops::select_item(&tape, density, i);
          Var li = bayesian_loss(&tape, item, *batch.points[i], bl);
          acc = i == 0 ? li : ops::add(&tape, acc, li);
        }
        loss = ops::scale_scalar(&tape, acc, make_const(Tensor4::scalar(1.0 / b)));
      } else {
        const Shape4 ms = density.shape();
        Tensor4 gt(ms);
        for (int i = 0; i < b; ++i) {
          PointAnnotations pts_map;
          for (const Point& p : *batch.points[i]) {
            pts_map.push_back(Point{p.x / 8.0, p.y / 8.0});
          }
          Tensor4 g = gaussian_density_gt(pts_map, ms.h, ms.w, cfg.sigma / 8.0);
          std::copy(g.data.begin(), g.data.end(), gt.data.begin() + size_t(i) * g.size());
        }
        Var diff = ops::sub(&tape, density, make_const(std::move(gt)));
        Var sq = ops::mul(&tape, diff, diff);
        loss = ops::scale_scalar(&tape, ops::sum_all(&tape, sq),
                                 make_const(Tensor4::scalar(1.0 / double(ms.numel()))));
      }

      const double loss_value = loss.value->data[0];
      if (!std::isfinite(loss_value)) {
        throw NumericError("train: non-finite loss at epoch " + std::to_string(epoch) +
                           ", batch " + std::to_string(batch_index));
      }
      loss_sum += loss_value * b;

      model.params.zero_grads();
      tape.backward(loss);
      try {
        adam_step(model.params, adam, cfg);
      } catch (const NumericError& e) {
        throw NumericError(std::string(e.what()) + " (epoch " + std::to_string(epoch) +
                           ")");
      }
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = loss_sum / double(n);
    if (epoch >= cfg.val_start_epoch) {
      EvalOptions eopts;
      const EvalReport val_report = evaluate(model, val_split, stats, eopts);
      rec.validated = true;
      rec.val_game0 = val_report.all->game[0];
      rec.val_rmse = val_report.all->rmse;
      if (result.best_epoch < 0 || rec.val_game0 < result.best_val_game0) {
        result.best_epoch = epoch;
        result.best_val_game0 = rec.val_game0;
        rec.is_best = true;
        save_checkpoint(model, out_dir / "best.ckpt");
      }
    }
    result.trace.push_back(rec);
  }

  if (result.best_epoch < 0) {
    save_checkpoint(model, out_dir / "best.ckpt");
  }

  std::ofstream trace_file(out_dir / "trace.tsv", std::ios::trunc);
  if (!trace_file) {
    throw std::runtime_error("train: cannot open '" + (out_dir / "trace.tsv").string() +
                             "'");
  }
  trace_file << trace_to_text(result.trace);
  return result;
}

}  // namespace tafnet
