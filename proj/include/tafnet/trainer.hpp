#pragma once

#include <filesystem>
#include <unordered_map>
#include <vector>

#include "tafnet/data.hpp"
#include "tafnet/loss.hpp"
#include "tafnet/metrics.hpp"
#include "tafnet/model.hpp"

namespace tafnet {

enum class LossKind { bayesian, mse_on_gaussian_gt };

std::string loss_kind_name(LossKind k);
LossKind loss_kind_from_name(const std::string& name);

struct TrainConfig {
  double lr = 1e-5;
  double weight_decay = 1e-4;
  int max_epochs = 300;
  int val_start_epoch = 20;  // 1-based; validation runs at every epoch >= this
  int batch_size = 4;
  double beta1 = 0.9, beta2 = 0.999, adam_eps = 1e-8;
  uint64_t seed = 1;
  LossKind loss = LossKind::bayesian;
  double sigma = 8.0;                   // input pixels
  bool background = true;               // Bayesian-loss background class
  double background_margin_frac = 0.15; // margin = frac * min(H, W)

  void validate() const;
};

struct AdamState {
  int64_t t = 0;
  // first/second moment buffers per parameter name
  std::unordered_map<std::string, std::pair<std::vector<double>, std::vector<double>>>
      moments;
};

// Bias-corrected Adam with decoupled weight decay: every parameter is
// scaled by (1 - lr * weight_decay) before the moment update. A non-finite
// gradient aborts with the parameter's name.
void adam_step(ParamStore& params, AdamState& state, const TrainConfig& cfg);

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0.0;
  bool validated = false;
  double val_game0 = 0.0;
  double val_rmse = 0.0;
  bool is_best = false;
};

struct TrainResult {
  std::vector<EpochRecord> trace;
  int best_epoch = -1;  // -1 when validation never ran
  double best_val_game0 = 0.0;
};

// One line per epoch, tab-separated:
//   epoch<TAB>train_loss<TAB>val_game0<TAB>val_rmse<TAB>best
// with "-" for epochs before validation starts and best in {0,1}.
std::string trace_to_text(const std::vector<EpochRecord>& trace);

// Argmin of validation GAME(0) over validated epochs; ties go to the
// earlier epoch. -1 when no epoch was validated.
int best_epoch_of(const std::vector<EpochRecord>& trace);

struct EvalOptions {
  bool zero_thermal = false;  // RGB-only ablation: thermal input read as zeros
  int max_level = 3;
};

EvalReport evaluate(const TafnetModel& model, const std::vector<ScenePair>& split,
                    const NormStats& stats, const EvalOptions& opts = {});

// Shuffled mini-batch epochs; per-epoch shuffle order derives from the
// master seed. From val_start_epoch on, the validation split is scored
// each epoch and the checkpoint is refreshed whenever GAME(0) strictly
// improves (ties keep the earlier epoch). Writes <out>/best.ckpt and
// <out>/trace.tsv; if validation never ran, best.ckpt holds the final
// parameters.
TrainResult train(TafnetModel& model, const std::vector<ScenePair>& train_split,
                  const std::vector<ScenePair>& val_split, const NormStats& stats,
                  const TrainConfig& cfg, const std::filesystem::path& out_dir);

}  // namespace tafnet
