#include "tafnet/cli.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "tafnet/config.hpp"
#include "tafnet/data.hpp"
#include "tafnet/errors.hpp"
#include "tafnet/grad_suite.hpp"
#include "tafnet/image_io.hpp"
#include "tafnet/model.hpp"
#include "tafnet/trainer.hpp"

namespace tafnet {

namespace {

namespace fs = std::filesystem;

SynthConfig synth_config_from_file(const std::string& path) {
  ConfigReader r(parse_config_file(path), path);
  SynthConfig c;
  const int size = r.get_int("image_size", c.image_h);
  c.image_h = c.image_w = size;
  c.count_min = r.get_int("count_min", c.count_min);
  c.count_max = r.get_int("count_max", c.count_max);
  c.radius_min = r.get_double("radius_min", c.radius_min);
  c.radius_max = r.get_double("radius_max", c.radius_max);
  c.bright_fraction = r.get_double("bright_fraction", c.bright_fraction);
  c.rgb_snr_bright = r.get_double("rgb_snr_bright", c.rgb_snr_bright);
  c.rgb_snr_dark = r.get_double("rgb_snr_dark", c.rgb_snr_dark);
  c.thermal_snr_bright = r.get_double("thermal_snr_bright", c.thermal_snr_bright);
  c.thermal_snr_dark = r.get_double("thermal_snr_dark", c.thermal_snr_dark);
  c.noise_sigma = r.get_double("noise_sigma", c.noise_sigma);
  c.misalignment_max = r.get_double("misalignment_max", c.misalignment_max);
  c.train_count = r.get_int("train_count", c.train_count);
  c.val_count = r.get_int("val_count", c.val_count);
  c.test_count = r.get_int("test_count", c.test_count);
  c.seed = r.get_u64("seed", c.seed);
  r.finish();
  c.validate();
  return c;
}

struct TrainSetup {
  TafnetConfig model;
  TrainConfig train;
};

TrainSetup train_setup_from_file(const std::string& path) {
  ConfigReader r(parse_config_file(path), path);
  TrainSetup s;

  s.model.width_multiplier = r.get_double("width_multiplier", s.model.width_multiplier);
  const int size = r.get_int("input_size", s.model.input_h);
  s.model.input_h = s.model.input_w = size;
  s.model.variant = variant_from_name(r.get_string("variant", variant_name(s.model.variant)));
  if (r.has("pyramid_bins")) {
    s.model.pyramid.bin_sizes.clear();
    std::istringstream bins(r.get_string("pyramid_bins", ""));
    std::string tok;
    while (std::getline(bins, tok, ',')) {
      s.model.pyramid.bin_sizes.push_back(std::stoi(tok));
    }
  }
  s.model.attention.reduction_ratio =
      r.get_int("attention_reduction", s.model.attention.reduction_ratio);
  s.model.attention.spatial_kernel =
      r.get_int("spatial_kernel", s.model.attention.spatial_kernel);
  s.model.gate_init = r.get_double("gate_init", s.model.gate_init);

  s.train.lr = r.get_double("lr", s.train.lr);
  s.train.weight_decay = r.get_double("weight_decay", s.train.weight_decay);
  s.train.max_epochs = r.get_int("max_epochs", s.train.max_epochs);
  s.train.val_start_epoch = r.get_int("val_start_epoch", s.train.val_start_epoch);
  s.train.batch_size = r.get_int("batch_size", s.train.batch_size);
  s.train.beta1 = r.get_double("beta1", s.train.beta1);
  s.train.beta2 = r.get_double("beta2", s.train.beta2);
  s.train.adam_eps = r.get_double("adam_eps", s.train.adam_eps);
  s.train.seed = r.get_u64("seed", s.train.seed);
  s.train.loss = loss_kind_from_name(r.get_string("loss", loss_kind_name(s.train.loss)));
  s.train.sigma = r.get_double("sigma", s.train.sigma);
  s.train.background = r.get_on_off("background", s.train.background);
  s.train.background_margin_frac =
      r.get_double("background_margin_frac", s.train.background_margin_frac);

  r.finish();
  s.model.validate();
  s.train.validate();
  return s;
}

void check_data_matches_model(const TafnetConfig& cfg, const std::vector<ScenePair>& pairs) {
  if (pairs.empty()) return;
  const Shape4 s = pairs[0].rgb.shape;
  if (s.h != cfg.input_h || s.w != cfg.input_w) {
    throw std::invalid_argument("dataset images are " + std::to_string(s.h) + "x" +
                                std::to_string(s.w) + " but input_size is " +
                                std::to_string(cfg.input_h) + "x" +
                                std::to_string(cfg.input_w));
  }
}

int cmd_generate_data(const std::string& config, const std::string& out) {
  const SynthConfig cfg = synth_config_from_file(config);
  generate_dataset(cfg, out);
  std::cout << "wrote " << cfg.train_count << "/" << cfg.val_count << "/"
            << cfg.test_count << " train/val/test pairs to " << out << "\n";
  return 0;
}

int cmd_train(const std::string& config, const std::string& data, const std::string& out,
              bool seed_set, uint64_t seed) {
  TrainSetup setup = train_setup_from_file(config);
  if (seed_set) setup.train.seed = seed;

  const auto train_split = read_split(data, "train");
  const auto val_split = read_split(data, "val");
  const NormStats stats = read_norm_stats(norm_stats_path(data));
  check_data_matches_model(setup.model, train_split);

  TafnetModel model = TafnetModel::build(setup.model, setup.train.seed);
  const TrainResult result = train(model, train_split, val_split, stats, setup.train, out);

  if (result.best_epoch >= 0) {
    std::cout << "best epoch " << result.best_epoch << " val GAME(0) "
              << result.best_val_game0 << "\n";
  } else {
    std::cout << "no validation epochs ran; checkpoint holds final parameters\n";
  }
  std::cout << "checkpoint: " << (fs::path(out) / "best.ckpt").string() << "\n";
  std::cout << "trace: " << (fs::path(out) / "trace.tsv").string() << "\n";
  return 0;
}

int cmd_eval(const std::string& checkpoint, const std::string& data,
             const std::string& split, const std::string& out, bool zero_thermal) {
  const TafnetModel model = load_checkpoint(checkpoint);
  const auto pairs = read_split(data, split);
  const NormStats stats = read_norm_stats(norm_stats_path(data));
  EvalOptions opts;
  opts.zero_thermal = zero_thermal;
  const EvalReport report = evaluate(model, pairs, stats, opts);
  const std::string text = report.to_text();
  std::cout << text;
  if (!out.empty()) {
    std::ofstream f(out, std::ios::trunc);
    if (!f) throw std::runtime_error("eval: cannot open '" + out + "'");
    f << text;
  }
  return 0;
}

int cmd_predict(const std::string& checkpoint, const std::string& rgb_path,
                const std::string& thermal_path, const std::string& data,
                const std::string& out) {
  const TafnetModel model = load_checkpoint(checkpoint);
  const NormStats stats = read_norm_stats(norm_stats_path(data));

  ScenePair pair;
  pair.id = "input";
  pair.rgb = read_ppm(rgb_path);
  pair.thermal = read_pgm(thermal_path);
  auto [rgb, thermal] = normalize_pair(pair, stats);

  const Var density =
      model.forward(nullptr, make_const(std::move(rgb)), make_const(std::move(thermal)));
  const Tensor4& map = *density.value;
  const double count = count_per_item(map)[0];

  fs::create_directories(out);
  double peak = 0.0;
  for (double v : map.data) peak = std::max(peak, v);
  Tensor4 scaled = map;
  if (peak > 0.0) {
    for (double& v : scaled.data) v /= peak;
  }
  write_pgm(scaled, fs::path(out) / "density.pgm");

  std::ofstream grid(fs::path(out) / "density.txt", std::ios::trunc);
  if (!grid) {
    throw std::runtime_error("predict: cannot open '" +
                             (fs::path(out) / "density.txt").string() + "'");
  }
  char buf[64];
  for (int y = 0; y < map.shape.h; ++y) {
    for (int x = 0; x < map.shape.w; ++x) {
      std::snprintf(buf, sizeof(buf), "%.17g", map.at(0, 0, y, x));
      grid << buf << (x + 1 == map.shape.w ? "\n" : " ");
    }
  }

  std::snprintf(buf, sizeof(buf), "%.17g", count);
  std::cout << "count " << buf << "\n";
  return 0;
}

int cmd_grad_check(bool seed_set, uint64_t seed, int num_seeds) {
  const auto entries = run_grad_suite(num_seeds, seed_set ? seed : 1);
  for (const auto& e : entries) {
    std::printf("%-24s max_rel_err %.3e  tol %.0e  %s\n", e.name.c_str(), e.max_rel_err,
                e.tolerance, e.passed() ? "ok" : "FAIL");
  }
  return grad_suite_passed(entries) ? 0 : 2;
}

int cmd_ablate(const std::string& config, const std::string& data, const std::string& out,
               bool seed_set, uint64_t seed) {
  TrainSetup setup = train_setup_from_file(config);
  if (seed_set) setup.train.seed = seed;

  const auto train_split = read_split(data, "train");
  const auto val_split = read_split(data, "val");
  const auto test_split = read_split(data, "test");
  const NormStats stats = read_norm_stats(norm_stats_path(data));
  check_data_matches_model(setup.model, train_split);

  std::ostringstream table;
  table << "# variant\tgame0\tgame1\tgame2\tgame3\trmse\n";
  char buf[64];
  for (Variant v : {Variant::baseline, Variant::iim_no_attn, Variant::full}) {
    TafnetConfig model_cfg = setup.model;
    model_cfg.variant = v;
    const fs::path run_dir = fs::path(out) / variant_name(v);
    TafnetModel model = TafnetModel::build(model_cfg, setup.train.seed);
    train(model, train_split, val_split, stats, setup.train, run_dir);

    const TafnetModel best = load_checkpoint(run_dir / "best.ckpt");
    const EvalReport report = evaluate(best, test_split, stats);
    table << variant_name(v);
    for (int l = 0; l <= 3; ++l) {
      std::snprintf(buf, sizeof(buf), "%.17g", report.all->game[l]);
      table << "\t" << buf;
    }
    std::snprintf(buf, sizeof(buf), "%.17g", report.all->rmse);
    table << "\t" << buf << "\n";
  }

  const std::string text = table.str();
  std::cout << text;
  std::ofstream f(fs::path(out) / "ablation.tsv", std::ios::trunc);
  if (!f) {
    throw std::runtime_error("ablate: cannot open '" +
                             (fs::path(out) / "ablation.tsv").string() + "'");
  }
  f << text;
  return 0;
}

}  // namespace

int run_cli(const std::vector<std::string>& args) {
  CLI::App app{"TAFNet: three-stream RGB-T crowd counting"};
  app.require_subcommand(1);

  std::string config, data, out, checkpoint, split = "test", rgb_path, thermal_path;
  uint64_t seed = 0;
  bool zero_thermal = false;
  int num_seeds = 10;

  auto* gen = app.add_subcommand("generate-data", "Generate a synthetic RGB-T dataset");
  gen->add_option("--config", config, "Synthesis config file")->required();
  gen->add_option("--out", out, "Output dataset directory")->required();

  auto* tr = app.add_subcommand("train", "Train a model");
  tr->add_option("--config", config, "Model+training config file")->required();
  tr->add_option("--data", data, "Dataset directory")->required();
  tr->add_option("--out", out, "Output directory")->required();
  auto* tr_seed = tr->add_option("--seed", seed, "Override the config seed");

  auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint on a split");
  ev->add_option("--checkpoint", checkpoint, "Checkpoint file")->required();
  ev->add_option("--data", data, "Dataset directory")->required();
  ev->add_option("--split", split, "Split name (train|val|test)");
  ev->add_option("--out", out, "Also write the report to this file");
  ev->add_flag("--zero-thermal", zero_thermal, "RGB-only ablation: zero thermal input");

  auto* pr = app.add_subcommand("predict", "Predict a density map for one pair");
  pr->add_option("--checkpoint", checkpoint, "Checkpoint file")->required();
  pr->add_option("--rgb", rgb_path, "RGB image (binary PPM)")->required();
  pr->add_option("--thermal", thermal_path, "Thermal image (binary PGM)")->required();
  pr->add_option("--data", data, "Dataset directory holding normalization.txt")->required();
  pr->add_option("--out", out, "Output directory for density.pgm/density.txt");

  auto* gc = app.add_subcommand("grad-check", "Run the finite-difference gradient suite");
  auto* gc_seed = gc->add_option("--seed", seed, "Base seed");
  gc->add_option("--seeds", num_seeds, "Number of seeds per check");

  auto* ab = app.add_subcommand("ablate", "Train and compare the three variants");
  ab->add_option("--config", config, "Model+training config file")->required();
  ab->add_option("--data", data, "Dataset directory")->required();
  ab->add_option("--out", out, "Output directory")->required();
  auto* ab_seed = ab->add_option("--seed", seed, "Override the config seed");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (gen->parsed()) return cmd_generate_data(config, out);
    if (tr->parsed()) return cmd_train(config, data, out, tr_seed->count() > 0, seed);
    if (ev->parsed()) return cmd_eval(checkpoint, data, split, out, zero_thermal);
    if (pr->parsed()) {
      return cmd_predict(checkpoint, rgb_path, thermal_path, data,
                         out.empty() ? "." : out);
    }
    if (gc->parsed()) return cmd_grad_check(gc_seed->count() > 0, seed, num_seeds);
    if (ab->parsed()) return cmd_ablate(config, data, out, ab_seed->count() > 0, seed);
  } catch (const NumericError& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}

}  // namespace tafnet
