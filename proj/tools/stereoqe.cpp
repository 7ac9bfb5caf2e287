// Copyright 2026 The stereoqe Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// stereoqe: dataset preparation, correlation analysis, training, enhancement
// and evaluation for stereo image quality enhancement.

#include <CLI11.hpp>

#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "stereoqe/core/error.hpp"
#include "stereoqe/core/log.hpp"
#include "stereoqe/correlation/correlation.hpp"
#include "stereoqe/data/stereo_data.hpp"
#include "stereoqe/image/image_io.hpp"
#include "stereoqe/metrics/metrics.hpp"
#include "stereoqe/nn/checkpoint.hpp"
#include "stereoqe/nn/inference.hpp"
#include "stereoqe/train/training.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace stereoqe;

namespace {

// The one line on stdout a script can parse; everything else goes to stderr.
void summary(json j) {
  j["status"] = "ok";
  std::cout << j.dump() << std::endl;
}

void echo(const std::string& command, const std::vector<std::pair<std::string, std::string>>& kv) {
  log::info(command + " effective configuration:");
  for (const auto& [k, v] : kv) log::info("  " + k + " = " + v);
}

std::vector<int> qf_list(const std::string& s) { return train::parse_int_list(s); }

struct PrepareArgs {
  fs::path input_dir, output_dir, manifest;
  std::string qf = "30,40,50,60";
  std::uint64_t seed = 0;
  int train = 800, test = 100;
};

int run_prepare(const PrepareArgs& a) {
  const auto manifest_path = a.manifest.empty() ? a.output_dir / "manifest.json" : a.manifest;
  echo("prepare", {{"input_dir", a.input_dir.string()},
                   {"output_dir", a.output_dir.string()},
                   {"manifest", manifest_path.string()},
                   {"qf", a.qf},
                   {"seed", std::to_string(a.seed)},
                   {"train", std::to_string(a.train)},
                   {"test", std::to_string(a.test)}});
  const auto m = data::build_dataset(a.input_dir, a.output_dir, qf_list(a.qf), a.seed, a.train, a.test);
  data::save_manifest(m, manifest_path);
  log::info("wrote " + manifest_path.string());
  summary({{"command", "prepare"},
           {"manifest", manifest_path.string()},
           {"pairs", m.entries.size()},
           {"train", m.counts.train},
           {"test", m.counts.test},
           {"unused", m.counts.unused},
           {"qfs", m.qfs}});
  return 0;
}

struct AnalyzeArgs {
  fs::path manifest, out;
  int patch_size = 128, bins = 256;
  std::string log_base = "2";
};

int run_analyze(const AnalyzeArgs& a) {
  const auto base = correlation::log_base_from_string(a.log_base);
  echo("analyze", {{"manifest", a.manifest.string()},
                   {"patch_size", std::to_string(a.patch_size)},
                   {"bins", std::to_string(a.bins)},
                   {"log_base", a.log_base},
                   {"out", a.out.string()}});
  const auto m = data::load_manifest(a.manifest);
  const auto r = correlation::analyze(m, a.patch_size, a.bins, base);
  correlation::write_csv(r, a.out);
  summary({{"command", "analyze"},
           {"out", a.out.string()},
           {"intra_cc", r.intra_cc},
           {"intra_mi", r.intra_mi},
           {"cross_cc", r.cross_cc},
           {"cross_mi", r.cross_mi},
           {"n_pairs_intra", r.n_pairs_intra},
           {"n_pairs_cross", r.n_pairs_cross}});
  return 0;
}

struct TrainArgs {
  fs::path manifest, config, out_dir, resume;
  std::optional<std::string> variant, qf;
  bool ablate = false;
  std::optional<std::uint64_t> seed;
  std::optional<int> epochs, batch_size, crop_size;
  std::optional<double> lr, grad_clip;
};

int run_train(const TrainArgs& a) {
  // Defaults, then the config file, then explicit flags.
  train::TrainConfig c = a.config.empty() ? train::TrainConfig{} : train::load_config(a.config);
  if (a.variant) c.variant = *a.variant;
  if (a.ablate) c.ablate_attention = true;
  if (a.seed) c.seed = *a.seed;
  if (a.epochs) c.max_epochs = *a.epochs;
  if (a.batch_size) c.batch_size = *a.batch_size;
  if (a.crop_size) c.crop_size = *a.crop_size;
  if (a.lr) c.lr_initial = *a.lr;
  if (a.grad_clip) c.grad_clip = *a.grad_clip;
  if (a.qf) c.qf_set = qf_list(*a.qf);
  c.validate();

  auto kv = train::to_key_values(c);
  kv.insert(kv.begin(), {{"manifest", a.manifest.string()}, {"out_dir", a.out_dir.string()}});
  if (!a.resume.empty()) kv.emplace_back("resume", a.resume.string());
  echo("train", kv);

  const auto m = data::load_manifest(a.manifest);
  train::LoopOptions opt;
  opt.out_dir = a.out_dir;
  if (!a.resume.empty()) opt.resume = train::load_checkpoint(a.resume);
  fs::create_directories(a.out_dir);
  {
    std::ofstream cfg(a.out_dir / "config.txt", std::ios::trunc);
    if (!cfg) throw IoError("cannot write " + (a.out_dir / "config.txt").string());
    cfg << train::format_config(c);
  }
  int last_epoch = -1;
  double epoch_sum = 0;
  int epoch_steps = 0;
  opt.on_step = [&](const train::StepLog& s) {
    if (s.epoch != last_epoch && epoch_steps > 0) {
      log::info("epoch " + std::to_string(last_epoch) + " mean loss " + std::to_string(epoch_sum / epoch_steps));
      epoch_sum = 0;
      epoch_steps = 0;
    }
    last_epoch = s.epoch;
    epoch_sum += s.loss;
    ++epoch_steps;
    log::debug("epoch " + std::to_string(s.epoch) + " step " + std::to_string(s.step) + " lr " +
               std::to_string(s.lr) + " loss " + std::to_string(s.loss));
  };
  const auto ck = train::train_loop(m, c, opt);
  if (epoch_steps > 0) {
    log::info("epoch " + std::to_string(last_epoch) + " mean loss " + std::to_string(epoch_sum / epoch_steps));
  }
  summary({{"command", "train"},
           {"checkpoint", (a.out_dir / "last.sqeckpt").string()},
           {"epochs", ck.epoch},
           {"steps", ck.global_step},
           {"final_loss", ck.loss_history.empty() ? json(nullptr) : json(ck.loss_history.back())},
           {"best_loss", ck.loss_history.empty() ? json(nullptr) : json(ck.best_loss)},
           {"params", nn::count_params(ck.weights.arch)}});
  return 0;
}

struct EnhanceArgs {
  fs::path checkpoint, left, right, out_left, out_right;
  int tile_rows = 0;
};

int run_enhance(const EnhanceArgs& a) {
  echo("enhance", {{"checkpoint", a.checkpoint.string()},
                   {"left", a.left.string()},
                   {"right", a.right.string()},
                   {"out_left", a.out_left.string()},
                   {"out_right", a.out_right.string()},
                   {"tile_rows", std::to_string(a.tile_rows)}});
  const auto left = read_image(a.left), right = read_image(a.right);
  if (left.height != right.height || left.width != right.width) {
    throw ValidationError("left view " + a.left.string() + " is " + left.dims() + " but right view " +
                          a.right.string() + " is " + right.dims());
  }
  const auto w = nn::load_weights(a.checkpoint);
  nn::InferenceOptions opt;
  opt.tile_rows = a.tile_rows;
  const auto [ol, orr] = nn::enhance(left, right, w, opt);
  write_image(a.out_left, ol);
  write_image(a.out_right, orr);
  summary({{"command", "enhance"},
           {"out_left", a.out_left.string()},
           {"out_right", a.out_right.string()},
           {"height", left.height},
           {"width", left.width},
           {"variant", w.arch.variant}});
  return 0;
}

struct EvaluateArgs {
  fs::path checkpoint, manifest, csv;
  std::string qf, channels = "rgb";
  bool baseline = false;
  int tile_rows = 0;
};

int run_evaluate(const EvaluateArgs& a) {
  if (a.checkpoint.empty() == !a.baseline) {
    throw ValidationError("evaluate needs exactly one of --checkpoint or --baseline");
  }
  if (a.channels != "rgb" && a.channels != "luma") throw ValidationError("--channels must be rgb or luma");
  const auto mode = a.channels == "rgb" ? metrics::Channels::kRgb : metrics::Channels::kLuma;
  const auto m = data::load_manifest(a.manifest);
  const auto qfs = a.qf.empty() ? m.qfs : qf_list(a.qf);
  echo("evaluate", {{"checkpoint", a.baseline ? "(compressed inputs)" : a.checkpoint.string()},
                    {"manifest", a.manifest.string()},
                    {"qf", train::detail::join_ints(qfs)},
                    {"channels", a.channels},
                    {"csv", a.csv.string()}});
  metrics::MetricsTable t;
  std::string model = "baseline";
  if (a.baseline) {
    t = metrics::evaluate(m, qfs, metrics::identity_enhancer, mode);
  } else {
    const auto w = nn::load_weights(a.checkpoint);
    model = w.arch.variant + (w.arch.ablate_attention ? "-ablated" : "");
    nn::InferenceOptions opt;
    opt.tile_rows = a.tile_rows;
    t = metrics::evaluate_model(w, m, qfs, mode, opt);
  }
  metrics::write_csv(t, a.csv);
  json per_qf = json::object();
  for (int qf : t.qfs()) {
    const auto& g = t.at(metrics::View::kAvg, qf);
    per_qf[std::to_string(qf)] = {{"psnr_db", g.psnr_db}, {"ssim", g.ssim}, {"bpp", g.bpp}};
    log::info("qf " + std::to_string(qf) + ": psnr " + std::to_string(g.psnr_db) + " dB, ssim " +
              std::to_string(g.ssim) + ", bpp " + std::to_string(g.bpp));
  }
  summary({{"command", "evaluate"}, {"csv", a.csv.string()}, {"model", model}, {"aggregate", per_qf}});
  return 0;
}

struct PlotArgs {
  fs::path csv, out, svg, manifest;
};

int run_plot_rd(const PlotArgs& a) {
  fs::path points = a.out, svg = a.svg;
  if (a.out.extension() == ".svg") {
    svg = a.out;
    points = fs::path(a.out).replace_extension(".txt");
  }
  echo("plot-rd", {{"csv", a.csv.string()},
                   {"manifest", a.manifest.empty() ? "(bpp from csv)" : a.manifest.string()},
                   {"points", points.string()},
                   {"svg", svg.empty() ? "(none)" : svg.string()}});
  const auto t = metrics::read_csv(a.csv);
  const auto pts = a.manifest.empty() ? metrics::rd_points(t) : metrics::rd_points(t, data::load_manifest(a.manifest));
  metrics::write_rd_points(pts, points);
  if (!svg.empty()) metrics::write_rd_svg(pts, svg);
  json jp = json::array();
  for (const auto& p : pts) jp.push_back({{"qf", p.qf}, {"bpp", p.bpp}, {"psnr_db", p.psnr_db}});
  summary({{"command", "plot-rd"},
           {"points_file", points.string()},
           {"svg", svg.empty() ? json(nullptr) : json(svg.string())},
           {"points", jp}});
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Stereo image quality enhancement toolkit"};
  app.name("stereoqe");
  app.require_subcommand(1);
  app.footer("Environment: MARSSQE_LOG=error|info|debug sets log verbosity (default info).\n"
             "Exit codes: 0 success, 1 validation error, 2 I/O error, 3 training divergence.");

  PrepareArgs pa;
  auto* prepare = app.add_subcommand("prepare", "Compress a raw stereo corpus and write a split manifest");
  prepare->add_option("--input-dir", pa.input_dir, "Directory with one <pair_id>/{left,right}.png per pair")->required();
  prepare->add_option("--output-dir", pa.output_dir, "Destination for JPEG files and the manifest")->required();
  prepare->add_option("--manifest", pa.manifest, "Manifest path (default <output-dir>/manifest.json)");
  prepare->add_option("--qf", pa.qf, "Comma-separated JPEG quality factors from {30,40,50,60}")->capture_default_str();
  prepare->add_option("--seed", pa.seed, "Split seed")->capture_default_str();
  prepare->add_option("--train", pa.train, "Number of training pairs")->capture_default_str();
  prepare->add_option("--test", pa.test, "Number of test pairs")->capture_default_str();

  AnalyzeArgs aa;
  auto* analyze = app.add_subcommand("analyze", "Intra-view vs cross-view patch correlation report");
  analyze->add_option("--manifest", aa.manifest, "Dataset manifest")->required();
  analyze->add_option("--patch-size", aa.patch_size, "Square patch size in pixels")->capture_default_str();
  analyze->add_option("--bins", aa.bins, "Histogram bins for mutual information")->capture_default_str();
  analyze->add_option("--log-base", aa.log_base, "Logarithm base for MI: 2 (bits) or e (nats)")->capture_default_str();
  analyze->add_option("--out", aa.out, "Report CSV")->required();

  TrainArgs ta;
  auto* train_cmd = app.add_subcommand("train", "Train an enhancement model");
  train_cmd->add_option("--manifest", ta.manifest, "Dataset manifest")->required();
  train_cmd->add_option("--out-dir", ta.out_dir, "Checkpoint and log directory")->required();
  train_cmd->add_option("--config", ta.config, "key = value config file; flags override it");
  train_cmd->add_option("--variant", ta.variant, "Model size: L, M or S");
  train_cmd->add_flag("--ablate-attention", ta.ablate, "Remove the stereo attention modules");
  train_cmd->add_option("--seed", ta.seed, "Seed for initialization and crop sampling");
  train_cmd->add_option("--epochs", ta.epochs, "Maximum number of epochs");
  train_cmd->add_option("--batch-size", ta.batch_size, "Crops per step");
  train_cmd->add_option("--crop-size", ta.crop_size, "Training crop size (multiple of 16)");
  train_cmd->add_option("--lr", ta.lr, "Initial learning rate");
  train_cmd->add_option("--grad-clip", ta.grad_clip, "Global gradient norm clip (0 disables)");
  train_cmd->add_option("--qf", ta.qf, "Comma-separated quality factors to train on");
  train_cmd->add_option("--resume", ta.resume, "Training checkpoint to continue from");

  EnhanceArgs ea;
  auto* enhance = app.add_subcommand("enhance", "Enhance one compressed stereo pair");
  enhance->add_option("--checkpoint", ea.checkpoint, "Model weights or training checkpoint")->required();
  enhance->add_option("--left", ea.left, "Left view image (PNG or JPEG)")->required();
  enhance->add_option("--right", ea.right, "Right view image (PNG or JPEG)")->required();
  enhance->add_option("--out-left", ea.out_left, "Enhanced left view output")->required();
  enhance->add_option("--out-right", ea.out_right, "Enhanced right view output")->required();
  enhance->add_option("--tile-rows", ea.tile_rows, "Rows per tile; 0 automatic, negative disables tiling")
      ->capture_default_str();

  EvaluateArgs va;
  auto* evaluate = app.add_subcommand("evaluate", "PSNR/SSIM/bpp table over the test split");
  evaluate->add_option("--checkpoint", va.checkpoint, "Model weights or training checkpoint");
  evaluate->add_flag("--baseline", va.baseline, "Score the compressed inputs without enhancement");
  evaluate->add_option("--manifest", va.manifest, "Dataset manifest")->required();
  evaluate->add_option("--qf", va.qf, "Comma-separated quality factors (default: all in the manifest)");
  evaluate->add_option("--channels", va.channels, "rgb or luma")->capture_default_str();
  evaluate->add_option("--csv", va.csv, "Metrics CSV output")->required();
  evaluate->add_option("--tile-rows", va.tile_rows, "Rows per tile; 0 automatic, negative disables tiling")
      ->capture_default_str();

  PlotArgs pl;
  auto* plot = app.add_subcommand("plot-rd", "Rate-distortion points from a metrics CSV");
  plot->add_option("--csv", pl.csv, "Metrics CSV from evaluate")->required();
  plot->add_option("--out", pl.out, "Points file; a .svg name also renders a plot")->required();
  plot->add_option("--svg", pl.svg, "Additional rendered plot");
  plot->add_option("--manifest", pl.manifest, "Take bpp from the manifest's compressed inputs");

  if (argc > 1 && argv[1][0] != '-' && app.get_subcommand_no_throw(argv[1]) == nullptr) {
    std::cerr << "error: unknown subcommand '" << argv[1] << "'\n\n" << app.help();
    return static_cast<int>(ExitCode::kValidation);
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n\n" << app.help();
    return static_cast<int>(ExitCode::kValidation);
  }

  try {
    if (*prepare) return run_prepare(pa);
    if (*analyze) return run_analyze(aa);
    if (*train_cmd) return run_train(ta);
    if (*enhance) return run_enhance(ea);
    if (*evaluate) return run_evaluate(va);
    if (*plot) return run_plot_rd(pl);
  } catch (const Error& e) {
    log::error(e.what());
    return static_cast<int>(e.exit_code());
  } catch (const fs::filesystem_error& e) {
    log::error(e.what());
    return static_cast<int>(ExitCode::kIo);
  } catch (const std::exception& e) {
    log::error(std::string("unexpected failure: ") + e.what());
    return static_cast<int>(ExitCode::kValidation);
  }
  return static_cast<int>(ExitCode::kValidation);
}
