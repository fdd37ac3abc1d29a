/* Copyright 2026 The gwap Authors.
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

// Command-line entry point. Exit codes: 0 success, 1 runtime failure
// (I/O, numerics), 2 usage or validation error.

#include <cstdio>
#include <deque>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <system_error>
#include <utility>
#include <vector>

#include "CLI11.hpp"
#include "gwap/config.hpp"
#include "gwap/dataset.hpp"
#include "gwap/eval.hpp"
#include "gwap/image_io.hpp"
#include "gwap/model.hpp"
#include "gwap/synth.hpp"
#include "gwap/train.hpp"

namespace {

namespace fs = std::filesystem;
using gwap::Config;

/// Collects a subcommand's options into a Config. Every value option is
/// declared as a string and layered onto the file config after parsing, so
/// conversion and validation happen in Config's typed getters, and flags
/// given on the command line win over file values.
class OptionSink {
 public:
  explicit OptionSink(CLI::App* app) : app_(app) {
    app_->add_option("--config", config_path_,
                     "flat key = value config file; command-line flags win");
  }

  OptionSink(const OptionSink&) = delete;
  OptionSink& operator=(const OptionSink&) = delete;

  void opt(const std::string& flag, const std::string& key,
           const std::string& help) {
    storage_.emplace_back();
    opts_.push_back(Opt{app_->add_option(flag, storage_.back(), help), key,
                        &storage_.back()});
  }

  /// Paired --name / --no-name switches mapping to key = true / false.
  void flag(const std::string& name, const std::string& key,
            const std::string& help) {
    CLI::Option* pos = app_->add_flag("--" + name)->description(help);
    CLI::Option* neg =
        app_->add_flag("--no-" + name)->description("disable " + name);
    pos->excludes(neg);
    flags_.push_back(Flag{pos, neg, key});
  }

  Config build() const {
    Config cfg;
    if (!config_path_.empty()) cfg = Config::from_file(config_path_);
    for (const Opt& o : opts_) {
      if (o.option->count() > 0) cfg.set(o.key, *o.cell);
    }
    for (const Flag& f : flags_) {
      if (f.pos->count() > 0) cfg.set(f.key, "true");
      if (f.neg->count() > 0) cfg.set(f.key, "false");
    }
    return cfg;
  }

 private:
  struct Opt {
    CLI::Option* option;
    std::string key;
    std::string* cell;
  };
  struct Flag {
    CLI::Option* pos;
    CLI::Option* neg;
    std::string key;
  };

  CLI::App* app_;
  std::string config_path_;
  std::deque<std::string> storage_;  // stable addresses for CLI11 bindings
  std::vector<Opt> opts_;
  std::vector<Flag> flags_;
};

int to_exit_code(const std::exception& e) {
  std::fprintf(stderr, "gwap: %s\n", e.what());
  return dynamic_cast<const gwap::ValidationError*>(&e) ? 2 : 1;
}

std::vector<std::string> split_csv(const std::string& s) {
  std::vector<std::string> out;
  std::string cur;
  for (const char c : s) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

std::vector<int> parse_scales(const std::string& s) {
  std::vector<int> scales;
  for (const std::string& tok : split_csv(s)) {
    try {
      std::size_t pos = 0;
      scales.push_back(std::stoi(tok, &pos));
      if (pos != tok.size()) throw std::invalid_argument(tok);
    } catch (const std::exception&) {
      throw gwap::ValidationError("bad scale '" + tok +
                                  "', want a comma-separated integer list");
    }
  }
  return scales;
}

void write_text_file(const std::string& path, const std::string& content) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f ||
      !f.write(content.data(), static_cast<std::streamsize>(content.size()))) {
    throw gwap::IoError(path + ": cannot write");
  }
}

void create_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) {
    throw gwap::IoError(dir + ": cannot create directory: " + ec.message());
  }
}

/// Writes the checkpoint next to its target and renames it into place, so
/// an interrupted run never leaves a truncated file under the final name.
void save_checkpoint_atomic(const gwap::Model<float>& model,
                            const std::string& path) {
  const std::string tmp = path + ".tmp";
  gwap::save_checkpoint(model, tmp);
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) {
    throw gwap::IoError(path + ": cannot replace checkpoint: " + ec.message());
  }
}

// ---------------------------------------------------------------------------
// synth
// ---------------------------------------------------------------------------

int cmd_synth(const Config& cfg, const std::string& out_dir) {
  gwap::SynthSpec spec;
  spec.size = static_cast<int>(cfg.get_int("size", spec.size));
  spec.count = static_cast<int>(cfg.get_int("n", spec.count));
  spec.seed = cfg.get_uint("seed", spec.seed);
  spec.min_objects =
      static_cast<int>(cfg.get_int("min_objects", spec.min_objects));
  spec.max_objects =
      static_cast<int>(cfg.get_int("max_objects", spec.max_objects));
  spec.noise_amp = cfg.get_double("noise_amp", spec.noise_amp);
  spec.texture_amp = cfg.get_double("texture_amp", spec.texture_amp);
  spec.texture_period = cfg.get_double("texture_period", spec.texture_period);
  spec.distractors = cfg.get_bool("distractors", spec.distractors);
  const std::string classes = cfg.get_string("classes", "");
  if (!classes.empty()) {
    spec.class_names = split_csv(classes);
    for (const std::string& name : spec.class_names) {
      if (name.empty()) {
        throw gwap::ValidationError("synth: empty class name in '" + classes +
                                    "'");
      }
    }
  }
  cfg.require_known();

  const gwap::DatasetManifest manifest = gwap::generate_dataset(spec, out_dir);
  std::printf("wrote %zu samples to %s (classes:", manifest.samples.size(),
              out_dir.c_str());
  for (const std::string& c : manifest.class_names) {
    std::printf(" %s", c.c_str());
  }
  std::printf(")\n");
  return 0;
}

// ---------------------------------------------------------------------------
// split
// ---------------------------------------------------------------------------

int cmd_split(const Config& cfg, const std::string& manifest_path) {
  const double fraction = cfg.get_double("fraction", 0.05);
  const std::uint64_t seed = cfg.get_uint("seed", 0);
  const fs::path base(manifest_path);
  const std::string stem = (base.parent_path() / base.stem()).string();
  const std::string out_boxed =
      cfg.get_string("out_boxed", stem + "_boxed.tsv");
  const std::string out_weak = cfg.get_string("out_weak", stem + "_weak.tsv");
  cfg.require_known();

  const gwap::DatasetManifest manifest = gwap::load_manifest(manifest_path);
  const auto [boxed, weak] = gwap::split_dataset(manifest, fraction, seed);
  gwap::save_manifest(boxed, out_boxed);
  gwap::save_manifest(weak, out_weak);
  std::printf("boxed: %zu samples -> %s\nweak: %zu samples -> %s\n",
              boxed.samples.size(), out_boxed.c_str(), weak.samples.size(),
              out_weak.c_str());
  return 0;
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

int cmd_train(const Config& cfg, const std::string& data_path,
              const std::string& out_dir) {
  const std::string preset = cfg.get_string("preset", "desk");
  gwap::TrainConfig tc;
  if (preset == "desk") {
    tc = gwap::TrainConfig::desk();
  } else if (preset == "reference") {
    tc = gwap::TrainConfig::reference();
  } else {
    throw gwap::ValidationError("train: preset must be desk or reference");
  }
  tc.lr = cfg.get_double("lr", tc.lr);
  tc.momentum = cfg.get_double("momentum", tc.momentum);
  tc.batch = static_cast<int>(cfg.get_int("batch", tc.batch));
  tc.iters = static_cast<int>(cfg.get_int("iters", tc.iters));
  tc.lr_step = static_cast<int>(cfg.get_int("lr_step", tc.lr_step));
  tc.lr_factor = cfg.get_double("lr_factor", tc.lr_factor);
  tc.lambda_weak = cfg.get_double("lambda_weak", tc.lambda_weak);
  tc.margin = cfg.get_double("margin", tc.margin);
  tc.seed = cfg.get_uint("seed", tc.seed);
  tc.flip = cfg.get_bool("flip", tc.flip);
  tc.single_label = cfg.get_bool("single_label", tc.single_label);
  tc.log_every = static_cast<int>(cfg.get_int("log_every", tc.log_every));
  tc.eval_every = static_cast<int>(cfg.get_int("eval_every", tc.eval_every));
  const gwap::HeadKind head =
      gwap::head_from_string(cfg.get_string("head", "gwap-agnostic"));
  const gwap::TrainRegime regime =
      gwap::train_regime_from_string(cfg.get_string("regime", "weak"));
  const double lse_r = cfg.get_double("lse_r", 10.0);
  const bool bg_denom = cfg.get_bool("background_in_denominator", true);
  const std::string boxed_path = cfg.get_string("data_boxed", "");
  cfg.require_known();
  tc.validate();

  gwap::DatasetManifest manifest = gwap::load_manifest(data_path);
  if (!boxed_path.empty()) {
    manifest =
        gwap::merge_manifests(gwap::load_manifest(boxed_path), manifest);
  }
  const gwap::LoadedDataset data = gwap::LoadedDataset::load(manifest);
  std::printf("loaded %zu images (%d classes, %dx%d)\n", data.size(),
              data.classes(), data.height(), data.width());

  create_dir(out_dir);
  gwap::Model<float> model(gwap::BackboneConfig{}, head, data.classes(),
                           tc.seed, static_cast<float>(lse_r), bg_denom);

  const std::string metrics_path = out_dir + "/metrics.csv";
  const std::string ckpt_path = out_dir + "/model.ckpt";
  std::ofstream metrics(metrics_path, std::ios::binary | std::ios::trunc);
  if (!metrics) {
    throw gwap::IoError(metrics_path + ": cannot write");
  }
  const gwap::TrainStats stats = gwap::train<float>(
      model, data, tc, regime, &metrics,
      [&ckpt_path](int, const gwap::Model<float>& m) {
        save_checkpoint_atomic(m, ckpt_path);
      });
  save_checkpoint_atomic(model, ckpt_path);
  metrics.flush();
  if (!metrics) {
    throw gwap::IoError(metrics_path + ": write failed");
  }
  std::printf("final: iterations=%d loss=%.6g accuracy=%.6g\n",
              stats.iterations, stats.final_loss, stats.final_accuracy);
  std::printf("checkpoint: %s\nmetrics: %s\n", ckpt_path.c_str(),
              metrics_path.c_str());
  return 0;
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

int cmd_eval(const Config& cfg, const std::string& ckpt_path,
             const std::string& data_path, const std::string& out_dir) {
  gwap::EvalConfig ec;
  ec.scales = parse_scales(cfg.get_string("scales", "1"));
  const std::string thr = cfg.get_string("threshold", "otsu");
  if (thr == "otsu") {
    ec.threshold =
        gwap::ThresholdPolicy::otsu(static_cast<int>(cfg.get_int("bins", 256)));
  } else if (thr == "relative") {
    ec.threshold = gwap::ThresholdPolicy::relative(cfg.get_double("tau", 0.2));
  } else {
    throw gwap::ValidationError("eval: threshold must be otsu or relative");
  }
  const std::string ap_mode = cfg.get_string("ap_mode", "voc07");
  if (ap_mode == "voc07") {
    ec.ap_mode = gwap::ApMode::kVoc07_11pt;
  } else if (ap_mode == "all-points") {
    ec.ap_mode = gwap::ApMode::kAllPoints;
  } else {
    throw gwap::ValidationError("eval: ap_mode must be voc07 or all-points");
  }
  ec.top_k = static_cast<int>(cfg.get_int("top_k", 1));
  ec.iou_threshold = cfg.get_double("iou", 0.5);
  ec.use_gt_alpha = cfg.get_bool("use_gt_alpha", false);
  cfg.require_known();

  const gwap::Model<float> model = gwap::load_checkpoint<float>(ckpt_path);
  const gwap::LoadedDataset data =
      gwap::LoadedDataset::load(gwap::load_manifest(data_path));
  const gwap::EvalReport report = gwap::evaluate(model, data, ec);

  create_dir(out_dir);
  std::ostringstream txt, csv;
  gwap::write_report_text(report, txt);
  gwap::write_report_csv(report, data.manifest.class_names, csv);
  write_text_file(out_dir + "/report.txt", txt.str());
  write_text_file(out_dir + "/report.csv", csv.str());
  std::fputs(txt.str().c_str(), stdout);
  return 0;
}

// ---------------------------------------------------------------------------
// heatmap
// ---------------------------------------------------------------------------

void write_map_csv(const std::string& path, const gwap::Tensor<float>& map) {
  std::ostringstream out;
  char buf[64];
  for (int y = 0; y < map.extent(0); ++y) {
    for (int x = 0; x < map.extent(1); ++x) {
      std::snprintf(buf, sizeof(buf), "%.6g",
                    static_cast<double>(map.at(y, x)));
      out << (x ? "," : "") << buf;
    }
    out << "\n";
  }
  write_text_file(path, out.str());
}

/// Min-max normalized map, or a mid-gray constant map (plus a warning) when
/// the input is degenerate.
gwap::Tensor<float> normalize_or_gray(const gwap::Tensor<float>& map,
                                      const std::string& label) {
  try {
    return gwap::normalize_heatmap(map);
  } catch (const gwap::NumericError&) {
    std::fprintf(stderr,
                 "warning: %s is constant; writing a mid-gray map instead\n",
                 label.c_str());
    return gwap::Tensor<float>(map.shape(), 0.5f);
  }
}

int cmd_heatmap(const Config& cfg, const std::string& ckpt_path,
                const std::string& image_path, const std::string& out_prefix) {
  gwap::EvalConfig ec;
  ec.scales = parse_scales(cfg.get_string("scales", "1"));
  cfg.require_known();

  const gwap::Model<float> model = gwap::load_checkpoint<float>(ckpt_path);
  const gwap::Tensor<std::uint8_t> img8 = gwap::read_ppm(image_path);
  const gwap::SampleMaps<float> maps =
      gwap::eval_sample_maps(model, gwap::to_unit<float>(img8), ec);

  const auto emit = [&out_prefix](const gwap::Tensor<float>& map,
                                  const std::string& suffix,
                                  const std::string& label) {
    const gwap::Tensor<float> norm = normalize_or_gray(map, label);
    gwap::write_heatmap_pgm(out_prefix + suffix + ".pgm", norm);
    write_map_csv(out_prefix + suffix + ".csv", norm);
    std::printf("wrote %s%s.pgm and %s%s.csv (%s)\n", out_prefix.c_str(),
                suffix.c_str(), out_prefix.c_str(), suffix.c_str(),
                label.c_str());
  };

  int top1 = 0;
  for (int c = 1; c < model.classes(); ++c) {
    if (maps.logits[c] > maps.logits[top1]) top1 = c;
  }

  if (model.head() == gwap::HeadKind::kGwapSpecific) {
    // One map per predicted-present class; fall back to the top scoring
    // class so the command always produces output.
    std::vector<int> emit_classes;
    for (int c = 0; c < model.classes(); ++c) {
      if (maps.logits[c] > 0.0f) emit_classes.push_back(c);
    }
    if (emit_classes.empty()) emit_classes.push_back(top1);
    for (const int c : emit_classes) {
      emit(maps.per_class[c], "_c" + std::to_string(c),
           "class " + std::to_string(c) + " weight map");
    }
  } else if (!maps.per_class.empty()) {
    // Baseline heads: class activation map of the top scoring class.
    emit(maps.per_class[top1], "",
         "class " + std::to_string(top1) + " activation map");
  } else {
    emit(maps.shared, "", "shared weight map");
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"global weighted average pooling toolkit"};
  app.require_subcommand(1);

  CLI::App* synth =
      app.add_subcommand("synth", "generate a synthetic shape dataset");
  OptionSink synth_sink(synth);
  std::string synth_out;
  synth->add_option("--out", synth_out, "output directory")->required();
  synth_sink.opt("--n", "n", "number of images");
  synth_sink.opt("--seed", "seed", "dataset seed");
  synth_sink.opt("--size", "size", "image size (square, divisible by 4)");
  synth_sink.opt("--min-objects", "min_objects", "minimum objects per image");
  synth_sink.opt("--max-objects", "max_objects", "maximum objects per image");
  synth_sink.opt("--noise-amp", "noise_amp", "background noise amplitude");
  synth_sink.opt("--texture-amp", "texture_amp", "shape texture amplitude");
  synth_sink.opt("--texture-period", "texture_period", "texture period");
  synth_sink.opt("--classes", "classes", "comma-separated class names");
  synth_sink.flag("distractors", "distractors", "unlabeled distractor shapes");

  CLI::App* split =
      app.add_subcommand("split", "stratified boxed/weak manifest split");
  OptionSink split_sink(split);
  std::string split_manifest;
  split->add_option("--manifest", split_manifest, "input manifest")
      ->required();
  split_sink.opt("--fraction", "fraction", "boxed fraction per class");
  split_sink.opt("--seed", "seed", "split seed");
  split_sink.opt("--out-boxed", "out_boxed", "boxed manifest path");
  split_sink.opt("--out-weak", "out_weak", "weak manifest path");

  CLI::App* train = app.add_subcommand("train", "train a model");
  OptionSink train_sink(train);
  std::string train_data, train_out;
  train->add_option("--data", train_data, "training manifest")->required();
  train->add_option("--out", train_out, "output directory")->required();
  train_sink.opt("--data-boxed", "data_boxed",
                 "boxed manifest merged into the training set");
  train_sink.opt("--head", "head", "pooling head");
  train_sink.opt("--regime", "regime", "weak | gwap-gt | semi-weak");
  train_sink.opt("--preset", "preset", "desk | reference schedule");
  train_sink.opt("--lr", "lr", "initial learning rate");
  train_sink.opt("--momentum", "momentum", "SGD momentum");
  train_sink.opt("--batch", "batch", "batch size");
  train_sink.opt("--iters", "iters", "total iterations");
  train_sink.opt("--lr-step", "lr_step", "decay interval (0 disables)");
  train_sink.opt("--lr-factor", "lr_factor", "decay factor");
  train_sink.opt("--lambda", "lambda_weak", "box-region term weight");
  train_sink.opt("--margin", "margin", "box-region margin");
  train_sink.opt("--seed", "seed", "training seed");
  train_sink.opt("--lse-r", "lse_r", "lse pooling sharpness");
  train_sink.opt("--log-every", "log_every", "metrics row interval");
  train_sink.opt("--eval-every", "eval_every", "periodic metric interval");
  train_sink.flag("flip", "flip", "horizontal flip augmentation");
  train_sink.flag("single-label", "single_label", "softmax single-label loss");
  train_sink.flag("background-in-denominator", "background_in_denominator",
                  "include the background channel in the occupancy softmax");

  CLI::App* eval = app.add_subcommand("eval", "evaluate a checkpoint");
  OptionSink eval_sink(eval);
  std::string eval_ckpt, eval_data, eval_out;
  eval->add_option("--checkpoint", eval_ckpt, "model checkpoint")->required();
  eval->add_option("--data", eval_data, "evaluation manifest")->required();
  eval->add_option("--out", eval_out, "report directory")->required();
  eval_sink.opt("--scales", "scales", "comma-separated input scales");
  eval_sink.opt("--threshold", "threshold", "otsu | relative");
  eval_sink.opt("--tau", "tau", "relative threshold");
  eval_sink.opt("--bins", "bins", "otsu histogram bins");
  eval_sink.opt("--ap-mode", "ap_mode", "voc07 | all-points");
  eval_sink.opt("--top-k", "top_k", "k for the top-k error");
  eval_sink.opt("--iou", "iou", "localization IoU threshold");
  eval_sink.flag("use-gt-alpha", "use_gt_alpha",
                 "oracle weight maps from ground-truth boxes");

  CLI::App* heatmap =
      app.add_subcommand("heatmap", "export weight maps for one image");
  OptionSink heatmap_sink(heatmap);
  std::string hm_ckpt, hm_image, hm_out;
  heatmap->add_option("--checkpoint", hm_ckpt, "model checkpoint")->required();
  heatmap->add_option("--image", hm_image, "input PPM image")->required();
  heatmap->add_option("--out", hm_out, "output path prefix")->required();
  heatmap_sink.opt("--scales", "scales", "comma-separated input scales");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (synth->parsed()) return cmd_synth(synth_sink.build(), synth_out);
    if (split->parsed()) return cmd_split(split_sink.build(), split_manifest);
    if (train->parsed()) {
      return cmd_train(train_sink.build(), train_data, train_out);
    }
    if (eval->parsed()) {
      return cmd_eval(eval_sink.build(), eval_ckpt, eval_data, eval_out);
    }
    if (heatmap->parsed()) {
      return cmd_heatmap(heatmap_sink.build(), hm_ckpt, hm_image, hm_out);
    }
  } catch (const std::exception& e) {
    return to_exit_code(e);
  }
  return 2;
}
