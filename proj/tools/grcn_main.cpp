// grcn: synthetic-data two-stage detector workbench.
// Subcommands: gen-data, train, eval, infer, inspect-arch.

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <mutex>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "grcn/checkpoint.hpp"
#include "grcn/config.hpp"
#include "grcn/errors.hpp"
#include "grcn/eval.hpp"
#include "grcn/model.hpp"
#include "grcn/synthetic.hpp"
#include "grcn/threading.hpp"
#include "grcn/training.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

int exit_code_for(const grcn::Error& e) {
  if (e.code() == "config") return 2;
  if (e.code() == "io") return 3;
  if (e.code() == "numeric") return 4;
  if (e.code() == "dimension") return 5;
  if (e.code() == "geometry") return 6;
  if (e.code() == "state") return 7;
  return 1;
}

void ensure_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec && !fs::is_directory(dir)) {
    throw grcn::IoError("cannot create directory " + dir + ": " + ec.message());
  }
}

std::string log_line(const grcn::TrainStepInfo& info) {
  char buf[256];
  std::snprintf(buf, sizeof(buf),
                "iter=%lld loss=%.6f loss_rpn_cls=%.6f loss_rpn_reg=%.6f loss_cls=%.6f "
                "loss_loc=%.6f lr=%.6f",
                static_cast<long long>(info.iteration), info.loss.total, info.loss.rpn_cls,
                info.loss.rpn_reg, info.loss.cls, info.loss.loc, info.lr);
  return buf;
}

grcn::ModelGraph build_from_config(const grcn::ExperimentConfig& cfg) {
  return grcn::ModelGraph::build(grcn::variant_from_string(cfg.variant),
                                 grcn::backbone_from_string(cfg.backbone), cfg.model_options());
}

void load_parameters(grcn::ModelGraph& model,
                     const std::vector<std::pair<std::string, grcn::Tensor>>& stored,
                     const char* what) {
  auto& params = model.parameters();
  if (params.size() != stored.size()) {
    throw grcn::StateError(std::string(what) + ": checkpoint has " +
                           std::to_string(stored.size()) + " tensors, model expects " +
                           std::to_string(params.size()));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i].first != stored[i].first || params[i].second.shape() != stored[i].second.shape()) {
      throw grcn::StateError(std::string(what) + ": mismatch at '" + stored[i].first + "'");
    }
    params[i].second.values() = stored[i].second.values();
  }
}

grcn::Checkpoint snapshot(const grcn::ExperimentConfig& cfg, const grcn::ModelGraph& model,
                          grcn::Trainer& trainer) {
  grcn::Checkpoint ckpt;
  ckpt.config_text = grcn::config_to_text(cfg);
  ckpt.iteration = static_cast<std::uint64_t>(trainer.iteration());
  ckpt.rng_seed = cfg.seed;
  for (const auto& [name, t] : model.parameters()) {
    ckpt.parameters.emplace_back(name, grcn::Tensor::from(t.shape(), t.values()));
  }
  for (const auto& [name, t] : trainer.optimizer_state().velocity) {
    ckpt.velocities.emplace_back(name, grcn::Tensor::from(t.shape(), t.values()));
  }
  return ckpt;
}

// ---- gen-data -----------------------------------------------------------------

int cmd_gen_data(std::uint64_t seed, int n, int classes, const std::string& size,
                 const std::string& out_dir) {
  int width = 0, height = 0;
  if (std::sscanf(size.c_str(), "%dx%d", &width, &height) != 2) {
    throw grcn::ConfigError("--size must look like 128x128, got '" + size + "'");
  }
  ensure_dir(out_dir);
  auto scenes = grcn::generate_synthetic_dataset(seed, n, classes, width, height);
  grcn::save_dataset(out_dir, scenes);
  const auto hist = grcn::size_histogram(scenes);
  std::cout << "wrote " << scenes.size() << " scenes to " << out_dir << "\n";
  std::cout << "size buckets: small=" << hist.small << " medium=" << hist.medium
            << " large=" << hist.large << "\n";
  return 0;
}

// ---- train ----------------------------------------------------------------------

int cmd_train(const std::string& config_path, const std::string& out_override,
              const std::string& dataset_override, std::int64_t seed_override,
              const std::string& resume_path) {
  grcn::ExperimentConfig cfg = grcn::load_config_file(config_path);
  if (!dataset_override.empty()) cfg.data_dir = dataset_override;
  if (seed_override >= 0) cfg.seed = static_cast<std::uint64_t>(seed_override);
  if (!out_override.empty()) cfg.output_dir = out_override;
  if (cfg.data_dir.empty()) throw grcn::ConfigError("field 'data.dir': no dataset configured");
  ensure_dir(cfg.output_dir);

  auto scenes = grcn::load_dataset(cfg.data_dir, cfg.data_begin, cfg.data_end);
  if (cfg.input_shorter_side > 0) {
    for (auto& s : scenes) s = grcn::resize_scene_shorter_side(s, cfg.input_shorter_side);
  }
  grcn::ModelGraph model = build_from_config(cfg);
  grcn::Trainer trainer(model, cfg.train_config(), std::move(scenes));

  if (!resume_path.empty()) {
    grcn::Checkpoint ckpt = grcn::load_checkpoint(resume_path);
    load_parameters(model, ckpt.parameters, "parameters");
    auto& vel = trainer.optimizer_state().velocity;
    if (vel.size() != ckpt.velocities.size()) {
      throw grcn::StateError("velocities: checkpoint does not match optimizer state");
    }
    for (std::size_t i = 0; i < vel.size(); ++i) {
      if (vel[i].first != ckpt.velocities[i].first) {
        throw grcn::StateError("velocities: mismatch at '" + ckpt.velocities[i].first + "'");
      }
      vel[i].second.values() = ckpt.velocities[i].second.values();
    }
    trainer.set_iteration(static_cast<std::int64_t>(ckpt.iteration));
    std::cout << "resumed from " << resume_path << " at iteration " << ckpt.iteration << "\n";
  }

  const std::string log_path = cfg.output_dir + "/train_log.txt";
  std::ofstream log(log_path, resume_path.empty() ? std::ios::trunc : std::ios::app);
  if (!log) throw grcn::IoError("cannot open " + log_path + " for writing");

  const auto t0 = std::chrono::steady_clock::now();
  while (trainer.iteration() < cfg.train_iterations) {
    grcn::TrainStepInfo info;
    try {
      info = trainer.step();
    } catch (const grcn::NumericError&) {
      const std::string dump_path = cfg.output_dir + "/nan_dump.txt";
      std::ofstream dump(dump_path);
      dump << trainer.last_batch_debug() << "\n";
      std::cerr << "diagnostic dump written to " << dump_path << "\n";
      throw;
    }
    log << log_line(info) << "\n";
    if ((info.iteration + 1) % cfg.print_every == 0 || info.iteration + 1 == cfg.train_iterations) {
      std::cout << log_line(info) << "\n";
    }
    if ((info.iteration + 1) % cfg.checkpoint_every == 0 &&
        info.iteration + 1 < cfg.train_iterations) {
      grcn::save_checkpoint(cfg.output_dir + "/ckpt_" + std::to_string(info.iteration + 1) + ".bin",
                            snapshot(cfg, model, trainer));
    }
  }
  log.flush();
  grcn::save_checkpoint(cfg.output_dir + "/ckpt_final.bin", snapshot(cfg, model, trainer));
  const auto dt = std::chrono::duration_cast<std::chrono::seconds>(
      std::chrono::steady_clock::now() - t0);
  std::cout << "finished " << trainer.iteration() << " iterations in " << dt.count() << "s; "
            << "checkpoint " << cfg.output_dir << "/ckpt_final.bin\n";
  return 0;
}

// ---- eval / infer -----------------------------------------------------------------

struct LoadedModel {
  grcn::ExperimentConfig cfg;
  grcn::ModelGraph model;
};

LoadedModel load_model(const std::string& checkpoint_path) {
  grcn::Checkpoint ckpt = grcn::load_checkpoint(checkpoint_path);
  LoadedModel lm{grcn::parse_config_text(ckpt.config_text), {}};
  lm.model = build_from_config(lm.cfg);
  load_parameters(lm.model, ckpt.parameters, "parameters");
  return lm;
}

std::vector<std::vector<grcn::Detection>> run_detector(const grcn::ModelGraph& model,
                                                       const grcn::ExperimentConfig& cfg,
                                                       const std::vector<grcn::SyntheticScene>& scenes) {
  std::vector<std::vector<grcn::Detection>> per_scene(scenes.size());
  const grcn::TestSettings settings = cfg.test_settings();
  grcn::parallel_for(static_cast<std::int64_t>(scenes.size()),
                     [&](std::int64_t lo, std::int64_t hi) {
                       for (std::int64_t i = lo; i < hi; ++i) {
                         per_scene[static_cast<std::size_t>(i)] =
                             model.forward_test(scenes[static_cast<std::size_t>(i)].image, settings);
                       }
                     });
  return per_scene;
}

int cmd_eval(const std::string& checkpoint_path, const std::string& dataset,
             const std::string& out_dir, int begin, int end) {
  LoadedModel lm = load_model(checkpoint_path);
  const std::string dir = dataset.empty() ? lm.cfg.data_dir : dataset;
  auto scenes = grcn::load_dataset(dir, begin, end);
  if (lm.cfg.input_shorter_side > 0) {
    for (auto& s : scenes) s = grcn::resize_scene_shorter_side(s, lm.cfg.input_shorter_side);
  }
  ensure_dir(out_dir);

  const auto per_scene = run_detector(lm.model, lm.cfg, scenes);
  std::vector<grcn::DetectionRecord> dets;
  std::vector<grcn::GroundTruthRecord> gts;
  for (std::size_t i = 0; i < scenes.size(); ++i) {
    for (const auto& d : per_scene[i]) {
      dets.push_back({static_cast<int>(i), d.box, d.class_id, d.score});
    }
    for (std::size_t g = 0; g < scenes[i].gt_boxes.size(); ++g) {
      gts.push_back({static_cast<int>(i), scenes[i].gt_boxes[g], scenes[i].gt_classes[g]});
    }
  }
  const grcn::EvalReport report = grcn::coco_metrics(dets, gts, lm.cfg.interpolation());
  const std::string text = grcn::report_text(report);
  {
    std::ofstream f(out_dir + "/report.txt", std::ios::binary);
    f << text;
  }
  {
    std::ofstream f(out_dir + "/report.json", std::ios::binary);
    f << grcn::report_json(report);
  }
  std::cout << text;
  std::cout << "evaluated " << scenes.size() << " scenes, " << dets.size() << " detections\n";
  return 0;
}

int cmd_infer(const std::string& checkpoint_path, const std::string& dataset,
              const std::string& out_dir, int begin, int end) {
  LoadedModel lm = load_model(checkpoint_path);
  const std::string dir = dataset.empty() ? lm.cfg.data_dir : dataset;
  auto scenes = grcn::load_dataset(dir, begin, end);
  if (lm.cfg.input_shorter_side > 0) {
    for (auto& s : scenes) s = grcn::resize_scene_shorter_side(s, lm.cfg.input_shorter_side);
  }
  ensure_dir(out_dir);

  const auto per_scene = run_detector(lm.model, lm.cfg, scenes);
  const std::string path = out_dir + "/detections.jsonl";
  std::ofstream f(path, std::ios::binary);
  if (!f) throw grcn::IoError("cannot open " + path + " for writing");
  std::size_t total = 0;
  for (std::size_t i = 0; i < per_scene.size(); ++i) {
    json line;
    line["image_id"] = static_cast<int>(i) + begin;
    json arr = json::array();
    for (const auto& d : per_scene[i]) {
      arr.push_back({{"x1", d.box.x1},
                     {"y1", d.box.y1},
                     {"x2", d.box.x2},
                     {"y2", d.box.y2},
                     {"class", d.class_id},
                     {"score", d.score}});
      ++total;
    }
    line["detections"] = std::move(arr);
    f << line.dump() << "\n";
  }
  std::cout << "wrote " << total << " detections for " << per_scene.size() << " scenes to "
            << path << "\n";
  return 0;
}

// ---- inspect-arch -------------------------------------------------------------------

int cmd_inspect_arch(const std::string& variant, const std::string& backbone, int classes) {
  grcn::ModelOptions opt;
  opt.num_classes = classes;
  grcn::ModelGraph model = grcn::ModelGraph::build(grcn::variant_from_string(variant),
                                                   grcn::backbone_from_string(backbone), opt);
  std::cout << model.describe();
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"desk-scale two-stage detector workbench"};
  app.require_subcommand(1);

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "generate a synthetic dataset");
  std::uint64_t gd_seed = 7;
  int gd_n = 500, gd_classes = 3;
  std::string gd_size = "128x128", gd_out = "out/data";
  gen->add_option("--seed", gd_seed, "generator seed");
  gen->add_option("--n", gd_n, "number of scenes")->required();
  gen->add_option("--classes", gd_classes, "number of object classes");
  gen->add_option("--size", gd_size, "image size WxH");
  gen->add_option("--out", gd_out, "output directory")->required();

  // train
  auto* train = app.add_subcommand("train", "train a detector");
  std::string tr_config, tr_out, tr_dataset, tr_ckpt;
  std::int64_t tr_seed = -1;
  train->add_option("--config", tr_config, "experiment config file")->required();
  train->add_option("--out", tr_out, "output directory override");
  train->add_option("--dataset", tr_dataset, "dataset directory override");
  train->add_option("--seed", tr_seed, "seed override");
  train->add_option("--checkpoint", tr_ckpt, "resume from checkpoint");

  // eval
  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint");
  std::string ev_ckpt, ev_dataset, ev_out = "out/eval";
  int ev_begin = 0, ev_end = -1;
  ev->add_option("--checkpoint", ev_ckpt, "checkpoint file")->required();
  ev->add_option("--dataset", ev_dataset, "dataset directory (default from checkpoint config)");
  ev->add_option("--out", ev_out, "report directory");
  ev->add_option("--begin", ev_begin, "first scene index");
  ev->add_option("--end", ev_end, "one past the last scene index (-1 = all)");

  // infer
  auto* inf = app.add_subcommand("infer", "run test-mode detection and dump boxes");
  std::string in_ckpt, in_dataset, in_out = "out/infer";
  int in_begin = 0, in_end = -1;
  inf->add_option("--checkpoint", in_ckpt, "checkpoint file")->required();
  inf->add_option("--dataset", in_dataset, "dataset directory (default from checkpoint config)");
  inf->add_option("--out", in_out, "output directory");
  inf->add_option("--begin", in_begin, "first scene index");
  inf->add_option("--end", in_end, "one past the last scene index (-1 = all)");

  // inspect-arch
  auto* ins = app.add_subcommand("inspect-arch", "print the layer table of a variant");
  std::string is_variant, is_backbone = "toy-vgg";
  int is_classes = 3;
  ins->add_option("--variant", is_variant, "architecture variant")->required();
  ins->add_option("--backbone", is_backbone, "backbone family");
  ins->add_option("--classes", is_classes, "number of object classes");

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) return cmd_gen_data(gd_seed, gd_n, gd_classes, gd_size, gd_out);
    if (train->parsed()) return cmd_train(tr_config, tr_out, tr_dataset, tr_seed, tr_ckpt);
    if (ev->parsed()) return cmd_eval(ev_ckpt, ev_dataset, ev_out, ev_begin, ev_end);
    if (inf->parsed()) return cmd_infer(in_ckpt, in_dataset, in_out, in_begin, in_end);
    if (ins->parsed()) return cmd_inspect_arch(is_variant, is_backbone, is_classes);
  } catch (const grcn::Error& e) {
    std::cerr << "error[" << e.code() << "]: " << e.what() << "\n";
    return exit_code_for(e);
  } catch (const std::exception& e) {
    std::cerr << "error[internal]: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
