#ifndef GRCN_CONFIG_HPP
#define GRCN_CONFIG_HPP

#include <cstdint>
#include <string>
#include <vector>

#include "grcn/eval.hpp"
#include "grcn/model.hpp"
#include "grcn/training.hpp"

namespace grcn {

// Flat `key = value` text with dotted sections and '#' comments. Parsing is
// strict: unknown keys are errors, every value is validated before any work
// starts.
struct ExperimentConfig {
  std::string variant = "baseline";
  std::string backbone = "toy-vgg";
  int num_classes = 3;
  std::uint64_t seed = 1;
  std::string output_dir = "out";

  std::string data_dir;
  int data_begin = 0;
  int data_end = -1;  // -1 = to the end
  int input_shorter_side = 0;  // 0 = no resize

  std::vector<double> anchor_sizes{32, 64, 128, 256, 512};
  std::vector<double> anchor_ratios{0.5, 1.0, 2.0};

  int rpn_channels = 128;
  int rpn_pre_nms_train = 6000;
  int rpn_post_nms_train = 2000;
  int rpn_pre_nms_test = 6000;
  int rpn_post_nms_test = 300;
  double rpn_nms_threshold = 0.7;
  bool rpn_dual = false;

  int roi_out_size = 0;  // 0 = variant default
  bool roi_align = false;

  std::string attention_mode = "auto";  // auto | on | off
  int attention_heads = 1;
  bool attention_value_projection = false;
  int attention_context_size = 14;

  int head_hidden = 256;

  std::int64_t train_iterations = 2000;
  std::string lr_schedule = "240000:0.001,320000:0.0001";
  double momentum = 0.9;
  double weight_decay = 0.0;
  int rpn_batch = 256;
  int roi_batch = 128;
  double fg_fraction = 0.25;
  double rpn_fg_iou = 0.7;
  double rpn_bg_iou = 0.3;
  double roi_fg_iou = 0.5;
  double roi_bg_lo = 0.1;
  double roi_bg_hi = 0.5;
  std::vector<double> bbox_reg_stds{0.1, 0.1, 0.2, 0.2};
  bool hflip = false;
  int checkpoint_every = 500;
  int print_every = 20;

  double test_score_threshold = 0.05;
  double test_nms_threshold = 0.3;
  int test_max_detections = 300;
  std::string eval_interpolation = "coco101";  // coco101 | voc11

  // Derived views.
  ModelOptions model_options() const;
  TrainConfig train_config() const;
  TestSettings test_settings() const;
  LrSchedule parsed_lr_schedule() const;
  ApInterpolation interpolation() const;

  void validate() const;
};

ExperimentConfig parse_config_text(const std::string& text);
ExperimentConfig load_config_file(const std::string& path);
// Canonical dump; parse_config_text(config_to_text(c)) == c.
std::string config_to_text(const ExperimentConfig& c);

}  // namespace grcn

#endif  // GRCN_CONFIG_HPP
