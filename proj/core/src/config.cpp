#include "grcn/config.hpp"

#include <algorithm>
#include <cctype>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

#include "grcn/errors.hpp"

namespace grcn {

namespace {

std::string trim(const std::string& s) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return s.substr(b, e - b);
}

double parse_double(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    const double x = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument("trailing");
    return x;
  } catch (const std::exception&) {
    throw ConfigError("field '" + key + "': not a number: '" + v + "'");
  }
}

std::int64_t parse_int(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    const long long x = std::stoll(v, &pos);
    if (pos != v.size()) throw std::invalid_argument("trailing");
    return x;
  } catch (const std::exception&) {
    throw ConfigError("field '" + key + "': not an integer: '" + v + "'");
  }
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "on") return true;
  if (v == "false" || v == "0" || v == "off") return false;
  throw ConfigError("field '" + key + "': expected true/false, got '" + v + "'");
}

std::vector<double> parse_double_list(const std::string& key, const std::string& v) {
  std::vector<double> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(parse_double(key, item));
  }
  if (out.empty()) throw ConfigError("field '" + key + "': empty list");
  return out;
}

std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::string format_double_list(const std::vector<double>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out += ",";
    out += format_double(v[i]);
  }
  return out;
}

}  // namespace

LrSchedule ExperimentConfig::parsed_lr_schedule() const {
  LrSchedule schedule;
  std::stringstream ss(lr_schedule);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (item.empty()) continue;
    const std::size_t colon = item.find(':');
    if (colon == std::string::npos) {
      throw ConfigError("field 'train.lr_schedule': expected bound:lr pairs, got '" + item + "'");
    }
    schedule.emplace_back(parse_int("train.lr_schedule", trim(item.substr(0, colon))),
                          parse_double("train.lr_schedule", trim(item.substr(colon + 1))));
  }
  if (schedule.empty()) throw ConfigError("field 'train.lr_schedule': empty schedule");
  return schedule;
}

ModelOptions ExperimentConfig::model_options() const {
  ModelOptions o;
  o.num_classes = num_classes;
  o.anchor_sizes = anchor_sizes;
  o.anchor_ratios = anchor_ratios;
  o.rpn_channels = rpn_channels;
  o.head_hidden = head_hidden;
  o.roi_out_size = roi_out_size;
  o.attention_heads = attention_heads;
  o.attention_value_projection = attention_value_projection;
  o.attention_context_size = attention_context_size;
  if (attention_mode == "on") o.attention_override = true;
  if (attention_mode == "off") o.attention_override = false;
  o.use_roi_align = roi_align;
  o.dual_rpn = rpn_dual;
  o.bbox_reg_stds = bbox_reg_stds;
  o.seed = seed;
  return o;
}

TrainConfig ExperimentConfig::train_config() const {
  TrainConfig t;
  t.lr_schedule = parsed_lr_schedule();
  t.momentum = momentum;
  t.weight_decay = weight_decay;
  t.rpn_batch = rpn_batch;
  t.roi_batch = roi_batch;
  t.fg_fraction = fg_fraction;
  t.rpn_fg_iou = rpn_fg_iou;
  t.rpn_bg_iou = rpn_bg_iou;
  t.roi_fg_iou = roi_fg_iou;
  t.roi_bg_lo = roi_bg_lo;
  t.roi_bg_hi = roi_bg_hi;
  t.hflip = hflip;
  t.seed = seed;
  t.proposals = {rpn_pre_nms_train, rpn_post_nms_train, rpn_nms_threshold};
  return t;
}

TestSettings ExperimentConfig::test_settings() const {
  TestSettings s;
  s.proposals = {rpn_pre_nms_test, rpn_post_nms_test, rpn_nms_threshold};
  s.score_threshold = test_score_threshold;
  s.nms_threshold = test_nms_threshold;
  s.max_detections = test_max_detections;
  return s;
}

ApInterpolation ExperimentConfig::interpolation() const {
  if (eval_interpolation == "coco101") return ApInterpolation::kCoco101;
  if (eval_interpolation == "voc11") return ApInterpolation::kVoc11;
  throw ConfigError("field 'eval.interpolation': expected coco101 or voc11, got '" +
                    eval_interpolation + "'");
}

void ExperimentConfig::validate() const {
  variant_from_string(variant);  // throws with the valid list
  const BackboneFamily fam = backbone_from_string(backbone);
  const auto valid = valid_variants(fam);
  if (std::find(valid.begin(), valid.end(), variant) == valid.end()) {
    std::string list;
    for (const auto& v : valid) list += (list.empty() ? "" : ", ") + v;
    throw ConfigError("field 'variant': '" + variant + "' is not defined for backbone '" +
                      backbone + "' (valid: " + list + ")");
  }
  if (num_classes < 1) throw ConfigError("field 'num_classes': must be >= 1");
  if (anchor_sizes.empty()) throw ConfigError("field 'anchors.sizes': empty");
  if (anchor_ratios.empty()) throw ConfigError("field 'anchors.ratios': empty");
  for (double s : anchor_sizes)
    if (s <= 0) throw ConfigError("field 'anchors.sizes': sizes must be positive");
  for (double r : anchor_ratios)
    if (r <= 0) throw ConfigError("field 'anchors.ratios': ratios must be positive");
  if (rpn_channels < 1) throw ConfigError("field 'rpn.channels': must be >= 1");
  if (rpn_pre_nms_train < 1 || rpn_pre_nms_test < 1) {
    throw ConfigError("field 'rpn.pre_nms_*': must be >= 1");
  }
  if (rpn_post_nms_train < 1 || rpn_post_nms_test < 1) {
    throw ConfigError("field 'rpn.post_nms_*': must be >= 1");
  }
  if (rpn_nms_threshold <= 0.0 || rpn_nms_threshold >= 1.0) {
    throw ConfigError("field 'rpn.nms_threshold': must be in (0,1)");
  }
  if (roi_out_size != 0 && roi_out_size != 7 && roi_out_size != 14) {
    throw ConfigError("field 'roi.out_size': must be 0 (auto), 7 or 14");
  }
  if (attention_mode != "auto" && attention_mode != "on" && attention_mode != "off") {
    throw ConfigError("field 'attention.mode': expected auto/on/off, got '" + attention_mode + "'");
  }
  if (attention_heads < 1) throw ConfigError("field 'attention.heads': must be >= 1");
  if (attention_context_size < 1) throw ConfigError("field 'attention.context_size': must be >= 1");
  if (head_hidden < 1) throw ConfigError("field 'head.hidden': must be >= 1");
  if (train_iterations < 0) throw ConfigError("field 'train.iterations': must be >= 0");
  if (bbox_reg_stds.size() != 4) throw ConfigError("field 'train.bbox_reg_stds': needs 4 values");
  for (double s : bbox_reg_stds)
    if (s <= 0) throw ConfigError("field 'train.bbox_reg_stds': values must be positive");
  if (checkpoint_every < 1) throw ConfigError("field 'train.checkpoint_every': must be >= 1");
  if (print_every < 1) throw ConfigError("field 'train.print_every': must be >= 1");
  if (test_score_threshold < 0.0 || test_score_threshold >= 1.0) {
    throw ConfigError("field 'test.score_threshold': must be in [0,1)");
  }
  if (test_nms_threshold <= 0.0 || test_nms_threshold >= 1.0) {
    throw ConfigError("field 'test.nms_threshold': must be in (0,1)");
  }
  if (test_max_detections < 1) throw ConfigError("field 'test.max_detections': must be >= 1");
  if (input_shorter_side < 0) throw ConfigError("field 'input.shorter_side': must be >= 0");
  if (data_begin < 0) throw ConfigError("field 'data.begin': must be >= 0");
  if (data_end != -1 && data_end < data_begin) {
    throw ConfigError("field 'data.end': must be -1 or >= data.begin");
  }
  interpolation();            // validates eval.interpolation
  train_config().validate();  // cross-field train checks
}

namespace {

using Setter = void (*)(ExperimentConfig&, const std::string&, const std::string&);

const std::map<std::string, Setter>& key_table() {
  static const std::map<std::string, Setter> table = {
      {"variant", [](ExperimentConfig& c, const std::string&, const std::string& v) { c.variant = v; }},
      {"backbone", [](ExperimentConfig& c, const std::string&, const std::string& v) { c.backbone = v; }},
      {"num_classes", [](ExperimentConfig& c, const std::string& k, const std::string& v) { c.num_classes = static_cast<int>(parse_int(k, v)); }},
      {"seed", [](ExperimentConfig& c, const std::string& k, const std::string& v) { c.seed = static_cast<std::uint64_t>(parse_int(k, v)); }},
      {"output.dir", [](ExperimentConfig& c, const std::string&, const std::string& v) { c.output_dir = v; }},
      {"data.dir", [](ExperimentConfig& c, const std::string&, const std::string& v) { c.data_dir = v; }},
      {"data.begin", [](ExperimentConfig& c, const std::string& k, const std::string& v) { c.data_begin = static_cast<int>(parse_int(k, v)); }},
      {"data.end", [](ExperimentConfig& c, const std::string& k, const std::string& v) { c.data_end = static_cast<int>(parse_int(k, v)); }},
      {"input.shorter_side", [](ExperimentConfig& c, const std::string& k, const std::string& v) { c.input_shorter_side = static_cast<int>(parse_int(k, v)); }},
      {"anchors.sizes", [](ExperimentConfig& c, const std::string& k, const std::string& v) { c.anchor_sizes = parse_double_list(k, v); }},
      {"anchors.ratios", [](ExperimentConfig& c, const std::string& k, const std::string& v) { c.anchor_ratios = parse_double_list(k, v); }},
      {"rpn.channels", [](ExperimentConfig& c, const std::string& k, const std::string& v) { c.rpn_channels = static_cast<int>(parse_int(k, v)); }},
      {"rpn.pre_nms_train", [](ExperimentConfig& c, const std::string& k, const std::string& v) { c.rpn_pre_nms_train = static_cast<int>(parse_int(k, v)); }},
      {"rpn.post_nms_train", [](ExperimentConfig& c, const std::string& k, const std::string& v) { c.rpn_post_nms_train = static_cast<int>(parse_int(k, v)); }},
      {"rpn.pre_nms_test", [](ExperimentConfig& c, const std::string& k, const std::string& v) { c.rpn_pre_nms_test = static_cast<int>(parse_int(k, v)); }},
      {"rpn.post_nms_test", [](ExperimentConfig& c, const std::string& k, const std::string& v) { c.rpn_post_nms_test = static_cast<int>(parse_int(k, v)); }},
      {"rpn.nms_threshold", [](ExperimentConfig& c, const std::string& k, const std::string& v) { c.rpn_nms_threshold = parse_double(k, v); }},
      {"rpn.dual", [](ExperimentConfig& c, const std::string& k, const std::string& v) { c.rpn_dual = parse_bool(k, v); }},
      {"roi.out_size", [](ExperimentConfig& c, const std::string& k, const std::string& v) { c.roi_out_size = static_cast<int>(parse_int(k, v)); }},
      {"roi.align", [](ExperimentConfig& c, const std::string& k, const std::string& v) { c.roi_align = parse_bool(k, v); }},
      {"attention.mode", [](ExperimentConfig& c, const std::string&, const std::string& v) { c.attention_mode = v; }},
      {"attention.heads", [](ExperimentConfig& c, const std::string& k, const std::string& v) { c.attention_heads = static_cast<int>(parse_int(k, v)); }},
      {"attention.value_projection", [](ExperimentConfig& c, const std::string& k, const std::string& v) { c.attention_value_projection = parse_bool(k, v); }},
      {"attention.context_size", [](ExperimentConfig& c, const std::string& k, const std::string& v) { c.attention_context_size = static_cast<int>(parse_int(k, v)); }},
      {"head.hidden", [](ExperimentConfig& c, const std::string& k, const std::string& v) { c.head_hidden = static_cast<int>(parse_int(k, v)); }},
      {"train.iterations", [](ExperimentConfig& c, const std::string& k, const std::string& v) { c.train_iterations = parse_int(k, v); }},
      {"train.lr_schedule", [](ExperimentConfig& c, const std::string&, const std::string& v) { c.lr_schedule = v; }},
      {"train.momentum", [](ExperimentConfig& c, const std::string& k, const std::string& v) { c.momentum = parse_double(k, v); }},
      {"train.weight_decay", [](ExperimentConfig& c, const std::string& k, const std::string& v) { c.weight_decay = parse_double(k, v); }},
      {"train.rpn_batch", [](ExperimentConfig& c, const std::string& k, const std::string& v) { c.rpn_batch = static_cast<int>(parse_int(k, v)); }},
      {"train.roi_batch", [](ExperimentConfig& c, const std::string& k, const std::string& v) { c.roi_batch = static_cast<int>(parse_int(k, v)); }},
      {"train.fg_fraction", [](ExperimentConfig& c, const std::string& k, const std::string& v) { c.fg_fraction = parse_double(k, v); }},
      {"train.rpn_fg_iou", [](ExperimentConfig& c, const std::string& k, const std::string& v) { c.rpn_fg_iou = parse_double(k, v); }},
      {"train.rpn_bg_iou", [](ExperimentConfig& c, const std::string& k, const std::string& v) { c.rpn_bg_iou = parse_double(k, v); }},
      {"train.roi_fg_iou", [](ExperimentConfig& c, const std::string& k, const std::string& v) { c.roi_fg_iou = parse_double(k, v); }},
      {"train.roi_bg_lo", [](ExperimentConfig& c, const std::string& k, const std::string& v) { c.roi_bg_lo = parse_double(k, v); }},
      {"train.roi_bg_hi", [](ExperimentConfig& c, const std::string& k, const std::string& v) { c.roi_bg_hi = parse_double(k, v); }},
      {"train.bbox_reg_stds", [](ExperimentConfig& c, const std::string& k, const std::string& v) { c.bbox_reg_stds = parse_double_list(k, v); }},
      {"train.hflip", [](ExperimentConfig& c, const std::string& k, const std::string& v) { c.hflip = parse_bool(k, v); }},
      {"train.checkpoint_every", [](ExperimentConfig& c, const std::string& k, const std::string& v) { c.checkpoint_every = static_cast<int>(parse_int(k, v)); }},
      {"train.print_every", [](ExperimentConfig& c, const std::string& k, const std::string& v) { c.print_every = static_cast<int>(parse_int(k, v)); }},
      {"test.score_threshold", [](ExperimentConfig& c, const std::string& k, const std::string& v) { c.test_score_threshold = parse_double(k, v); }},
      {"test.nms_threshold", [](ExperimentConfig& c, const std::string& k, const std::string& v) { c.test_nms_threshold = parse_double(k, v); }},
      {"test.max_detections", [](ExperimentConfig& c, const std::string& k, const std::string& v) { c.test_max_detections = static_cast<int>(parse_int(k, v)); }},
      {"eval.interpolation", [](ExperimentConfig& c, const std::string&, const std::string& v) { c.eval_interpolation = v; }},
  };
  return table;
}

}  // namespace

ExperimentConfig parse_config_text(const std::string& text) {
  ExperimentConfig cfg;
  std::stringstream ss(text);
  std::string line;
  int line_no = 0;
  while (std::getline(ss, line)) {
    ++line_no;
    const std::size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const std::size_t eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("line " + std::to_string(line_no) + ": expected 'key = value', got '" +
                        line + "'");
    }
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    const auto& table = key_table();
    const auto it = table.find(key);
    if (it == table.end()) {
      throw ConfigError("line " + std::to_string(line_no) + ": unknown key '" + key + "'");
    }
    it->second(cfg, key, value);
  }
  cfg.validate();
  return cfg;
}

ExperimentConfig load_config_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open config file " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str());
}

std::string config_to_text(const ExperimentConfig& c) {
  std::ostringstream os;
  os << "variant = " << c.variant << "\n";
  os << "backbone = " << c.backbone << "\n";
  os << "num_classes = " << c.num_classes << "\n";
  os << "seed = " << c.seed << "\n";
  os << "output.dir = " << c.output_dir << "\n";
  os << "data.dir = " << c.data_dir << "\n";
  os << "data.begin = " << c.data_begin << "\n";
  os << "data.end = " << c.data_end << "\n";
  os << "input.shorter_side = " << c.input_shorter_side << "\n";
  os << "anchors.sizes = " << format_double_list(c.anchor_sizes) << "\n";
  os << "anchors.ratios = " << format_double_list(c.anchor_ratios) << "\n";
  os << "rpn.channels = " << c.rpn_channels << "\n";
  os << "rpn.pre_nms_train = " << c.rpn_pre_nms_train << "\n";
  os << "rpn.post_nms_train = " << c.rpn_post_nms_train << "\n";
  os << "rpn.pre_nms_test = " << c.rpn_pre_nms_test << "\n";
  os << "rpn.post_nms_test = " << c.rpn_post_nms_test << "\n";
  os << "rpn.nms_threshold = " << format_double(c.rpn_nms_threshold) << "\n";
  os << "rpn.dual = " << (c.rpn_dual ? "true" : "false") << "\n";
  os << "roi.out_size = " << c.roi_out_size << "\n";
  os << "roi.align = " << (c.roi_align ? "true" : "false") << "\n";
  os << "attention.mode = " << c.attention_mode << "\n";
  os << "attention.heads = " << c.attention_heads << "\n";
  os << "attention.value_projection = " << (c.attention_value_projection ? "true" : "false") << "\n";
  os << "attention.context_size = " << c.attention_context_size << "\n";
  os << "head.hidden = " << c.head_hidden << "\n";
  os << "train.iterations = " << c.train_iterations << "\n";
  os << "train.lr_schedule = " << c.lr_schedule << "\n";
  os << "train.momentum = " << format_double(c.momentum) << "\n";
  os << "train.weight_decay = " << format_double(c.weight_decay) << "\n";
  os << "train.rpn_batch = " << c.rpn_batch << "\n";
  os << "train.roi_batch = " << c.roi_batch << "\n";
  os << "train.fg_fraction = " << format_double(c.fg_fraction) << "\n";
  os << "train.rpn_fg_iou = " << format_double(c.rpn_fg_iou) << "\n";
  os << "train.rpn_bg_iou = " << format_double(c.rpn_bg_iou) << "\n";
  os << "train.roi_fg_iou = " << format_double(c.roi_fg_iou) << "\n";
  os << "train.roi_bg_lo = " << format_double(c.roi_bg_lo) << "\n";
  os << "train.roi_bg_hi = " << format_double(c.roi_bg_hi) << "\n";
  os << "train.bbox_reg_stds = " << format_double_list(c.bbox_reg_stds) << "\n";
  os << "train.hflip = " << (c.hflip ? "true" : "false") << "\n";
  os << "train.checkpoint_every = " << c.checkpoint_every << "\n";
  os << "train.print_every = " << c.print_every << "\n";
  os << "test.score_threshold = " << format_double(c.test_score_threshold) << "\n";
  os << "test.nms_threshold = " << format_double(c.test_nms_threshold) << "\n";
  os << "test.max_detections = " << c.test_max_detections << "\n";
  os << "eval.interpolation = " << c.eval_interpolation << "\n";
  return os.str();
}

}  // namespace grcn
