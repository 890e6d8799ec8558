#include "grcn/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "grcn/errors.hpp"
#include "grcn/serialize.hpp"

namespace grcn {

namespace {

enum class ShapeKind { kCircle, kSquare, kTriangle };

struct Archetype {
  ShapeKind shape;
  double r, g, b;
  const char* name;
};

const Archetype kArchetypes[] = {
    {ShapeKind::kCircle, 0.90, 0.15, 0.15, "red circle"},
    {ShapeKind::kSquare, 0.15, 0.85, 0.20, "green square"},
    {ShapeKind::kTriangle, 0.20, 0.30, 0.95, "blue triangle"},
    {ShapeKind::kCircle, 0.95, 0.90, 0.15, "yellow circle"},
    {ShapeKind::kSquare, 0.90, 0.20, 0.90, "magenta square"},
    {ShapeKind::kTriangle, 0.15, 0.90, 0.90, "cyan triangle"},
};

constexpr int kArchetypeCount = static_cast<int>(sizeof(kArchetypes) / sizeof(kArchetypes[0]));

bool point_in_shape(ShapeKind kind, double px, double py, double cx, double cy, double half) {
  switch (kind) {
    case ShapeKind::kCircle: {
      const double dx = px - cx, dy = py - cy;
      return dx * dx + dy * dy <= half * half;
    }
    case ShapeKind::kSquare:
      return std::abs(px - cx) <= half && std::abs(py - cy) <= half;
    case ShapeKind::kTriangle: {
      // Isoceles, apex up, inscribed in the box of half-extent `half`.
      const double ly = (py - (cy - half)) / (2.0 * half);  // 0 at apex row, 1 at base
      if (ly < 0.0 || ly > 1.0) return false;
      return std::abs(px - cx) <= half * ly;
    }
  }
  return false;
}

}  // namespace

int synthetic_archetype_count() { return kArchetypeCount; }

std::string synthetic_archetype_name(int class_id) {
  if (class_id < 0 || class_id >= kArchetypeCount) {
    throw ConfigError("archetype id out of range: " + std::to_string(class_id));
  }
  return kArchetypes[class_id].name;
}

std::vector<SyntheticScene> generate_synthetic_dataset(std::uint64_t seed, int n_images,
                                                       int num_classes, int width, int height) {
  if (n_images < 0) throw ConfigError("n_images must be >= 0");
  if (width < 32 || height < 32) throw ConfigError("image size must be at least 32x32");
  if (num_classes < 1 || num_classes > kArchetypeCount) {
    throw ConfigError("num_classes must be in [1," + std::to_string(kArchetypeCount) + "]");
  }

  std::vector<SyntheticScene> scenes;
  scenes.reserve(static_cast<std::size_t>(n_images));
  const double min_dim = std::min(width, height);

  for (int idx = 0; idx < n_images; ++idx) {
    Rng rng(seed, Rng::stream("scene:" + std::to_string(idx)));
    SyntheticScene scene;
    scene.image = Tensor::zeros({1, 3, height, width});
    auto& img = scene.image.values();
    const std::size_t plane = static_cast<std::size_t>(height) * width;

    // Textured background: a soft two-wave pattern plus pixel noise, kept
    // far from the saturated object colors.
    const double base_r = rng.uniform(0.25, 0.45);
    const double base_g = rng.uniform(0.25, 0.45);
    const double base_b = rng.uniform(0.25, 0.45);
    const double fx = rng.uniform(0.02, 0.08), fy = rng.uniform(0.02, 0.08);
    const double phase = rng.uniform(0.0, 6.28318530717958647692);
    for (int y = 0; y < height; ++y)
      for (int x = 0; x < width; ++x) {
        const double wave = 0.06 * std::sin(fx * x + phase) * std::cos(fy * y - phase);
        const double noise = rng.uniform(-0.03, 0.03);
        const std::size_t p = static_cast<std::size_t>(y) * width + x;
        img[0 * plane + p] = std::clamp(base_r + wave + noise, 0.0, 1.0);
        img[1 * plane + p] = std::clamp(base_g + wave + noise, 0.0, 1.0);
        img[2 * plane + p] = std::clamp(base_b + wave + noise, 0.0, 1.0);
      }

    const int want = 1 + static_cast<int>(rng.next_below(4));
    for (int obj = 0; obj < want; ++obj) {
      const int cls = static_cast<int>(rng.next_below(static_cast<std::uint64_t>(num_classes)));
      // Mixture over the three area buckets; large shapes only where they fit.
      double side;
      const double bucket = rng.next_double();
      const double large_max = std::min(0.85 * min_dim, 120.0);
      const double medium_max = std::min(90.0, 0.6 * min_dim);
      if (bucket < 0.40 || medium_max <= 36.0) {
        side = rng.uniform(12.0, 30.0);
      } else if (bucket < 0.80 || large_max < 98.0) {
        side = rng.uniform(34.0, medium_max);
      } else {
        side = rng.uniform(98.0, large_max);
      }
      const double half = side / 2.0;

      bool placed = false;
      for (int attempt = 0; attempt < 20 && !placed; ++attempt) {
        const double cx = rng.uniform(half + 2.0, width - half - 2.0);
        const double cy = rng.uniform(half + 2.0, height - half - 2.0);
        Box box{cx - half, cy - half, cx + half, cy + half};
        bool ok = true;
        for (const auto& existing : scene.gt_boxes) {
          if (iou(box, existing) > 0.25) {
            ok = false;
            break;
          }
        }
        if (!ok) continue;

        const auto& at = kArchetypes[cls];
        const int y0 = std::max(0, static_cast<int>(std::floor(box.y1)));
        const int y1 = std::min(height, static_cast<int>(std::ceil(box.y2)));
        const int x0 = std::max(0, static_cast<int>(std::floor(box.x1)));
        const int x1 = std::min(width, static_cast<int>(std::ceil(box.x2)));
        for (int y = y0; y < y1; ++y)
          for (int x = x0; x < x1; ++x) {
            if (!point_in_shape(at.shape, x + 0.5, y + 0.5, cx, cy, half)) continue;
            const std::size_t p = static_cast<std::size_t>(y) * width + x;
            img[0 * plane + p] = at.r;
            img[1 * plane + p] = at.g;
            img[2 * plane + p] = at.b;
          }
        scene.gt_boxes.push_back(box);
        scene.gt_classes.push_back(cls);
        placed = true;
      }
      // Placement can fail on crowded scenes; the object is skipped.
    }
    scenes.push_back(std::move(scene));
  }
  return scenes;
}

SizeHistogram size_histogram(const std::vector<SyntheticScene>& scenes) {
  SizeHistogram h;
  for (const auto& s : scenes)
    for (const auto& b : s.gt_boxes) {
      const double area = b.area();
      if (area < 1024.0) {
        ++h.small;
      } else if (area < 9216.0) {
        ++h.medium;
      } else {
        ++h.large;
      }
    }
  return h;
}

void save_dataset(const std::string& dir, const std::vector<SyntheticScene>& scenes) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(dir, ec);
  const std::string manifest_path = dir + "/scenes.jsonl";
  std::ofstream manifest(manifest_path, std::ios::binary);
  if (!manifest) throw IoError("cannot open " + manifest_path + " for writing");

  char name[32];
  for (std::size_t i = 0; i < scenes.size(); ++i) {
    std::snprintf(name, sizeof(name), "scene_%05zu.ten", i);
    save_tensor_file(dir + "/" + name, scenes[i].image);
    nlohmann::json line;
    line["image"] = name;
    nlohmann::json boxes = nlohmann::json::array();
    for (std::size_t b = 0; b < scenes[i].gt_boxes.size(); ++b) {
      const auto& box = scenes[i].gt_boxes[b];
      boxes.push_back({{"x1", box.x1},
                       {"y1", box.y1},
                       {"x2", box.x2},
                       {"y2", box.y2},
                       {"class", scenes[i].gt_classes[b]}});
    }
    line["boxes"] = std::move(boxes);
    manifest << line.dump() << "\n";
  }
  if (!manifest) throw IoError("write failed on " + manifest_path);
}

namespace {

std::vector<std::string> read_manifest(const std::string& dir) {
  const std::string path = dir + "/scenes.jsonl";
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty()) lines.push_back(line);
  }
  return lines;
}

}  // namespace

int dataset_size(const std::string& dir) { return static_cast<int>(read_manifest(dir).size()); }

std::vector<SyntheticScene> load_dataset(const std::string& dir, int begin, int end) {
  const auto lines = read_manifest(dir);
  const int n = static_cast<int>(lines.size());
  if (end < 0 || end > n) end = n;
  if (begin < 0 || begin > end) {
    throw ConfigError("dataset range [" + std::to_string(begin) + "," + std::to_string(end) +
                      ") is invalid for " + std::to_string(n) + " scenes");
  }
  std::vector<SyntheticScene> scenes;
  scenes.reserve(static_cast<std::size_t>(end - begin));
  for (int i = begin; i < end; ++i) {
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(lines[static_cast<std::size_t>(i)]);
    } catch (const nlohmann::json::exception& e) {
      throw IoError("bad manifest line " + std::to_string(i) + ": " + e.what());
    }
    SyntheticScene s;
    s.image = load_tensor_file(dir + "/" + j.at("image").get<std::string>());
    for (const auto& b : j.at("boxes")) {
      s.gt_boxes.push_back({b.at("x1").get<double>(), b.at("y1").get<double>(),
                            b.at("x2").get<double>(), b.at("y2").get<double>()});
      s.gt_classes.push_back(b.at("class").get<int>());
    }
    scenes.push_back(std::move(s));
  }
  return scenes;
}

}  // namespace grcn
