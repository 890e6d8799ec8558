#ifndef GRCN_SYNTHETIC_HPP
#define GRCN_SYNTHETIC_HPP

#include <cstdint>
#include <string>
#include <vector>

#include "grcn/training.hpp"

namespace grcn {

// Number of distinct shape/color archetypes the generator can draw;
// num_classes may not exceed it.
int synthetic_archetype_count();
std::string synthetic_archetype_name(int class_id);

// Scenes of 1-4 lightly overlapping shapes (circle / square / triangle in
// distinct colors) on a textured background. Object scale is mixed across
// the <32^2, 32^2..96^2 and >96^2 area buckets when the image is large
// enough. Deterministic in (seed, index): regenerating any subset yields
// identical bytes.
std::vector<SyntheticScene> generate_synthetic_dataset(std::uint64_t seed, int n_images,
                                                       int num_classes, int width, int height);

// Area-bucket histogram (small, medium, large) of a scene list's gt boxes.
struct SizeHistogram {
  int small = 0;
  int medium = 0;
  int large = 0;
};
SizeHistogram size_histogram(const std::vector<SyntheticScene>& scenes);

// On-disk layout: <dir>/scenes.jsonl with one
//   {"image": "scene_00000.ten", "boxes": [{"x1":..,"y1":..,"x2":..,"y2":..,"class":..}, ...]}
// line per scene, plus the referenced tensors in the binary tensor format.
void save_dataset(const std::string& dir, const std::vector<SyntheticScene>& scenes);

// Loads scenes [begin, end); end < 0 means all.
std::vector<SyntheticScene> load_dataset(const std::string& dir, int begin = 0, int end = -1);
int dataset_size(const std::string& dir);

}  // namespace grcn

#endif  // GRCN_SYNTHETIC_HPP
