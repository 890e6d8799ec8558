#ifndef GRCN_CHECKPOINT_HPP
#define GRCN_CHECKPOINT_HPP

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "grcn/tensor.hpp"

namespace grcn {

// Versioned binary training snapshot: config text, iteration, every named
// parameter and optimizer velocity, and the run seed. Loading one resumes
// training bit-exactly because all per-iteration randomness is keyed by
// (seed, iteration).
struct Checkpoint {
  std::uint32_t version = 1;
  std::string config_text;
  std::uint64_t iteration = 0;
  std::uint64_t rng_seed = 0;
  std::vector<std::pair<std::string, Tensor>> parameters;
  std::vector<std::pair<std::string, Tensor>> velocities;
};

void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace grcn

#endif  // GRCN_CHECKPOINT_HPP
