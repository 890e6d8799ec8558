#include "grcn/checkpoint.hpp"

#include <fstream>

#include "grcn/errors.hpp"
#include "grcn/serialize.hpp"

namespace grcn {

namespace {

constexpr char kMagic[4] = {'G', 'R', 'C', 'N'};

void write_named_tensors(std::ostream& os,
                         const std::vector<std::pair<std::string, Tensor>>& items) {
  write_u32(os, static_cast<std::uint32_t>(items.size()));
  for (const auto& [name, t] : items) {
    write_string(os, name);
    write_tensor(os, t);
  }
}

std::vector<std::pair<std::string, Tensor>> read_named_tensors(std::istream& is) {
  const std::uint32_t n = read_u32(is);
  std::vector<std::pair<std::string, Tensor>> items;
  items.reserve(n);
  for (std::uint32_t i = 0; i < n; ++i) {
    std::string name = read_string(is);
    items.emplace_back(std::move(name), read_tensor(is));
  }
  return items;
}

}  // namespace

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open " + path + " for writing");
  os.write(kMagic, 4);
  write_u32(os, ckpt.version);
  write_string(os, ckpt.config_text);
  write_u64(os, ckpt.iteration);
  write_u64(os, ckpt.rng_seed);
  write_named_tensors(os, ckpt.parameters);
  write_named_tensors(os, ckpt.velocities);
  if (!os) throw IoError("write failed on " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open checkpoint " + path);
  char magic[4];
  is.read(magic, 4);
  if (is.gcount() != 4 || magic[0] != 'G' || magic[1] != 'R' || magic[2] != 'C' || magic[3] != 'N') {
    throw IoError("not a checkpoint file: " + path);
  }
  Checkpoint ckpt;
  ckpt.version = read_u32(is);
  if (ckpt.version != 1) {
    throw IoError("unsupported checkpoint version " + std::to_string(ckpt.version));
  }
  ckpt.config_text = read_string(is);
  ckpt.iteration = read_u64(is);
  ckpt.rng_seed = read_u64(is);
  ckpt.parameters = read_named_tensors(is);
  ckpt.velocities = read_named_tensors(is);
  return ckpt;
}

}  // namespace grcn
