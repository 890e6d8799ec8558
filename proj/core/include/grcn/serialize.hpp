#ifndef GRCN_SERIALIZE_HPP
#define GRCN_SERIALIZE_HPP

#include <cstdint>
#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

#include "grcn/tensor.hpp"

namespace grcn {

// Little-endian primitives. All on-disk formats in this project are built
// from these, so files are identical across platforms.
void write_u32(std::ostream& os, std::uint32_t v);
void write_u64(std::ostream& os, std::uint64_t v);
void write_f64(std::ostream& os, double v);
std::uint32_t read_u32(std::istream& is);
std::uint64_t read_u64(std::istream& is);
double read_f64(std::istream& is);
void write_string(std::ostream& os, const std::string& s);
std::string read_string(std::istream& is);

// Tensor wire format: u32 rank, u32 dims[rank], f64 values[prod(dims)].
// Gradients are not serialized.
void write_tensor(std::ostream& os, const Tensor& t);
Tensor read_tensor(std::istream& is);

void save_tensor_file(const std::string& path, const Tensor& t);
Tensor load_tensor_file(const std::string& path);

}  // namespace grcn

#endif  // GRCN_SERIALIZE_HPP
