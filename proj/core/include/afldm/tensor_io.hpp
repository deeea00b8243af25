#pragma once

// Raw tensor files: "AFT1", u8 dtype (0=f32, 1=f64), u8 rank, rank x u32 LE
// dims, then the row-major little-endian payload.

#include <filesystem>
#include <iosfwd>

#include "afldm/tensor.hpp"

namespace afldm {

void write_tensor(std::ostream& os, const Tensor& t);
// Throws CheckpointError on bad magic, unknown dtype or truncation.
Tensor read_tensor(std::istream& is);

void save_tensor(const std::filesystem::path& path, const Tensor& t);
Tensor load_tensor(const std::filesystem::path& path);

}  // namespace afldm
