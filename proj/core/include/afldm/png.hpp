#pragma once

#include <filesystem>
#include <vector>

#include "afldm/tensor.hpp"

namespace afldm {

// Writes x [C, H, W] (C = 1 or 3) or [H, W] as an 8-bit PNG, mapping
// [lo, hi] to [0, 255] with clamping.
void write_png(const std::filesystem::path& path, const Tensor& x, double lo = -1.0, double hi = 1.0);

// Concatenates [C, H, W] frames horizontally.
Tensor frame_strip(const std::vector<Tensor>& frames);

}  // namespace afldm
