#pragma once

// Dense flow fields and the two warping directions.
//
// A flow is a [2, H, W] tensor holding (fx, fy) in pixels. Backward warping
// samples the source at q + flow(q); splatting pushes every source pixel p to
// p + flow(p).

#include "afldm/spectral.hpp"
#include "afldm/tensor.hpp"

namespace afldm::flow {

struct WarpResult {
  Tensor value;          // same shape as the input
  spectral::ValidMask mask;  // 0 where a sample fell outside the frame
};

// Bilinear backward warp of x [..., H, W]. Not differentiable.
WarpResult warp(const Tensor& x, const Tensor& flow);

struct SplatResult {
  Tensor value;
  Tensor weight;             // [H, W] accumulated bilinear weights
  spectral::ValidMask mask;  // 0 where nothing landed (holes)
};

// Bilinear forward scatter normalized by the accumulated weights.
SplatResult splat(const Tensor& x, const Tensor& flow);

// Un-normalized scatter-add; conserves the sum of x when nothing leaves the
// frame.
Tensor splat_sum(const Tensor& x, const Tensor& flow);

// Samples the flow at the pixels of a grid `factor` times coarser (coarse
// pixel p sits on fine pixel factor * p) and divides by `factor`.
Tensor downscale_flow(const Tensor& flow, int factor);

Tensor scale_flow(const Tensor& flow, double alpha);

// Flow that maps every pixel by a constant offset.
Tensor constant_flow(std::int64_t height, std::int64_t width, double fx, double fy);

}  // namespace afldm::flow
