#pragma once

#include <cstdint>
#include <vector>

#include "afldm/tensor.hpp"

namespace afldm::data {

struct ImageOptions {
  int size = 32;
  int channels = 3;
  int modes = 4;        // random Fourier modes per image
  int sprites = 3;      // periodized Gaussian blobs per image
  double cutoff = 6.0;  // ideal low-pass cutoff in cycles per image
};

// Periodic, band-limited toy images in [-1, 1], [count, C, S, S].
Tensor generate_images(std::uint64_t seed, int count, const ImageOptions& options = {});

struct VideoOptions {
  int size = 32;
  int channels = 3;
  int frames = 4;
  int modes = 3;
  int sprites = 3;
  double max_translation = 1.5;  // pixels per frame
  double max_wobble = 0.4;       // amplitude of the smooth non-rigid part
};

// frames[i+1](q) = frames[i](q + flow_bwd[i](q)); flow_fwd[i] is its inverse
// map, so frames[i](p) ~= frames[i+1](p + flow_fwd[i](p)). Flows are [2, S, S]
// holding (dx, dy).
struct ToyVideo {
  std::uint64_t seed = 0;
  std::vector<Tensor> frames;  // [C, S, S]
  std::vector<Tensor> flow_fwd;
  std::vector<Tensor> flow_bwd;
};

ToyVideo generate_video(std::uint64_t seed, const VideoOptions& options = {});
std::vector<ToyVideo> generate_videos(std::uint64_t seed, int count, const VideoOptions& options = {});

// Gathers the given rows of a batch along axis 0.
Tensor batch_rows(const Tensor& data, const std::vector<std::int64_t>& rows);

}  // namespace afldm::data
