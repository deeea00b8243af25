#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "afldm/dataset.hpp"
#include "afldm/diffusion.hpp"
#include "afldm/metrics.hpp"

namespace afldm::pipelines {

// Non-owning view of a VAE + U-Net pair. Latents seen by the U-Net are the
// VAE posterior means multiplied by unet.config().latent_scale.
struct LatentDiffusion {
  const Vae& vae;
  const UNet& unet;
  const NoiseSchedule& schedule;
  int ddim_steps = 50;
  bool cross_frame_attention = true;  // shifted/edited passes attend to the reference caches

  Tensor encode(const Tensor& images) const;
  Tensor decode(const Tensor& latents) const;
  int factor() const { return vae.config().downsample_factor; }

  // Full denoising loop from start index (default: all steps).
  Tensor sample(const Tensor& z, CacheUse use = CacheUse::kNone, TrajectoryCache* cache = nullptr,
                int start = -1) const;
  Tensor invert(const Tensor& z0, CacheUse use = CacheUse::kNone, TrajectoryCache* cache = nullptr,
                int stop = -1) const;
};

// ---------------------------------------------------------------------------
// SPSNR pipelines

// Image -> latent mean; k = 1/factor, cropped in and out, latent range peak.
metrics::PipelineUnderTest encoder_pipeline(const Vae& vae);
// Latent -> image; k = factor, image peak.
metrics::PipelineUnderTest decoder_pipeline(const Vae& vae,
                                            spectral::ShiftMode input_mode = spectral::ShiftMode::kCropped);
// Noise -> denoised latent. The shifted run reuses the reference caches when
// cross-frame attention is on.
metrics::PipelineUnderTest ldm_latent_pipeline(const LatentDiffusion& ldm,
                                               spectral::ShiftMode input_mode = spectral::ShiftMode::kCircular);
// Noise -> decoded image.
metrics::PipelineUnderTest ldm_image_pipeline(const LatentDiffusion& ldm,
                                              spectral::ShiftMode input_mode = spectral::ShiftMode::kCircular);

// Integer image-space offsets from DeltaSampler, divided by `divisor`.
std::vector<metrics::Offset> random_offsets(std::uint64_t seed, int count, int image_size, double divisor);

// Mean SPSNR over a batch with one offset per sample.
metrics::MetricRecord mean_spsnr(const std::string& name, const metrics::PipelineUnderTest& p, const Tensor& inputs,
                                 const std::vector<metrics::Offset>& deltas);

// Identity map with k = 1; SPSNR of it is the cap for any offset.
metrics::PipelineUnderTest identity_pipeline();

struct SweepSpec {
  double step = 0.25;  // input-grid pixels per sweep index, horizontal
  int count = 8;
};

// Mean SPSNR at offsets i * step, i = 1 .. count. count = 0 gives no records.
std::vector<metrics::MetricRecord> shift_sweep(const std::string& name, const metrics::PipelineUnderTest& p,
                                               const Tensor& inputs, const SweepSpec& spec);

// Runs the reference and the circularly shifted noise through `steps` shared
// DDIM steps and records the latent SPSNR (cropped comparison) after every
// step, starting with the noise itself at step 0.
std::vector<metrics::MetricRecord> denoise_spsnr_curve(const std::string& name, const LatentDiffusion& ldm,
                                                       const Tensor& noise, double delta, int steps = 20);

// ---------------------------------------------------------------------------
// Warping error

struct WarpingScores {
  double input = 0.0;
  double inversion = 0.0;
  double generation = 0.0;
};

struct WarpPair {
  Tensor frame1;  // [C, H, W]
  Tensor frame2;
  Tensor flow;    // backward flow: frame2(q) ~= frame1(q + flow(q))
};

// Mean PSNR over pairs. Input: warp(frame1) vs frame2. Inversion: warped
// DDIM inversion of frame1 vs inversion of frame2 (latent flow = flow sampled
// every k pixels and divided by k). Generation: decode(sample(warped
// inversion of frame1)) vs warp(decode(sample(inversion of frame1))).
WarpingScores warping_error(const LatentDiffusion& ldm, const std::vector<WarpPair>& pairs);

// Consecutive frame pairs of the videos.
std::vector<WarpPair> video_pairs(const std::vector<data::ToyVideo>& videos, int max_pairs = -1);

// Mean squared error of warp(frames[i]) vs frames[i+1] over valid pixels.
double neighbor_warping_mse(const std::vector<Tensor>& frames, const std::vector<Tensor>& flows_bwd);

// ---------------------------------------------------------------------------
// Video editing and interpolation

struct EditOptions {
  double strength = 0.5;    // inversion stop index as a fraction of the DDIM steps
  std::uint64_t seed = 0;   // edit perturbation seed
  double magnitude = 1.0;   // perturbation scale relative to sqrt(1 - abar) at the stop step
};

// Frame 1 is inverted and resampled with its attention caches recorded;
// frames 2..N reuse them (or use plain attention without cross-frame
// attention). The edit adds one seeded per-channel offset to every inverted
// latent. Frames are [C, H, W].
std::vector<Tensor> edit_video(const LatentDiffusion& ldm, const std::vector<Tensor>& frames,
                               const EditOptions& options);

// Spherical interpolation of the flattened tensors; falls back to lerp below
// 1e-4 rad.
Tensor slerp(const Tensor& a, const Tensor& b, double alpha);

struct Interpolation {
  std::vector<Tensor> frames;        // [C, H, W]
  std::vector<double> hole_fraction; // latent pixels no splat reached, per frame
};

// N in-between frames at alpha = i / (N + 1). flow_fwd maps x1 pixels onto
// x2, flow_bwd maps x2 pixels onto x1 (image resolution).
Interpolation interpolate_images(const LatentDiffusion& ldm, const Tensor& x1, const Tensor& x2,
                                 const Tensor& flow_fwd, const Tensor& flow_bwd, int count);

}  // namespace afldm::pipelines
