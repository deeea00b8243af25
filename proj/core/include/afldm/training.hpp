#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "afldm/diffusion.hpp"
#include "afldm/optim.hpp"

namespace afldm {

struct TrainOptions {
  int steps = 1000;
  int batch = 8;
  double lr = 1e-3;
  double lr_final = 0.0;  // cosine decay target; < 0 keeps lr constant
  int warmup = 50;
  double clip_norm = 1.0;
  std::uint64_t seed = 0;
  int log_every = 50;
};

struct VaeTrainOptions : TrainOptions {
  bool equivariance_loss = true;
  VaeLossWeights weights;
};

struct UNetTrainOptions : TrainOptions {
  EqLossMode eq_mode = EqLossMode::kNone;
  double lambda = 1.0;
};

// One line per logged step; metric names are "loss", "rec", "kl", "enc_eq",
// "dec_eq", "diffusion", "eq".
struct TrainLog {
  std::vector<metrics::MetricRecord> records;
  double final_loss = 0.0;
};

using ProgressFn = std::function<void(int step, const std::string& line)>;

// Learning rate at step `step` (linear warmup then cosine decay).
double learning_rate(const TrainOptions& o, int step);

// images [N, C, H, W]. Deterministic for a fixed seed. Throws NumericalError
// when the loss diverges.
TrainLog train_vae(Vae& vae, const Tensor& images, const VaeTrainOptions& options, const ProgressFn& progress = {});

// latents [N, c, h, w], already multiplied by the U-Net latent scale.
TrainLog train_unet(UNet& unet, const NoiseSchedule& schedule, const Tensor& latents, const UNetTrainOptions& options,
                    const ProgressFn& progress = {});

// Posterior means of `images` in batches, without gradient tracking.
Tensor encode_dataset(const Vae& vae, const Tensor& images, int batch = 16);

// 1 / std of all latent values.
double latent_scale_for(const Tensor& latents);

}  // namespace afldm
