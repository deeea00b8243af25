#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <vector>

#include "afldm/metrics.hpp"
#include "afldm/networks.hpp"
#include "afldm/random.hpp"

namespace afldm {

class NoiseSchedule {
 public:
  // Linear beta schedule over `steps` timesteps 0 .. steps-1.
  explicit NoiseSchedule(int steps = 1000, double beta_start = 1e-4, double beta_end = 0.02);

  int steps() const { return static_cast<int>(alpha_bar_.size()); }
  double beta(int t) const;
  double alpha_bar(int t) const;

  // n + 1 timesteps tau_0 = 0 < ... < tau_n = steps - 1, tau_i = round(i (T-1) / n).
  std::vector<int> subsequence(int n) const;

 private:
  std::vector<double> beta_;
  std::vector<double> alpha_bar_;
};

// sqrt(abar_t) z0 + sqrt(1 - abar_t) eps, with one timestep per sample.
Tensor add_noise(const NoiseSchedule& s, const Tensor& z0, const std::vector<int>& t, const Tensor& eps);

// Deterministic DDIM update from t to t_prev <= t.
Tensor ddim_step(const NoiseSchedule& s, const Tensor& z_t, const Tensor& eps, int t, int t_prev);
// The same update run forward in time, t_next >= t.
Tensor ddim_invert_step(const NoiseSchedule& s, const Tensor& z_t, const Tensor& eps, int t, int t_next);

// eps prediction for latent z at timestep t; `index` is the position of t in
// the sampling subsequence.
using EpsFn = std::function<Tensor(const Tensor& z, int t, int index)>;
using StepCallback = std::function<void(int index, int t, const Tensor& z)>;

// Denoises from subsequence index `start` (default: n, i.e. pure noise) down
// to index 0. The callback sees the latent after every update.
Tensor ddim_sample(const NoiseSchedule& s, const EpsFn& eps, const Tensor& z, int n, int start = -1,
                   const StepCallback& callback = {});
// Inverts from index 0 up to index `stop` (default n).
Tensor ddim_invert(const NoiseSchedule& s, const EpsFn& eps, const Tensor& z0, int n, int stop = -1,
                   const StepCallback& callback = {});

// Per-step attention caches of one trajectory.
using TrajectoryCache = std::map<int, nn::KVCache>;

enum class CacheUse { kNone, kRecord, kReuse };

// Wraps the U-Net. kRecord stores the attention keys/values of each step in
// `cache`; kReuse attends to them (cross-frame attention).
EpsFn unet_eps(const UNet& unet, CacheUse use = CacheUse::kNone, TrajectoryCache* cache = nullptr);

// Same, with the cache of every step interpolated between two recorded
// trajectories.
EpsFn unet_eps_interpolated(const UNet& unet, const TrajectoryCache& a, const TrajectoryCache& b, double alpha);

// ---------------------------------------------------------------------------
// Losses

// sum(mask * (a - b)^2) / (count(mask) * C * B) for [B, C, H, W].
Tensor masked_mse(const Tensor& a, const Tensor& b, const spectral::ValidMask& mask);
Tensor mse(const Tensor& a, const Tensor& b);

// Integer image-space offsets drawn uniformly from [-3H/8, 3H/8] per axis.
class DeltaSampler {
 public:
  DeltaSampler(int image_size, std::uint64_t seed);
  metrics::Offset sample();
  int limit() const { return limit_; }

 private:
  int limit_;
  Rng rng_;
};

using MapFn = std::function<Tensor(const Tensor&)>;

// ||E(T_d x) - T_{d/k} E(x)||^2 over the valid latent region, cropped shifts.
Tensor encoder_equivariance_loss(const MapFn& encoder, const Tensor& x, metrics::Offset delta, int k);
// ||D(T_{d/k} z) - T_d D(z)||^2 over the valid image region, cropped shifts.
Tensor decoder_equivariance_loss(const MapFn& decoder, const Tensor& z, metrics::Offset delta, int k);

struct VaeLossWeights {
  double kl = 1e-6;
  double equivariance = 1.0;
};

struct VaeLoss {
  Tensor total;
  double reconstruction = 0.0;
  double kl = 0.0;
  double encoder_eq = 0.0;
  double decoder_eq = 0.0;
};

// Reconstruction MSE + kl * KL, plus (L_enc + L_dec) when `equivariance`.
VaeLoss vae_loss(const Vae& vae, const Tensor& x, const Tensor& noise, metrics::Offset delta,
                 const VaeLossWeights& weights, bool equivariance);

enum class EqLossMode { kNone, kPlain, kEquivariantAttention };

std::string to_string(EqLossMode mode);
EqLossMode parse_eq_loss_mode(const std::string& name);

struct UNetLoss {
  Tensor total;
  double diffusion = 0.0;
  double equivariance = 0.0;
};

// Noise-prediction MSE plus lambda * masked MSE between the prediction on the
// circularly shifted noisy latent and the cropped shift of the prediction.
// `delta` is in latent pixels; both passes share t and carry gradients.
UNetLoss unet_loss(const UNet& unet, const NoiseSchedule& s, const Tensor& z0, const std::vector<int>& t,
                   const Tensor& eps, metrics::Offset delta, double lambda, EqLossMode mode);

}  // namespace afldm
