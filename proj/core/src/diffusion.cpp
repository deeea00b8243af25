#include "afldm/diffusion.hpp"

#include <cmath>

#include "afldm/error.hpp"

namespace afldm {
namespace {

Tensor per_sample_scale(const Tensor& like, const std::vector<double>& factors) {
  const std::int64_t b = like.dim(0);
  if (static_cast<std::size_t>(b) != factors.size()) {
    throw ShapeError("need one timestep per sample, got " + std::to_string(factors.size()) + " for batch " +
                     std::to_string(b));
  }
  const std::int64_t per = like.numel() / b;
  std::vector<double> v(static_cast<std::size_t>(like.numel()));
  for (std::int64_t i = 0; i < b; ++i) {
    std::fill_n(v.begin() + i * per, per, factors[static_cast<std::size_t>(i)]);
  }
  return Tensor::from_vector(like.shape(), std::move(v), DType::kF64);
}

void check_t(const NoiseSchedule& s, int t) {
  if (t < 0 || t >= s.steps()) {
    throw ConfigError("timestep " + std::to_string(t) + " outside [0, " + std::to_string(s.steps() - 1) + "]");
  }
}

spectral::ValidMask loss_mask(double k, spectral::ShiftMode in, spectral::ShiftMode out, std::int64_t h,
                              std::int64_t w, metrics::Offset input_delta) {
  metrics::PipelineUnderTest p;
  p.k = k;
  p.input_mode = in;
  p.output_mode = out;
  return metrics::spsnr_mask(p, h, w, input_delta);
}

}  // namespace

NoiseSchedule::NoiseSchedule(int steps, double beta_start, double beta_end) {
  if (steps < 2) throw ConfigError("noise schedule needs at least 2 steps");
  if (!(beta_start > 0.0) || !(beta_end < 1.0) || beta_end < beta_start) {
    throw ConfigError("noise schedule betas must satisfy 0 < start <= end < 1");
  }
  beta_.resize(static_cast<std::size_t>(steps));
  alpha_bar_.resize(static_cast<std::size_t>(steps));
  double prod = 1.0;
  for (int t = 0; t < steps; ++t) {
    const double b = beta_start + (beta_end - beta_start) * t / (steps - 1);
    beta_[static_cast<std::size_t>(t)] = b;
    prod *= 1.0 - b;
    alpha_bar_[static_cast<std::size_t>(t)] = prod;
  }
}

double NoiseSchedule::beta(int t) const {
  check_t(*this, t);
  return beta_[static_cast<std::size_t>(t)];
}

double NoiseSchedule::alpha_bar(int t) const {
  check_t(*this, t);
  return alpha_bar_[static_cast<std::size_t>(t)];
}

std::vector<int> NoiseSchedule::subsequence(int n) const {
  if (n < 1 || n > steps() - 1) throw ConfigError("ddim step count must be in [1, " + std::to_string(steps() - 1) + "]");
  std::vector<int> tau(static_cast<std::size_t>(n) + 1);
  for (int i = 0; i <= n; ++i) {
    tau[static_cast<std::size_t>(i)] =
        static_cast<int>(std::lround(static_cast<double>(i) * (steps() - 1) / static_cast<double>(n)));
  }
  return tau;
}

Tensor add_noise(const NoiseSchedule& s, const Tensor& z0, const std::vector<int>& t, const Tensor& eps) {
  if (z0.shape() != eps.shape()) throw ShapeError("add_noise: latent and noise shapes differ");
  std::vector<double> a, b;
  for (int ti : t) {
    const double ab = s.alpha_bar(ti);
    a.push_back(std::sqrt(ab));
    b.push_back(std::sqrt(1.0 - ab));
  }
  return per_sample_scale(z0, a) * z0 + per_sample_scale(eps, b) * eps;
}

Tensor ddim_step(const NoiseSchedule& s, const Tensor& z_t, const Tensor& eps, int t, int t_prev) {
  if (t_prev > t) throw ConfigError("ddim_step: t_prev " + std::to_string(t_prev) + " > t " + std::to_string(t));
  if (z_t.shape() != eps.shape()) throw ShapeError("ddim_step: latent and eps shapes differ");
  const double ab = s.alpha_bar(t), ap = s.alpha_bar(t_prev);
  const Tensor x0 = (z_t - eps * std::sqrt(1.0 - ab)) * (1.0 / std::sqrt(ab));
  return x0 * std::sqrt(ap) + eps * std::sqrt(1.0 - ap);
}

Tensor ddim_invert_step(const NoiseSchedule& s, const Tensor& z_t, const Tensor& eps, int t, int t_next) {
  if (t_next < t) throw ConfigError("ddim_invert_step: t_next " + std::to_string(t_next) + " < t " + std::to_string(t));
  if (z_t.shape() != eps.shape()) throw ShapeError("ddim_invert_step: latent and eps shapes differ");
  const double ab = s.alpha_bar(t), an = s.alpha_bar(t_next);
  const Tensor x0 = (z_t - eps * std::sqrt(1.0 - ab)) * (1.0 / std::sqrt(ab));
  return x0 * std::sqrt(an) + eps * std::sqrt(1.0 - an);
}

Tensor ddim_sample(const NoiseSchedule& s, const EpsFn& eps, const Tensor& z, int n, int start,
                   const StepCallback& callback) {
  const auto tau = s.subsequence(n);
  if (start < 0) start = n;
  if (start > n) throw ConfigError("ddim_sample: start index beyond the subsequence");
  Tensor cur = z;
  for (int i = start; i >= 1; --i) {
    const int t = tau[static_cast<std::size_t>(i)], tp = tau[static_cast<std::size_t>(i - 1)];
    cur = ddim_step(s, cur, eps(cur, t, i), t, tp);
    if (callback) callback(i - 1, tp, cur);
  }
  return cur;
}

Tensor ddim_invert(const NoiseSchedule& s, const EpsFn& eps, const Tensor& z0, int n, int stop,
                   const StepCallback& callback) {
  const auto tau = s.subsequence(n);
  if (stop < 0) stop = n;
  if (stop > n) throw ConfigError("ddim_invert: stop index beyond the subsequence");
  Tensor cur = z0;
  for (int i = 0; i < stop; ++i) {
    const int t = tau[static_cast<std::size_t>(i)], tn = tau[static_cast<std::size_t>(i + 1)];
    cur = ddim_invert_step(s, cur, eps(cur, t, i), t, tn);
    if (callback) callback(i + 1, tn, cur);
  }
  return cur;
}

EpsFn unet_eps(const UNet& unet, CacheUse use, TrajectoryCache* cache) {
  if (use != CacheUse::kNone && !cache) throw ConfigError("unet_eps: cache mode without a cache");
  return [&unet, use, cache](const Tensor& z, int t, int index) {
    const std::vector<int> ts(static_cast<std::size_t>(z.dim(0)), t);
    switch (use) {
      case CacheUse::kNone:
        return unet.forward(z, ts);
      case CacheUse::kRecord: {
        nn::KVCache& c = (*cache)[index];
        c.layers.clear();
        return unet.forward(z, ts, nn::AttentionMode::kRecord, &c);
      }
      case CacheUse::kReuse: {
        auto it = cache->find(index);
        if (it == cache->end()) throw ConfigError("no cached attention for step " + std::to_string(index));
        return unet.forward(z, ts, nn::AttentionMode::kEquivariant, &it->second);
      }
    }
    throw ConfigError("unet_eps: bad cache mode");
  };
}

EpsFn unet_eps_interpolated(const UNet& unet, const TrajectoryCache& a, const TrajectoryCache& b, double alpha) {
  return [&unet, &a, &b, alpha](const Tensor& z, int t, int index) {
    auto ia = a.find(index), ib = b.find(index);
    if (ia == a.end() || ib == b.end()) throw ConfigError("no cached attention for step " + std::to_string(index));
    nn::KVCache mixed = nn::interpolate(ia->second, ib->second, alpha);
    const std::vector<int> ts(static_cast<std::size_t>(z.dim(0)), t);
    return unet.forward(z, ts, nn::AttentionMode::kEquivariant, &mixed);
  };
}

Tensor masked_mse(const Tensor& a, const Tensor& b, const spectral::ValidMask& mask) {
  if (a.shape() != b.shape()) throw ShapeError("masked_mse: shapes differ");
  if (a.rank() != 4 || a.dim(2) != mask.height() || a.dim(3) != mask.width()) {
    throw ShapeError("masked_mse: mask does not match " + shape_str(a.shape()));
  }
  const std::int64_t count = mask.count();
  if (count == 0) return Tensor::scalar(0.0, a.dtype());
  const Tensor d = spectral::apply_mask(a - b, mask);
  return sum(square(d)) * (1.0 / static_cast<double>(count * a.dim(0) * a.dim(1)));
}

Tensor mse(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) throw ShapeError("mse: shapes differ");
  return mean(square(a - b));
}

DeltaSampler::DeltaSampler(int image_size, std::uint64_t seed) : limit_(3 * image_size / 8), rng_(seed) {}

metrics::Offset DeltaSampler::sample() {
  const double dx = static_cast<double>(rng_.randint(-limit_, limit_));
  const double dy = static_cast<double>(rng_.randint(-limit_, limit_));
  return {dx, dy};
}

Tensor encoder_equivariance_loss(const MapFn& encoder, const Tensor& x, metrics::Offset delta, int k) {
  using spectral::ShiftMode;
  const Tensor shifted = encoder(spectral::shift(x, delta.dx, delta.dy, ShiftMode::kCropped));
  const Tensor target = spectral::shift(encoder(x), delta.dx / k, delta.dy / k, ShiftMode::kCropped);
  const auto mask = loss_mask(1.0 / k, ShiftMode::kCropped, ShiftMode::kCropped, target.dim(2), target.dim(3), delta);
  return masked_mse(shifted, target, mask);
}

Tensor decoder_equivariance_loss(const MapFn& decoder, const Tensor& z, metrics::Offset delta, int k) {
  using spectral::ShiftMode;
  const metrics::Offset latent{delta.dx / k, delta.dy / k};
  const Tensor shifted = decoder(spectral::shift(z, latent.dx, latent.dy, ShiftMode::kCropped));
  const Tensor target = spectral::shift(decoder(z), delta.dx, delta.dy, ShiftMode::kCropped);
  const auto mask = loss_mask(static_cast<double>(k), ShiftMode::kCropped, ShiftMode::kCropped, target.dim(2),
                              target.dim(3), latent);
  return masked_mse(shifted, target, mask);
}

VaeLoss vae_loss(const Vae& vae, const Tensor& x, const Tensor& noise, metrics::Offset delta,
                 const VaeLossWeights& weights, bool equivariance) {
  VaeLoss out;
  const VAEOutput fwd = vae.forward(x, noise);
  const Tensor rec = mse(fwd.reconstruction, x);
  const Tensor kl_terms = square(fwd.mean) + exp(fwd.logvar) - fwd.logvar - 1.0;
  const Tensor kl = sum(kl_terms) * (0.5 / static_cast<double>(x.dim(0)));
  out.total = rec + kl * weights.kl;
  out.reconstruction = rec.item();
  out.kl = kl.item();
  if (equivariance) {
    const int k = vae.config().downsample_factor;
    const Tensor l_enc = encoder_equivariance_loss([&vae](const Tensor& v) { return vae.encode_mean(v); }, x, delta, k);
    const Tensor l_dec = decoder_equivariance_loss([&vae](const Tensor& v) { return vae.decode(v); },
                                                   stop_gradient(fwd.sample), delta, k);
    out.total = out.total + (l_enc + l_dec) * weights.equivariance;
    out.encoder_eq = l_enc.item();
    out.decoder_eq = l_dec.item();
  }
  return out;
}

std::string to_string(EqLossMode mode) {
  switch (mode) {
    case EqLossMode::kNone:
      return "none";
    case EqLossMode::kPlain:
      return "plain";
    case EqLossMode::kEquivariantAttention:
      return "equivariant-attention";
  }
  return "?";
}

EqLossMode parse_eq_loss_mode(const std::string& name) {
  if (name == "none") return EqLossMode::kNone;
  if (name == "plain") return EqLossMode::kPlain;
  if (name == "equivariant-attention") return EqLossMode::kEquivariantAttention;
  throw ConfigError("unknown equivariance loss mode '" + name + "' (none, plain, equivariant-attention)");
}

UNetLoss unet_loss(const UNet& unet, const NoiseSchedule& s, const Tensor& z0, const std::vector<int>& t,
                   const Tensor& eps, metrics::Offset delta, double lambda, EqLossMode mode) {
  using spectral::ShiftMode;
  UNetLoss out;
  const Tensor zt = add_noise(s, z0, t, eps);
  const bool ea = mode == EqLossMode::kEquivariantAttention && unet.config().attention;
  nn::KVCache cache;
  const Tensor pred = ea ? unet.forward(zt, t, nn::AttentionMode::kRecord, &cache) : unet.forward(zt, t);
  const Tensor diff = mse(pred, eps);
  out.total = diff;
  out.diffusion = diff.item();
  if (mode != EqLossMode::kNone) {
    const Tensor zs = spectral::shift(zt, delta.dx, delta.dy, ShiftMode::kCircular);
    const Tensor pred_s = ea ? unet.forward(zs, t, nn::AttentionMode::kEquivariant, &cache) : unet.forward(zs, t);
    const Tensor target = spectral::shift(pred, delta.dx, delta.dy, ShiftMode::kCropped);
    const auto mask = loss_mask(1.0, ShiftMode::kCircular, ShiftMode::kCropped, target.dim(2), target.dim(3), delta);
    const Tensor eq = masked_mse(pred_s, target, mask);
    out.total = out.total + eq * lambda;
    out.equivariance = eq.item();
  }
  return out;
}

}  // namespace afldm
