#include "afldm/pipelines.hpp"

#include <algorithm>
#include <cmath>

#include "afldm/error.hpp"
#include "afldm/flow.hpp"
#include "afldm/layers.hpp"
#include "afldm/parallel.hpp"

namespace afldm::pipelines {
namespace {

using metrics::Offset;
using spectral::ShiftMode;

Tensor batched(const Tensor& x) {
  if (x.rank() != 3) throw ShapeError("expected a [C, H, W] frame, got " + shape_str(x.shape()));
  return reshape(x, {1, x.dim(0), x.dim(1), x.dim(2)});
}

Tensor unbatched(const Tensor& x) { return reshape(x, {x.dim(1), x.dim(2), x.dim(3)}); }

CacheUse reuse_mode(const LatentDiffusion& ldm) {
  return ldm.cross_frame_attention ? CacheUse::kReuse : CacheUse::kNone;
}

CacheUse record_mode(const LatentDiffusion& ldm) {
  return ldm.cross_frame_attention ? CacheUse::kRecord : CacheUse::kNone;
}

// Latent mask lifted to the image grid: each invalid latent pixel invalidates
// its k x k block.
spectral::ValidMask lift_mask(const spectral::ValidMask& m, int k) {
  spectral::ValidMask out(m.height() * k, m.width() * k);
  for (std::int64_t y = 0; y < out.height(); ++y) {
    for (std::int64_t x = 0; x < out.width(); ++x) out.set(y, x, m.at(y / k, x / k));
  }
  return out;
}

}  // namespace

Tensor LatentDiffusion::encode(const Tensor& images) const {
  return vae.encode_mean(images) * unet.config().latent_scale;
}

Tensor LatentDiffusion::decode(const Tensor& latents) const {
  return vae.decode(latents * (1.0 / unet.config().latent_scale));
}

Tensor LatentDiffusion::sample(const Tensor& z, CacheUse use, TrajectoryCache* cache, int start) const {
  return ddim_sample(schedule, unet_eps(unet, use, cache), z, ddim_steps, start);
}

Tensor LatentDiffusion::invert(const Tensor& z0, CacheUse use, TrajectoryCache* cache, int stop) const {
  return ddim_invert(schedule, unet_eps(unet, use, cache), z0, ddim_steps, stop);
}

metrics::PipelineUnderTest encoder_pipeline(const Vae& vae) {
  metrics::PipelineUnderTest p;
  p.map = [&vae](const Tensor& x) { return vae.encode_mean(x); };
  p.k = 1.0 / vae.config().downsample_factor;
  p.input_mode = ShiftMode::kCropped;
  p.output_mode = ShiftMode::kCropped;
  p.peak = 0.0;
  return p;
}

metrics::PipelineUnderTest decoder_pipeline(const Vae& vae, ShiftMode input_mode) {
  metrics::PipelineUnderTest p;
  p.map = [&vae](const Tensor& z) { return vae.decode(z); };
  p.k = vae.config().downsample_factor;
  p.input_mode = input_mode;
  p.output_mode = ShiftMode::kCropped;
  p.peak = metrics::kImagePeak;
  return p;
}

metrics::PipelineUnderTest ldm_latent_pipeline(const LatentDiffusion& ldm, ShiftMode input_mode) {
  metrics::PipelineUnderTest p;
  p.paired = [&ldm](const Tensor& z, const Tensor& shifted) {
    TrajectoryCache cache;
    Tensor a = ldm.sample(z, record_mode(ldm), &cache);
    Tensor b = ldm.sample(shifted, reuse_mode(ldm), &cache);
    return std::pair{a, b};
  };
  p.k = 1.0;
  p.input_mode = input_mode;
  p.output_mode = ShiftMode::kCropped;
  p.peak = 0.0;
  return p;
}

metrics::PipelineUnderTest ldm_image_pipeline(const LatentDiffusion& ldm, ShiftMode input_mode) {
  metrics::PipelineUnderTest p = ldm_latent_pipeline(ldm, input_mode);
  auto latent = p.paired;
  p.paired = [&ldm, latent](const Tensor& z, const Tensor& shifted) {
    auto [a, b] = latent(z, shifted);
    return std::pair{ldm.decode(a), ldm.decode(b)};
  };
  p.k = ldm.factor();
  p.peak = metrics::kImagePeak;
  return p;
}

metrics::PipelineUnderTest identity_pipeline() {
  metrics::PipelineUnderTest p;
  p.map = [](const Tensor& x) { return x; };
  p.k = 1.0;
  p.input_mode = ShiftMode::kCircular;
  p.output_mode = ShiftMode::kCircular;
  return p;
}

std::vector<Offset> random_offsets(std::uint64_t seed, int count, int image_size, double divisor) {
  DeltaSampler sampler(image_size, seed);
  std::vector<Offset> out;
  for (int i = 0; i < count; ++i) {
    const Offset d = sampler.sample();
    out.push_back({d.dx / divisor, d.dy / divisor});
  }
  return out;
}

metrics::MetricRecord mean_spsnr(const std::string& name, const metrics::PipelineUnderTest& p, const Tensor& inputs,
                                 const std::vector<Offset>& deltas) {
  const auto values = metrics::spsnr(p, inputs, deltas);
  return {name, {}, 0, metrics::mean_of(values)};
}

std::vector<metrics::MetricRecord> shift_sweep(const std::string& name, const metrics::PipelineUnderTest& p,
                                               const Tensor& inputs, const SweepSpec& spec) {
  if (spec.count < 0) throw ConfigError("shift sweep count must be >= 0");
  if (!(spec.step > 0.0) || !std::isfinite(spec.step)) throw ConfigError("shift sweep step must be positive");
  std::vector<metrics::MetricRecord> out;
  for (int i = 1; i <= spec.count; ++i) {
    const Offset d{i * spec.step, 0.0};
    out.push_back({name, d, i, metrics::spsnr(p, inputs, d)});
  }
  return out;
}

std::vector<metrics::MetricRecord> denoise_spsnr_curve(const std::string& name, const LatentDiffusion& ldm,
                                                       const Tensor& noise, double delta, int steps) {
  NoGradGuard no_grad;
  const auto tau = ldm.schedule.subsequence(steps);
  const std::int64_t h = noise.dim(2), w = noise.dim(3);
  metrics::PipelineUnderTest p;
  p.input_mode = ShiftMode::kCircular;
  p.output_mode = ShiftMode::kCropped;
  const auto mask = metrics::spsnr_mask(p, h, w, {delta, 0.0});
  TrajectoryCache cache;
  const EpsFn ref_eps = unet_eps(ldm.unet, record_mode(ldm), &cache);
  const EpsFn shift_eps = unet_eps(ldm.unet, reuse_mode(ldm), &cache);
  Tensor ref = noise;
  Tensor shifted = spectral::shift(noise, delta, 0.0, ShiftMode::kCircular);
  std::vector<metrics::MetricRecord> out;
  auto record = [&](int step) {
    const Tensor target = spectral::shift(ref, delta, 0.0, ShiftMode::kCropped);
    std::vector<double> values;
    for (std::int64_t b = 0; b < noise.dim(0); ++b) {
      values.push_back(metrics::masked_psnr(metrics::sample(shifted, b), metrics::sample(target, b), mask, 0.0));
    }
    out.push_back({name, {delta, 0.0}, step, metrics::mean_of(values)});
  };
  record(0);
  for (int i = steps; i >= 1; --i) {
    const int t = tau[static_cast<std::size_t>(i)], tp = tau[static_cast<std::size_t>(i - 1)];
    ref = ddim_step(ldm.schedule, ref, ref_eps(ref, t, i), t, tp);
    shifted = ddim_step(ldm.schedule, shifted, shift_eps(shifted, t, i), t, tp);
    record(steps - i + 1);
  }
  return out;
}

WarpingScores warping_error(const LatentDiffusion& ldm, const std::vector<WarpPair>& pairs) {
  if (pairs.empty()) throw ConfigError("warping_error: no frame pairs");
  NoGradGuard no_grad;
  const int k = ldm.factor();
  std::vector<Tensor> f1, f2;
  for (const auto& p : pairs) {
    if (!p.flow.defined()) throw ConfigError("warping_error: missing flow");
    f1.push_back(batched(p.frame1));
    f2.push_back(batched(p.frame2));
  }
  const Tensor x1 = concat(f1, 0), x2 = concat(f2, 0);

  WarpingScores s;
  std::vector<double> input, inversion, generation;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    const auto w = flow::warp(f1[i], pairs[i].flow);
    input.push_back(metrics::masked_psnr(w.value, f2[i], w.mask, metrics::kImagePeak));
  }

  TrajectoryCache inv_cache, gen_cache;
  const Tensor zt1 = ldm.invert(ldm.encode(x1), record_mode(ldm), &inv_cache);
  const Tensor zt2 = ldm.invert(ldm.encode(x2), reuse_mode(ldm), &inv_cache);
  std::vector<Tensor> warped;
  std::vector<spectral::ValidMask> latent_masks;
  std::vector<Tensor> latent_flows;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    latent_flows.push_back(flow::downscale_flow(pairs[i].flow, k));
    const auto w = flow::warp(metrics::sample(zt1, static_cast<std::int64_t>(i)), latent_flows.back());
    inversion.push_back(
        metrics::masked_psnr(w.value, metrics::sample(zt2, static_cast<std::int64_t>(i)), w.mask, 0.0));
    warped.push_back(w.value);
    latent_masks.push_back(w.mask);
  }

  const Tensor gen_ref = ldm.decode(ldm.sample(zt1, record_mode(ldm), &gen_cache));
  const Tensor gen_warped = ldm.decode(ldm.sample(concat(warped, 0), reuse_mode(ldm), &gen_cache));
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    const auto w = flow::warp(metrics::sample(gen_ref, static_cast<std::int64_t>(i)), pairs[i].flow);
    const auto mask = w.mask.intersect(lift_mask(latent_masks[i], k));
    generation.push_back(metrics::masked_psnr(metrics::sample(gen_warped, static_cast<std::int64_t>(i)), w.value,
                                              mask, metrics::kImagePeak));
  }
  s.input = metrics::mean_of(input);
  s.inversion = metrics::mean_of(inversion);
  s.generation = metrics::mean_of(generation);
  return s;
}

std::vector<WarpPair> video_pairs(const std::vector<data::ToyVideo>& videos, int max_pairs) {
  std::vector<WarpPair> out;
  for (const auto& v : videos) {
    for (std::size_t i = 0; i + 1 < v.frames.size(); ++i) {
      if (max_pairs >= 0 && static_cast<int>(out.size()) >= max_pairs) return out;
      out.push_back({v.frames[i], v.frames[i + 1], v.flow_bwd[i]});
    }
  }
  return out;
}

double neighbor_warping_mse(const std::vector<Tensor>& frames, const std::vector<Tensor>& flows_bwd) {
  if (frames.size() < 2 || flows_bwd.size() + 1 < frames.size()) {
    throw ConfigError("neighbor_warping_mse: need N frames and N-1 flows");
  }
  double acc = 0.0;
  std::int64_t n = 0;
  for (std::size_t i = 0; i + 1 < frames.size(); ++i) {
    const auto w = flow::warp(frames[i], flows_bwd[i]);
    const auto a = w.value.data(), b = frames[i + 1].data();
    const std::int64_t hw = w.mask.height() * w.mask.width();
    for (std::size_t j = 0; j < a.size(); ++j) {
      const std::int64_t q = static_cast<std::int64_t>(j) % hw;
      if (!w.mask.at(q / w.mask.width(), q % w.mask.width())) continue;
      acc += (a[j] - b[j]) * (a[j] - b[j]);
      ++n;
    }
  }
  if (n == 0) throw ShapeError("neighbor_warping_mse: no valid pixels");
  return acc / static_cast<double>(n);
}

std::vector<Tensor> edit_video(const LatentDiffusion& ldm, const std::vector<Tensor>& frames,
                               const EditOptions& options) {
  if (frames.size() < 2) throw ConfigError("edit_video: need at least 2 frames");
  if (!(options.strength >= 0.0 && options.strength <= 1.0)) throw ConfigError("edit strength must be in [0, 1]");
  NoGradGuard no_grad;
  const int stop = static_cast<int>(std::lround(options.strength * ldm.ddim_steps));
  const auto tau = ldm.schedule.subsequence(ldm.ddim_steps);

  Tensor offset;
  {
    const Tensor probe = ldm.encode(batched(frames.front()));
    std::vector<double> v(static_cast<std::size_t>(probe.numel()), 0.0);
    if (stop > 0) {
      Rng rng(options.seed);
      const double scale = options.magnitude * std::sqrt(1.0 - ldm.schedule.alpha_bar(tau[static_cast<std::size_t>(stop)]));
      const std::int64_t hw = probe.dim(2) * probe.dim(3);
      for (std::int64_t c = 0; c < probe.dim(1); ++c) {
        const double d = scale * rng.uniform(-1.0, 1.0);
        std::fill_n(v.begin() + c * hw, hw, d);
      }
    }
    offset = Tensor::from_vector(probe.shape(), std::move(v), probe.dtype());
  }

  TrajectoryCache inv_cache, gen_cache;
  std::vector<Tensor> out(frames.size());
  {
    const Tensor zt = ldm.invert(ldm.encode(batched(frames[0])), record_mode(ldm), &inv_cache, stop) + offset;
    out[0] = unbatched(ldm.decode(ldm.sample(zt, record_mode(ldm), &gen_cache, stop)));
  }
  parallel_for(frames.size() - 1, [&](std::size_t j) {
    NoGradGuard guard;
    const std::size_t i = j + 1;
    const Tensor zt = ldm.invert(ldm.encode(batched(frames[i])), reuse_mode(ldm), &inv_cache, stop) + offset;
    out[i] = unbatched(ldm.decode(ldm.sample(zt, reuse_mode(ldm), &gen_cache, stop)));
  });
  return out;
}

Tensor slerp(const Tensor& a, const Tensor& b, double alpha) {
  if (a.shape() != b.shape()) throw ShapeError("slerp: shapes differ");
  const auto va = a.data(), vb = b.data();
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < va.size(); ++i) {
    dot += va[i] * vb[i];
    na += va[i] * va[i];
    nb += vb[i] * vb[i];
  }
  double wa = 1.0 - alpha, wb = alpha;
  if (na > 0.0 && nb > 0.0) {
    const double omega = std::acos(std::clamp(dot / std::sqrt(na * nb), -1.0, 1.0));
    if (omega >= 1e-4) {
      wa = std::sin((1.0 - alpha) * omega) / std::sin(omega);
      wb = std::sin(alpha * omega) / std::sin(omega);
    }
  }
  return a * wa + b * wb;
}

Interpolation interpolate_images(const LatentDiffusion& ldm, const Tensor& x1, const Tensor& x2,
                                 const Tensor& flow_fwd, const Tensor& flow_bwd, int count) {
  if (count < 1) throw ConfigError("interpolate: frame count must be positive");
  NoGradGuard no_grad;
  const int k = ldm.factor();
  const Tensor lf_fwd = flow::downscale_flow(flow_fwd, k), lf_bwd = flow::downscale_flow(flow_bwd, k);
  TrajectoryCache inv1, inv2, gen1, gen2;
  const Tensor zt1 = ldm.invert(ldm.encode(batched(x1)), record_mode(ldm), &inv1);
  const Tensor zt2 = ldm.invert(ldm.encode(batched(x2)), record_mode(ldm), &inv2);
  // Trajectories from z_T record the generation caches of both endpoints.
  ldm.sample(zt1, CacheUse::kRecord, &gen1);
  ldm.sample(zt2, CacheUse::kRecord, &gen2);

  Interpolation out;
  for (int i = 1; i <= count; ++i) {
    const double alpha = static_cast<double>(i) / (count + 1);
    const auto s1 = flow::splat(zt1, flow::scale_flow(lf_fwd, alpha));
    const auto s2 = flow::splat(zt2, flow::scale_flow(lf_bwd, 1.0 - alpha));
    const auto covered = s1.mask.intersect(s2.mask);
    const double total = static_cast<double>(covered.height() * covered.width());
    out.hole_fraction.push_back(1.0 - static_cast<double>(covered.count()) / total);
    const Tensor z = slerp(s1.value, s2.value, alpha);
    const Tensor z0 =
        ddim_sample(ldm.schedule, unet_eps_interpolated(ldm.unet, gen1, gen2, alpha), z, ldm.ddim_steps);
    out.frames.push_back(unbatched(ldm.decode(z0)));
  }
  return out;
}

}  // namespace afldm::pipelines
