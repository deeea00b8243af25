#include "afldm/training.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <sstream>

#include "afldm/dataset.hpp"
#include "afldm/error.hpp"

namespace afldm {
namespace {

// Draws batches from a reshuffled permutation per epoch.
class BatchSampler {
 public:
  BatchSampler(std::int64_t n, int batch, Rng& rng) : n_(n), batch_(batch), rng_(rng) {
    if (n < 1) throw ConfigError("training set is empty");
    if (batch < 1) throw ConfigError("batch size must be positive");
  }

  std::vector<std::int64_t> next() {
    std::vector<std::int64_t> rows;
    while (static_cast<int>(rows.size()) < batch_) {
      if (pos_ >= order_.size()) reshuffle();
      rows.push_back(order_[pos_++]);
    }
    return rows;
  }

 private:
  void reshuffle() {
    order_.resize(static_cast<std::size_t>(n_));
    std::iota(order_.begin(), order_.end(), 0);
    for (std::size_t i = order_.size(); i > 1; --i) {
      std::swap(order_[i - 1], order_[static_cast<std::size_t>(rng_.randint(0, static_cast<std::int64_t>(i) - 1))]);
    }
    pos_ = 0;
  }

  std::int64_t n_;
  int batch_;
  Rng& rng_;
  std::vector<std::int64_t> order_;
  std::size_t pos_ = 0;
};

void check_finite(double loss, int step, const std::string& what) {
  if (!std::isfinite(loss)) {
    throw NumericalError(what + " training diverged at step " + std::to_string(step) + " (loss " +
                         std::to_string(loss) + ")");
  }
}

void log_step(TrainLog& log, int step, const std::vector<std::pair<std::string, double>>& values,
              const ProgressFn& progress) {
  std::ostringstream line;
  line << "step " << step;
  for (const auto& [name, v] : values) {
    log.records.push_back({name, {}, step, v});
    line << ' ' << name << '=' << metrics::format_value(v);
  }
  if (progress) progress(step, line.str());
}

}  // namespace

double learning_rate(const TrainOptions& o, int step) {
  if (o.warmup > 0 && step < o.warmup) return o.lr * (step + 1) / o.warmup;
  if (o.lr_final < 0.0 || o.steps <= o.warmup) return o.lr;
  const double progress = static_cast<double>(step - o.warmup) / std::max(1, o.steps - o.warmup);
  return o.lr_final + 0.5 * (o.lr - o.lr_final) * (1.0 + std::cos(std::numbers::pi * progress));
}

TrainLog train_vae(Vae& vae, const Tensor& images, const VaeTrainOptions& o, const ProgressFn& progress) {
  if (images.rank() != 4 || images.dim(1) != vae.config().image_channels ||
      images.dim(2) != vae.config().image_size || images.dim(3) != vae.config().image_size) {
    throw ShapeError("train_vae: images " + shape_str(images.shape()) + " do not match the model");
  }
  Rng rng(o.seed);
  BatchSampler sampler(images.dim(0), o.batch, rng);
  DeltaSampler deltas(vae.config().image_size, rng.next());
  Adam adam({o.lr, 0.9, 0.999, 1e-8, o.clip_norm});
  vae.params().set_requires_grad(true);
  TrainLog log;
  const int lat = vae.config().latent_size();
  for (int step = 0; step < o.steps; ++step) {
    const Tensor x = data::batch_rows(images, sampler.next());
    const Tensor noise = rng.normal_tensor({x.dim(0), vae.config().latent_channels, lat, lat});
    const metrics::Offset delta = deltas.sample();
    adam.set_lr(learning_rate(o, step));
    VaeLoss loss;
    {
      GradTape tape;
      loss = vae_loss(vae, x, noise, delta, o.weights, o.equivariance_loss);
      check_finite(loss.total.item(), step, "vae");
      tape.backward(loss.total);
    }
    adam.step(vae.params());
    log.final_loss = loss.total.item();
    if ((o.log_every > 0 && step % o.log_every == 0) || step + 1 == o.steps) {
      log_step(log, step,
               {{"loss", loss.total.item()},
                {"rec", loss.reconstruction},
                {"kl", loss.kl},
                {"enc_eq", loss.encoder_eq},
                {"dec_eq", loss.decoder_eq}},
               progress);
    }
  }
  vae.params().set_requires_grad(false);
  return log;
}

TrainLog train_unet(UNet& unet, const NoiseSchedule& schedule, const Tensor& latents, const UNetTrainOptions& o,
                    const ProgressFn& progress) {
  const auto& cfg = unet.config();
  if (latents.rank() != 4 || latents.dim(1) != cfg.latent_channels || latents.dim(2) != cfg.latent_size() ||
      latents.dim(3) != cfg.latent_size()) {
    throw ShapeError("train_unet: latents " + shape_str(latents.shape()) + " do not match the model");
  }
  Rng rng(o.seed);
  BatchSampler sampler(latents.dim(0), o.batch, rng);
  DeltaSampler deltas(cfg.image_size, rng.next());
  Adam adam({o.lr, 0.9, 0.999, 1e-8, o.clip_norm});
  unet.params().set_requires_grad(true);
  TrainLog log;
  const double k = cfg.downsample_factor;
  for (int step = 0; step < o.steps; ++step) {
    const Tensor z0 = data::batch_rows(latents, sampler.next());
    std::vector<int> t;
    for (std::int64_t b = 0; b < z0.dim(0); ++b) t.push_back(static_cast<int>(rng.randint(0, schedule.steps() - 1)));
    const Tensor eps = rng.normal_tensor(z0.shape());
    const metrics::Offset image_delta = deltas.sample();
    const metrics::Offset delta{image_delta.dx / k, image_delta.dy / k};
    adam.set_lr(learning_rate(o, step));
    UNetLoss loss;
    {
      GradTape tape;
      loss = unet_loss(unet, schedule, z0, t, eps, delta, o.lambda, o.eq_mode);
      check_finite(loss.total.item(), step, "unet");
      tape.backward(loss.total);
    }
    adam.step(unet.params());
    log.final_loss = loss.total.item();
    if ((o.log_every > 0 && step % o.log_every == 0) || step + 1 == o.steps) {
      log_step(log, step, {{"loss", loss.total.item()}, {"diffusion", loss.diffusion}, {"eq", loss.equivariance}},
               progress);
    }
  }
  unet.params().set_requires_grad(false);
  return log;
}

Tensor encode_dataset(const Vae& vae, const Tensor& images, int batch) {
  NoGradGuard guard;
  std::vector<Tensor> parts;
  for (std::int64_t i = 0; i < images.dim(0); i += batch) {
    const std::int64_t end = std::min<std::int64_t>(images.dim(0), i + batch);
    parts.push_back(vae.encode_mean(slice(images, 0, i, end)));
  }
  return concat(parts, 0);
}

double latent_scale_for(const Tensor& latents) {
  const auto v = latents.data();
  if (v.empty()) throw ShapeError("latent_scale_for: empty tensor");
  double mean = 0.0;
  for (double e : v) mean += e;
  mean /= static_cast<double>(v.size());
  double var = 0.0;
  for (double e : v) var += (e - mean) * (e - mean);
  var /= static_cast<double>(v.size());
  if (!(var > 0.0)) throw NumericalError("latent_scale_for: latents have zero variance");
  return 1.0 / std::sqrt(var);
}

}  // namespace afldm
