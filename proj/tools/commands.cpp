#include "commands.hpp"

#include <fstream>
#include <functional>
#include <iostream>
#include <map>

#include "afldm/checkpoint.hpp"
#include "afldm/dataset.hpp"
#include "afldm/error.hpp"
#include "afldm/metrics.hpp"
#include "afldm/pipelines.hpp"
#include "afldm/png.hpp"
#include "afldm/tensor_io.hpp"
#include "afldm/training.hpp"

namespace afldm::cli {
namespace {

namespace fs = std::filesystem;
using metrics::MetricRecord;

// Offsets between the seed streams of the different data splits.
constexpr std::uint64_t kEvalImageStream = 7919;
constexpr std::uint64_t kVideoStream = 104729;
constexpr std::uint64_t kNoiseStream = 1299709;

struct Context {
  Invocation inv;
  RunConfig cfg;

  fs::path out(const std::string& name) const { return inv.out / name; }

  const fs::path& ckpt() const {
    if (inv.ckpts.empty()) throw ConfigError(inv.command + " needs --ckpt");
    return inv.ckpts.front();
  }

  Tensor train_images() const {
    return data::generate_images(cfg.data_seed, cfg.image_count, {.size = cfg.image_size});
  }
  Tensor eval_images() const {
    return data::generate_images(cfg.data_seed + kEvalImageStream, cfg.eval_count, {.size = cfg.image_size});
  }
  std::vector<data::ToyVideo> videos() const {
    return data::generate_videos(cfg.data_seed + kVideoStream, cfg.video_count,
                                 {.size = cfg.image_size, .frames = cfg.video_frames});
  }
  Tensor eval_noise(const ModelConfig& unet) const {
    Rng rng(cfg.seed + kNoiseStream);
    const int ls = unet.latent_size();
    return rng.normal_tensor({cfg.eval_count, unet.latent_channels, ls, ls});
  }
};

void require_checkpoint(const fs::path& path) {
  if (!fs::exists(path)) throw CheckpointError("checkpoint not found: " + path.string());
}

std::string checkpoint_kind(const fs::path& path) {
  require_checkpoint(path);
  std::ifstream is(path, std::ios::binary);
  std::string line;
  std::getline(is, line);
  std::getline(is, line);
  if (line.rfind("type=", 0) != 0) throw CheckpointError("cannot read checkpoint type from " + path.string());
  return line.substr(5);
}

Vae load_any_vae(const fs::path& path) {
  return checkpoint_kind(path) == "ldm" ? std::move(load_ldm(path).vae) : load_vae(path);
}

Ldm load_ldm_checked(const fs::path& path) {
  require_checkpoint(path);
  return load_ldm(path);
}

void write_records(const Context& c, const std::string& name, const std::vector<MetricRecord>& records) {
  metrics::write_csv(c.out(name).string(), records);
}

void report(const std::string& line) { std::cerr << line << '\n'; }

// ---------------------------------------------------------------------------

void gen_data(const Context& c) {
  const Tensor images = c.train_images();
  save_tensor(c.out("images.aft"), images);
  std::vector<Tensor> preview;
  for (std::int64_t i = 0; i < std::min<std::int64_t>(8, images.dim(0)); ++i) {
    preview.push_back(reshape(metrics::sample(images, i), {images.dim(1), images.dim(2), images.dim(3)}));
  }
  write_png(c.out("images.png"), frame_strip(preview));
  const auto videos = c.videos();
  for (std::size_t v = 0; v < videos.size(); ++v) {
    const fs::path dir = c.out("videos") / ("video_" + std::to_string(v));
    fs::create_directories(dir);
    const auto& video = videos[v];
    for (std::size_t f = 0; f < video.frames.size(); ++f) {
      write_png(dir / ("frame_" + std::to_string(f) + ".png"), video.frames[f]);
      save_tensor(dir / ("frame_" + std::to_string(f) + ".aft"), video.frames[f]);
    }
    for (std::size_t f = 0; f < video.flow_fwd.size(); ++f) {
      save_tensor(dir / ("flow_fwd_" + std::to_string(f) + ".aft"), video.flow_fwd[f]);
      save_tensor(dir / ("flow_bwd_" + std::to_string(f) + ".aft"), video.flow_bwd[f]);
    }
    std::ofstream(dir / "seed.txt") << video.seed << '\n';
  }
  report("wrote " + std::to_string(images.dim(0)) + " images and " + std::to_string(videos.size()) + " videos");
}

void train_vae_cmd(const Context& c) {
  Vae vae(c.cfg.vae_config());
  VaeTrainOptions o;
  o.steps = c.cfg.vae_steps;
  o.batch = c.cfg.vae_batch;
  o.lr = c.cfg.vae_lr;
  o.warmup = c.cfg.warmup;
  o.clip_norm = c.cfg.clip_norm;
  o.seed = c.cfg.seed;
  o.equivariance_loss = c.cfg.vae_equivariance_loss;
  o.weights = {c.cfg.lambda_kl, c.cfg.lambda_eq};
  const TrainLog log = train_vae(vae, c.train_images(), o, [](int, const std::string& l) { report(l); });
  save_vae(c.out("vae.ckpt"), vae);
  write_records(c, "train_log.csv", log.records);
}

void train_ldm_cmd(const Context& c) {
  const Vae vae = load_any_vae(c.ckpt());
  ModelConfig ucfg = c.cfg.unet_config();
  if (ucfg.image_size != vae.config().image_size || ucfg.downsample_factor != vae.config().downsample_factor ||
      ucfg.latent_channels != vae.config().latent_channels) {
    throw ConfigError("U-Net config does not match the VAE checkpoint geometry");
  }
  const Tensor latents = encode_dataset(vae, c.train_images());
  ucfg.latent_scale = latent_scale_for(latents);
  UNet unet(ucfg);
  UNetTrainOptions o;
  o.steps = c.cfg.ldm_steps;
  o.batch = c.cfg.ldm_batch;
  o.lr = c.cfg.ldm_lr;
  o.warmup = c.cfg.warmup;
  o.clip_norm = c.cfg.clip_norm;
  o.seed = c.cfg.seed;
  o.eq_mode = c.cfg.ldm_eq_loss;
  o.lambda = c.cfg.lambda_unet;
  const NoiseSchedule schedule;
  const TrainLog log =
      train_unet(unet, schedule, latents * ucfg.latent_scale, o, [](int, const std::string& l) { report(l); });
  save_ldm(c.out("ldm.ckpt"), vae, unet);
  write_records(c, "train_log.csv", log.records);
}

std::vector<MetricRecord> per_sample(const std::string& name, const metrics::PipelineUnderTest& p, const Tensor& x,
                                     const std::vector<metrics::Offset>& deltas) {
  const auto values = metrics::spsnr(p, x, deltas);
  std::vector<MetricRecord> out;
  for (std::size_t i = 0; i < values.size(); ++i) out.push_back({name, deltas[i], static_cast<int>(i), values[i]});
  out.push_back({name + "_mean", {}, static_cast<int>(values.size()), metrics::mean_of(values)});
  return out;
}

void append(std::vector<MetricRecord>& to, const std::vector<MetricRecord>& from) {
  to.insert(to.end(), from.begin(), from.end());
}

void eval_spsnr(const Context& c) {
  std::vector<MetricRecord> records;
  const auto& cfg = c.cfg;
  const Tensor images = c.eval_images();
  if (cfg.pipeline == "identity") {
    const auto deltas = pipelines::random_offsets(cfg.seed, cfg.eval_count, cfg.image_size, 1.0);
    append(records, per_sample("spsnr_identity", pipelines::identity_pipeline(), images, deltas));
    write_records(c, "spsnr.csv", records);
    return;
  }
  const fs::path& path = c.ckpt();
  const bool is_ldm = checkpoint_kind(path) == "ldm";
  std::optional<Ldm> ldm;
  std::optional<Vae> vae_only;
  if (is_ldm) {
    ldm.emplace(load_ldm(path));
  } else {
    vae_only.emplace(load_vae(path));
  }
  const Vae& vae = is_ldm ? ldm->vae : *vae_only;
  const int k = vae.config().downsample_factor;
  NoGradGuard no_grad;
  append(records, per_sample("encoder_spsnr", pipelines::encoder_pipeline(vae), images,
                             pipelines::random_offsets(cfg.seed, cfg.eval_count, cfg.image_size, 1.0)));
  const Tensor latents = encode_dataset(vae, images);
  append(records, per_sample("decoder_spsnr", pipelines::decoder_pipeline(vae), latents,
                             pipelines::random_offsets(cfg.seed + 1, cfg.eval_count, cfg.image_size, k)));
  if (is_ldm) {
    const NoiseSchedule schedule;
    pipelines::LatentDiffusion ld{ldm->vae, ldm->unet, schedule, cfg.ddim_steps, cfg.cross_frame_attention};
    const Tensor noise = c.eval_noise(ldm->unet.config());
    const auto deltas = pipelines::random_offsets(cfg.seed + 2, cfg.eval_count, cfg.image_size, k);
    append(records, per_sample("latent_spsnr", pipelines::ldm_latent_pipeline(ld), noise, deltas));
    append(records, per_sample("image_spsnr", pipelines::ldm_image_pipeline(ld), noise, deltas));
  }
  write_records(c, "spsnr.csv", records);
}

void shift_sweep(const Context& c) {
  const auto& cfg = c.cfg;
  const fs::path& path = c.ckpt();
  const bool is_ldm = checkpoint_kind(path) == "ldm";
  std::optional<Ldm> ldm;
  std::optional<Vae> vae_only;
  if (is_ldm) {
    ldm.emplace(load_ldm(path));
  } else {
    vae_only.emplace(load_vae(path));
  }
  const Vae& vae = is_ldm ? ldm->vae : *vae_only;
  NoGradGuard no_grad;
  const pipelines::SweepSpec spec{cfg.sweep_step, cfg.sweep_count};
  std::vector<MetricRecord> records;
  const Tensor latents = encode_dataset(vae, c.eval_images());
  const auto dec = pipelines::decoder_pipeline(vae, spectral::ShiftMode::kCropped);
  append(records, pipelines::shift_sweep("decoder_spsnr", dec, latents, spec));
  if (spec.count > 0) {
    std::vector<Tensor> strip;
    const Tensor z = metrics::sample(latents, 0);
    for (int i = 0; i <= spec.count; ++i) {
      const Tensor img = vae.decode(spectral::shift(z, i * spec.step, 0.0, spectral::ShiftMode::kCropped));
      strip.push_back(reshape(img, {img.dim(1), img.dim(2), img.dim(3)}));
    }
    write_png(c.out("decoder_sweep.png"), frame_strip(strip));
  }
  if (is_ldm) {
    const NoiseSchedule schedule;
    pipelines::LatentDiffusion ld{ldm->vae, ldm->unet, schedule, cfg.ddim_steps, cfg.cross_frame_attention};
    const Tensor noise = c.eval_noise(ldm->unet.config());
    append(records, pipelines::shift_sweep("ldm_image_spsnr",
                                           pipelines::ldm_image_pipeline(ld, spectral::ShiftMode::kCropped), noise,
                                           spec));
    if (spec.count > 0) {
      std::vector<Tensor> strip;
      TrajectoryCache cache;
      const Tensor z = metrics::sample(noise, 0);
      strip.push_back(reshape(ld.decode(ld.sample(z, CacheUse::kRecord, &cache)), {3, cfg.image_size, cfg.image_size}));
      for (int i = 1; i <= spec.count; ++i) {
        const Tensor zs = spectral::shift(z, i * spec.step, 0.0, spectral::ShiftMode::kCropped);
        const CacheUse use = cfg.cross_frame_attention ? CacheUse::kReuse : CacheUse::kNone;
        strip.push_back(reshape(ld.decode(ld.sample(zs, use, &cache)), {3, cfg.image_size, cfg.image_size}));
      }
      write_png(c.out("ldm_sweep.png"), frame_strip(strip));
    }
  }
  write_records(c, "sweep.csv", records);
}

void freq_map(const Context& c) {
  const Vae vae = load_any_vae(c.ckpt());
  NoGradGuard no_grad;
  const Tensor images = c.eval_images();
  std::vector<MetricRecord> records;
  std::vector<double> ratios;
  const int k = vae.config().downsample_factor;
  for (std::int64_t i = 0; i < images.dim(0); ++i) {
    const auto fm = metrics::latent_frequency_map([&vae](const Tensor& x) { return vae.encode_mean(x); },
                                                  metrics::sample(images, i), k, c.cfg.freq_m);
    ratios.push_back(fm.out_of_band_ratio);
    records.push_back({"out_of_band_ratio", {}, static_cast<int>(i), fm.out_of_band_ratio});
    if (i == 0) {
      const Tensor& d = fm.dense_latent;
      const auto s = fm.spectrum.data();
      const double peak = *std::max_element(s.begin(), s.end());
      write_png(c.out("spectrum.png"), fm.spectrum * (1.0 / std::max(peak, 1e-12)), 0.0, 1.0);
      write_png(c.out("dense_latent.png"), slice(d, 0, 0, 1), -3.0, 3.0);
    }
  }
  records.push_back({"out_of_band_ratio_mean", {}, static_cast<int>(ratios.size()), metrics::mean_of(ratios)});
  write_records(c, "freq_map.csv", records);
}

void denoise_curve(const Context& c) {
  const Ldm ldm = load_ldm_checked(c.ckpt());
  const NoiseSchedule schedule;
  pipelines::LatentDiffusion ld{ldm.vae, ldm.unet, schedule, c.cfg.curve_steps, c.cfg.cross_frame_attention};
  const auto records =
      pipelines::denoise_spsnr_curve("denoise_spsnr", ld, c.eval_noise(ldm.unet.config()), c.cfg.curve_delta,
                                     c.cfg.curve_steps);
  write_records(c, "denoise_curve.csv", records);
}

void warp_bench(const Context& c) {
  const Ldm ldm = load_ldm_checked(c.ckpt());
  const NoiseSchedule schedule;
  pipelines::LatentDiffusion ld{ldm.vae, ldm.unet, schedule, c.cfg.ddim_steps, c.cfg.cross_frame_attention};
  const auto videos = c.videos();
  std::vector<pipelines::WarpPair> pairs;
  for (const auto& v : videos) pairs.push_back({v.frames[0], v.frames[1], v.flow_bwd[0]});
  const auto s = pipelines::warping_error(ld, pairs);
  const int n = static_cast<int>(pairs.size());
  write_records(c, "warp_bench.csv",
                {{"warp_psnr_input", {}, n, s.input},
                 {"warp_psnr_inversion", {}, n, s.inversion},
                 {"warp_psnr_generation", {}, n, s.generation}});
}

void edit_video_cmd(const Context& c) {
  const Ldm ldm = load_ldm_checked(c.ckpt());
  const NoiseSchedule schedule;
  pipelines::LatentDiffusion ld{ldm.vae, ldm.unet, schedule, c.cfg.ddim_steps, c.cfg.cross_frame_attention};
  const auto video = c.videos().front();
  const auto edited = pipelines::edit_video(ld, video.frames, {c.cfg.edit_strength, c.cfg.seed, 1.0});
  for (std::size_t i = 0; i < edited.size(); ++i) {
    write_png(c.out("edit_" + std::to_string(i) + ".png"), edited[i]);
  }
  write_png(c.out("edit_strip.png"), frame_strip(edited));
  write_records(c, "edit_video.csv",
                {{"warping_mse_input", {}, 0, pipelines::neighbor_warping_mse(video.frames, video.flow_bwd)},
                 {"warping_mse_edited", {}, 0, pipelines::neighbor_warping_mse(edited, video.flow_bwd)}});
}

void interpolate_cmd(const Context& c) {
  const Ldm ldm = load_ldm_checked(c.ckpt());
  const NoiseSchedule schedule;
  pipelines::LatentDiffusion ld{ldm.vae, ldm.unet, schedule, c.cfg.ddim_steps, c.cfg.cross_frame_attention};
  const auto video = c.videos().front();
  const auto r = pipelines::interpolate_images(ld, video.frames[0], video.frames[1], video.flow_fwd[0],
                                               video.flow_bwd[0], c.cfg.interp_frames);
  std::vector<Tensor> strip{video.frames[0]};
  std::vector<MetricRecord> records;
  for (std::size_t i = 0; i < r.frames.size(); ++i) {
    write_png(c.out("interp_" + std::to_string(i + 1) + ".png"), r.frames[i]);
    strip.push_back(r.frames[i]);
    records.push_back({"hole_fraction", {}, static_cast<int>(i + 1), r.hole_fraction[i]});
  }
  strip.push_back(video.frames[1]);
  write_png(c.out("interp_strip.png"), frame_strip(strip));
  write_records(c, "interpolate.csv", records);
}

struct Command {
  std::function<void(const Context&)> fn;
  // Config key that --steps overrides; empty: --steps is rejected.
  std::string steps_key;
};

const std::map<std::string, Command>& commands() {
  static const std::map<std::string, Command> table = {
      {"gen-data", {gen_data, ""}},
      {"train-vae", {train_vae_cmd, "vae_steps"}},
      {"train-ldm", {train_ldm_cmd, "ldm_steps"}},
      {"eval-spsnr", {eval_spsnr, "ddim_steps"}},
      {"shift-sweep", {shift_sweep, "sweep_count"}},
      {"freq-map", {freq_map, ""}},
      {"denoise-curve", {denoise_curve, "curve_steps"}},
      {"warp-bench", {warp_bench, "ddim_steps"}},
      {"edit-video", {edit_video_cmd, "ddim_steps"}},
      {"interpolate", {interpolate_cmd, "ddim_steps"}},
  };
  return table;
}

void write_manifest(const Invocation& inv, const std::string& build_id) {
  std::ofstream os(inv.out / "manifest.txt", std::ios::binary);
  if (!os) throw ConfigError("cannot write manifest into " + inv.out.string());
  os << "command=" << inv.command << '\n';
  os << "config=" << inv.config_path.string() << '\n';
  os << "seed=" << (inv.seed ? std::to_string(*inv.seed) : std::string("config")) << '\n';
  os << "out=" << inv.out.string() << '\n';
  for (const auto& p : inv.ckpts) os << "ckpt=" << p.string() << '\n';
  os << "f64=" << (inv.f64 ? "true" : "false") << '\n';
  os << "steps=" << (inv.steps ? std::to_string(*inv.steps) : std::string("config")) << '\n';
  os << "build=" << build_id << '\n';
  if (!os) throw ConfigError("failed writing the manifest");
}

}  // namespace

const std::vector<std::string>& command_names() {
  static const std::vector<std::string> names = [] {
    std::vector<std::string> n;
    for (const auto& [k, _] : commands()) n.push_back(k);
    return n;
  }();
  return names;
}

void run(const Invocation& inv, const std::string& build_id) {
  auto it = commands().find(inv.command);
  if (it == commands().end()) throw ConfigError("unknown command '" + inv.command + "'");
  auto values = inv.config_path.empty() ? std::map<std::string, std::string>{} : read_key_values(inv.config_path);
  if (inv.seed) values["seed"] = std::to_string(*inv.seed);
  if (inv.steps) {
    if (it->second.steps_key.empty()) throw ConfigError("--steps is not used by " + inv.command);
    values[it->second.steps_key] = std::to_string(*inv.steps);
  }
  Context c{inv, RunConfig::from_map(values)};
  fs::create_directories(inv.out);
  write_manifest(inv, build_id);
  std::optional<DTypeGuard> precision;
  if (inv.f64) precision.emplace(DType::kF64);
  it->second.fn(c);
}

}  // namespace afldm::cli
