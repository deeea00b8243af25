// Acceptance runner: one PASS/FAIL line per criterion.
//
// Usage: afldm_acceptance [criterion ...]
// Trained checkpoints are cached under $AFLDM_ACCEPTANCE_CACHE (default: the
// build-tree directory baked in at configure time), keyed by a fingerprint of
// the run configuration.

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>
#include <sys/wait.h>

#include "afldm/checkpoint.hpp"
#include "afldm/config.hpp"
#include "afldm/dataset.hpp"
#include "afldm/error.hpp"
#include "afldm/metrics.hpp"
#include "afldm/pipelines.hpp"
#include "afldm/training.hpp"
#include "support/suites.hpp"

namespace afldm::acceptance {
namespace {

namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

// Pinned tolerances.
constexpr int kSpectralTrials = 1000;
constexpr double kShiftTol = 1e-4;
constexpr double kResampleTol = 1e-5;
constexpr double kSpectralSeconds = 60.0;
constexpr int kGradInstances = 100;
constexpr double kGradTol = 1e-6;
constexpr double kGradSeconds = 300.0;
constexpr int kAttentionTrials = 1000;
constexpr double kCircularSaTol = 1e-10;
constexpr double kCroppedSaFloor = 1e-3;
constexpr double kEaTol = 1e-6;
constexpr double kAttentionSeconds = 30.0;
constexpr double kVaeNaiveMargin = 5.0;
constexpr double kVaeNoLossMargin = 3.0;
constexpr double kVaeTrainMinutes = 30.0;
constexpr double kLdmTrainMinutes = 120.0;
constexpr double kCurveDrop = 3.0;
constexpr double kSweepVarianceRatio = 0.25;
constexpr double kEditPsnr = 40.0;
constexpr double kStepInvertTol = 1e-5;
constexpr double kRoundTripPsnr = 35.0;

// Same data streams as the command-line tool.
constexpr std::uint64_t kEvalImageStream = 7919;
constexpr std::uint64_t kVideoStream = 104729;
constexpr std::uint64_t kNoiseStream = 1299709;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4g", v);
  return buf;
}

std::uint64_t fnv1a(const std::string& bytes, std::uint64_t h = 1469598103934665603ull) {
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::ostringstream os;
  os << is.rdbuf();
  return os.str();
}

void log(const std::string& line) { std::cerr << "  " << line << std::endl; }

struct Outcome {
  bool pass = false;
  std::string detail;
};

// ---------------------------------------------------------------------------
// Toy experiment setup

RunConfig base_config() {
  RunConfig c;
  c.image_count = 256;
  c.eval_count = 32;
  c.vae_steps = 1000;
  c.vae_batch = 8;
  c.vae_lr = 1e-3;
  c.ldm_steps = 2000;
  c.ldm_batch = 16;
  c.ldm_lr = 1e-3;
  return c;
}

RunConfig vae_variant(const std::string& name) {
  RunConfig c = base_config();
  if (name == "noloss" || name == "naive") c.vae_equivariance_loss = false;
  if (name == "naive") {
    c.vae_ideal_sampling = false;
    c.vae_filtered_nonlinearity = false;
  }
  return c;
}

// A: plain U-Net, B: alias-free modules, C: + equivariance loss without EA,
// D: + EA in the loss. E: plain U-Net on the naive VAE.
RunConfig ldm_variant(const std::string& name) {
  RunConfig c = base_config();
  const bool af = name == "B" || name == "C" || name == "D";
  c.unet_ideal_sampling = af;
  c.unet_filtered_nonlinearity = af;
  c.ldm_eq_loss = name == "C" ? EqLossMode::kPlain : name == "D" ? EqLossMode::kEquivariantAttention : EqLossMode::kNone;
  return c;
}

std::string vae_for(const std::string& ldm) { return ldm == "E" ? "naive" : "af"; }

Tensor train_images(const RunConfig& c) {
  return data::generate_images(c.data_seed, c.image_count, {.size = c.image_size});
}
Tensor eval_images(const RunConfig& c) {
  return data::generate_images(c.data_seed + kEvalImageStream, c.eval_count, {.size = c.image_size});
}
Tensor eval_noise(const RunConfig& c, const ModelConfig& unet) {
  Rng rng(c.seed + kNoiseStream);
  const int ls = unet.latent_size();
  return rng.normal_tensor({c.eval_count, unet.latent_channels, ls, ls});
}

std::string fingerprint(const std::string& role, const RunConfig& c) {
  std::string s = role;
  for (const auto& [k, v] : c.to_map()) s += "\n" + k + "=" + v;
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a(s)));
  return buf;
}

class Models {
 public:
  explicit Models(fs::path cache) : cache_(std::move(cache)) { fs::create_directories(cache_); }

  const Vae& vae(const std::string& name) {
    auto it = vaes_.find(name);
    if (it != vaes_.end()) return *it->second;
    const RunConfig c = vae_variant(name);
    const fs::path path = cache_ / ("vae_" + name + "_" + fingerprint("vae", c) + ".ckpt");
    if (fs::exists(path)) {
      log("vae " + name + ": cached " + path.filename().string());
      vaes_[name] = std::make_unique<Vae>(load_vae(path));
    } else {
      log("vae " + name + ": training " + std::to_string(c.vae_steps) + " steps");
      auto vae = std::make_unique<Vae>(c.vae_config());
      VaeTrainOptions o;
      o.steps = c.vae_steps;
      o.batch = c.vae_batch;
      o.lr = c.vae_lr;
      o.warmup = c.warmup;
      o.clip_norm = c.clip_norm;
      o.seed = c.seed;
      o.equivariance_loss = c.vae_equivariance_loss;
      o.weights = {c.lambda_kl, c.lambda_eq};
      const auto t0 = Clock::now();
      train_vae(*vae, train_images(c), o, [](int step, const std::string& l) {
        if (step % 250 == 0) log(l);
      });
      train_seconds_[name] = seconds_since(t0);
      save_vae(path, *vae);
      std::ofstream(path.string() + ".seconds") << train_seconds_[name] << '\n';
      vaes_[name] = std::move(vae);
    }
    if (!train_seconds_.count(name)) {
      std::ifstream is(path.string() + ".seconds");
      double s = 0.0;
      if (is >> s) train_seconds_[name] = s;
    }
    return *vaes_[name];
  }

  const Ldm& ldm(const std::string& name) {
    auto it = ldms_.find(name);
    if (it != ldms_.end()) return *it->second;
    const RunConfig c = ldm_variant(name);
    const std::string vname = vae_for(name);
    const Vae& vae = this->vae(vname);
    const fs::path path =
        cache_ / ("ldm_" + name + "_" + fingerprint("ldm/" + vname + "/" + fingerprint("vae", vae_variant(vname)), c) +
                  ".ckpt");
    if (fs::exists(path)) {
      log("ldm " + name + ": cached " + path.filename().string());
      ldms_[name] = std::make_unique<Ldm>(load_ldm(path));
    } else {
      log("ldm " + name + ": training " + std::to_string(c.ldm_steps) + " steps");
      const Tensor latents = encode_dataset(vae, train_images(c));
      ModelConfig ucfg = c.unet_config();
      ucfg.latent_scale = latent_scale_for(latents);
      UNet unet(ucfg);
      UNetTrainOptions o;
      o.steps = c.ldm_steps;
      o.batch = c.ldm_batch;
      o.lr = c.ldm_lr;
      o.warmup = c.warmup;
      o.clip_norm = c.clip_norm;
      o.seed = c.seed;
      o.eq_mode = c.ldm_eq_loss;
      o.lambda = c.lambda_unet;
      const NoiseSchedule schedule;
      const auto t0 = Clock::now();
      train_unet(unet, schedule, latents * ucfg.latent_scale, o, [](int step, const std::string& l) {
        if (step % 500 == 0) log(l);
      });
      train_seconds_["ldm_" + name] = seconds_since(t0);
      save_ldm(path, vae, unet);
      std::ofstream(path.string() + ".seconds") << train_seconds_["ldm_" + name] << '\n';
      ldms_[name] = std::make_unique<Ldm>(load_ldm(path));
    }
    if (!train_seconds_.count("ldm_" + name)) {
      std::ifstream is(path.string() + ".seconds");
      double s = 0.0;
      if (is >> s) train_seconds_["ldm_" + name] = s;
    }
    return *ldms_[name];
  }

  // Wall-clock training time of the run that produced the checkpoint.
  double train_seconds(const std::string& key) const {
    auto it = train_seconds_.find(key);
    return it == train_seconds_.end() ? 0.0 : it->second;
  }

 private:
  fs::path cache_;
  std::map<std::string, std::unique_ptr<Vae>> vaes_;
  std::map<std::string, std::unique_ptr<Ldm>> ldms_;
  std::map<std::string, double> train_seconds_;
};

struct Context {
  Models& models;
  const NoiseSchedule schedule;
};

pipelines::LatentDiffusion diffusion(const Ldm& m, const NoiseSchedule& s, int steps) {
  return {m.vae, m.unet, s, steps, true};
}

double mean_spsnr(const metrics::PipelineUnderTest& p, const Tensor& x, const std::vector<metrics::Offset>& d) {
  return metrics::mean_of(metrics::spsnr(p, x, d));
}

// ---------------------------------------------------------------------------
// Criteria

Outcome spectral_suite(Context&) {
  const auto t0 = Clock::now();
  const auto r = testing::run_spectral_suite(kSpectralTrials, 2024);
  const double secs = seconds_since(t0);
  const bool ok = r.group_law < kShiftTol && r.inverse < kShiftTol && r.rescale_commute < kShiftTol &&
                  r.up_down < kResampleTol && r.lowpass_idem < kResampleTol && r.imag_residue < kResampleTol &&
                  secs < kSpectralSeconds;
  return {ok, std::to_string(r.trials) + " trials, group " + fmt(r.group_law) + ", inverse " + fmt(r.inverse) +
                  ", up/down " + fmt(r.up_down) + ", lowpass " + fmt(r.lowpass_idem) + ", imag " +
                  fmt(r.imag_residue) + ", rescale " + fmt(r.rescale_commute) + ", " + fmt(secs) + " s"};
}

Outcome gradient_suite(Context&) {
  const auto t0 = Clock::now();
  double worst = 0.0;
  std::string worst_name;
  int failed = 0;
  for (const auto& c : testing::gradient_cases()) {
    const auto r = testing::run_gradient_case(c, kGradInstances, 77);
    if (r.worst_rel_error >= kGradTol) {
      ++failed;
      log("gradient " + c.name + ": " + fmt(r.worst_rel_error) + " " + r.worst);
    }
    if (r.worst_rel_error >= worst) {
      worst = r.worst_rel_error;
      worst_name = c.name;
    }
  }
  const double secs = seconds_since(t0);
  return {failed == 0 && secs < kGradSeconds,
          std::to_string(testing::gradient_cases().size()) + " ops x " + std::to_string(kGradInstances) +
              " instances, worst rel err " + fmt(worst) + " (" + worst_name + "), " + std::to_string(failed) +
              " failing, " + fmt(secs) + " s"};
}

Outcome attention_suite(Context&) {
  const auto t0 = Clock::now();
  const auto r = testing::run_attention_suite(kAttentionTrials, 99);
  const double secs = seconds_since(t0);
  const bool ok = r.circular_sa_error < kCircularSaTol && r.cropped_sa_error > kCroppedSaFloor &&
                  r.ea_permutation_error < kEaTol && secs < kAttentionSeconds;
  return {ok, std::to_string(r.trials) + " trials, circular SA " + fmt(r.circular_sa_error) + ", cropped SA min " +
                  fmt(r.cropped_sa_error) + ", EA " + fmt(r.ea_permutation_error) + ", " + fmt(secs) + " s"};
}

Outcome vae_ordering(Context& ctx) {
  const RunConfig c = base_config();
  const Tensor images = eval_images(c);
  std::map<std::string, double> dec, oob;
  bool budget = true;
  for (const std::string name : {"af", "noloss", "naive"}) {
    const Vae& vae = ctx.models.vae(name);
    budget &= ctx.models.train_seconds(name) <= kVaeTrainMinutes * 60.0;
    NoGradGuard no_grad;
    const int k = vae.config().downsample_factor;
    const Tensor latents = encode_dataset(vae, images);
    dec[name] = mean_spsnr(pipelines::decoder_pipeline(vae), latents,
                           pipelines::random_offsets(c.seed + 1, c.eval_count, c.image_size, k));
    std::vector<double> ratios;
    for (std::int64_t i = 0; i < images.dim(0); ++i) {
      ratios.push_back(metrics::latent_frequency_map([&vae](const Tensor& x) { return vae.encode_mean(x); },
                                                     metrics::sample(images, i), k, c.freq_m)
                           .out_of_band_ratio);
    }
    oob[name] = metrics::mean_of(ratios);
    log("vae " + name + ": decoder SPSNR " + fmt(dec[name]) + " dB, out-of-band " + fmt(oob[name]) + ", trained in " +
        fmt(ctx.models.train_seconds(name)) + " s");
  }
  const bool ok = dec["af"] >= dec["naive"] + kVaeNaiveMargin && dec["af"] >= dec["noloss"] + kVaeNoLossMargin &&
                  oob["af"] < oob["noloss"] && budget;
  return {ok, "decoder SPSNR af " + fmt(dec["af"]) + " / noloss " + fmt(dec["noloss"]) + " / naive " +
                  fmt(dec["naive"]) + " dB; out-of-band af " + fmt(oob["af"]) + " / noloss " + fmt(oob["noloss"]) +
                  (budget ? "" : "; training budget exceeded")};
}

Outcome ldm_ordering(Context& ctx) {
  const RunConfig c = base_config();
  std::map<std::string, double> lat, img;
  double train = 0.0;
  for (const std::string name : {"A", "B", "C", "D"}) {
    const Ldm& m = ctx.models.ldm(name);
    train += ctx.models.train_seconds("ldm_" + name);
    const auto ld = diffusion(m, ctx.schedule, c.ddim_steps);
    const Tensor noise = eval_noise(c, m.unet.config());
    const auto deltas = pipelines::random_offsets(c.seed + 2, c.eval_count, c.image_size, ld.factor());
    NoGradGuard no_grad;
    lat[name] = mean_spsnr(pipelines::ldm_latent_pipeline(ld), noise, deltas);
    img[name] = mean_spsnr(pipelines::ldm_image_pipeline(ld), noise, deltas);
    log("ldm " + name + ": latent " + fmt(lat[name]) + " dB, image " + fmt(img[name]) + " dB");
  }
  const bool lat_ok = lat["D"] > lat["C"] && lat["C"] > lat["B"] && lat["B"] > lat["A"];
  const bool img_ok = img["D"] > img["C"] && img["C"] > img["B"] && img["B"] > img["A"];
  const bool budget = train <= kLdmTrainMinutes * 60.0;
  return {lat_ok && img_ok && budget,
          "latent D/C/B/A " + fmt(lat["D"]) + " / " + fmt(lat["C"]) + " / " + fmt(lat["B"]) + " / " + fmt(lat["A"]) +
              " dB; image " + fmt(img["D"]) + " / " + fmt(img["C"]) + " / " + fmt(img["B"]) + " / " + fmt(img["A"]) +
              " dB; training " + fmt(train / 60.0) + " min"};
}

Outcome denoise_curve(Context& ctx) {
  const RunConfig c = base_config();
  std::map<std::string, std::vector<double>> curves;
  for (const std::string name : {"E", "D"}) {
    const Ldm& m = ctx.models.ldm(name);
    const auto ld = diffusion(m, ctx.schedule, c.curve_steps);
    for (const auto& r : pipelines::denoise_spsnr_curve(name, ld, eval_noise(c, m.unet.config()), c.curve_delta,
                                                        c.curve_steps)) {
      curves[name].push_back(r.value);
    }
  }
  const auto& base = curves["E"];
  const auto& af = curves["D"];
  bool strictly = true, dominated = true;
  for (std::size_t i = 1; i < base.size(); ++i) strictly &= base[i] < base[i - 1];
  for (std::size_t i = 0; i < base.size(); ++i) dominated &= af[i] >= base[i];
  const double drop = base.front() - base.back();
  std::string b, a;
  for (std::size_t i = 0; i < base.size(); ++i) {
    b += (i ? " " : "") + fmt(base[i]);
    a += (i ? " " : "") + fmt(af[i]);
  }
  log("baseline curve: " + b);
  log("alias-free curve: " + a);
  return {strictly && drop >= kCurveDrop && dominated,
          "baseline " + fmt(base.front()) + " -> " + fmt(base.back()) + " dB (drop " + fmt(drop) + ", " +
              (strictly ? "strictly decreasing" : "not strictly decreasing") + "); alias-free " + fmt(af.back()) +
              " dB at the last step, " + (dominated ? "never below" : "below") + " baseline"};
}

struct SweepStats {
  std::vector<double> values;
  double variance = 0.0;
  bool integer_peaks = true;
};

SweepStats sweep_stats(const std::vector<metrics::MetricRecord>& rs) {
  SweepStats s;
  for (const auto& r : rs) s.values.push_back(r.value);
  s.variance = metrics::variance_of(s.values);
  int peaks = 0;
  for (std::size_t i = 0; i < rs.size(); ++i) {
    const double off = rs[i].offset.dx;
    if (off != std::round(off)) continue;
    ++peaks;
    if (i > 0) s.integer_peaks &= s.values[i] > s.values[i - 1];
    if (i + 1 < rs.size()) s.integer_peaks &= s.values[i] > s.values[i + 1];
  }
  s.integer_peaks &= peaks > 0;
  return s;
}

Outcome fractional_sweep(Context& ctx) {
  const RunConfig c = base_config();
  const pipelines::SweepSpec spec{c.sweep_step, c.sweep_count};
  std::map<std::string, SweepStats> stats;
  for (const std::string name : {"naive", "af"}) {
    const Vae& vae = ctx.models.vae(name);
    NoGradGuard no_grad;
    const Tensor latents = encode_dataset(vae, eval_images(c));
    stats[name] = sweep_stats(pipelines::shift_sweep(name, pipelines::decoder_pipeline(vae), latents, spec));
    std::string line;
    for (double v : stats[name].values) line += " " + fmt(v);
    log("decoder sweep " + name + ":" + line);
  }
  for (const std::string name : {"E", "D"}) {
    const Ldm& m = ctx.models.ldm(name);
    const auto ld = diffusion(m, ctx.schedule, c.ddim_steps);
    NoGradGuard no_grad;
    const auto rs = pipelines::shift_sweep(
        name, pipelines::ldm_image_pipeline(ld, spectral::ShiftMode::kCropped), eval_noise(c, m.unet.config()), spec);
    std::string line;
    for (const auto& r : rs) line += " " + fmt(r.value);
    log("ldm image sweep " + name + ":" + line + " (variance " + fmt(sweep_stats(rs).variance) + ")");
  }
  const auto& base = stats["naive"];
  const auto& af = stats["af"];
  const bool ok = base.integer_peaks && af.variance < kSweepVarianceRatio * base.variance;
  return {ok, std::string("baseline decoder ") + (base.integer_peaks ? "peaks" : "does not peak") +
                  " at integer offsets; variance af " + fmt(af.variance) + " vs baseline " + fmt(base.variance) +
                  " (ratio " + fmt(af.variance / std::max(base.variance, 1e-300)) + ")"};
}

Outcome warping(Context& ctx) {
  const RunConfig c = base_config();
  const auto videos = data::generate_videos(c.data_seed + kVideoStream, c.video_count,
                                            {.size = c.image_size, .frames = c.video_frames});
  std::vector<pipelines::WarpPair> pairs;
  for (const auto& v : videos) pairs.push_back({v.frames[0], v.frames[1], v.flow_bwd[0]});
  std::map<std::string, pipelines::WarpingScores> s;
  for (const std::string name : {"E", "D"}) {
    s[name] = pipelines::warping_error(diffusion(ctx.models.ldm(name), ctx.schedule, c.ddim_steps), pairs);
    log("warping " + name + ": input " + fmt(s[name].input) + ", inversion " + fmt(s[name].inversion) +
        ", generation " + fmt(s[name].generation));
  }
  const bool ok = s["D"].inversion > s["E"].inversion && s["D"].generation > s["E"].generation &&
                  s["D"].input == s["E"].input;
  return {ok, std::to_string(pairs.size()) + " pairs; inversion af " + fmt(s["D"].inversion) + " vs " +
                  fmt(s["E"].inversion) + " dB, generation af " + fmt(s["D"].generation) + " vs " +
                  fmt(s["E"].generation) + " dB, input " + fmt(s["D"].input) + " / " + fmt(s["E"].input) + " dB"};
}

Outcome still_edit(Context& ctx) {
  const RunConfig c = base_config();
  data::VideoOptions o{.size = c.image_size, .frames = c.video_frames};
  o.max_translation = 0.0;
  o.max_wobble = 0.0;
  const auto video = data::generate_video(c.data_seed + kVideoStream, o);
  const auto ld = diffusion(ctx.models.ldm("D"), ctx.schedule, c.ddim_steps);
  const auto edited = pipelines::edit_video(ld, video.frames, {0.0, c.seed, 1.0});
  double worst = metrics::kPsnrCap;
  for (std::size_t i = 0; i < edited.size(); ++i)
    for (std::size_t j = i + 1; j < edited.size(); ++j)
      worst = std::min(worst, metrics::psnr(edited[i], edited[j], metrics::kImagePeak));
  return {worst >= kEditPsnr, std::to_string(edited.size()) + " frames, worst pairwise PSNR " + fmt(worst) + " dB"};
}

Outcome ddim_algebra(Context& ctx) {
  testing::Gen gen(31);
  double worst = 0.0;
  for (int trial = 0; trial < 1000; ++trial) {
    const int t = static_cast<int>(gen.integer(1, 999));
    const int tp = static_cast<int>(gen.integer(0, t));
    const Tensor z = gen.normal_tensor({1, 4, 8, 8});
    const Tensor eps = gen.normal_tensor(z.shape());
    const Tensor back =
        ddim_invert_step(ctx.schedule, ddim_step(ctx.schedule, z, eps, t, tp), eps, tp, t);
    worst = std::max(worst, testing::max_abs_diff(back, z));
  }
  const RunConfig c = base_config();
  const Ldm& m = ctx.models.ldm("D");
  const auto ld = diffusion(m, ctx.schedule, c.ddim_steps);
  NoGradGuard no_grad;
  const Tensor z0 = ld.encode(eval_images(c));
  const Tensor back = ld.sample(ld.invert(z0));
  std::vector<double> psnrs;
  const spectral::ValidMask all(z0.dim(2), z0.dim(3));
  for (std::int64_t i = 0; i < z0.dim(0); ++i) {
    psnrs.push_back(metrics::masked_psnr(metrics::sample(back, i), metrics::sample(z0, i), all, 0.0));
  }
  const double rt = metrics::mean_of(psnrs);
  return {worst < kStepInvertTol && rt >= kRoundTripPsnr,
          "step/invert max error " + fmt(worst) + "; invert->sample latent PSNR " + fmt(rt) + " dB over " +
              std::to_string(psnrs.size()) + " latents"};
}

#ifdef AFLDM_CLI_PATH
int run_cli(const std::string& args, const fs::path& log_file) {
  const std::string cmd = std::string(AFLDM_CLI_PATH) + " " + args + " >" + log_file.string() + " 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::map<std::string, std::uint64_t> hash_tree(const fs::path& root) {
  std::map<std::string, std::uint64_t> out;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (!e.is_regular_file() || e.path().filename() == "manifest.txt") continue;
    out[fs::relative(e.path(), root).string()] = fnv1a(slurp(e.path()));
  }
  return out;
}
#endif

Outcome determinism(Context&) {
#ifndef AFLDM_CLI_PATH
  return {false, "command-line tool not built"};
#else
  const fs::path root = fs::temp_directory_path() / "afldm_acceptance_determinism";
  fs::remove_all(root);
  fs::create_directories(root);
  const fs::path cfg = root / "tiny.cfg";
  std::ofstream(cfg) << "image_size = 32\nimage_count = 8\nvideo_count = 2\neval_count = 2\n"
                        "vae_widths = 8,8\nunet_widths = 8,16\nvae_steps = 2\nldm_steps = 2\n"
                        "vae_batch = 2\nldm_batch = 2\nwarmup = 1\nddim_steps = 2\ncurve_steps = 2\n"
                        "sweep_count = 2\ninterp_frames = 1\nedit_strength = 0.5\n";
  const std::vector<std::string> order{"gen-data",      "train-vae",  "train-ldm",  "eval-spsnr", "shift-sweep",
                                       "freq-map",      "denoise-curve", "warp-bench", "edit-video", "interpolate"};
  std::map<std::string, std::uint64_t> first;
  int files = 0, mismatches = 0;
  for (const std::string run : {"r1", "r2"}) {
    const fs::path base = root / run;
    for (const auto& cmd : order) {
      std::string args = cmd + " --config " + cfg.string() + " --out " + (base / cmd).string();
      if (cmd == "train-ldm") args += " --ckpt " + (base / "train-vae" / "vae.ckpt").string();
      if (cmd != "gen-data" && cmd != "train-vae" && cmd != "train-ldm") {
        args += " --ckpt " + (base / "train-ldm" / "ldm.ckpt").string();
      }
      if (run_cli(args, root / (run + "_" + cmd + ".log")) != 0) {
        return {false, cmd + " failed; see " + (root / (run + "_" + cmd + ".log")).string()};
      }
    }
    auto hashes = hash_tree(base);
    if (run == "r1") {
      first = std::move(hashes);
      files = static_cast<int>(first.size());
    } else {
      if (hashes.size() != first.size()) ++mismatches;
      for (const auto& [name, h] : hashes) {
        auto it = first.find(name);
        if (it == first.end() || it->second != h) {
          ++mismatches;
          log("determinism: " + name + " differs");
        }
      }
    }
  }
  fs::remove_all(root);
  return {mismatches == 0 && files > 0, std::to_string(order.size()) + " commands run twice, " +
                                            std::to_string(files) + " output files hashed, " +
                                            std::to_string(mismatches) + " mismatches"};
#endif
}

}  // namespace
}  // namespace afldm::acceptance

int main(int argc, char** argv) {
  using namespace afldm::acceptance;
  const char* env = std::getenv("AFLDM_ACCEPTANCE_CACHE");
  Models models(env && *env ? fs::path(env) : fs::path(AFLDM_ACCEPTANCE_CACHE_DEFAULT));
  Context ctx{models, afldm::NoiseSchedule{}};

  const std::vector<std::pair<std::string, std::function<Outcome(Context&)>>> criteria = {
      {"spectral correctness suite", spectral_suite},
      {"gradient suite", gradient_suite},
      {"attention equivariance", attention_suite},
      {"VAE ablation ordering", vae_ordering},
      {"LDM ablation ordering", ldm_ordering},
      {"denoising SPSNR curve", denoise_curve},
      {"fractional shift sweep", fractional_sweep},
      {"warping error ordering", warping},
      {"zero-motion edit", still_edit},
      {"DDIM algebra", ddim_algebra},
      {"determinism", determinism},
  };
  std::set<int> selected;
  for (int i = 1; i < argc; ++i) selected.insert(std::atoi(argv[i]));

  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i + 1);
    if (!selected.empty() && !selected.count(id)) continue;
    Outcome o;
    const auto t0 = Clock::now();
    try {
      o = criteria[i].second(ctx);
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    failures += o.pass ? 0 : 1;
    std::printf("criterion %2d %s  %s: %s [%.1f s]\n", id, o.pass ? "PASS" : "FAIL", criteria[i].first.c_str(),
                o.detail.c_str(), seconds_since(t0));
    std::fflush(stdout);
  }
  return failures == 0 ? 0 : 1;
}
