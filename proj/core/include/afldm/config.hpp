#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "afldm/diffusion.hpp"
#include "afldm/networks.hpp"

namespace afldm {

// `key = value` lines; '#' starts a comment, blank lines are ignored.
// Duplicate keys and lines without '=' are ConfigErrors.
std::map<std::string, std::string> parse_key_values(const std::string& text, const std::string& source);
std::map<std::string, std::string> read_key_values(const std::filesystem::path& path);

// Typed accessors that throw ConfigError naming the key.
int parse_int(const std::string& key, const std::string& value);
double parse_double(const std::string& key, const std::string& value);
bool parse_bool(const std::string& key, const std::string& value);
std::uint64_t parse_u64(const std::string& key, const std::string& value);
std::vector<int> parse_int_list(const std::string& key, const std::string& value);
std::string format_int_list(const std::vector<int>& values);

struct RunConfig {
  // data
  int image_size = 32;
  int image_count = 256;
  int video_count = 50;
  int video_frames = 4;
  std::uint64_t data_seed = 1;

  // architecture
  int downsample_factor = 4;
  int latent_channels = 4;
  std::vector<int> vae_widths = {32, 64};
  std::vector<int> unet_widths = {64, 128};
  bool attention = true;
  Nonlinearity nonlinearity = Nonlinearity::kSiLU;
  bool vae_ideal_sampling = true;
  bool vae_filtered_nonlinearity = true;
  bool unet_ideal_sampling = true;
  bool unet_filtered_nonlinearity = true;

  // VAE training
  int vae_steps = 1000;
  int vae_batch = 8;
  double vae_lr = 1e-4;
  bool vae_equivariance_loss = true;
  double lambda_kl = 1e-6;
  double lambda_eq = 1.0;

  // LDM training
  int ldm_steps = 2000;
  int ldm_batch = 16;
  double ldm_lr = 1e-4;
  EqLossMode ldm_eq_loss = EqLossMode::kEquivariantAttention;
  double lambda_unet = 1.0;
  int warmup = 50;
  double clip_norm = 1.0;

  // evaluation
  std::string pipeline = "vae";  // vae | identity
  int eval_count = 32;
  int ddim_steps = 50;
  bool cross_frame_attention = true;
  double sweep_step = 0.25;  // latent pixels
  int sweep_count = 8;
  int curve_steps = 20;
  double curve_delta = 0.5;  // latent pixels
  int freq_m = 4;
  double edit_strength = 0.5;
  int interp_frames = 3;

  std::uint64_t seed = 0;

  // Unknown keys are errors.
  static RunConfig from_map(const std::map<std::string, std::string>& values);
  static RunConfig load(const std::filesystem::path& path);
  std::map<std::string, std::string> to_map() const;

  ModelConfig vae_config() const;
  ModelConfig unet_config() const;
  void validate() const;
};

}  // namespace afldm
