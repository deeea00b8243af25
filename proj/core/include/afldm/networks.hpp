#pragma once

#include <map>
#include <string>
#include <vector>

#include "afldm/layers.hpp"
#include "afldm/spectral.hpp"
#include "afldm/tensor.hpp"

namespace afldm {

enum class ModelKind { kVae, kUNet };

std::string to_string(ModelKind kind);
ModelKind parse_model_kind(const std::string& name);

struct ModelConfig {
  ModelKind kind = ModelKind::kVae;
  int image_size = 32;
  int downsample_factor = 4;  // k, image pixels per latent pixel
  int image_channels = 3;
  int latent_channels = 4;
  std::vector<int> widths = {32, 64};
  bool attention = true;  // VAE mid block / U-Net lowest level and mid block
  Nonlinearity nonlinearity = Nonlinearity::kSiLU;
  bool ideal_sampling = true;
  bool filtered_nonlinearity = true;
  Padding padding = Padding::kCircular;
  spectral::NyquistHandling nyquist = spectral::NyquistHandling::kCosine;
  std::uint64_t seed = 0;
  double latent_scale = 1.0;  // U-Net: latents are multiplied by this before diffusion

  int latent_size() const { return image_size / downsample_factor; }
  int time_embedding_dim() const { return 4 * widths.front(); }

  // Throws ConfigError when the fields are inconsistent.
  void validate() const;

  std::map<std::string, std::string> to_map() const;
  static ModelConfig from_map(const std::map<std::string, std::string>& values);

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

struct VAEOutput {
  Tensor mean;
  Tensor logvar;
  Tensor sample;
  Tensor reconstruction;
};

class Vae {
 public:
  explicit Vae(const ModelConfig& config);

  const ModelConfig& config() const { return config_; }
  nn::ParamSet& params() { return params_; }
  const nn::ParamSet& params() const { return params_; }

  // Fills mean and logvar (clamped to [-30, 20]).
  VAEOutput encode(const Tensor& x) const;
  Tensor encode_mean(const Tensor& x) const { return encode(x).mean; }
  Tensor decode(const Tensor& z) const;

  // Reparameterized sample mean + exp(logvar / 2) * noise.
  static Tensor reparameterize(const VAEOutput& out, const Tensor& noise);

  // Encode, sample with `noise`, decode.
  VAEOutput forward(const Tensor& x, const Tensor& noise) const;

 private:
  Tensor resblock(const std::string& name, const Tensor& x) const;

  ModelConfig config_;
  nn::ParamSet params_;
};

class UNet {
 public:
  explicit UNet(const ModelConfig& config);

  const ModelConfig& config() const { return config_; }
  nn::ParamSet& params() { return params_; }
  const nn::ParamSet& params() const { return params_; }

  std::size_t attention_layers() const;

  // z [B, latent_channels, h, w], one timestep per sample. kRecord fills the
  // cache; kEquivariant reads it.
  Tensor forward(const Tensor& z, const std::vector<int>& t, nn::AttentionMode mode = nn::AttentionMode::kSelf,
                 nn::KVCache* cache = nullptr) const;

 private:
  Tensor resblock(const std::string& name, const Tensor& x, const Tensor& emb) const;

  ModelConfig config_;
  nn::ParamSet params_;
};

// Sinusoidal embedding [B, dim] of integer timesteps.
Tensor timestep_embedding(const std::vector<int>& t, int dim);

}  // namespace afldm
