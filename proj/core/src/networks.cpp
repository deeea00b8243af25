#include "afldm/networks.hpp"

#include <charconv>
#include <cmath>
#include <sstream>

#include "afldm/error.hpp"

namespace afldm {
namespace {

using nn::ParamSet;

bool is_pow2(int v) { return v > 0 && (v & (v - 1)) == 0; }

int log2_int(int v) {
  int n = 0;
  while ((1 << n) < v) ++n;
  return n;
}

std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

int parse_int(const std::string& key, const std::string& v) {
  int out = 0;
  auto res = std::from_chars(v.data(), v.data() + v.size(), out);
  if (res.ec != std::errc() || res.ptr != v.data() + v.size()) {
    throw ConfigError("config key '" + key + "': expected an integer, got '" + v + "'");
  }
  return out;
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "1" || v == "true") return true;
  if (v == "0" || v == "false") return false;
  throw ConfigError("config key '" + key + "': expected a boolean, got '" + v + "'");
}

}  // namespace

std::string to_string(ModelKind kind) { return kind == ModelKind::kVae ? "vae" : "unet"; }

ModelKind parse_model_kind(const std::string& name) {
  if (name == "vae") return ModelKind::kVae;
  if (name == "unet") return ModelKind::kUNet;
  throw ConfigError("unknown model kind '" + name + "'");
}

void ModelConfig::validate() const {
  if (image_size <= 0 || downsample_factor <= 0) throw ConfigError("image size and k must be positive");
  if (!is_pow2(downsample_factor)) throw ConfigError("downsample factor k must be a power of two");
  if (image_size % downsample_factor != 0) throw ConfigError("image size must be divisible by k");
  if (widths.empty()) throw ConfigError("widths must not be empty");
  for (int w : widths) {
    if (w <= 0) throw ConfigError("widths must be positive");
  }
  if (image_channels <= 0 || latent_channels <= 0) throw ConfigError("channel counts must be positive");
  if (kind == ModelKind::kVae) {
    if (static_cast<int>(widths.size()) != log2_int(downsample_factor)) {
      throw ConfigError("a VAE needs one width per 2x downsampling stage (log2 k = " +
                        std::to_string(log2_int(downsample_factor)) + ")");
    }
  } else {
    const int levels = static_cast<int>(widths.size());
    const int lowest = latent_size() >> (levels - 1);
    if (lowest < 3 || (latent_size() % (1 << (levels - 1))) != 0) {
      throw ConfigError("latent size " + std::to_string(latent_size()) + " cannot host " + std::to_string(levels) +
                        " U-Net levels");
    }
    if (filtered_nonlinearity && lowest % 2 != 0) throw ConfigError("filtered nonlinearity needs even sizes");
  }
  if (!(latent_scale > 0.0) || !std::isfinite(latent_scale)) throw ConfigError("latent_scale must be positive");
}

std::map<std::string, std::string> ModelConfig::to_map() const {
  std::string ws;
  for (std::size_t i = 0; i < widths.size(); ++i) ws += (i ? "," : "") + std::to_string(widths[i]);
  return {
      {"kind", to_string(kind)},
      {"image_size", std::to_string(image_size)},
      {"downsample_factor", std::to_string(downsample_factor)},
      {"image_channels", std::to_string(image_channels)},
      {"latent_channels", std::to_string(latent_channels)},
      {"widths", ws},
      {"attention", attention ? "1" : "0"},
      {"nonlinearity", to_string(nonlinearity)},
      {"ideal_sampling", ideal_sampling ? "1" : "0"},
      {"filtered_nonlinearity", filtered_nonlinearity ? "1" : "0"},
      {"padding", to_string(padding)},
      {"nyquist", nyquist == spectral::NyquistHandling::kCosine ? "cosine" : "drop"},
      {"seed", std::to_string(seed)},
      {"latent_scale", format_double(latent_scale)},
  };
}

ModelConfig ModelConfig::from_map(const std::map<std::string, std::string>& values) {
  ModelConfig c;
  const auto defaults = c.to_map();
  for (const auto& [key, _] : values) {
    if (!defaults.count(key)) throw ConfigError("unknown model config key '" + key + "'");
  }
  for (const auto& [key, _] : defaults) {
    if (!values.count(key)) throw ConfigError("model config key '" + key + "' missing");
  }
  c.kind = parse_model_kind(values.at("kind"));
  c.image_size = parse_int("image_size", values.at("image_size"));
  c.downsample_factor = parse_int("downsample_factor", values.at("downsample_factor"));
  c.image_channels = parse_int("image_channels", values.at("image_channels"));
  c.latent_channels = parse_int("latent_channels", values.at("latent_channels"));
  c.widths.clear();
  std::stringstream ss(values.at("widths"));
  for (std::string item; std::getline(ss, item, ',');) c.widths.push_back(parse_int("widths", item));
  c.attention = parse_bool("attention", values.at("attention"));
  c.nonlinearity = parse_nonlinearity(values.at("nonlinearity"));
  c.ideal_sampling = parse_bool("ideal_sampling", values.at("ideal_sampling"));
  c.filtered_nonlinearity = parse_bool("filtered_nonlinearity", values.at("filtered_nonlinearity"));
  c.padding = parse_padding(values.at("padding"));
  const auto& ny = values.at("nyquist");
  if (ny == "cosine") {
    c.nyquist = spectral::NyquistHandling::kCosine;
  } else if (ny == "drop") {
    c.nyquist = spectral::NyquistHandling::kDrop;
  } else {
    throw ConfigError("unknown nyquist handling '" + ny + "'");
  }
  const auto& seed = values.at("seed");
  auto res = std::from_chars(seed.data(), seed.data() + seed.size(), c.seed);
  if (res.ec != std::errc()) throw ConfigError("config key 'seed': bad value '" + seed + "'");
  const auto& scale = values.at("latent_scale");
  res = std::from_chars(scale.data(), scale.data() + scale.size(), c.latent_scale);
  if (res.ec != std::errc()) throw ConfigError("config key 'latent_scale': bad value '" + scale + "'");
  c.validate();
  return c;
}

// ---------------------------------------------------------------------------
// VAE

Vae::Vae(const ModelConfig& config) : config_(config) {
  config_.kind = ModelKind::kVae;
  config_.validate();
  Rng rng(config_.seed);
  const auto& w = config_.widths;
  const int stages = static_cast<int>(w.size());
  nn::add_conv(params_, rng, "enc.conv_in", config_.image_channels, w[0], 3);
  std::int64_t ch = w[0];
  for (int l = 0; l < stages; ++l) {
    const std::string p = "enc.down" + std::to_string(l);
    nn::add_resblock(params_, rng, p + ".res", ch, w[static_cast<std::size_t>(l)], 0);
    ch = w[static_cast<std::size_t>(l)];
    nn::add_conv(params_, rng, p + ".sample", ch, ch, 3);
  }
  nn::add_resblock(params_, rng, "enc.mid.res1", ch, ch, 0);
  if (config_.attention) nn::add_attention(params_, rng, "enc.mid.attn", ch);
  nn::add_resblock(params_, rng, "enc.mid.res2", ch, ch, 0);
  nn::add_conv(params_, rng, "enc.conv_out", ch, 2 * config_.latent_channels, 3);

  nn::add_conv(params_, rng, "dec.conv_in", config_.latent_channels, ch, 3);
  nn::add_resblock(params_, rng, "dec.mid.res1", ch, ch, 0);
  if (config_.attention) nn::add_attention(params_, rng, "dec.mid.attn", ch);
  nn::add_resblock(params_, rng, "dec.mid.res2", ch, ch, 0);
  for (int l = stages - 1; l >= 0; --l) {
    const std::string p = "dec.up" + std::to_string(l);
    nn::add_conv(params_, rng, p + ".sample", ch, w[static_cast<std::size_t>(l)], 3);
    ch = w[static_cast<std::size_t>(l)];
    nn::add_resblock(params_, rng, p + ".res", ch, ch, 0);
  }
  nn::add_conv(params_, rng, "dec.conv_out", ch, config_.image_channels, 3);
}

Tensor Vae::resblock(const std::string& name, const Tensor& x) const {
  return nn::resblock(params_, name, x, {}, {config_.nonlinearity, config_.filtered_nonlinearity, config_.padding});
}

VAEOutput Vae::encode(const Tensor& x) const {
  if (x.rank() != 4 || x.dim(1) != config_.image_channels || x.dim(2) != config_.image_size ||
      x.dim(3) != config_.image_size) {
    throw ShapeError("vae encode: expected [B, " + std::to_string(config_.image_channels) + ", " +
                     std::to_string(config_.image_size) + ", " + std::to_string(config_.image_size) + "], got " +
                     shape_str(x.shape()));
  }
  const Padding pad = config_.padding;
  Tensor h = nn::conv(params_, "enc.conv_in", x, pad);
  for (std::size_t l = 0; l < config_.widths.size(); ++l) {
    const std::string p = "enc.down" + std::to_string(l);
    h = resblock(p + ".res", h);
    h = nn::downsample(nn::conv(params_, p + ".sample", h, pad), 2, config_.ideal_sampling);
  }
  h = resblock("enc.mid.res1", h);
  if (config_.attention) h = nn::attention_block(params_, "enc.mid.attn", h, nn::AttentionMode::kSelf, nullptr, 0);
  h = resblock("enc.mid.res2", h);
  h = nn::activation(h, config_.nonlinearity, config_.filtered_nonlinearity);
  h = nn::conv(params_, "enc.conv_out", h, pad);
  VAEOutput out;
  const std::int64_t c = config_.latent_channels;
  out.mean = slice(h, 1, 0, c);
  out.logvar = clamp(slice(h, 1, c, 2 * c), -30.0, 20.0);
  return out;
}

Tensor Vae::decode(const Tensor& z) const {
  if (z.rank() != 4 || z.dim(1) != config_.latent_channels || z.dim(2) != config_.latent_size() ||
      z.dim(3) != config_.latent_size()) {
    throw ShapeError("vae decode: unexpected latent shape " + shape_str(z.shape()));
  }
  const Padding pad = config_.padding;
  Tensor h = nn::conv(params_, "dec.conv_in", z, pad);
  h = resblock("dec.mid.res1", h);
  if (config_.attention) h = nn::attention_block(params_, "dec.mid.attn", h, nn::AttentionMode::kSelf, nullptr, 0);
  h = resblock("dec.mid.res2", h);
  for (int l = static_cast<int>(config_.widths.size()) - 1; l >= 0; --l) {
    const std::string p = "dec.up" + std::to_string(l);
    h = nn::conv(params_, p + ".sample", nn::upsample(h, 2, config_.ideal_sampling), pad);
    h = resblock(p + ".res", h);
  }
  h = nn::activation(h, config_.nonlinearity, config_.filtered_nonlinearity);
  return nn::conv(params_, "dec.conv_out", h, pad);
}

Tensor Vae::reparameterize(const VAEOutput& out, const Tensor& noise) {
  return out.mean + exp(out.logvar * 0.5) * noise;
}

VAEOutput Vae::forward(const Tensor& x, const Tensor& noise) const {
  VAEOutput out = encode(x);
  out.sample = reparameterize(out, noise);
  out.reconstruction = decode(out.sample);
  return out;
}

// ---------------------------------------------------------------------------
// U-Net

Tensor timestep_embedding(const std::vector<int>& t, int dim) {
  const int half = dim / 2;
  std::vector<double> v(t.size() * static_cast<std::size_t>(dim), 0.0);
  for (std::size_t b = 0; b < t.size(); ++b) {
    for (int i = 0; i < half; ++i) {
      const double freq = std::exp(-std::log(10000.0) * i / half);
      const double arg = static_cast<double>(t[b]) * freq;
      v[b * static_cast<std::size_t>(dim) + static_cast<std::size_t>(i)] = std::sin(arg);
      v[b * static_cast<std::size_t>(dim) + static_cast<std::size_t>(half + i)] = std::cos(arg);
    }
  }
  return Tensor::from_vector({static_cast<std::int64_t>(t.size()), dim}, std::move(v));
}

UNet::UNet(const ModelConfig& config) : config_(config) {
  config_.kind = ModelKind::kUNet;
  config_.validate();
  Rng rng(config_.seed);
  const auto& w = config_.widths;
  const int levels = static_cast<int>(w.size());
  const std::int64_t emb = config_.time_embedding_dim();
  nn::add_linear(params_, rng, "time.lin1", emb, emb);
  nn::add_linear(params_, rng, "time.lin2", emb, emb);
  nn::add_conv(params_, rng, "conv_in", config_.latent_channels, w[0], 3);
  std::int64_t ch = w[0];
  for (int l = 0; l < levels; ++l) {
    const std::string p = "down" + std::to_string(l);
    const std::int64_t wl = w[static_cast<std::size_t>(l)];
    nn::add_resblock(params_, rng, p + ".res", ch, wl, emb);
    ch = wl;
    if (config_.attention && l == levels - 1) nn::add_attention(params_, rng, p + ".attn", ch);
    if (l < levels - 1) nn::add_conv(params_, rng, p + ".sample", ch, ch, 3);
  }
  nn::add_resblock(params_, rng, "mid.res1", ch, ch, emb);
  if (config_.attention) nn::add_attention(params_, rng, "mid.attn", ch);
  nn::add_resblock(params_, rng, "mid.res2", ch, ch, emb);
  for (int l = levels - 1; l >= 0; --l) {
    const std::string p = "up" + std::to_string(l);
    const std::int64_t wl = w[static_cast<std::size_t>(l)];
    nn::add_resblock(params_, rng, p + ".res", ch + wl, wl, emb);
    ch = wl;
    if (config_.attention && l == levels - 1) nn::add_attention(params_, rng, p + ".attn", ch);
    if (l > 0) {
      nn::add_conv(params_, rng, p + ".sample", ch, w[static_cast<std::size_t>(l - 1)], 3);
      ch = w[static_cast<std::size_t>(l - 1)];
    }
  }
  nn::add_conv(params_, rng, "conv_out", ch, config_.latent_channels, 3, nn::kResidualGain);
}

std::size_t UNet::attention_layers() const { return config_.attention ? 3 : 0; }

Tensor UNet::resblock(const std::string& name, const Tensor& x, const Tensor& emb) const {
  return nn::resblock(params_, name, x, emb, {config_.nonlinearity, config_.filtered_nonlinearity, config_.padding});
}

Tensor UNet::forward(const Tensor& z, const std::vector<int>& t, nn::AttentionMode mode, nn::KVCache* cache) const {
  const std::int64_t ls = config_.latent_size();
  if (z.rank() != 4 || z.dim(1) != config_.latent_channels || z.dim(2) != ls || z.dim(3) != ls) {
    throw ShapeError("unet: unexpected latent shape " + shape_str(z.shape()));
  }
  if (static_cast<std::int64_t>(t.size()) != z.dim(0)) throw ShapeError("unet: need one timestep per sample");
  if (mode == nn::AttentionMode::kEquivariant && config_.attention &&
      (!cache || !cache->populated(attention_layers()))) {
    throw ConfigError("unet: equivariant attention needs a populated cache");
  }
  if (mode == nn::AttentionMode::kRecord && !cache) throw ConfigError("unet: record mode needs a cache");
  if (mode == nn::AttentionMode::kRecord) cache->layers.assign(attention_layers(), {});

  const Padding pad = config_.padding;
  Tensor emb = timestep_embedding(t, config_.time_embedding_dim());
  emb = nn::linear(params_, "time.lin2", silu(nn::linear(params_, "time.lin1", emb)));
  emb = silu(emb);

  const int levels = static_cast<int>(config_.widths.size());
  std::size_t attn_index = 0;
  auto attend = [&](const std::string& name, const Tensor& h) {
    return nn::attention_block(params_, name, h, mode, cache, attn_index++);
  };

  Tensor h = nn::conv(params_, "conv_in", z, pad);
  std::vector<Tensor> skips;
  for (int l = 0; l < levels; ++l) {
    const std::string p = "down" + std::to_string(l);
    h = resblock(p + ".res", h, emb);
    if (config_.attention && l == levels - 1) h = attend(p + ".attn", h);
    skips.push_back(h);
    if (l < levels - 1) h = nn::downsample(nn::conv(params_, p + ".sample", h, pad), 2, config_.ideal_sampling);
  }
  h = resblock("mid.res1", h, emb);
  if (config_.attention) h = attend("mid.attn", h);
  h = resblock("mid.res2", h, emb);
  for (int l = levels - 1; l >= 0; --l) {
    const std::string p = "up" + std::to_string(l);
    h = resblock(p + ".res", concat({h, skips[static_cast<std::size_t>(l)]}, 1), emb);
    if (config_.attention && l == levels - 1) h = attend(p + ".attn", h);
    if (l > 0) h = nn::conv(params_, p + ".sample", nn::upsample(h, 2, config_.ideal_sampling), pad);
  }
  h = nn::activation(h, config_.nonlinearity, config_.filtered_nonlinearity);
  return nn::conv(params_, "conv_out", h, pad);
}

}  // namespace afldm
