#pragma once

// Parameter storage and the network building blocks shared by the VAE and
// the U-Net.

#include <map>
#include <string>
#include <vector>

#include "afldm/random.hpp"
#include "afldm/spectral.hpp"
#include "afldm/tensor.hpp"

namespace afldm::nn {

// Named trainable tensors, kept sorted by name.
class ParamSet {
 public:
  Tensor& add(const std::string& name, Tensor value);
  Tensor& at(const std::string& name);
  const Tensor& at(const std::string& name) const;
  bool contains(const std::string& name) const { return params_.count(name) != 0; }
  std::size_t size() const { return params_.size(); }
  std::int64_t numel() const;

  std::map<std::string, Tensor>& items() { return params_; }
  const std::map<std::string, Tensor>& items() const { return params_; }

  void set_requires_grad(bool value);
  void zero_grad();

 private:
  std::map<std::string, Tensor> params_;
};

// Uniform(-b, b) with b = gain * sqrt(3 / fan_in).
Tensor lecun_uniform(Rng& rng, const Shape& shape, std::int64_t fan_in, double gain = 1.0);

void add_conv(ParamSet& ps, Rng& rng, const std::string& name, std::int64_t in, std::int64_t out, int kernel,
              double gain = 1.0);
void add_linear(ParamSet& ps, Rng& rng, const std::string& name, std::int64_t in, std::int64_t out,
                double gain = 1.0);

Tensor conv(const ParamSet& ps, const std::string& name, const Tensor& x, Padding padding);
// x [N, in] -> [N, out]
Tensor linear(const ParamSet& ps, const std::string& name, const Tensor& x);

// Keeps every factor-th sample on both spatial axes.
Tensor subsample(const Tensor& x, int factor);
// Repeats every sample factor x factor times.
Tensor nearest_upsample(const Tensor& x, int factor);

Tensor downsample(const Tensor& x, int factor, bool ideal);
Tensor upsample(const Tensor& x, int factor, bool ideal);
Tensor activation(const Tensor& x, Nonlinearity kind, bool filtered);

// Gain of the last convolution of a residual branch and of the U-Net output.
inline constexpr double kResidualGain = 0.3;

struct BlockOptions {
  Nonlinearity nonlinearity = Nonlinearity::kSiLU;
  bool filtered = true;
  Padding padding = Padding::kCircular;
};

// conv1 (+ time embedding when emb_dim > 0) -> activation -> conv2, plus a
// 1x1 skip projection when the channel counts differ.
void add_resblock(ParamSet& ps, Rng& rng, const std::string& name, std::int64_t in, std::int64_t out,
                  std::int64_t emb_dim);
// `emb` [B, emb_dim] may be undefined for blocks without a time embedding.
Tensor resblock(const ParamSet& ps, const std::string& name, const Tensor& x, const Tensor& emb,
                const BlockOptions& options);

struct AttentionWeights {
  Tensor wq, wk, wv;  // [d_m, d_k], [d_m, d_k], [d_m, d_v]
  Tensor wo;          // [d_v, d_m], optional
};

struct KVLayer {
  Tensor k;  // [B, N, d_k]
  Tensor v;  // [B, N, d_v]
};

// Keys and values of every attention layer of one reference pass.
struct KVCache {
  std::vector<KVLayer> layers;
  bool populated(std::size_t count) const;
};

// Linear interpolation (1 - alpha) a + alpha b of every cached K and V.
KVCache interpolate(const KVCache& a, const KVCache& b, double alpha);

// tokens [B, N, d_m] (or [N, d_m]); returns keys and values.
KVLayer project_kv(const Tensor& tokens, const AttentionWeights& w);

// softmax(x Wq (x Wk)^T / sqrt(d_k)) x Wv, followed by Wo when present.
Tensor self_attention(const Tensor& tokens, const AttentionWeights& w);

// Queries from x_s against the fixed keys and values of a reference pass.
Tensor equivariant_attention(const Tensor& tokens, const KVLayer& reference, const AttentionWeights& w);

enum class AttentionMode {
  kSelf,        // plain self-attention
  kRecord,      // self-attention, storing K and V into the cache
  kEquivariant  // keys and values taken from the cache
};

void add_attention(ParamSet& ps, Rng& rng, const std::string& name, std::int64_t channels);
AttentionWeights attention_weights(const ParamSet& ps, const std::string& name);

// Residual attention over the spatial positions of x [B, C, H, W].
Tensor attention_block(const ParamSet& ps, const std::string& name, const Tensor& x, AttentionMode mode,
                       KVCache* cache, std::size_t layer);

// [B, C, H, W] <-> [B, H W, C]
Tensor to_tokens(const Tensor& x);
Tensor from_tokens(const Tensor& tokens, std::int64_t height, std::int64_t width);

}  // namespace afldm::nn
