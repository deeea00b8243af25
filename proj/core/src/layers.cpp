#include "afldm/layers.hpp"

#include <cmath>

#include "afldm/error.hpp"

namespace afldm::nn {
namespace {

using ImplPtr = std::shared_ptr<detail::TensorImpl>;

// Applies a [B, N, d] x [d, e] product by flattening the token axis.
Tensor project(const Tensor& tokens, const Tensor& w) {
  if (tokens.rank() == 2) return matmul(tokens, w);
  const std::int64_t b = tokens.dim(0), n = tokens.dim(1), d = tokens.dim(2);
  Tensor flat = matmul(reshape(tokens, {b * n, d}), w);
  return reshape(flat, {b, n, w.dim(1)});
}

Tensor attend(const Tensor& q, const Tensor& k, const Tensor& v, const AttentionWeights& w) {
  const double scale = 1.0 / std::sqrt(static_cast<double>(q.dim(-1)));
  Tensor probs = softmax_rows(matmul(q, transpose(k)) * scale);
  Tensor out = matmul(probs, v);
  return w.wo.defined() ? project(out, w.wo) : out;
}

}  // namespace

Tensor& ParamSet::add(const std::string& name, Tensor value) {
  if (params_.count(name)) throw ConfigError("duplicate parameter '" + name + "'");
  return params_[name] = std::move(value);
}

Tensor& ParamSet::at(const std::string& name) {
  auto it = params_.find(name);
  if (it == params_.end()) throw ConfigError("unknown parameter '" + name + "'");
  return it->second;
}

const Tensor& ParamSet::at(const std::string& name) const {
  auto it = params_.find(name);
  if (it == params_.end()) throw ConfigError("unknown parameter '" + name + "'");
  return it->second;
}

std::int64_t ParamSet::numel() const {
  std::int64_t n = 0;
  for (const auto& [_, t] : params_) n += t.numel();
  return n;
}

void ParamSet::set_requires_grad(bool value) {
  for (auto& [_, t] : params_) t.set_requires_grad(value);
}

void ParamSet::zero_grad() {
  for (auto& [_, t] : params_) t.zero_grad();
}

Tensor lecun_uniform(Rng& rng, const Shape& shape, std::int64_t fan_in, double gain) {
  const double bound = gain * std::sqrt(3.0 / static_cast<double>(fan_in));
  return rng.uniform_tensor(shape, -bound, bound);
}

void add_conv(ParamSet& ps, Rng& rng, const std::string& name, std::int64_t in, std::int64_t out, int kernel,
              double gain) {
  ps.add(name + ".w", lecun_uniform(rng, {out, in, kernel, kernel}, in * kernel * kernel, gain));
  ps.add(name + ".b", Tensor::zeros({out}));
}

void add_linear(ParamSet& ps, Rng& rng, const std::string& name, std::int64_t in, std::int64_t out, double gain) {
  ps.add(name + ".w", lecun_uniform(rng, {in, out}, in, gain));
  ps.add(name + ".b", Tensor::zeros({out}));
}

Tensor conv(const ParamSet& ps, const std::string& name, const Tensor& x, Padding padding) {
  return conv2d(x, ps.at(name + ".w"), ps.at(name + ".b"), padding);
}

Tensor linear(const ParamSet& ps, const std::string& name, const Tensor& x) {
  return add_channel_bias(matmul(x, ps.at(name + ".w")), ps.at(name + ".b"));
}

Tensor subsample(const Tensor& x, int factor) {
  if (x.rank() < 2) throw ShapeError("subsample: expects [..., H, W]");
  const std::int64_t h = x.dim(-2), w = x.dim(-1);
  if (factor < 1 || h % factor != 0 || w % factor != 0) throw ShapeError("subsample: factor does not divide size");
  const std::int64_t ho = h / factor, wo = w / factor, planes = x.numel() / (h * w);
  Shape shape = x.shape();
  shape[shape.size() - 2] = ho;
  shape[shape.size() - 1] = wo;
  Tensor out = detail::make_output(shape, {&x});
  auto dst = out.mutable_data();
  const auto src = x.data();
  for (std::int64_t p = 0; p < planes; ++p) {
    for (std::int64_t y = 0; y < ho; ++y) {
      for (std::int64_t xi = 0; xi < wo; ++xi) {
        dst[static_cast<std::size_t>((p * ho + y) * wo + xi)] =
            src[static_cast<std::size_t>((p * h + y * factor) * w + xi * factor)];
      }
    }
  }
  detail::finalize(out, "subsample");
  if (detail::needs_grad({&x})) {
    ImplPtr ix = x.impl_ptr(), io = out.impl_ptr();
    detail::record(out, [ix, io, planes, h, w, ho, wo, factor]() {
      auto& g = detail::grad_buffer(*ix);
      for (std::int64_t p = 0; p < planes; ++p) {
        for (std::int64_t y = 0; y < ho; ++y) {
          for (std::int64_t xi = 0; xi < wo; ++xi) {
            g[static_cast<std::size_t>((p * h + y * factor) * w + xi * factor)] +=
                io->grad[static_cast<std::size_t>((p * ho + y) * wo + xi)];
          }
        }
      }
    });
  }
  return out;
}

Tensor nearest_upsample(const Tensor& x, int factor) {
  if (x.rank() < 2) throw ShapeError("nearest_upsample: expects [..., H, W]");
  if (factor < 1) throw ShapeError("nearest_upsample: factor must be >= 1");
  const std::int64_t h = x.dim(-2), w = x.dim(-1), planes = x.numel() / (h * w);
  const std::int64_t ho = h * factor, wo = w * factor;
  Shape shape = x.shape();
  shape[shape.size() - 2] = ho;
  shape[shape.size() - 1] = wo;
  Tensor out = detail::make_output(shape, {&x});
  auto dst = out.mutable_data();
  const auto src = x.data();
  for (std::int64_t p = 0; p < planes; ++p) {
    for (std::int64_t y = 0; y < ho; ++y) {
      for (std::int64_t xi = 0; xi < wo; ++xi) {
        dst[static_cast<std::size_t>((p * ho + y) * wo + xi)] =
            src[static_cast<std::size_t>((p * h + y / factor) * w + xi / factor)];
      }
    }
  }
  detail::finalize(out, "nearest_upsample");
  if (detail::needs_grad({&x})) {
    ImplPtr ix = x.impl_ptr(), io = out.impl_ptr();
    detail::record(out, [ix, io, planes, h, w, ho, wo, factor]() {
      auto& g = detail::grad_buffer(*ix);
      for (std::int64_t p = 0; p < planes; ++p) {
        for (std::int64_t y = 0; y < ho; ++y) {
          for (std::int64_t xi = 0; xi < wo; ++xi) {
            g[static_cast<std::size_t>((p * h + y / factor) * w + xi / factor)] +=
                io->grad[static_cast<std::size_t>((p * ho + y) * wo + xi)];
          }
        }
      }
    });
  }
  return out;
}

Tensor downsample(const Tensor& x, int factor, bool ideal) {
  return ideal ? spectral::ideal_downsample(x, factor) : subsample(x, factor);
}

Tensor upsample(const Tensor& x, int factor, bool ideal) {
  return ideal ? spectral::ideal_upsample(x, factor) : nearest_upsample(x, factor);
}

Tensor activation(const Tensor& x, Nonlinearity kind, bool filtered) {
  return filtered ? spectral::filtered_nonlinearity(x, kind) : nonlinearity(x, kind);
}

bool KVCache::populated(std::size_t count) const {
  if (layers.size() != count) return false;
  for (const auto& l : layers) {
    if (!l.k.defined() || !l.v.defined()) return false;
  }
  return true;
}

KVCache interpolate(const KVCache& a, const KVCache& b, double alpha) {
  if (a.layers.size() != b.layers.size()) throw ShapeError("interpolate: caches differ in layer count");
  KVCache out;
  for (std::size_t i = 0; i < a.layers.size(); ++i) {
    const auto& la = a.layers[i];
    const auto& lb = b.layers[i];
    if (la.k.shape() != lb.k.shape() || la.v.shape() != lb.v.shape()) {
      throw ShapeError("interpolate: cache layer " + std::to_string(i) + " shapes differ");
    }
    out.layers.push_back({la.k * (1.0 - alpha) + lb.k * alpha, la.v * (1.0 - alpha) + lb.v * alpha});
  }
  return out;
}

void add_resblock(ParamSet& ps, Rng& rng, const std::string& name, std::int64_t in, std::int64_t out,
                  std::int64_t emb_dim) {
  add_conv(ps, rng, name + ".conv1", in, out, 3);
  if (emb_dim > 0) add_linear(ps, rng, name + ".temb", emb_dim, out);
  add_conv(ps, rng, name + ".conv2", out, out, 3, kResidualGain);
  if (in != out) add_conv(ps, rng, name + ".skip", in, out, 1);
}

Tensor resblock(const ParamSet& ps, const std::string& name, const Tensor& x, const Tensor& emb,
                const BlockOptions& options) {
  Tensor h = conv(ps, name + ".conv1", x, options.padding);
  if (emb.defined()) h = add_channel_bias(h, linear(ps, name + ".temb", emb));
  h = activation(h, options.nonlinearity, options.filtered);
  h = conv(ps, name + ".conv2", h, options.padding);
  const Tensor skip = ps.contains(name + ".skip.w") ? conv(ps, name + ".skip", x, options.padding) : x;
  return skip + h;
}

KVLayer project_kv(const Tensor& tokens, const AttentionWeights& w) {
  return {project(tokens, w.wk), project(tokens, w.wv)};
}

Tensor self_attention(const Tensor& tokens, const AttentionWeights& w) {
  const KVLayer kv = project_kv(tokens, w);
  return attend(project(tokens, w.wq), kv.k, kv.v, w);
}

Tensor equivariant_attention(const Tensor& tokens, const KVLayer& reference, const AttentionWeights& w) {
  if (!reference.k.defined() || !reference.v.defined()) throw ConfigError("equivariant attention: empty cache");
  if (reference.k.rank() != tokens.rank() || reference.k.dim(-1) != w.wk.dim(1) ||
      reference.v.dim(-1) != w.wv.dim(1) || (tokens.rank() == 3 && reference.k.dim(0) != tokens.dim(0))) {
    throw ShapeError("equivariant attention: cache " + shape_str(reference.k.shape()) + " does not fit tokens " +
                     shape_str(tokens.shape()));
  }
  return attend(project(tokens, w.wq), reference.k, reference.v, w);
}

void add_attention(ParamSet& ps, Rng& rng, const std::string& name, std::int64_t channels) {
  ps.add(name + ".q", lecun_uniform(rng, {channels, channels}, channels));
  ps.add(name + ".k", lecun_uniform(rng, {channels, channels}, channels));
  ps.add(name + ".v", lecun_uniform(rng, {channels, channels}, channels));
  ps.add(name + ".o", lecun_uniform(rng, {channels, channels}, channels, 0.5));
}

AttentionWeights attention_weights(const ParamSet& ps, const std::string& name) {
  return {ps.at(name + ".q"), ps.at(name + ".k"), ps.at(name + ".v"), ps.at(name + ".o")};
}

Tensor to_tokens(const Tensor& x) {
  if (x.rank() != 4) throw ShapeError("to_tokens: expects [B, C, H, W]");
  return permute(reshape(x, {x.dim(0), x.dim(1), x.dim(2) * x.dim(3)}), {0, 2, 1});
}

Tensor from_tokens(const Tensor& tokens, std::int64_t height, std::int64_t width) {
  return reshape(permute(tokens, {0, 2, 1}), {tokens.dim(0), tokens.dim(2), height, width});
}

Tensor attention_block(const ParamSet& ps, const std::string& name, const Tensor& x, AttentionMode mode,
                       KVCache* cache, std::size_t layer) {
  const AttentionWeights w = attention_weights(ps, name);
  const Tensor tokens = to_tokens(x);
  Tensor out;
  switch (mode) {
    case AttentionMode::kSelf:
      out = self_attention(tokens, w);
      break;
    case AttentionMode::kRecord: {
      if (!cache) throw ConfigError("attention: record mode needs a cache");
      KVLayer kv = project_kv(tokens, w);
      out = attend(project(tokens, w.wq), kv.k, kv.v, w);
      if (cache->layers.size() <= layer) cache->layers.resize(layer + 1);
      cache->layers[layer] = std::move(kv);
      break;
    }
    case AttentionMode::kEquivariant:
      if (!cache || cache->layers.size() <= layer) {
        throw ConfigError("attention: equivariant mode without a cached layer " + std::to_string(layer));
      }
      out = equivariant_attention(tokens, cache->layers[layer], w);
      break;
  }
  return x + from_tokens(out, x.dim(2), x.dim(3));
}

}  // namespace afldm::nn
