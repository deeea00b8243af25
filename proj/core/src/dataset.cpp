#include "afldm/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "afldm/error.hpp"
#include "afldm/parallel.hpp"
#include "afldm/random.hpp"
#include "afldm/spectral.hpp"

namespace afldm::data {
namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

struct Mode {
  int fx = 0, fy = 0;
  double phase = 0.0;
  std::vector<double> amplitude;
};

struct Sprite {
  double cx = 0.0, cy = 0.0, sigma = 1.0;
  std::vector<double> color;
};

// Continuous periodic scene on [0, S)^2.
struct Scene {
  int size = 32;
  int channels = 3;
  std::vector<Mode> modes;
  std::vector<Sprite> sprites;

  double value(int c, double x, double y) const {
    double v = 0.0;
    for (const auto& m : modes) {
      v += m.amplitude[static_cast<std::size_t>(c)] * std::cos(kTwoPi * (m.fx * x + m.fy * y) / size + m.phase);
    }
    const double s = static_cast<double>(size);
    for (const auto& sp : sprites) {
      double g = 0.0;
      for (int oy = -1; oy <= 1; ++oy) {
        for (int ox = -1; ox <= 1; ++ox) {
          const double ddx = x - sp.cx + ox * s, ddy = y - sp.cy + oy * s;
          g += std::exp(-(ddx * ddx + ddy * ddy) / (2.0 * sp.sigma * sp.sigma));
        }
      }
      v += sp.color[static_cast<std::size_t>(c)] * g;
    }
    return v;
  }
};

Scene random_scene(Rng& rng, int size, int channels, int modes, int sprites, int max_freq) {
  Scene sc;
  sc.size = size;
  sc.channels = channels;
  for (int i = 0; i < modes; ++i) {
    Mode m;
    do {
      m.fx = static_cast<int>(rng.randint(-max_freq, max_freq));
      m.fy = static_cast<int>(rng.randint(-max_freq, max_freq));
    } while (m.fx == 0 && m.fy == 0);
    m.phase = rng.uniform(0.0, kTwoPi);
    for (int c = 0; c < channels; ++c) m.amplitude.push_back(rng.uniform(-1.0, 1.0) / modes);
    sc.modes.push_back(std::move(m));
  }
  for (int i = 0; i < sprites; ++i) {
    Sprite sp;
    sp.cx = rng.uniform(0.0, size);
    sp.cy = rng.uniform(0.0, size);
    sp.sigma = rng.uniform(1.5, 4.0);
    for (int c = 0; c < channels; ++c) sp.color.push_back(rng.uniform(-1.0, 1.0));
    sc.sprites.push_back(std::move(sp));
  }
  return sc;
}

// One smooth periodic displacement field g(q) = t + a * sin(2 pi f.q / S + phi).
struct Motion {
  double tx = 0.0, ty = 0.0;
  double ax = 0.0, ay = 0.0;
  int fx = 0, fy = 0;
  double phase = 0.0;
  int size = 32;

  std::pair<double, double> at(double x, double y) const {
    const double s = std::sin(kTwoPi * (fx * x + fy * y) / size + phase);
    return {tx + ax * s, ty + ay * s};
  }
};

Motion random_motion(Rng& rng, const VideoOptions& o) {
  Motion m;
  m.size = o.size;
  m.tx = rng.uniform(-o.max_translation, o.max_translation);
  m.ty = rng.uniform(-o.max_translation, o.max_translation);
  m.ax = rng.uniform(-o.max_wobble, o.max_wobble);
  m.ay = rng.uniform(-o.max_wobble, o.max_wobble);
  do {
    m.fx = static_cast<int>(rng.randint(-1, 1));
    m.fy = static_cast<int>(rng.randint(-1, 1));
  } while (m.fx == 0 && m.fy == 0);
  m.phase = rng.uniform(0.0, kTwoPi);
  return m;
}

Tensor flow_tensor(int size, const std::function<std::pair<double, double>(double, double)>& f) {
  std::vector<double> v(static_cast<std::size_t>(2 * size * size));
  for (int y = 0; y < size; ++y) {
    for (int x = 0; x < size; ++x) {
      const auto [dx, dy] = f(x, y);
      v[static_cast<std::size_t>(y * size + x)] = dx;
      v[static_cast<std::size_t>(size * size + y * size + x)] = dy;
    }
  }
  return Tensor::from_vector({2, size, size}, std::move(v));
}

}  // namespace

Tensor generate_images(std::uint64_t seed, int count, const ImageOptions& o) {
  if (count < 1 || o.size < 4 || o.channels < 1) throw ConfigError("generate_images: bad size or count");
  Rng rng(seed);
  const int max_freq = std::max(1, static_cast<int>(std::floor(o.cutoff)));
  std::vector<Tensor> images;
  for (int n = 0; n < count; ++n) {
    const Scene sc = random_scene(rng, o.size, o.channels, o.modes, o.sprites, max_freq);
    std::vector<double> v(static_cast<std::size_t>(o.channels * o.size * o.size));
    for (int c = 0; c < o.channels; ++c) {
      for (int y = 0; y < o.size; ++y) {
        for (int x = 0; x < o.size; ++x) {
          v[static_cast<std::size_t>((c * o.size + y) * o.size + x)] = sc.value(c, x, y);
        }
      }
    }
    Tensor img = Tensor::from_vector({1, o.channels, o.size, o.size}, std::move(v), DType::kF64);
    img = spectral::ideal_lowpass(img, o.cutoff);
    double peak = 0.0;
    for (double e : img.data()) peak = std::max(peak, std::abs(e));
    images.push_back(img * (1.0 / std::max(peak, 1e-12)));
  }
  return concat(images, 0).to(default_dtype());
}

ToyVideo generate_video(std::uint64_t seed, const VideoOptions& o) {
  if (o.frames < 2 || o.size < 4) throw ConfigError("generate_video: need at least 2 frames");
  Rng rng(seed);
  ToyVideo video;
  video.seed = seed;
  const Scene sc = random_scene(rng, o.size, o.channels, o.modes, o.sprites, 3);
  std::vector<Motion> motions;
  for (int i = 0; i + 1 < o.frames; ++i) motions.push_back(random_motion(rng, o));

  // Scene coordinate of pixel (x, y) in frame f: apply g_{f-1}, then g_{f-2}, ..., then g_0.
  auto sample_point = [&](int frame, double x, double y) {
    for (int j = frame - 1; j >= 0; --j) {
      const auto [dx, dy] = motions[static_cast<std::size_t>(j)].at(x, y);
      x += dx;
      y += dy;
    }
    return std::pair{x, y};
  };

  std::vector<std::vector<double>> raw;
  double peak = 0.0;
  for (int f = 0; f < o.frames; ++f) {
    std::vector<double> v(static_cast<std::size_t>(o.channels * o.size * o.size));
    for (int y = 0; y < o.size; ++y) {
      for (int x = 0; x < o.size; ++x) {
        const auto [px, py] = sample_point(f, x, y);
        for (int c = 0; c < o.channels; ++c) {
          const double val = sc.value(c, px, py);
          v[static_cast<std::size_t>((c * o.size + y) * o.size + x)] = val;
          if (f == 0) peak = std::max(peak, std::abs(val));
        }
      }
    }
    raw.push_back(std::move(v));
  }
  const double scale = 1.0 / (1.1 * std::max(peak, 1e-12));
  for (auto& v : raw) {
    for (double& e : v) e *= scale;
    video.frames.push_back(Tensor::from_vector({o.channels, o.size, o.size}, std::move(v)));
  }
  for (const auto& m : motions) {
    video.flow_bwd.push_back(flow_tensor(o.size, [&m](double x, double y) { return m.at(x, y); }));
    video.flow_fwd.push_back(flow_tensor(o.size, [&m](double x, double y) {
      // q with q + g(q) = p, by fixed-point iteration (g is a contraction here).
      double qx = x, qy = y;
      for (int it = 0; it < 50; ++it) {
        const auto [dx, dy] = m.at(qx, qy);
        qx = x - dx;
        qy = y - dy;
      }
      return std::pair{qx - x, qy - y};
    }));
  }
  return video;
}

std::vector<ToyVideo> generate_videos(std::uint64_t seed, int count, const VideoOptions& options) {
  if (count < 1) throw ConfigError("generate_videos: count must be positive");
  std::vector<std::uint64_t> seeds;
  Rng rng(seed);
  for (int i = 0; i < count; ++i) seeds.push_back(rng.next());
  std::vector<ToyVideo> videos(static_cast<std::size_t>(count));
  parallel_for(videos.size(), [&](std::size_t i) { videos[i] = generate_video(seeds[i], options); });
  return videos;
}

Tensor batch_rows(const Tensor& data, const std::vector<std::int64_t>& rows) {
  std::vector<Tensor> parts;
  parts.reserve(rows.size());
  for (auto r : rows) {
    if (r < 0 || r >= data.dim(0)) throw ShapeError("batch_rows: row out of range");
    parts.push_back(slice(data, 0, r, r + 1));
  }
  return concat(parts, 0);
}

}  // namespace afldm::data
