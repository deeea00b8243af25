#include "afldm/flow.hpp"

#include <algorithm>
#include <cmath>

#include "afldm/error.hpp"

namespace afldm::flow {
namespace {

void check_flow(const Tensor& x, const Tensor& flow) {
  if (x.rank() < 2) throw ShapeError("flow: expects [..., H, W]");
  if (flow.rank() != 3 || flow.dim(0) != 2 || flow.dim(1) != x.dim(-2) || flow.dim(2) != x.dim(-1)) {
    throw ShapeError("flow: shape " + shape_str(flow.shape()) + " does not fit " + shape_str(x.shape()));
  }
  for (double v : flow.data()) {
    if (!std::isfinite(v)) throw NumericalError("flow: non-finite displacement");
  }
}

struct Bilinear {
  std::int64_t x0, y0;
  double wx, wy;
};

Bilinear corners(double sx, double sy) {
  const double fx = std::floor(sx), fy = std::floor(sy);
  return {static_cast<std::int64_t>(fx), static_cast<std::int64_t>(fy), sx - fx, sy - fy};
}

}  // namespace

WarpResult warp(const Tensor& x, const Tensor& flow) {
  check_flow(x, flow);
  const std::int64_t h = x.dim(-2), w = x.dim(-1), planes = x.numel() / (h * w);
  const auto f = flow.data();
  const auto src = x.data();
  Tensor out = Tensor::zeros(x.shape(), x.dtype());
  auto dst = out.mutable_data();
  spectral::ValidMask mask(h, w, true);
  for (std::int64_t y = 0; y < h; ++y) {
    for (std::int64_t xi = 0; xi < w; ++xi) {
      const std::int64_t q = y * w + xi;
      const double sx = static_cast<double>(xi) + f[static_cast<std::size_t>(q)];
      const double sy = static_cast<double>(y) + f[static_cast<std::size_t>(h * w + q)];
      // Tolerate round-off at the last row/column.
      constexpr double kEps = 1e-9;
      if (sx < -kEps || sy < -kEps || sx > static_cast<double>(w - 1) + kEps ||
          sy > static_cast<double>(h - 1) + kEps) {
        mask.set(y, xi, false);
        continue;
      }
      Bilinear b = corners(std::clamp(sx, 0.0, static_cast<double>(w - 1)),
                           std::clamp(sy, 0.0, static_cast<double>(h - 1)));
      const std::int64_t x1 = std::min(b.x0 + 1, w - 1), y1 = std::min(b.y0 + 1, h - 1);
      for (std::int64_t p = 0; p < planes; ++p) {
        const double* s = src.data() + p * h * w;
        const double v = (1 - b.wy) * ((1 - b.wx) * s[b.y0 * w + b.x0] + b.wx * s[b.y0 * w + x1]) +
                         b.wy * ((1 - b.wx) * s[y1 * w + b.x0] + b.wx * s[y1 * w + x1]);
        dst[static_cast<std::size_t>(p * h * w + q)] = v;
      }
    }
  }
  return {std::move(out), std::move(mask)};
}

namespace {

void scatter(const Tensor& x, const Tensor& flow, std::vector<double>& acc, std::vector<double>& weight) {
  const std::int64_t h = x.dim(-2), w = x.dim(-1), planes = x.numel() / (h * w);
  const auto f = flow.data();
  const auto src = x.data();
  acc.assign(static_cast<std::size_t>(x.numel()), 0.0);
  weight.assign(static_cast<std::size_t>(h * w), 0.0);
  for (std::int64_t y = 0; y < h; ++y) {
    for (std::int64_t xi = 0; xi < w; ++xi) {
      const std::int64_t p = y * w + xi;
      const double tx = static_cast<double>(xi) + f[static_cast<std::size_t>(p)];
      const double ty = static_cast<double>(y) + f[static_cast<std::size_t>(h * w + p)];
      const Bilinear b = corners(tx, ty);
      const std::int64_t cx[2] = {b.x0, b.x0 + 1}, cy[2] = {b.y0, b.y0 + 1};
      const double wxs[2] = {1 - b.wx, b.wx}, wys[2] = {1 - b.wy, b.wy};
      for (int a = 0; a < 2; ++a) {
        for (int c = 0; c < 2; ++c) {
          const double wt = wys[a] * wxs[c];
          if (wt == 0.0 || cy[a] < 0 || cy[a] >= h || cx[c] < 0 || cx[c] >= w) continue;
          const std::int64_t q = cy[a] * w + cx[c];
          weight[static_cast<std::size_t>(q)] += wt;
          for (std::int64_t pl = 0; pl < planes; ++pl) {
            acc[static_cast<std::size_t>(pl * h * w + q)] += wt * src[static_cast<std::size_t>(pl * h * w + p)];
          }
        }
      }
    }
  }
}

}  // namespace

SplatResult splat(const Tensor& x, const Tensor& flow) {
  check_flow(x, flow);
  const std::int64_t h = x.dim(-2), w = x.dim(-1), planes = x.numel() / (h * w);
  std::vector<double> acc, weight;
  scatter(x, flow, acc, weight);
  spectral::ValidMask mask(h, w, true);
  constexpr double kHole = 1e-8;
  for (std::int64_t q = 0; q < h * w; ++q) {
    const double wt = weight[static_cast<std::size_t>(q)];
    if (wt < kHole) mask.set(q / w, q % w, false);
    for (std::int64_t pl = 0; pl < planes; ++pl) {
      double& v = acc[static_cast<std::size_t>(pl * h * w + q)];
      v = wt < kHole ? 0.0 : v / wt;
    }
  }
  return {Tensor::from_vector(x.shape(), std::move(acc), x.dtype()),
          Tensor::from_vector({h, w}, std::move(weight), DType::kF64), std::move(mask)};
}

Tensor splat_sum(const Tensor& x, const Tensor& flow) {
  check_flow(x, flow);
  std::vector<double> acc, weight;
  scatter(x, flow, acc, weight);
  return Tensor::from_vector(x.shape(), std::move(acc), x.dtype());
}

Tensor downscale_flow(const Tensor& flow, int factor) {
  if (flow.rank() != 3 || flow.dim(0) != 2) throw ShapeError("downscale_flow: expects [2, H, W]");
  const std::int64_t h = flow.dim(1), w = flow.dim(2);
  if (factor < 1 || h % factor != 0 || w % factor != 0) {
    throw ShapeError("downscale_flow: factor does not divide the flow size");
  }
  const std::int64_t hc = h / factor, wc = w / factor;
  std::vector<double> out(static_cast<std::size_t>(2 * hc * wc));
  const auto f = flow.data();
  for (std::int64_t c = 0; c < 2; ++c) {
    for (std::int64_t y = 0; y < hc; ++y) {
      for (std::int64_t x = 0; x < wc; ++x) {
        out[static_cast<std::size_t>((c * hc + y) * wc + x)] =
            f[static_cast<std::size_t>((c * h + y * factor) * w + x * factor)] / factor;
      }
    }
  }
  return Tensor::from_vector({2, hc, wc}, std::move(out), flow.dtype());
}

Tensor scale_flow(const Tensor& flow, double alpha) {
  std::vector<double> v(flow.data().begin(), flow.data().end());
  for (double& e : v) e *= alpha;
  return Tensor::from_vector(flow.shape(), std::move(v), flow.dtype());
}

Tensor constant_flow(std::int64_t height, std::int64_t width, double fx, double fy) {
  std::vector<double> v(static_cast<std::size_t>(2 * height * width));
  std::fill(v.begin(), v.begin() + height * width, fx);
  std::fill(v.begin() + height * width, v.end(), fy);
  return Tensor::from_vector({2, height, width}, std::move(v), DType::kF64);
}

}  // namespace afldm::flow
