#include <vector>

#include <Eigen/Core>

#include "afldm/error.hpp"
#include "afldm/tensor.hpp"

namespace afldm {
namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using ConstMapMat = Eigen::Map<const RowMat>;

struct ConvGeometry {
  std::int64_t batch, channels, height, width, out_channels, kernel;
  Padding padding;
  std::int64_t patch() const { return channels * kernel * kernel; }
  std::int64_t pixels() const { return height * width; }
};

inline std::int64_t wrap(std::int64_t i, std::int64_t n) {
  i %= n;
  return i < 0 ? i + n : i;
}

// col[(c*k + i)*k + j, y*W + x] = img[c, y + i - r, x + j - r]
void im2col(const ConvGeometry& g, const double* img, double* col) {
  const std::int64_t r = g.kernel / 2;
  for (std::int64_t c = 0; c < g.channels; ++c) {
    const double* plane = img + c * g.pixels();
    for (std::int64_t i = 0; i < g.kernel; ++i) {
      for (std::int64_t j = 0; j < g.kernel; ++j) {
        double* row = col + ((c * g.kernel + i) * g.kernel + j) * g.pixels();
        for (std::int64_t y = 0; y < g.height; ++y) {
          std::int64_t sy = y + i - r;
          double* dst = row + y * g.width;
          if (sy < 0 || sy >= g.height) {
            if (g.padding == Padding::kZero) {
              std::fill_n(dst, g.width, 0.0);
              continue;
            }
            sy = wrap(sy, g.height);
          }
          const double* src = plane + sy * g.width;
          const std::int64_t dx = j - r;
          for (std::int64_t x = 0; x < g.width; ++x) {
            std::int64_t sx = x + dx;
            if (sx < 0 || sx >= g.width) {
              if (g.padding == Padding::kZero) {
                dst[x] = 0.0;
                continue;
              }
              sx = wrap(sx, g.width);
            }
            dst[x] = src[sx];
          }
        }
      }
    }
  }
}

void col2im(const ConvGeometry& g, const double* col, double* img) {
  const std::int64_t r = g.kernel / 2;
  for (std::int64_t c = 0; c < g.channels; ++c) {
    double* plane = img + c * g.pixels();
    for (std::int64_t i = 0; i < g.kernel; ++i) {
      for (std::int64_t j = 0; j < g.kernel; ++j) {
        const double* row = col + ((c * g.kernel + i) * g.kernel + j) * g.pixels();
        for (std::int64_t y = 0; y < g.height; ++y) {
          std::int64_t sy = y + i - r;
          if (sy < 0 || sy >= g.height) {
            if (g.padding == Padding::kZero) continue;
            sy = wrap(sy, g.height);
          }
          const double* src = row + y * g.width;
          double* dst = plane + sy * g.width;
          const std::int64_t dx = j - r;
          for (std::int64_t x = 0; x < g.width; ++x) {
            std::int64_t sx = x + dx;
            if (sx < 0 || sx >= g.width) {
              if (g.padding == Padding::kZero) continue;
              sx = wrap(sx, g.width);
            }
            dst[sx] += src[x];
          }
        }
      }
    }
  }
}

}  // namespace

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias, Padding padding) {
  if (x.rank() != 4 || w.rank() != 4) {
    throw ShapeError("conv2d expects x [B,C,H,W] and w [O,C,k,k], got " + shape_str(x.shape()) +
                     " and " + shape_str(w.shape()));
  }
  const std::int64_t k = w.dim(2);
  if (w.dim(3) != k) throw ShapeError("conv2d: kernel must be square");
  if (k % 2 == 0) throw ShapeError("conv2d: even kernel size " + std::to_string(k) + " rejected");
  if (w.dim(1) != x.dim(1)) {
    throw ShapeError("conv2d: input has " + std::to_string(x.dim(1)) + " channels, kernel expects " +
                     std::to_string(w.dim(1)));
  }
  ConvGeometry g{x.dim(0), x.dim(1), x.dim(2), x.dim(3), w.dim(0), k, padding};
  if (g.height < k || g.width < k) throw ShapeError("conv2d: spatial size smaller than kernel");
  if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != g.out_channels)) {
    throw ShapeError("conv2d: bias shape " + shape_str(bias.shape()));
  }

  Tensor out = detail::make_output({g.batch, g.out_channels, g.height, g.width}, {&x, &w, &bias});
  const bool pointwise = k == 1;
  Buffer col(pointwise ? 0 : static_cast<std::size_t>(g.patch() * g.pixels()));
  ConstMapMat wm(w.data().data(), g.out_channels, g.patch());
  for (std::int64_t b = 0; b < g.batch; ++b) {
    const double* img = x.data().data() + b * g.channels * g.pixels();
    const double* colp = img;
    if (!pointwise) {
      im2col(g, img, col.data());
      colp = col.data();
    }
    ConstMapMat cm(colp, g.patch(), g.pixels());
    MapMat om(out.mutable_data().data() + b * g.out_channels * g.pixels(), g.out_channels, g.pixels());
    om.noalias() = wm * cm;
    if (bias.defined()) {
      for (std::int64_t o = 0; o < g.out_channels; ++o) om.row(o).array() += bias.data()[static_cast<std::size_t>(o)];
    }
  }
  detail::finalize(out, "conv2d");

  if (detail::needs_grad({&x, &w, &bias})) {
    auto ix = x.impl_ptr(), iw = w.impl_ptr(), io = out.impl_ptr();
    auto ib = bias.defined() ? bias.impl_ptr() : nullptr;
    detail::record(out, [ix, iw, ib, io, g, pointwise]() {
      Buffer col(pointwise ? 0 : static_cast<std::size_t>(g.patch() * g.pixels()));
      Buffer dcol(pointwise ? 0 : static_cast<std::size_t>(g.patch() * g.pixels()));
      ConstMapMat wm(iw->data.data(), g.out_channels, g.patch());
      for (std::int64_t b = 0; b < g.batch; ++b) {
        ConstMapMat gm(io->grad.data() + b * g.out_channels * g.pixels(), g.out_channels, g.pixels());
        if (iw->requires_grad) {
          const double* img = ix->data.data() + b * g.channels * g.pixels();
          const double* colp = img;
          if (!pointwise) {
            im2col(g, img, col.data());
            colp = col.data();
          }
          ConstMapMat cm(colp, g.patch(), g.pixels());
          MapMat gw(detail::grad_buffer(*iw).data(), g.out_channels, g.patch());
          gw.noalias() += gm * cm.transpose();
        }
        if (ix->requires_grad) {
          double* gx = detail::grad_buffer(*ix).data() + b * g.channels * g.pixels();
          if (pointwise) {
            MapMat gxm(gx, g.channels, g.pixels());
            gxm.noalias() += wm.transpose() * gm;
          } else {
            MapMat dm(dcol.data(), g.patch(), g.pixels());
            dm.noalias() = wm.transpose() * gm;
            col2im(g, dcol.data(), gx);
          }
        }
        if (ib && ib->requires_grad) {
          auto& gb = detail::grad_buffer(*ib);
          for (std::int64_t o = 0; o < g.out_channels; ++o) gb[static_cast<std::size_t>(o)] += gm.row(o).sum();
        }
      }
    });
  }
  return out;
}

}  // namespace afldm
