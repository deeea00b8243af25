#include "afldm/spectral.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "afldm/error.hpp"
#include "afldm/fft.hpp"

namespace afldm::spectral {
namespace {

using fft::Complex;
using ImplPtr = std::shared_ptr<detail::TensorImpl>;

constexpr double kImagTolerance = 1e-5;
thread_local double g_max_imag_residue = 0.0;

enum class LineOp { kIdentity, kShift, kLowpass, kResample };

struct LineSpec {
  LineOp op = LineOp::kIdentity;
  double delta = 0.0;   // kShift
  bool drop_nyquist = false;
  double cutoff = 0.0;  // kLowpass
  std::int64_t out_len = 0;  // kResample
  double scale = 1.0;        // kResample
  double nyquist_weight = 1.0;  // kResample, weight of each Nyquist partner
};

// Separable map: `y` acts on the height axis, `x` on the width axis.
struct PlaneMap {
  LineSpec y, x;
};

std::int64_t output_length(const LineSpec& spec, std::int64_t n) {
  return spec.op == LineOp::kResample ? spec.out_len : n;
}

std::int64_t signed_frequency(std::int64_t k, std::int64_t n) { return k <= n / 2 ? k : k - n; }

Complex phase(double freq, double delta, std::int64_t n) {
  const double angle = -2.0 * std::numbers::pi * freq * delta / static_cast<double>(n);
  return {std::cos(angle), std::sin(angle)};
}

// Width axis on half spectra (bins 0..n/2). `partner` is the row holding the
// conjugate-symmetric counterpart (-ky) of `in`.
void map_half_row(const LineSpec& spec, const Complex* in, const Complex* partner, std::int64_t n, Complex* out,
                  std::int64_t m) {
  switch (spec.op) {
    case LineOp::kIdentity:
      std::copy(in, in + n / 2 + 1, out);
      return;
    case LineOp::kShift:
      for (std::int64_t k = 0; k <= n / 2; ++k) {
        if (n % 2 == 0 && k == n / 2) {
          out[k] = spec.drop_nyquist ? Complex(0.0) : in[k] * std::cos(std::numbers::pi * spec.delta);
        } else {
          out[k] = in[k] * phase(static_cast<double>(k), spec.delta, n);
        }
      }
      return;
    case LineOp::kLowpass:
      for (std::int64_t k = 0; k <= n / 2; ++k) out[k] = static_cast<double>(k) > spec.cutoff ? Complex(0.0) : in[k];
      return;
    case LineOp::kResample: {
      std::fill(out, out + m / 2 + 1, Complex(0.0));
      const std::int64_t small = std::min(n, m);
      for (std::int64_t k = 0; k <= (small - 1) / 2; ++k) out[k] = spec.scale * in[k];
      if (small % 2 == 0) {
        const std::int64_t ny = small / 2;
        if (n == m) {
          out[ny] = spec.scale * in[ny];
        } else if (m < n) {
          // Fine bins +ny and -ny fold onto the coarse Nyquist bin.
          out[ny] = spec.scale * spec.nyquist_weight * (in[ny] + std::conj(partner[ny]));
        } else {
          // The mirrored fine bin m - ny follows from Hermitian symmetry.
          out[ny] = spec.scale * spec.nyquist_weight * in[ny];
        }
      }
      return;
    }
  }
}

// Height axis on full complex columns with the given stride.
void map_full_column(const LineSpec& spec, const Complex* in, std::int64_t n, Complex* out, std::int64_t m,
                     std::int64_t stride) {
  auto at = [stride](std::int64_t k) { return static_cast<std::size_t>(k * stride); };
  switch (spec.op) {
    case LineOp::kIdentity:
      for (std::int64_t k = 0; k < n; ++k) out[at(k)] = in[at(k)];
      return;
    case LineOp::kShift:
      for (std::int64_t k = 0; k < n; ++k) {
        if (n % 2 == 0 && k == n / 2) {
          out[at(k)] = spec.drop_nyquist ? Complex(0.0) : in[at(k)] * std::cos(std::numbers::pi * spec.delta);
        } else {
          out[at(k)] = in[at(k)] * phase(static_cast<double>(signed_frequency(k, n)), spec.delta, n);
        }
      }
      return;
    case LineOp::kLowpass:
      for (std::int64_t k = 0; k < n; ++k) {
        const double f = std::abs(static_cast<double>(signed_frequency(k, n)));
        out[at(k)] = f > spec.cutoff ? Complex(0.0) : in[at(k)];
      }
      return;
    case LineOp::kResample: {
      for (std::int64_t k = 0; k < m; ++k) out[at(k)] = 0.0;
      const std::int64_t small = std::min(n, m);
      const std::int64_t half = (small - 1) / 2;
      for (std::int64_t f = -half; f <= half; ++f) {
        out[at(f >= 0 ? f : f + m)] = spec.scale * in[at(f >= 0 ? f : f + n)];
      }
      if (small % 2 == 0) {
        const std::int64_t ny = small / 2;
        if (n == m) {
          out[at(ny)] = spec.scale * in[at(ny)];
        } else if (m < n) {
          out[at(ny)] = spec.scale * spec.nyquist_weight * (in[at(ny)] + in[at(n - ny)]);
        } else {
          const Complex v = spec.scale * spec.nyquist_weight * in[at(ny)];
          out[at(ny)] = v;
          out[at(m - ny)] = v;
        }
      }
      return;
    }
  }
}

// Applies a separable spectral map to `planes` contiguous h x w planes.
std::vector<double> apply_plane_map(std::span<const double> in, std::int64_t planes, std::int64_t h, std::int64_t w,
                                    const PlaneMap& map, std::int64_t* out_h, std::int64_t* out_w) {
  const std::int64_t ho = output_length(map.y, h), wo = output_length(map.x, w);
  *out_h = ho;
  *out_w = wo;
  const std::int64_t hx = w / 2 + 1, hxo = wo / 2 + 1;
  thread_local std::vector<Complex> spec_in, spec_mid, spec_out;
  spec_in.resize(static_cast<std::size_t>(planes * h * hx));
  spec_mid.resize(static_cast<std::size_t>(planes * h * hxo));
  spec_out.resize(static_cast<std::size_t>(planes * ho * hxo));
  fft::real_forward_2d(in.data(), spec_in.data(), planes, h, w);

  double residue = 0.0;
  for (std::int64_t p = 0; p < planes; ++p) {
    const Complex* src = spec_in.data() + p * h * hx;
    Complex* mid = spec_mid.data() + p * h * hxo;
    for (std::int64_t ky = 0; ky < h; ++ky) {
      map_half_row(map.x, src + ky * hx, src + ((h - ky) % h) * hx, w, mid + ky * hxo, wo);
    }
    Complex* dst = spec_out.data() + p * ho * hxo;
    for (std::int64_t kx = 0; kx < hxo; ++kx) map_full_column(map.y, mid + kx, h, dst + kx, ho, hxo);
    // Columns 0 and wo/2 must be conjugate-symmetric along the height axis;
    // their anti-symmetric part is what a complex inverse would leave in the
    // imaginary output.
    double anti = 0.0;
    for (std::int64_t kx : {std::int64_t{0}, wo % 2 == 0 ? wo / 2 : std::int64_t{-1}}) {
      if (kx < 0) continue;
      for (std::int64_t ky = 0; ky < ho; ++ky) {
        anti += 0.5 * std::abs(dst[ky * hxo + kx] - std::conj(dst[((ho - ky) % ho) * hxo + kx]));
      }
    }
    residue = std::max(residue, anti / static_cast<double>(ho * wo));
  }

  std::vector<double> out(static_cast<std::size_t>(planes * ho * wo));
  fft::real_inverse_2d(spec_out.data(), out.data(), planes, ho, wo);
  const double inv = 1.0 / static_cast<double>(ho * wo);
  double max_re = 0.0;
  for (double& v : out) {
    v *= inv;
    max_re = std::max(max_re, std::abs(v));
  }
  residue /= std::max(1.0, max_re);
  g_max_imag_residue = std::max(g_max_imag_residue, residue);
  if (debug_checks() && residue > kImagTolerance) {
    throw NumericalError("spectral op left imaginary residue " + std::to_string(residue));
  }
  return out;
}

void check_spatial(const Tensor& x, const char* op) {
  if (x.rank() < 2) throw ShapeError(std::string(op) + ": expects [..., H, W]");
}

Shape with_spatial(Shape shape, std::int64_t h, std::int64_t w) {
  shape[shape.size() - 2] = h;
  shape[shape.size() - 1] = w;
  return shape;
}

// A linear spectral operator and the map implementing its adjoint. An empty
// operator is the identity.
struct LinearOp {
  bool identity = true;
  PlaneMap forward;
  PlaneMap adjoint;
};

std::vector<double> run_map(std::span<const double> data, const Shape& shape, const PlaneMap& map,
                            Shape* out_shape) {
  const std::int64_t h = shape[shape.size() - 2], w = shape[shape.size() - 1];
  std::int64_t ho = 0, wo = 0;
  auto out = apply_plane_map(data, shape_numel(shape) / (h * w), h, w, map, &ho, &wo);
  *out_shape = with_spatial(shape, ho, wo);
  return out;
}

void zero_masked(std::vector<double>& values, const std::vector<std::uint8_t>& bits) {
  const std::size_t plane = bits.size();
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (!bits[i % plane]) values[i] = 0.0;
  }
}

// Elementwise mask applied after the spectral map (used by cropped shifts).
Tensor apply_linear(const Tensor& x, const LinearOp& op, const char* name, const ValidMask* post_mask = nullptr) {
  Shape out_shape = x.shape();
  std::vector<double> values = op.identity ? std::vector<double>(x.data().begin(), x.data().end())
                                           : run_map(x.data(), x.shape(), op.forward, &out_shape);
  std::vector<std::uint8_t> mask_bits;
  if (post_mask && !post_mask->all()) {
    mask_bits.assign(post_mask->bits().begin(), post_mask->bits().end());
    zero_masked(values, mask_bits);
  }
  Tensor out = detail::make_output(out_shape, {&x});
  std::copy(values.begin(), values.end(), out.mutable_data().begin());
  detail::finalize(out, name);
  if (detail::needs_grad({&x})) {
    ImplPtr ix = x.impl_ptr(), io = out.impl_ptr();
    detail::record(out, [ix, io, op, mask_bits]() {
      std::vector<double> g(io->grad.begin(), io->grad.end());
      if (!mask_bits.empty()) zero_masked(g, mask_bits);
      Shape back_shape;
      if (!op.identity) g = run_map(g, io->shape, op.adjoint, &back_shape);
      auto& dst = detail::grad_buffer(*ix);
      for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += g[i];
    });
  }
  return out;
}

LineSpec shift_line(double delta, bool drop) {
  LineSpec s;
  s.op = LineOp::kShift;
  s.delta = delta;
  s.drop_nyquist = drop;
  return s;
}

LineSpec lowpass_line(double cutoff) {
  LineSpec s;
  s.op = LineOp::kLowpass;
  s.cutoff = cutoff;
  return s;
}

LineSpec resample_line(std::int64_t out_len, double scale, double nyquist_weight) {
  LineSpec s;
  s.op = LineOp::kResample;
  s.out_len = out_len;
  s.scale = scale;
  s.nyquist_weight = nyquist_weight;
  return s;
}

LinearOp downsample_op(std::int64_t h, std::int64_t w, int m) {
  LinearOp op;
  op.identity = m == 1;
  op.forward = {resample_line(h / m, 1.0 / m, 1.0), resample_line(w / m, 1.0 / m, 1.0)};
  op.adjoint = {resample_line(h, 1.0, 1.0), resample_line(w, 1.0, 1.0)};
  return op;
}

LinearOp upsample_op(std::int64_t h, std::int64_t w, int m) {
  LinearOp op;
  op.identity = m == 1;
  op.forward = {resample_line(h * m, m, 0.5), resample_line(w * m, m, 0.5)};
  op.adjoint = {resample_line(h, 1.0, 0.5), resample_line(w, 1.0, 0.5)};
  return op;
}

double sigmoid(double v) { return 1.0 / (1.0 + std::exp(-v)); }

}  // namespace

std::string to_string(ShiftMode mode) { return mode == ShiftMode::kCircular ? "circular" : "cropped"; }

ShiftMode parse_shift_mode(const std::string& name) {
  if (name == "circular") return ShiftMode::kCircular;
  if (name == "cropped") return ShiftMode::kCropped;
  throw ConfigError("unknown shift mode '" + name + "'");
}

// ---------------------------------------------------------------------------
// ValidMask

ValidMask::ValidMask(std::int64_t height, std::int64_t width, bool valid)
    : height_(height), width_(width), bits_(static_cast<std::size_t>(height * width), valid ? 1 : 0) {}

ValidMask ValidMask::for_shift(std::int64_t height, std::int64_t width, double dx, double dy) {
  if (!std::isfinite(dx) || !std::isfinite(dy)) throw NumericalError("shift offset must be finite");
  ValidMask m(height, width, true);
  const auto cols = std::min<std::int64_t>(width, static_cast<std::int64_t>(std::ceil(std::abs(dx) - 1e-9)));
  const auto rows = std::min<std::int64_t>(height, static_cast<std::int64_t>(std::ceil(std::abs(dy) - 1e-9)));
  for (std::int64_t y = 0; y < height; ++y) {
    for (std::int64_t x = 0; x < width; ++x) {
      const bool bad_col = dx > 0 ? x < cols : x >= width - cols;
      const bool bad_row = dy > 0 ? y < rows : y >= height - rows;
      if (bad_col || bad_row) m.set(y, x, false);
    }
  }
  return m;
}

std::int64_t ValidMask::count() const {
  std::int64_t c = 0;
  for (auto b : bits_) c += b;
  return c;
}

ValidMask ValidMask::intersect(const ValidMask& other) const {
  if (other.height_ != height_ || other.width_ != width_) throw ShapeError("mask size mismatch");
  ValidMask m = *this;
  for (std::size_t i = 0; i < bits_.size(); ++i) m.bits_[i] = bits_[i] & other.bits_[i];
  return m;
}

Tensor ValidMask::as_tensor(DType dtype) const {
  std::vector<double> v(bits_.begin(), bits_.end());
  return Tensor::from_vector({height_, width_}, std::move(v), dtype);
}

// ---------------------------------------------------------------------------

ShiftResult fractional_shift(const Tensor& x, const ShiftSpec& spec, const SpectralConfig& config) {
  check_spatial(x, "fractional_shift");
  if (!std::isfinite(spec.dx) || !std::isfinite(spec.dy)) {
    throw NumericalError("fractional_shift: non-finite offset");
  }
  const std::int64_t h = x.dim(-2), w = x.dim(-1);
  if (h < 2 || w < 2) throw ShapeError("fractional_shift: H and W must be at least 2");
  const bool drop = config.nyquist == NyquistHandling::kDrop;
  LinearOp op;
  op.identity = spec.dx == 0.0 && spec.dy == 0.0 && !drop;
  op.forward = {shift_line(spec.dy, drop), shift_line(spec.dx, drop)};
  op.adjoint = {shift_line(-spec.dy, drop), shift_line(-spec.dx, drop)};
  ValidMask mask = spec.mode == ShiftMode::kCropped ? ValidMask::for_shift(h, w, spec.dx, spec.dy)
                                                    : ValidMask(h, w, true);
  Tensor value = apply_linear(x, op, "fractional_shift", &mask);
  return {std::move(value), std::move(mask)};
}

Tensor shift(const Tensor& x, double dx, double dy, ShiftMode mode) {
  return fractional_shift(x, {dx, dy, mode}).value;
}

Tensor ideal_lowpass(const Tensor& x, double cutoff) {
  check_spatial(x, "ideal_lowpass");
  if (!(cutoff > 0.0)) throw ShapeError("ideal_lowpass: cutoff must be positive");
  const double nyquist = static_cast<double>(std::max(x.dim(-1), x.dim(-2))) / 2.0;
  if (cutoff > nyquist) throw ShapeError("ideal_lowpass: cutoff above Nyquist");
  LinearOp op;
  op.identity = false;
  op.forward = {lowpass_line(cutoff), lowpass_line(cutoff)};
  op.adjoint = op.forward;
  return apply_linear(x, op, "ideal_lowpass");
}

Tensor ideal_downsample(const Tensor& x, int factor) {
  check_spatial(x, "ideal_downsample");
  const std::int64_t h = x.dim(-2), w = x.dim(-1);
  if (factor < 1 || h % factor != 0 || w % factor != 0) {
    throw ShapeError("ideal_downsample: factor " + std::to_string(factor) + " does not divide " +
                     shape_str(x.shape()));
  }
  return apply_linear(x, downsample_op(h, w, factor), "ideal_downsample");
}

Tensor ideal_upsample(const Tensor& x, int factor) {
  check_spatial(x, "ideal_upsample");
  if (factor < 1) throw ShapeError("ideal_upsample: factor must be >= 1");
  return apply_linear(x, upsample_op(x.dim(-2), x.dim(-1), factor), "ideal_upsample");
}

Tensor filtered_nonlinearity(const Tensor& x, Nonlinearity kind) {
  check_spatial(x, "filtered_nonlinearity");
  const std::int64_t h = x.dim(-2), w = x.dim(-1);
  if (h % 2 != 0 || w % 2 != 0) {
    throw ShapeError("filtered_nonlinearity: spatial dims must be even, got " + shape_str(x.shape()));
  }
  const LinearOp up = upsample_op(h, w, 2), down = downsample_op(2 * h, 2 * w, 2);
  Shape up_shape, out_shape;
  std::vector<double> u = run_map(x.data(), x.shape(), up.forward, &up_shape);
  std::vector<double> a(u.size());
  if (kind == Nonlinearity::kSiLU) {
    for (std::size_t i = 0; i < u.size(); ++i) a[i] = u[i] * sigmoid(u[i]);
  } else {
    for (std::size_t i = 0; i < u.size(); ++i) a[i] = u[i] > 0.0 ? u[i] : 0.0;
  }
  std::vector<double> values = run_map(a, up_shape, down.forward, &out_shape);
  Tensor out = detail::make_output(out_shape, {&x});
  std::copy(values.begin(), values.end(), out.mutable_data().begin());
  detail::finalize(out, "filtered_nonlinearity");
  if (detail::needs_grad({&x})) {
    ImplPtr ix = x.impl_ptr(), io = out.impl_ptr();
    detail::record(out, [ix, io, up, down, kind, up_shape, u = std::move(u)]() {
      Shape s;
      std::vector<double> g = run_map(io->grad, io->shape, down.adjoint, &s);
      if (kind == Nonlinearity::kSiLU) {
        for (std::size_t i = 0; i < g.size(); ++i) {
          const double sg = sigmoid(u[i]);
          g[i] *= sg * (1.0 + u[i] * (1.0 - sg));
        }
      } else {
        for (std::size_t i = 0; i < g.size(); ++i) g[i] = u[i] > 0.0 ? g[i] : 0.0;
      }
      g = run_map(g, up_shape, up.adjoint, &s);
      auto& dst = detail::grad_buffer(*ix);
      for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += g[i];
    });
  }
  return out;
}

Tensor apply_mask(const Tensor& x, const ValidMask& mask) {
  check_spatial(x, "apply_mask");
  if (x.dim(-2) != mask.height() || x.dim(-1) != mask.width()) {
    throw ShapeError("apply_mask: mask " + std::to_string(mask.height()) + "x" +
                     std::to_string(mask.width()) + " does not match " + shape_str(x.shape()));
  }
  return apply_linear(x, LinearOp{}, "apply_mask", &mask);
}

double max_imag_residue() { return g_max_imag_residue; }
void reset_imag_residue() { g_max_imag_residue = 0.0; }

}  // namespace afldm::spectral
