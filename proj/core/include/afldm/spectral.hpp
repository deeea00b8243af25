#pragma once

// Fourier-domain building blocks: fractional shifts, brick-wall low-pass,
// ideal down/upsampling and filtered nonlinearities. All operators act on the
// last two axes ([..., H, W]) and are differentiable.
//
// DFT convention: forward unscaled, inverse scaled by 1/N. Bin k of an
// N-point transform has frequency k for k < N/2 and k - N above; the bin
// k = N/2 of an even-length transform is the Nyquist bin.

#include <cstdint>
#include <span>
#include <vector>

#include "afldm/tensor.hpp"

namespace afldm::spectral {

enum class ShiftMode { kCircular, kCropped };

std::string to_string(ShiftMode mode);
ShiftMode parse_shift_mode(const std::string& name);

// Translation by (dx, dy) pixels of the grid it is applied to: dx moves
// content towards larger column indices, dy towards larger row indices.
struct ShiftSpec {
  double dx = 0.0;
  double dy = 0.0;
  ShiftMode mode = ShiftMode::kCircular;
};

// Binary H x W mask, 1 = valid.
class ValidMask {
 public:
  ValidMask() = default;
  ValidMask(std::int64_t height, std::int64_t width, bool valid = true);

  // Pixels vacated by a cropped shift: ceil(|dx|) columns and ceil(|dy|)
  // rows on the edges the content moved away from.
  static ValidMask for_shift(std::int64_t height, std::int64_t width, double dx, double dy);

  std::int64_t height() const { return height_; }
  std::int64_t width() const { return width_; }
  bool at(std::int64_t y, std::int64_t x) const {
    return bits_[static_cast<std::size_t>(y * width_ + x)] != 0;
  }
  void set(std::int64_t y, std::int64_t x, bool valid) {
    bits_[static_cast<std::size_t>(y * width_ + x)] = valid ? 1 : 0;
  }
  std::int64_t count() const;
  bool all() const { return count() == height_ * width_; }
  std::span<const std::uint8_t> bits() const { return bits_; }

  ValidMask intersect(const ValidMask& other) const;
  Tensor as_tensor(DType dtype = DType::kF64) const;

  friend bool operator==(const ValidMask&, const ValidMask&) = default;

 private:
  std::int64_t height_ = 0;
  std::int64_t width_ = 0;
  std::vector<std::uint8_t> bits_;
};

enum class NyquistHandling {
  kCosine,  // Nyquist bins scaled by cos(pi * delta); keeps the output real
  kDrop,    // Nyquist bins zeroed by shifts
};

struct SpectralConfig {
  NyquistHandling nyquist = NyquistHandling::kCosine;
  Nonlinearity nonlinearity = Nonlinearity::kSiLU;
};

struct ShiftResult {
  Tensor value;
  ValidMask mask;
};

// Phase-ramp translation. Cropped mode zeroes the vacated border and returns
// its mask; circular mode returns an all-ones mask.
ShiftResult fractional_shift(const Tensor& x, const ShiftSpec& spec,
                             const SpectralConfig& config = {});

// Shorthand returning only the shifted values.
Tensor shift(const Tensor& x, double dx, double dy, ShiftMode mode = ShiftMode::kCircular);

// Zeroes every coefficient whose |frequency| exceeds `cutoff` (cycles per
// image) on either axis.
Tensor ideal_lowpass(const Tensor& x, double cutoff);

// Low-pass at the coarse Nyquist frequency followed by keeping every m-th
// sample. Requires m to divide H and W.
Tensor ideal_downsample(const Tensor& x, int factor);

// Zero-extends the spectrum onto an m-times denser grid, preserving pointwise
// amplitude. The coarse Nyquist coefficient is split evenly between the two
// fine-grid bins it maps to.
Tensor ideal_upsample(const Tensor& x, int factor);

// ideal_upsample(2) -> pointwise nonlinearity -> ideal_downsample(2).
Tensor filtered_nonlinearity(const Tensor& x, Nonlinearity kind);

// Multiplies by the mask, broadcast over the leading axes.
Tensor apply_mask(const Tensor& x, const ValidMask& mask);

// Largest |imag| / max(1, max|real|) seen after an inverse transform on this
// thread since the last reset. Outputs above 1e-5 raise NumericalError when
// debug checks are on.
double max_imag_residue();
void reset_imag_residue();

}  // namespace afldm::spectral
