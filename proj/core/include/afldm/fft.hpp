#pragma once

#include <complex>
#include <cstdint>
#include <span>

namespace afldm::fft {

using Complex = std::complex<double>;

// In-place DFT. Forward is unscaled, inverse scales by 1/N.
void forward(std::span<Complex> data);
void inverse(std::span<Complex> data);

// Batched 2-D real transforms of `planes` contiguous h x w planes. The half
// spectrum of each plane is h x (w / 2 + 1).
void real_forward_2d(const double* in, Complex* out, std::int64_t planes, std::int64_t h, std::int64_t w);
// Unscaled inverse; `in` is not modified.
void real_inverse_2d(const Complex* in, double* out, std::int64_t planes, std::int64_t h, std::int64_t w);

}  // namespace afldm::fft
