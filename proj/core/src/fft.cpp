#include "afldm/fft.hpp"

#include <cstring>
#include <map>
#include <mutex>
#include <tuple>

#include <fftw3.h>

namespace afldm::fft {
namespace {

// FFTW's planner is not thread-safe; execution is.
std::mutex& planner_mutex() {
  static std::mutex m;
  return m;
}

template <typename T>
struct AlignedBuffer {
  T* data = nullptr;
  std::size_t size = 0;

  ~AlignedBuffer() { fftw_free(data); }
  T* ensure(std::size_t n) {
    if (n > size) {
      fftw_free(data);
      data = static_cast<T*>(fftw_malloc(sizeof(T) * n));
      size = n;
    }
    return data;
  }
};

struct PlanCache {
  std::map<std::tuple<int, std::int64_t, std::int64_t, std::int64_t>, fftw_plan> plans;
  AlignedBuffer<fftw_complex> complex_buf;
  AlignedBuffer<double> real_buf;

  ~PlanCache() {
    std::lock_guard lock(planner_mutex());
    for (auto& [_, p] : plans) fftw_destroy_plan(p);
  }
};

PlanCache& cache() {
  thread_local PlanCache c;
  return c;
}

enum Kind { kForward, kInverse, kRealForward, kRealInverse };

// Buffers must be large enough for the plan before it is created; FFTW_ESTIMATE
// never reads them while planning and keeps results bitwise reproducible.
fftw_plan plan_for(Kind kind, std::int64_t planes, std::int64_t h, std::int64_t w) {
  auto& c = cache();
  const auto key = std::make_tuple(static_cast<int>(kind), planes, h, w);
  auto it = c.plans.find(key);
  if (it != c.plans.end()) return it->second;
  std::lock_guard lock(planner_mutex());
  fftw_plan p = nullptr;
  const unsigned flags = FFTW_ESTIMATE;
  if (kind == kForward || kind == kInverse) {
    p = fftw_plan_dft_1d(static_cast<int>(w), c.complex_buf.data, c.complex_buf.data,
                         kind == kForward ? FFTW_FORWARD : FFTW_BACKWARD, flags);
  } else {
    const int n[2] = {static_cast<int>(h), static_cast<int>(w)};
    const int real_dist = static_cast<int>(h * w), spec_dist = static_cast<int>(h * (w / 2 + 1));
    if (kind == kRealForward) {
      p = fftw_plan_many_dft_r2c(2, n, static_cast<int>(planes), c.real_buf.data, nullptr, 1, real_dist,
                                 c.complex_buf.data, nullptr, 1, spec_dist, flags);
    } else {
      p = fftw_plan_many_dft_c2r(2, n, static_cast<int>(planes), c.complex_buf.data, nullptr, 1, spec_dist,
                                 c.real_buf.data, nullptr, 1, real_dist, flags);
    }
  }
  c.plans.emplace(key, p);
  return p;
}

void complex_transform(std::span<Complex> data, Kind kind) {
  const std::size_t n = data.size();
  if (n <= 1) return;
  auto& c = cache();
  fftw_complex* buf = c.complex_buf.ensure(n);
  fftw_plan p = plan_for(kind, 1, 1, static_cast<std::int64_t>(n));
  std::memcpy(static_cast<void*>(buf), static_cast<const void*>(data.data()), sizeof(Complex) * n);
  fftw_execute_dft(p, buf, buf);
  std::memcpy(static_cast<void*>(data.data()), static_cast<const void*>(buf), sizeof(Complex) * n);
}

}  // namespace

void forward(std::span<Complex> data) { complex_transform(data, kForward); }

void inverse(std::span<Complex> data) {
  complex_transform(data, kInverse);
  const double scale = 1.0 / static_cast<double>(data.size());
  for (auto& v : data) v *= scale;
}

void real_forward_2d(const double* in, Complex* out, std::int64_t planes, std::int64_t h, std::int64_t w) {
  auto& c = cache();
  const auto real_n = static_cast<std::size_t>(planes * h * w);
  const auto spec_n = static_cast<std::size_t>(planes * h * (w / 2 + 1));
  double* rb = c.real_buf.ensure(real_n);
  fftw_complex* cb = c.complex_buf.ensure(spec_n);
  fftw_plan p = plan_for(kRealForward, planes, h, w);
  std::memcpy(rb, in, sizeof(double) * real_n);
  fftw_execute_dft_r2c(p, rb, cb);
  std::memcpy(static_cast<void*>(out), static_cast<const void*>(cb), sizeof(Complex) * spec_n);
}

void real_inverse_2d(const Complex* in, double* out, std::int64_t planes, std::int64_t h, std::int64_t w) {
  auto& c = cache();
  const auto real_n = static_cast<std::size_t>(planes * h * w);
  const auto spec_n = static_cast<std::size_t>(planes * h * (w / 2 + 1));
  double* rb = c.real_buf.ensure(real_n);
  fftw_complex* cb = c.complex_buf.ensure(spec_n);
  fftw_plan p = plan_for(kRealInverse, planes, h, w);
  std::memcpy(static_cast<void*>(cb), static_cast<const void*>(in), sizeof(Complex) * spec_n);
  fftw_execute_dft_c2r(p, cb, rb);
  std::memcpy(out, rb, sizeof(double) * real_n);
}

}  // namespace afldm::fft
