#pragma once

#include <cstdint>
#include <random>

#include "afldm/tensor.hpp"

namespace afldm {

// Seeded generator shared by initialization, noise and offset sampling.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  double uniform(double lo = 0.0, double hi = 1.0) {
    return std::uniform_real_distribution<double>(lo, hi)(engine_);
  }
  double normal() { return std::normal_distribution<double>(0.0, 1.0)(engine_); }
  // Inclusive range.
  std::int64_t randint(std::int64_t lo, std::int64_t hi) {
    return std::uniform_int_distribution<std::int64_t>(lo, hi)(engine_);
  }
  std::uint64_t next() { return engine_(); }

  Tensor normal_tensor(const Shape& shape, DType dtype = default_dtype()) {
    std::vector<double> v(static_cast<std::size_t>(shape_numel(shape)));
    for (double& e : v) e = normal();
    return Tensor::from_vector(shape, std::move(v), dtype);
  }
  Tensor uniform_tensor(const Shape& shape, double lo, double hi, DType dtype = default_dtype()) {
    std::vector<double> v(static_cast<std::size_t>(shape_numel(shape)));
    for (double& e : v) e = uniform(lo, hi);
    return Tensor::from_vector(shape, std::move(v), dtype);
  }

 private:
  std::mt19937_64 engine_;
};

}  // namespace afldm
