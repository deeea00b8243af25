#include "afldm/optim.hpp"

#include <cmath>

#include "afldm/error.hpp"

namespace afldm {

double Adam::step(nn::ParamSet& params) {
  double sq = 0.0;
  for (const auto& [_, p] : params.items()) {
    if (!p.has_grad()) continue;
    for (double g : p.grad()) sq += g * g;
  }
  const double norm = std::sqrt(sq);
  if (!std::isfinite(norm)) throw NumericalError("adam: non-finite gradient norm");
  const double scale = (options_.clip_norm > 0.0 && norm > options_.clip_norm) ? options_.clip_norm / norm : 1.0;

  ++t_;
  const double b1 = options_.beta1, b2 = options_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
  for (auto& [name, p] : params.items()) {
    if (!p.has_grad()) continue;
    auto grad = p.grad();
    auto& st = state_[name];
    if (st.m.empty()) {
      st.m.assign(grad.size(), 0.0);
      st.v.assign(grad.size(), 0.0);
    }
    const bool f32 = p.dtype() == DType::kF32;
    auto w = p.mutable_data();
    for (std::size_t i = 0; i < grad.size(); ++i) {
      const double g = grad[i] * scale;
      st.m[i] = b1 * st.m[i] + (1.0 - b1) * g;
      st.v[i] = b2 * st.v[i] + (1.0 - b2) * g * g;
      const double mh = st.m[i] / c1, vh = st.v[i] / c2;
      double nw = w[i] - options_.lr * mh / (std::sqrt(vh) + options_.eps);
      if (f32) nw = static_cast<double>(static_cast<float>(nw));
      w[i] = nw;
    }
    p.zero_grad();
  }
  return norm;
}

}  // namespace afldm
