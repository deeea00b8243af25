#pragma once

#include <map>
#include <string>
#include <vector>

#include "afldm/layers.hpp"

namespace afldm {

struct AdamOptions {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double clip_norm = 0.0;  // global gradient norm clip, 0 = off
};

class Adam {
 public:
  explicit Adam(AdamOptions options = {}) : options_(options) {}

  // Updates every parameter that has a gradient, then clears the gradients.
  // Returns the global gradient norm before clipping.
  double step(nn::ParamSet& params);

  void set_lr(double lr) { options_.lr = lr; }
  const AdamOptions& options() const { return options_; }
  long steps_taken() const { return t_; }

 private:
  struct Moments {
    std::vector<double> m, v;
  };
  AdamOptions options_;
  long t_ = 0;
  std::map<std::string, Moments> state_;
};

}  // namespace afldm
