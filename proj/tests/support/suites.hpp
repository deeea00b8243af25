#pragma once

// Randomized suites shared by the unit tests and the acceptance runner.

#include <functional>
#include <string>
#include <vector>

#include "test_support.hpp"

namespace afldm::testing {

struct GradCase {
  std::string name;
  std::function<std::vector<Tensor>(Gen&)> inputs;
  std::function<Tensor(const std::vector<Tensor>&)> f;
};

// Every differentiable operation of the library, each with a generator of
// random small inputs.
const std::vector<GradCase>& gradient_cases();

struct GradSuiteResult {
  std::string name;
  int instances = 0;
  double worst_rel_error = 0.0;
  std::string worst;
};

GradSuiteResult run_gradient_case(const GradCase& c, int instances, std::uint64_t seed);

// Worst error of each spectral property over `trials` random instances.
struct SpectralSuiteResult {
  double group_law = 0.0;       // |T_a T_b x - T_{a+b} x|_inf
  double inverse = 0.0;         // |T_-d T_d x - x|_inf
  double up_down = 0.0;         // |down(up(x, m), m) - x|_inf
  double lowpass_idem = 0.0;    // |L(L x) - L x|_inf
  double imag_residue = 0.0;    // max relative imaginary residue
  double rescale_commute = 0.0; // |down(T_{m d} x) - T_d down(x)|_inf on bandlimited x
  int trials = 0;
};

SpectralSuiteResult run_spectral_suite(int trials, std::uint64_t seed);

struct AttentionSuiteResult {
  double circular_sa_error = 0.0;  // max |SA(P x) - P SA(x)|, P a circular shift
  double cropped_sa_error = 0.0;   // min over trials of the masked error under cropped shifts
  double ea_permutation_error = 0.0;
  int trials = 0;
};

AttentionSuiteResult run_attention_suite(int trials, std::uint64_t seed);

}  // namespace afldm::testing
