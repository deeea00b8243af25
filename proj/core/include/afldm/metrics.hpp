#pragma once

#include <functional>
#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

#include "afldm/spectral.hpp"
#include "afldm/tensor.hpp"

namespace afldm::metrics {

inline constexpr double kPsnrCap = 100.0;
inline constexpr double kImagePeak = 2.0;

struct Offset {
  double dx = 0.0;
  double dy = 0.0;
};

struct MetricRecord {
  std::string metric;
  Offset offset;
  int step = 0;
  double value = 0.0;
};

// 10 log10(peak^2 / MSE), capped at 100 dB.
double psnr(const Tensor& a, const Tensor& b, double peak);

// PSNR restricted to the pixels where `mask` is set; masked pixels are never
// read. A peak <= 0 selects max - min of `reference` over the valid region.
double masked_psnr(const Tensor& estimate, const Tensor& reference, const spectral::ValidMask& mask,
                   double peak);

// Range of the reference values inside the mask.
double valid_range(const Tensor& reference, const spectral::ValidMask& mask);

// A map whose output grid is k times the input grid.
struct PipelineUnderTest {
  using Map = std::function<Tensor(const Tensor&)>;
  // Runs the reference and the shifted input together, for pipelines whose
  // shifted pass reuses state from the reference pass.
  using PairedMap = std::function<std::pair<Tensor, Tensor>(const Tensor& x, const Tensor& shifted)>;

  Map map;
  PairedMap paired;
  double k = 1.0;
  spectral::ShiftMode input_mode = spectral::ShiftMode::kCircular;
  spectral::ShiftMode output_mode = spectral::ShiftMode::kCircular;
  double peak = kImagePeak;  // <= 0: range of the reference output

  std::pair<Tensor, Tensor> run(const Tensor& x, const Tensor& shifted) const;
};

// Output-grid mask compared by spsnr for offset delta.
spectral::ValidMask spsnr_mask(const PipelineUnderTest& p, std::int64_t out_h, std::int64_t out_w,
                               Offset delta);

// PSNR(f(T_delta x), T_{k delta} f(x)) for a batch; x is [B, ...] and each
// sample gets its own offset. Returns one value per sample.
std::vector<double> spsnr(const PipelineUnderTest& p, const Tensor& x, const std::vector<Offset>& deltas);

// Single-offset convenience; x may be a batch, the mean is returned.
double spsnr(const PipelineUnderTest& p, const Tensor& x, Offset delta);

// Shifts each sample of x [B, ...] by its own offset.
struct BatchShift {
  Tensor value;
  std::vector<spectral::ValidMask> masks;
};
BatchShift shift_batch(const Tensor& x, const std::vector<Offset>& deltas, spectral::ShiftMode mode);

// Sample b of a batch as a [1, ...] tensor.
Tensor sample(const Tensor& x, std::int64_t b);

struct FrequencyMap {
  Tensor dense_latent;  // [C, m h, m w]
  Tensor spectrum;      // [m h, m w] centered magnitude, averaged over channels
  double out_of_band_ratio = 0.0;
};

// Encodes m^2 circularly rolled copies of x [1, C, H, W] (rolls of k/m
// pixels), interleaves the latents into an m-times denser grid and measures
// the spectral energy outside the central 1/m band. Requires m | k.
FrequencyMap latent_frequency_map(const std::function<Tensor(const Tensor&)>& encoder, const Tensor& x,
                                  int k, int m);

// Fraction of energy (per-channel mean removed) of x [..., H, W] at
// |frequency| > band on either axis.
double out_of_band_ratio(const Tensor& x, double band);

// Integer circular roll of the last two axes.
Tensor roll(const Tensor& x, std::int64_t dx, std::int64_t dy);

// Mean of the values, or 0 for an empty set.
double mean_of(const std::vector<double>& values);
double variance_of(const std::vector<double>& values);

// Locale-independent, 6 significant digits.
std::string format_value(double v);

class CsvWriter {
 public:
  explicit CsvWriter(std::ostream& os);
  void write(const MetricRecord& r);
  void write_all(const std::vector<MetricRecord>& rs);

 private:
  std::ostream& os_;
};

void write_csv(const std::string& path, const std::vector<MetricRecord>& records);

}  // namespace afldm::metrics
