#include "afldm/metrics.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <ostream>

#include "afldm/error.hpp"
#include "afldm/fft.hpp"

namespace afldm::metrics {
namespace {

std::int64_t ceil_eps(double v) { return static_cast<std::int64_t>(std::ceil(v - 1e-9)); }

double signed_width(double delta, std::int64_t width) {
  if (width == 0) return 0.0;
  return delta > 0 ? static_cast<double>(width) : -static_cast<double>(width);
}

void check_same(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
}

double db(double peak, double mse) {
  if (mse < 1e-10) return kPsnrCap;
  return std::min(kPsnrCap, 10.0 * std::log10(peak * peak / mse));
}

// 2-D DFT of one [h, w] plane.
std::vector<fft::Complex> dft2(const double* plane, std::int64_t h, std::int64_t w) {
  std::vector<fft::Complex> a(static_cast<std::size_t>(h * w));
  for (std::int64_t i = 0; i < h * w; ++i) a[static_cast<std::size_t>(i)] = plane[i];
  std::vector<fft::Complex> line(static_cast<std::size_t>(std::max(h, w)));
  for (std::int64_t y = 0; y < h; ++y) {
    fft::forward(std::span<fft::Complex>(a.data() + y * w, static_cast<std::size_t>(w)));
  }
  for (std::int64_t x = 0; x < w; ++x) {
    for (std::int64_t y = 0; y < h; ++y) line[static_cast<std::size_t>(y)] = a[static_cast<std::size_t>(y * w + x)];
    fft::forward(std::span<fft::Complex>(line.data(), static_cast<std::size_t>(h)));
    for (std::int64_t y = 0; y < h; ++y) a[static_cast<std::size_t>(y * w + x)] = line[static_cast<std::size_t>(y)];
  }
  return a;
}

double abs_freq(std::int64_t k, std::int64_t n) {
  return std::abs(static_cast<double>(k <= n / 2 ? k : k - n));
}

}  // namespace

double psnr(const Tensor& a, const Tensor& b, double peak) {
  check_same(a, b, "psnr");
  if (a.numel() == 0) throw ShapeError("psnr: empty tensors");
  double acc = 0.0;
  const auto da = a.data(), dbv = b.data();
  for (std::size_t i = 0; i < da.size(); ++i) {
    const double d = da[i] - dbv[i];
    acc += d * d;
  }
  return db(peak, acc / static_cast<double>(da.size()));
}

double valid_range(const Tensor& reference, const spectral::ValidMask& mask) {
  const std::int64_t h = mask.height(), w = mask.width(), planes = reference.numel() / (h * w);
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  const auto r = reference.data();
  for (std::int64_t p = 0; p < planes; ++p) {
    for (std::int64_t q = 0; q < h * w; ++q) {
      if (!mask.at(q / w, q % w)) continue;
      const double v = r[static_cast<std::size_t>(p * h * w + q)];
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
  }
  return hi > lo ? hi - lo : 0.0;
}

double masked_psnr(const Tensor& estimate, const Tensor& reference, const spectral::ValidMask& mask,
                   double peak) {
  check_same(estimate, reference, "masked_psnr");
  if (estimate.rank() < 2 || estimate.dim(-2) != mask.height() || estimate.dim(-1) != mask.width()) {
    throw ShapeError("masked_psnr: mask does not match " + shape_str(estimate.shape()));
  }
  const std::int64_t valid = mask.count();
  if (valid == 0) throw ShapeError("masked_psnr: empty valid region");
  const std::int64_t h = mask.height(), w = mask.width(), planes = estimate.numel() / (h * w);
  const auto e = estimate.data(), r = reference.data();
  double acc = 0.0;
  for (std::int64_t p = 0; p < planes; ++p) {
    for (std::int64_t q = 0; q < h * w; ++q) {
      if (!mask.at(q / w, q % w)) continue;
      const double d = e[static_cast<std::size_t>(p * h * w + q)] - r[static_cast<std::size_t>(p * h * w + q)];
      acc += d * d;
    }
  }
  if (peak <= 0.0) peak = valid_range(reference, mask);
  const double mse = acc / static_cast<double>(valid * planes);
  if (!std::isfinite(mse)) throw NumericalError("masked_psnr: non-finite error");
  if (peak <= 0.0) return mse < 1e-10 ? kPsnrCap : 0.0;
  return db(peak, mse);
}

std::pair<Tensor, Tensor> PipelineUnderTest::run(const Tensor& x, const Tensor& shifted) const {
  if (paired) return paired(x, shifted);
  if (!map) throw ConfigError("pipeline has no map");
  return {map(x), map(shifted)};
}

spectral::ValidMask spsnr_mask(const PipelineUnderTest& p, std::int64_t out_h, std::int64_t out_w, Offset d) {
  if (!(p.k > 0.0)) throw ConfigError("pipeline rescale factor must be positive");
  std::int64_t wx = 0, wy = 0;
  if (p.input_mode == spectral::ShiftMode::kCropped) {
    wx = ceil_eps(static_cast<double>(ceil_eps(std::abs(d.dx))) * p.k);
    wy = ceil_eps(static_cast<double>(ceil_eps(std::abs(d.dy))) * p.k);
  }
  if (p.output_mode == spectral::ShiftMode::kCropped) {
    wx = std::max(wx, ceil_eps(std::abs(d.dx * p.k)));
    wy = std::max(wy, ceil_eps(std::abs(d.dy * p.k)));
  }
  return spectral::ValidMask::for_shift(out_h, out_w, signed_width(d.dx, wx), signed_width(d.dy, wy));
}

Tensor sample(const Tensor& x, std::int64_t b) { return slice(x, 0, b, b + 1); }

BatchShift shift_batch(const Tensor& x, const std::vector<Offset>& deltas, spectral::ShiftMode mode) {
  if (x.rank() < 3 || static_cast<std::size_t>(x.dim(0)) != deltas.size()) {
    throw ShapeError("shift_batch: need one offset per sample of " + shape_str(x.shape()));
  }
  std::vector<Tensor> parts;
  BatchShift out;
  for (std::size_t b = 0; b < deltas.size(); ++b) {
    auto r = spectral::fractional_shift(sample(x, static_cast<std::int64_t>(b)), {deltas[b].dx, deltas[b].dy, mode});
    parts.push_back(std::move(r.value));
    out.masks.push_back(std::move(r.mask));
  }
  out.value = parts.size() == 1 ? parts.front() : concat(parts, 0);
  return out;
}

std::vector<double> spsnr(const PipelineUnderTest& p, const Tensor& x, const std::vector<Offset>& deltas) {
  NoGradGuard no_grad;
  Tensor shifted = shift_batch(x, deltas, p.input_mode).value;
  auto [fx, fs] = p.run(x, shifted);
  if (fx.shape() != fs.shape()) throw ShapeError("spsnr: pipeline outputs differ in shape");
  std::vector<Offset> out_deltas;
  for (const auto& d : deltas) out_deltas.push_back({d.dx * p.k, d.dy * p.k});
  Tensor reference = shift_batch(fx, out_deltas, p.output_mode).value;
  std::vector<double> values;
  for (std::size_t b = 0; b < deltas.size(); ++b) {
    const auto mask = spsnr_mask(p, fx.dim(-2), fx.dim(-1), deltas[b]);
    values.push_back(masked_psnr(sample(fs, static_cast<std::int64_t>(b)),
                                 sample(reference, static_cast<std::int64_t>(b)), mask, p.peak));
  }
  return values;
}

double spsnr(const PipelineUnderTest& p, const Tensor& x, Offset delta) {
  std::vector<Offset> deltas(static_cast<std::size_t>(x.dim(0)), delta);
  return mean_of(spsnr(p, x, deltas));
}

Tensor roll(const Tensor& x, std::int64_t dx, std::int64_t dy) {
  if (x.rank() < 2) throw ShapeError("roll: expects [..., H, W]");
  const std::int64_t h = x.dim(-2), w = x.dim(-1), planes = x.numel() / (h * w);
  std::vector<double> out(static_cast<std::size_t>(x.numel()));
  const auto src = x.data();
  auto wrap = [](std::int64_t i, std::int64_t n) { return ((i % n) + n) % n; };
  for (std::int64_t p = 0; p < planes; ++p) {
    for (std::int64_t y = 0; y < h; ++y) {
      for (std::int64_t xi = 0; xi < w; ++xi) {
        out[static_cast<std::size_t>(p * h * w + wrap(y + dy, h) * w + wrap(xi + dx, w))] =
            src[static_cast<std::size_t>(p * h * w + y * w + xi)];
      }
    }
  }
  return Tensor::from_vector(x.shape(), std::move(out), x.dtype());
}

double out_of_band_ratio(const Tensor& x, double band) {
  if (x.rank() < 2) throw ShapeError("out_of_band_ratio: expects [..., H, W]");
  const std::int64_t h = x.dim(-2), w = x.dim(-1), planes = x.numel() / (h * w);
  double total = 0.0, outside = 0.0;
  std::vector<double> plane(static_cast<std::size_t>(h * w));
  for (std::int64_t p = 0; p < planes; ++p) {
    const double* src = x.data().data() + p * h * w;
    double mu = 0.0;
    for (std::int64_t i = 0; i < h * w; ++i) mu += src[i];
    mu /= static_cast<double>(h * w);
    for (std::int64_t i = 0; i < h * w; ++i) plane[static_cast<std::size_t>(i)] = src[i] - mu;
    const auto spec = dft2(plane.data(), h, w);
    for (std::int64_t y = 0; y < h; ++y) {
      for (std::int64_t xi = 0; xi < w; ++xi) {
        const double e = std::norm(spec[static_cast<std::size_t>(y * w + xi)]);
        total += e;
        if (abs_freq(y, h) > band + 1e-9 || abs_freq(xi, w) > band + 1e-9) outside += e;
      }
    }
  }
  return total > 0.0 ? outside / total : 0.0;
}

FrequencyMap latent_frequency_map(const std::function<Tensor(const Tensor&)>& encoder, const Tensor& x, int k,
                                  int m) {
  if (x.rank() != 4 || x.dim(0) != 1) throw ShapeError("latent_frequency_map: expects [1, C, H, W]");
  if (m < 1 || k < 1 || k % m != 0) throw ShapeError("latent_frequency_map: m must divide k");
  if (x.dim(2) % k != 0 || x.dim(3) % k != 0) throw ShapeError("latent_frequency_map: size not divisible by k");
  NoGradGuard no_grad;
  const int step = k / m;
  std::vector<Tensor> rolled;
  for (int i = 0; i < m; ++i) {
    for (int j = 0; j < m; ++j) rolled.push_back(roll(x, j * step, i * step));
  }
  Tensor latents = encoder(rolled.size() == 1 ? rolled.front() : concat(rolled, 0));
  const std::int64_t c = latents.dim(1), h = latents.dim(2), w = latents.dim(3);
  const std::int64_t hd = h * m, wd = w * m;
  std::vector<double> dense(static_cast<std::size_t>(c * hd * wd));
  const auto lat = latents.data();
  for (int i = 0; i < m; ++i) {
    for (int j = 0; j < m; ++j) {
      const std::int64_t b = i * m + j;
      for (std::int64_t ch = 0; ch < c; ++ch) {
        for (std::int64_t py = 0; py < h; ++py) {
          for (std::int64_t px = 0; px < w; ++px) {
            const std::int64_t dy = ((m * py - i) % hd + hd) % hd;
            const std::int64_t dx = ((m * px - j) % wd + wd) % wd;
            dense[static_cast<std::size_t>((ch * hd + dy) * wd + dx)] =
                lat[static_cast<std::size_t>(((b * c + ch) * h + py) * w + px)];
          }
        }
      }
    }
  }
  FrequencyMap out;
  out.dense_latent = Tensor::from_vector({c, hd, wd}, std::move(dense), DType::kF64);
  std::vector<double> mag(static_cast<std::size_t>(hd * wd), 0.0);
  std::vector<double> plane(static_cast<std::size_t>(hd * wd));
  for (std::int64_t ch = 0; ch < c; ++ch) {
    const double* src = out.dense_latent.data().data() + ch * hd * wd;
    double mu = 0.0;
    for (std::int64_t i = 0; i < hd * wd; ++i) mu += src[i];
    mu /= static_cast<double>(hd * wd);
    for (std::int64_t i = 0; i < hd * wd; ++i) plane[static_cast<std::size_t>(i)] = src[i] - mu;
    const auto spec = dft2(plane.data(), hd, wd);
    for (std::int64_t y = 0; y < hd; ++y) {
      for (std::int64_t xi = 0; xi < wd; ++xi) {
        const std::int64_t cy = (y + hd / 2) % hd, cx = (xi + wd / 2) % wd;
        mag[static_cast<std::size_t>(cy * wd + cx)] += std::abs(spec[static_cast<std::size_t>(y * wd + xi)]) / c;
      }
    }
  }
  out.spectrum = Tensor::from_vector({hd, wd}, std::move(mag), DType::kF64);
  out.out_of_band_ratio = out_of_band_ratio(out.dense_latent, static_cast<double>(std::min(h, w)) / 2.0);
  return out;
}

double mean_of(const std::vector<double>& values) {
  if (values.empty()) return 0.0;
  double s = 0.0;
  for (double v : values) s += v;
  return s / static_cast<double>(values.size());
}

double variance_of(const std::vector<double>& values) {
  if (values.empty()) return 0.0;
  const double mu = mean_of(values);
  double s = 0.0;
  for (double v : values) s += (v - mu) * (v - mu);
  return s / static_cast<double>(values.size());
}

std::string format_value(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v, std::chars_format::general, 6);
  return std::string(buf, res.ptr);
}

CsvWriter::CsvWriter(std::ostream& os) : os_(os) { os_ << "metric,dx,dy,step,value\n"; }

void CsvWriter::write(const MetricRecord& r) {
  if (!std::isfinite(r.value)) throw NumericalError("metric '" + r.metric + "' is not finite");
  os_ << r.metric << ',' << format_value(r.offset.dx) << ',' << format_value(r.offset.dy) << ',' << r.step << ','
      << format_value(std::min(r.value, kPsnrCap)) << '\n';
}

void CsvWriter::write_all(const std::vector<MetricRecord>& rs) {
  for (const auto& r : rs) write(r);
}

void write_csv(const std::string& path, const std::vector<MetricRecord>& records) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error("cannot open " + path + " for writing");
  CsvWriter w(os);
  w.write_all(records);
}

}  // namespace afldm::metrics
