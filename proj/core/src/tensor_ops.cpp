#include <algorithm>
#include <cmath>
#include <numeric>

#include <Eigen/Core>

#include "afldm/error.hpp"
#include "afldm/tensor.hpp"

namespace afldm {
namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using ConstMapMat = Eigen::Map<const RowMat>;

using detail::grad_buffer;
using ImplPtr = std::shared_ptr<detail::TensorImpl>;

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

double unary_value(UnaryOp op, double x) {
  switch (op) {
    case UnaryOp::kNeg: return -x;
    case UnaryOp::kSquare: return x * x;
    case UnaryOp::kExp: return std::exp(x);
    case UnaryOp::kSqrt: return std::sqrt(x);
    case UnaryOp::kSiLU: return x * sigmoid(x);
    case UnaryOp::kReLU: return x > 0.0 ? x : 0.0;
    case UnaryOp::kSigmoid: return sigmoid(x);
    case UnaryOp::kTanh: return std::tanh(x);
  }
  return x;
}

// Derivative expressed through the input x and output y.
double unary_derivative(UnaryOp op, double x, double y) {
  switch (op) {
    case UnaryOp::kNeg: return -1.0;
    case UnaryOp::kSquare: return 2.0 * x;
    case UnaryOp::kExp: return y;
    case UnaryOp::kSqrt: return 0.5 / y;
    case UnaryOp::kSiLU: {
      const double s = sigmoid(x);
      return s * (1.0 + x * (1.0 - s));
    }
    case UnaryOp::kReLU: return x > 0.0 ? 1.0 : 0.0;
    case UnaryOp::kSigmoid: return y * (1.0 - y);
    case UnaryOp::kTanh: return 1.0 - y * y;
  }
  return 0.0;
}

const char* binary_name(BinaryOp op) {
  switch (op) {
    case BinaryOp::kAdd: return "add";
    case BinaryOp::kSub: return "sub";
    case BinaryOp::kMul: return "mul";
    case BinaryOp::kDiv: return "div";
  }
  return "binary";
}

std::vector<std::int64_t> strides_of(const Shape& shape) {
  std::vector<std::int64_t> s(shape.size(), 1);
  for (int i = static_cast<int>(shape.size()) - 2; i >= 0; --i) {
    s[static_cast<std::size_t>(i)] = s[static_cast<std::size_t>(i) + 1] * shape[static_cast<std::size_t>(i) + 1];
  }
  return s;
}

int normalize_axis(int axis, int rank) {
  if (axis < 0) axis += rank;
  if (axis < 0 || axis >= rank) throw ShapeError("axis out of range");
  return axis;
}

}  // namespace

std::string to_string(Nonlinearity kind) {
  switch (kind) {
    case Nonlinearity::kSiLU: return "silu";
    case Nonlinearity::kReLU: return "relu";
  }
  return "silu";
}

Nonlinearity parse_nonlinearity(const std::string& name) {
  if (name == "silu") return Nonlinearity::kSiLU;
  if (name == "relu") return Nonlinearity::kReLU;
  throw ConfigError("unknown nonlinearity '" + name + "'");
}

std::string to_string(Padding mode) { return mode == Padding::kCircular ? "circular" : "zero"; }

Padding parse_padding(const std::string& name) {
  if (name == "circular") return Padding::kCircular;
  if (name == "zero") return Padding::kZero;
  throw ConfigError("unknown padding mode '" + name + "'");
}

// ---------------------------------------------------------------------------
// Elementwise

Tensor elementwise(BinaryOp op, const Tensor& a, const Tensor& b) {
  const bool same = a.shape() == b.shape();
  const bool b_scalar = !same && b.numel() == 1;
  const bool a_scalar = !same && !b_scalar && a.numel() == 1;
  if (!same && !a_scalar && !b_scalar) {
    throw ShapeError(std::string(binary_name(op)) + ": shape mismatch " + shape_str(a.shape()) +
                     " vs " + shape_str(b.shape()));
  }
  const Shape& out_shape = a_scalar ? b.shape() : a.shape();
  Tensor out = detail::make_output(out_shape, {&a, &b});
  const auto n = static_cast<std::size_t>(out.numel());
  const double* pa = a.data().data();
  const double* pb = b.data().data();
  double* po = out.mutable_data().data();
  const std::size_t sa = a_scalar ? 0 : 1;
  const std::size_t sb = b_scalar ? 0 : 1;
  for (std::size_t i = 0; i < n; ++i) {
    const double x = pa[i * sa];
    const double y = pb[i * sb];
    switch (op) {
      case BinaryOp::kAdd: po[i] = x + y; break;
      case BinaryOp::kSub: po[i] = x - y; break;
      case BinaryOp::kMul: po[i] = x * y; break;
      case BinaryOp::kDiv: po[i] = x / y; break;
    }
  }
  detail::finalize(out, binary_name(op));
  if (detail::needs_grad({&a, &b})) {
    ImplPtr ia = a.impl_ptr(), ib = b.impl_ptr(), io = out.impl_ptr();
    detail::record(out, [ia, ib, io, op, n, sa, sb]() {
      const auto& g = io->grad;
      if (ia->requires_grad) {
        auto& ga = grad_buffer(*ia);
        for (std::size_t i = 0; i < n; ++i) {
          double d = g[i];
          if (op == BinaryOp::kMul) d *= ib->data[i * sb];
          if (op == BinaryOp::kDiv) d /= ib->data[i * sb];
          ga[i * sa] += d;
        }
      }
      if (ib->requires_grad) {
        auto& gb = grad_buffer(*ib);
        for (std::size_t i = 0; i < n; ++i) {
          double d = g[i];
          switch (op) {
            case BinaryOp::kAdd: break;
            case BinaryOp::kSub: d = -d; break;
            case BinaryOp::kMul: d *= ia->data[i * sa]; break;
            case BinaryOp::kDiv: {
              const double y = ib->data[i * sb];
              d *= -ia->data[i * sa] / (y * y);
              break;
            }
          }
          gb[i * sb] += d;
        }
      }
    });
  }
  return out;
}

Tensor elementwise(BinaryOp op, const Tensor& a, double b) {
  return elementwise(op, a, Tensor::scalar(b, a.dtype()));
}

Tensor unary(UnaryOp op, const Tensor& a) {
  Tensor out = detail::make_output(a.shape(), {&a});
  const auto n = static_cast<std::size_t>(a.numel());
  const double* pa = a.data().data();
  double* po = out.mutable_data().data();
  for (std::size_t i = 0; i < n; ++i) po[i] = unary_value(op, pa[i]);
  detail::finalize(out, "unary");
  if (detail::needs_grad({&a})) {
    ImplPtr ia = a.impl_ptr(), io = out.impl_ptr();
    detail::record(out, [ia, io, op, n]() {
      auto& ga = grad_buffer(*ia);
      for (std::size_t i = 0; i < n; ++i) {
        ga[i] += io->grad[i] * unary_derivative(op, ia->data[i], io->data[i]);
      }
    });
  }
  return out;
}

Tensor nonlinearity(const Tensor& x, Nonlinearity kind) {
  return unary(kind == Nonlinearity::kSiLU ? UnaryOp::kSiLU : UnaryOp::kReLU, x);
}

Tensor operator+(const Tensor& a, const Tensor& b) { return elementwise(BinaryOp::kAdd, a, b); }
Tensor operator-(const Tensor& a, const Tensor& b) { return elementwise(BinaryOp::kSub, a, b); }
Tensor operator*(const Tensor& a, const Tensor& b) { return elementwise(BinaryOp::kMul, a, b); }
Tensor operator/(const Tensor& a, const Tensor& b) { return elementwise(BinaryOp::kDiv, a, b); }
Tensor operator+(const Tensor& a, double b) { return elementwise(BinaryOp::kAdd, a, b); }
Tensor operator-(const Tensor& a, double b) { return elementwise(BinaryOp::kSub, a, b); }
Tensor operator*(const Tensor& a, double b) { return elementwise(BinaryOp::kMul, a, b); }
Tensor operator*(double a, const Tensor& b) { return elementwise(BinaryOp::kMul, b, a); }
Tensor operator-(const Tensor& a) { return unary(UnaryOp::kNeg, a); }

Tensor square(const Tensor& x) { return unary(UnaryOp::kSquare, x); }
Tensor exp(const Tensor& x) { return unary(UnaryOp::kExp, x); }
Tensor silu(const Tensor& x) { return unary(UnaryOp::kSiLU, x); }
Tensor relu(const Tensor& x) { return unary(UnaryOp::kReLU, x); }

Tensor clamp(const Tensor& x, double lo, double hi) {
  Tensor out = detail::make_output(x.shape(), {&x});
  const auto n = static_cast<std::size_t>(x.numel());
  for (std::size_t i = 0; i < n; ++i) out.mutable_data()[i] = std::clamp(x.data()[i], lo, hi);
  detail::finalize(out, "clamp");
  if (detail::needs_grad({&x})) {
    ImplPtr ix = x.impl_ptr(), io = out.impl_ptr();
    detail::record(out, [ix, io, n, lo, hi]() {
      auto& gx = grad_buffer(*ix);
      for (std::size_t i = 0; i < n; ++i) {
        const double v = ix->data[i];
        if (v >= lo && v <= hi) gx[i] += io->grad[i];
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Reductions

Tensor sum(const Tensor& x) {
  Tensor out = detail::make_output({1}, {&x});
  double acc = 0.0;
  for (double v : x.data()) acc += v;
  out.mutable_data()[0] = acc;
  detail::finalize(out, "sum");
  if (detail::needs_grad({&x})) {
    ImplPtr ix = x.impl_ptr(), io = out.impl_ptr();
    detail::record(out, [ix, io]() {
      auto& gx = grad_buffer(*ix);
      const double g = io->grad[0];
      for (double& v : gx) v += g;
    });
  }
  return out;
}

Tensor mean(const Tensor& x) { return sum(x) * (1.0 / static_cast<double>(x.numel())); }

// ---------------------------------------------------------------------------
// Linear algebra and layout

Tensor matmul(const Tensor& a, const Tensor& b) {
  const bool batched = a.rank() == 3;
  if (!((a.rank() == 2 && b.rank() == 2) || (a.rank() == 3 && b.rank() == 3))) {
    throw ShapeError("matmul expects rank-2 or rank-3 operands, got " + shape_str(a.shape()) +
                     " and " + shape_str(b.shape()));
  }
  const std::int64_t batch = batched ? a.dim(0) : 1;
  if (batched && b.dim(0) != batch) throw ShapeError("matmul: batch size mismatch");
  const std::int64_t m = a.dim(-2), k = a.dim(-1), n = b.dim(-1);
  if (b.dim(-2) != k) {
    throw ShapeError("matmul: inner dimensions disagree " + shape_str(a.shape()) + " x " +
                     shape_str(b.shape()));
  }
  Shape out_shape = batched ? Shape{batch, m, n} : Shape{m, n};
  Tensor out = detail::make_output(out_shape, {&a, &b});
  for (std::int64_t i = 0; i < batch; ++i) {
    ConstMapMat ma(a.data().data() + i * m * k, m, k);
    ConstMapMat mb(b.data().data() + i * k * n, k, n);
    MapMat mo(out.mutable_data().data() + i * m * n, m, n);
    mo.noalias() = ma * mb;
  }
  detail::finalize(out, "matmul");
  if (detail::needs_grad({&a, &b})) {
    ImplPtr ia = a.impl_ptr(), ib = b.impl_ptr(), io = out.impl_ptr();
    detail::record(out, [ia, ib, io, batch, m, k, n]() {
      for (std::int64_t i = 0; i < batch; ++i) {
        ConstMapMat g(io->grad.data() + i * m * n, m, n);
        if (ia->requires_grad) {
          MapMat ga(grad_buffer(*ia).data() + i * m * k, m, k);
          ConstMapMat mb(ib->data.data() + i * k * n, k, n);
          ga.noalias() += g * mb.transpose();
        }
        if (ib->requires_grad) {
          MapMat gb(grad_buffer(*ib).data() + i * k * n, k, n);
          ConstMapMat ma(ia->data.data() + i * m * k, m, k);
          gb.noalias() += ma.transpose() * g;
        }
      }
    });
  }
  return out;
}

Tensor permute(const Tensor& x, const std::vector<int>& order) {
  const int r = x.rank();
  if (static_cast<int>(order.size()) != r) throw ShapeError("permute: order rank mismatch");
  std::vector<bool> seen(static_cast<std::size_t>(r), false);
  Shape out_shape(static_cast<std::size_t>(r));
  for (int i = 0; i < r; ++i) {
    const int src = order[static_cast<std::size_t>(i)];
    if (src < 0 || src >= r || seen[static_cast<std::size_t>(src)]) {
      throw ShapeError("permute: invalid axis order");
    }
    seen[static_cast<std::size_t>(src)] = true;
    out_shape[static_cast<std::size_t>(i)] = x.shape()[static_cast<std::size_t>(src)];
  }
  const auto in_strides = strides_of(x.shape());
  // Source stride for each output axis.
  std::vector<std::int64_t> src_stride(static_cast<std::size_t>(r));
  for (int i = 0; i < r; ++i) {
    src_stride[static_cast<std::size_t>(i)] = in_strides[static_cast<std::size_t>(order[static_cast<std::size_t>(i)])];
  }
  const auto n = x.numel();
  std::vector<std::int64_t> gather(static_cast<std::size_t>(n));
  std::vector<std::int64_t> idx(static_cast<std::size_t>(r), 0);
  std::int64_t offset = 0;
  for (std::int64_t flat = 0; flat < n; ++flat) {
    gather[static_cast<std::size_t>(flat)] = offset;
    for (int ax = r - 1; ax >= 0; --ax) {
      const auto a = static_cast<std::size_t>(ax);
      if (++idx[a] < out_shape[a]) {
        offset += src_stride[a];
        break;
      }
      offset -= src_stride[a] * (out_shape[a] - 1);
      idx[a] = 0;
    }
  }
  Tensor out = detail::make_output(out_shape, {&x});
  auto po = out.mutable_data();
  for (std::int64_t i = 0; i < n; ++i) po[static_cast<std::size_t>(i)] = x.data()[static_cast<std::size_t>(gather[static_cast<std::size_t>(i)])];
  detail::finalize(out, "permute");
  if (detail::needs_grad({&x})) {
    ImplPtr ix = x.impl_ptr(), io = out.impl_ptr();
    detail::record(out, [ix, io, gather = std::move(gather)]() {
      auto& gx = grad_buffer(*ix);
      for (std::size_t i = 0; i < gather.size(); ++i) gx[static_cast<std::size_t>(gather[i])] += io->grad[i];
    });
  }
  return out;
}

Tensor transpose(const Tensor& x) {
  const int r = x.rank();
  if (r < 2) throw ShapeError("transpose needs rank >= 2");
  std::vector<int> order(static_cast<std::size_t>(r));
  std::iota(order.begin(), order.end(), 0);
  std::swap(order[static_cast<std::size_t>(r) - 1], order[static_cast<std::size_t>(r) - 2]);
  return permute(x, order);
}

Tensor reshape(const Tensor& x, const Shape& shape) {
  if (shape_numel(shape) != x.numel()) {
    throw ShapeError("reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
  }
  Tensor out = Tensor::from_vector(shape, std::vector<double>(x.data().begin(), x.data().end()),
                                   x.dtype());
  if (detail::needs_grad({&x})) {
    ImplPtr ix = x.impl_ptr(), io = out.impl_ptr();
    detail::record(out, [ix, io]() {
      auto& gx = grad_buffer(*ix);
      for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += io->grad[i];
    });
  }
  return out;
}

Tensor concat(const std::vector<Tensor>& xs, int axis) {
  if (xs.empty()) throw ShapeError("concat of zero tensors");
  const int r = xs[0].rank();
  axis = normalize_axis(axis, r);
  Shape out_shape = xs[0].shape();
  out_shape[static_cast<std::size_t>(axis)] = 0;
  DType dtype = DType::kF32;
  for (const auto& t : xs) {
    if (t.rank() != r) throw ShapeError("concat: rank mismatch");
    for (int i = 0; i < r; ++i) {
      if (i != axis && t.shape()[static_cast<std::size_t>(i)] != xs[0].shape()[static_cast<std::size_t>(i)]) {
        throw ShapeError("concat: shape mismatch " + shape_str(t.shape()) + " vs " +
                         shape_str(xs[0].shape()));
      }
    }
    out_shape[static_cast<std::size_t>(axis)] += t.shape()[static_cast<std::size_t>(axis)];
    if (t.dtype() == DType::kF64) dtype = DType::kF64;
  }
  std::int64_t outer = 1, inner = 1;
  for (int i = 0; i < axis; ++i) outer *= out_shape[static_cast<std::size_t>(i)];
  for (int i = axis + 1; i < r; ++i) inner *= out_shape[static_cast<std::size_t>(i)];
  const std::int64_t out_axis = out_shape[static_cast<std::size_t>(axis)];
  Tensor out = detail::make_output(out_shape, dtype);
  std::int64_t start = 0;
  std::vector<std::int64_t> starts;
  for (const auto& t : xs) {
    const std::int64_t len = t.shape()[static_cast<std::size_t>(axis)];
    starts.push_back(start);
    for (std::int64_t o = 0; o < outer; ++o) {
      std::copy_n(t.data().data() + o * len * inner, len * inner,
                  out.mutable_data().data() + (o * out_axis + start) * inner);
    }
    start += len;
  }
  detail::finalize(out, "concat");
  if (detail::needs_grad(xs)) {
    std::vector<ImplPtr> ins;
    for (const auto& t : xs) ins.push_back(t.impl_ptr());
    ImplPtr io = out.impl_ptr();
    detail::record(out, [ins, io, starts, outer, inner, out_axis, axis]() {
      for (std::size_t j = 0; j < ins.size(); ++j) {
        if (!ins[j]->requires_grad) continue;
        const std::int64_t len = ins[j]->shape[static_cast<std::size_t>(axis)];
        auto& g = grad_buffer(*ins[j]);
        for (std::int64_t o = 0; o < outer; ++o) {
          const double* src = io->grad.data() + (o * out_axis + starts[j]) * inner;
          double* dst = g.data() + o * len * inner;
          for (std::int64_t i = 0; i < len * inner; ++i) dst[i] += src[i];
        }
      }
    });
  }
  return out;
}

Tensor slice(const Tensor& x, int axis, std::int64_t begin, std::int64_t end) {
  const int r = x.rank();
  axis = normalize_axis(axis, r);
  const std::int64_t len = x.shape()[static_cast<std::size_t>(axis)];
  if (begin < 0 || end > len || begin >= end) throw ShapeError("slice: invalid range");
  Shape out_shape = x.shape();
  out_shape[static_cast<std::size_t>(axis)] = end - begin;
  std::int64_t outer = 1, inner = 1;
  for (int i = 0; i < axis; ++i) outer *= out_shape[static_cast<std::size_t>(i)];
  for (int i = axis + 1; i < r; ++i) inner *= out_shape[static_cast<std::size_t>(i)];
  const std::int64_t out_len = end - begin;
  Tensor out = detail::make_output(out_shape, {&x});
  for (std::int64_t o = 0; o < outer; ++o) {
    std::copy_n(x.data().data() + (o * len + begin) * inner, out_len * inner,
                out.mutable_data().data() + o * out_len * inner);
  }
  detail::finalize(out, "slice");
  if (detail::needs_grad({&x})) {
    ImplPtr ix = x.impl_ptr(), io = out.impl_ptr();
    detail::record(out, [ix, io, outer, inner, len, out_len, begin]() {
      auto& gx = grad_buffer(*ix);
      for (std::int64_t o = 0; o < outer; ++o) {
        const double* src = io->grad.data() + o * out_len * inner;
        double* dst = gx.data() + (o * len + begin) * inner;
        for (std::int64_t i = 0; i < out_len * inner; ++i) dst[i] += src[i];
      }
    });
  }
  return out;
}

Tensor softmax_rows(const Tensor& x) {
  const std::int64_t d = x.dim(-1);
  const std::int64_t rows = x.numel() / d;
  Tensor out = detail::make_output(x.shape(), {&x});
  const double* px = x.data().data();
  double* po = out.mutable_data().data();
  for (std::int64_t r = 0; r < rows; ++r) {
    const double* row = px + r * d;
    double* orow = po + r * d;
    const double mx = *std::max_element(row, row + d);
    double total = 0.0;
    for (std::int64_t j = 0; j < d; ++j) {
      orow[j] = std::exp(row[j] - mx);
      total += orow[j];
    }
    for (std::int64_t j = 0; j < d; ++j) orow[j] /= total;
  }
  detail::finalize(out, "softmax_rows");
  if (detail::needs_grad({&x})) {
    ImplPtr ix = x.impl_ptr(), io = out.impl_ptr();
    detail::record(out, [ix, io, rows, d]() {
      auto& gx = grad_buffer(*ix);
      for (std::int64_t r = 0; r < rows; ++r) {
        const double* y = io->data.data() + r * d;
        const double* g = io->grad.data() + r * d;
        double dot = 0.0;
        for (std::int64_t j = 0; j < d; ++j) dot += y[j] * g[j];
        for (std::int64_t j = 0; j < d; ++j) gx[static_cast<std::size_t>(r * d + j)] += y[j] * (g[j] - dot);
      }
    });
  }
  return out;
}

Tensor add_channel_bias(const Tensor& x, const Tensor& bias) {
  if (x.rank() < 2) throw ShapeError("add_channel_bias: x must have rank >= 2");
  const std::int64_t n = x.dim(0), c = x.dim(1);
  const std::int64_t inner = x.numel() / (n * c);
  const bool per_sample = bias.rank() == 2;
  if (per_sample ? (bias.dim(0) != n || bias.dim(1) != c) : (bias.rank() != 1 || bias.dim(0) != c)) {
    throw ShapeError("add_channel_bias: bias " + shape_str(bias.shape()) + " does not match " +
                     shape_str(x.shape()));
  }
  Tensor out = detail::make_output(x.shape(), {&x, &bias});
  const double* px = x.data().data();
  const double* pb = bias.data().data();
  double* po = out.mutable_data().data();
  for (std::int64_t i = 0; i < n; ++i) {
    for (std::int64_t j = 0; j < c; ++j) {
      const double b = pb[per_sample ? i * c + j : j];
      const std::int64_t base = (i * c + j) * inner;
      for (std::int64_t k = 0; k < inner; ++k) po[base + k] = px[base + k] + b;
    }
  }
  detail::finalize(out, "add_channel_bias");
  if (detail::needs_grad({&x, &bias})) {
    ImplPtr ix = x.impl_ptr(), ib = bias.impl_ptr(), io = out.impl_ptr();
    detail::record(out, [ix, ib, io, n, c, inner, per_sample]() {
      if (ix->requires_grad) {
        auto& gx = grad_buffer(*ix);
        for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += io->grad[i];
      }
      if (ib->requires_grad) {
        auto& gb = grad_buffer(*ib);
        for (std::int64_t i = 0; i < n; ++i) {
          for (std::int64_t j = 0; j < c; ++j) {
            double acc = 0.0;
            const std::int64_t base = (i * c + j) * inner;
            for (std::int64_t k = 0; k < inner; ++k) acc += io->grad[static_cast<std::size_t>(base + k)];
            gb[static_cast<std::size_t>(per_sample ? i * c + j : j)] += acc;
          }
        }
      }
    });
  }
  return out;
}

Tensor stop_gradient(const Tensor& x) {
  Tensor out = x.detach();
  if (detail::needs_grad({&x})) {
    ImplPtr ix = x.impl_ptr();
    // The marker makes x reachable so its gradient is populated, with zeros.
    detail::record(out, [ix]() { grad_buffer(*ix); });
  }
  return out;
}

}  // namespace afldm
