#pragma once

// Dense row-major tensors with tape-based reverse-mode differentiation.
//
// Storage is always double precision. A tensor tagged kF32 has every value
// rounded to the nearest float after each operation, so its contents are
// exactly representable in 32 bits and serialize losslessly as f32.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace afldm {

enum class DType : std::uint8_t { kF32 = 0, kF64 = 1 };

using Shape = std::vector<std::int64_t>;

// Cache-line aligned allocation, so vectorized kernels see the same
// alignment on every run and reductions stay bitwise reproducible.
template <typename T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::align_val_t kAlign{64};

  AlignedAllocator() = default;
  template <typename U>
  AlignedAllocator(const AlignedAllocator<U>&) {}

  T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), kAlign)); }
  void deallocate(T* p, std::size_t) { ::operator delete(p, kAlign); }

  template <typename U>
  bool operator==(const AlignedAllocator<U>&) const {
    return true;
  }
};

using Buffer = std::vector<double, AlignedAllocator<double>>;

std::int64_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

DType default_dtype();
void set_default_dtype(DType dtype);

// NaN/Inf tripwire on every op output. On by default.
bool debug_checks();
void set_debug_checks(bool enabled);

// Sets the default dtype for the lifetime of the guard.
class DTypeGuard {
 public:
  explicit DTypeGuard(DType dtype);
  ~DTypeGuard();
  DTypeGuard(const DTypeGuard&) = delete;
  DTypeGuard& operator=(const DTypeGuard&) = delete;

 private:
  DType previous_;
};

namespace detail {

struct TensorImpl {
  Shape shape;
  Buffer data;
  Buffer grad;  // empty until a gradient reaches this tensor
  DType dtype = DType::kF32;
  bool requires_grad = false;
};

}  // namespace detail

class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(const Shape& shape, DType dtype = default_dtype());
  static Tensor ones(const Shape& shape, DType dtype = default_dtype());
  static Tensor full(const Shape& shape, double value, DType dtype = default_dtype());
  static Tensor from_vector(const Shape& shape, std::vector<double> values,
                            DType dtype = default_dtype());
  static Tensor scalar(double value, DType dtype = default_dtype());

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const;
  int rank() const;
  // Negative indices count from the back.
  std::int64_t dim(int axis) const;
  std::int64_t numel() const;
  DType dtype() const;

  std::span<const double> data() const;
  // Writable view. Only valid on tensors that are not tracked by a tape.
  std::span<double> mutable_data();
  double item() const;
  double at(std::initializer_list<std::int64_t> index) const;

  bool requires_grad() const;
  Tensor& set_requires_grad(bool value);
  bool has_grad() const;
  std::span<const double> grad() const;
  Tensor grad_tensor() const;
  void zero_grad();

  // Copy of the values with no gradient tracking.
  Tensor detach() const;
  Tensor to(DType dtype) const;

  detail::TensorImpl* impl() const { return impl_.get(); }
  const std::shared_ptr<detail::TensorImpl>& impl_ptr() const { return impl_; }
  static Tensor wrap(std::shared_ptr<detail::TensorImpl> impl);

 private:
  std::shared_ptr<detail::TensorImpl> impl_;
};

// Ordered record of executed differentiable operations. Constructing a tape
// makes it the active tape of the calling thread until it is destroyed; ops
// run while no tape is active are not recorded.
class GradTape {
 public:
  using BackwardFn = std::function<void()>;

  GradTape();
  ~GradTape();
  GradTape(const GradTape&) = delete;
  GradTape& operator=(const GradTape&) = delete;

  // Seeds d(loss)/d(loss) = 1 and runs every recorded closure in reverse
  // execution order. A tape can be consumed once.
  void backward(const Tensor& loss);

  std::size_t size() const { return entries_.size(); }
  bool consumed() const { return consumed_; }

  static GradTape* active();

  void record(std::shared_ptr<detail::TensorImpl> output, BackwardFn fn);

 private:
  struct Entry {
    std::shared_ptr<detail::TensorImpl> output;
    BackwardFn fn;
  };
  std::vector<Entry> entries_;
  GradTape* previous_ = nullptr;
  bool consumed_ = false;
};

// Disables recording on the current thread for the lifetime of the guard.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  GradTape* saved_;
};

namespace detail {

// True when a tape is active and any input requires a gradient.
bool needs_grad(std::initializer_list<const Tensor*> inputs);
bool needs_grad(const std::vector<Tensor>& inputs);

// Allocates the output tensor (dtype promoted from the inputs).
Tensor make_output(const Shape& shape, std::initializer_list<const Tensor*> inputs);
Tensor make_output(const Shape& shape, DType dtype);
DType promote(std::initializer_list<const Tensor*> inputs);

// Rounding to f32 when required and the NaN tripwire.
void finalize(const Tensor& out, const char* op_name);

// Marks `out` as produced by a differentiable op and records the closure.
void record(const Tensor& out, GradTape::BackwardFn fn);

// Gradient buffer of `t`, zero-initialized on first access.
Buffer& grad_buffer(detail::TensorImpl& t);

}  // namespace detail

// ---------------------------------------------------------------------------
// Operations

enum class BinaryOp { kAdd, kSub, kMul, kDiv };
enum class UnaryOp { kNeg, kSquare, kExp, kSqrt, kSiLU, kReLU, kSigmoid, kTanh };
enum class Nonlinearity { kSiLU, kReLU };

std::string to_string(Nonlinearity kind);
Nonlinearity parse_nonlinearity(const std::string& name);

// Broadcasting is limited to exact shape or a scalar (numel 1) operand.
Tensor elementwise(BinaryOp op, const Tensor& a, const Tensor& b);
Tensor elementwise(BinaryOp op, const Tensor& a, double b);
Tensor unary(UnaryOp op, const Tensor& a);
Tensor nonlinearity(const Tensor& x, Nonlinearity kind);

Tensor operator+(const Tensor& a, const Tensor& b);
Tensor operator-(const Tensor& a, const Tensor& b);
Tensor operator*(const Tensor& a, const Tensor& b);
Tensor operator/(const Tensor& a, const Tensor& b);
Tensor operator+(const Tensor& a, double b);
Tensor operator-(const Tensor& a, double b);
Tensor operator*(const Tensor& a, double b);
Tensor operator*(double a, const Tensor& b);
Tensor operator-(const Tensor& a);

Tensor square(const Tensor& x);
Tensor exp(const Tensor& x);
Tensor silu(const Tensor& x);
Tensor relu(const Tensor& x);
Tensor clamp(const Tensor& x, double lo, double hi);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);

// [M,K]x[K,N] or batched [B,M,K]x[B,K,N].
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& x);  // swaps the last two axes
Tensor permute(const Tensor& x, const std::vector<int>& order);
Tensor reshape(const Tensor& x, const Shape& shape);
Tensor concat(const std::vector<Tensor>& xs, int axis);
Tensor slice(const Tensor& x, int axis, std::int64_t begin, std::int64_t end);

// Softmax over the last axis, stabilized by subtracting the row maximum.
Tensor softmax_rows(const Tensor& x);

// x has shape [N, C, ...]; bias has shape [C] or [N, C] and is added along
// axis 1.
Tensor add_channel_bias(const Tensor& x, const Tensor& bias);

enum class Padding { kCircular, kZero };
std::string to_string(Padding mode);
Padding parse_padding(const std::string& name);

// Same-size 2-D convolution. x: [B,C,H,W], w: [O,C,k,k] with k odd,
// optional bias [O].
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias = {},
              Padding padding = Padding::kCircular);

// Values pass through; the backward pass propagates zero.
Tensor stop_gradient(const Tensor& x);

}  // namespace afldm
