#include "afldm/tensor.hpp"

#include <cmath>
#include <sstream>

#include "afldm/error.hpp"

namespace afldm {
namespace {

thread_local DType g_default_dtype = DType::kF32;
thread_local GradTape* g_active_tape = nullptr;
bool g_debug_checks = true;

void check_shape(const Shape& shape) {
  for (auto d : shape) {
    if (d <= 0) throw ShapeError("tensor dimensions must be positive: " + shape_str(shape));
  }
}

}  // namespace

std::int64_t shape_numel(const Shape& shape) {
  std::int64_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

DType default_dtype() { return g_default_dtype; }
void set_default_dtype(DType dtype) { g_default_dtype = dtype; }
bool debug_checks() { return g_debug_checks; }
void set_debug_checks(bool enabled) { g_debug_checks = enabled; }

DTypeGuard::DTypeGuard(DType dtype) : previous_(g_default_dtype) { g_default_dtype = dtype; }
DTypeGuard::~DTypeGuard() { g_default_dtype = previous_; }

// ---------------------------------------------------------------------------

Tensor Tensor::wrap(std::shared_ptr<detail::TensorImpl> impl) {
  Tensor t;
  t.impl_ = std::move(impl);
  return t;
}

Tensor Tensor::zeros(const Shape& shape, DType dtype) { return full(shape, 0.0, dtype); }
Tensor Tensor::ones(const Shape& shape, DType dtype) { return full(shape, 1.0, dtype); }

Tensor Tensor::full(const Shape& shape, double value, DType dtype) {
  check_shape(shape);
  auto impl = std::make_shared<detail::TensorImpl>();
  impl->shape = shape;
  impl->dtype = dtype;
  impl->data.assign(static_cast<std::size_t>(shape_numel(shape)),
                    dtype == DType::kF32 ? static_cast<double>(static_cast<float>(value)) : value);
  return wrap(std::move(impl));
}

Tensor Tensor::from_vector(const Shape& shape, std::vector<double> values, DType dtype) {
  check_shape(shape);
  if (static_cast<std::int64_t>(values.size()) != shape_numel(shape)) {
    throw ShapeError("from_vector: " + std::to_string(values.size()) + " values for shape " +
                     shape_str(shape));
  }
  auto impl = std::make_shared<detail::TensorImpl>();
  impl->shape = shape;
  impl->dtype = dtype;
  impl->data.assign(values.begin(), values.end());
  Tensor t = wrap(std::move(impl));
  detail::finalize(t, "from_vector");
  return t;
}

Tensor Tensor::scalar(double value, DType dtype) { return full({1}, value, dtype); }

const Shape& Tensor::shape() const { return impl_->shape; }
int Tensor::rank() const { return static_cast<int>(impl_->shape.size()); }

std::int64_t Tensor::dim(int axis) const {
  const int r = rank();
  if (axis < 0) axis += r;
  if (axis < 0 || axis >= r) {
    throw ShapeError("axis " + std::to_string(axis) + " out of range for " + shape_str(shape()));
  }
  return impl_->shape[static_cast<std::size_t>(axis)];
}

std::int64_t Tensor::numel() const { return static_cast<std::int64_t>(impl_->data.size()); }
DType Tensor::dtype() const { return impl_->dtype; }
std::span<const double> Tensor::data() const { return impl_->data; }
std::span<double> Tensor::mutable_data() { return impl_->data; }

double Tensor::item() const {
  if (numel() != 1) throw ShapeError("item() on tensor of shape " + shape_str(shape()));
  return impl_->data[0];
}

double Tensor::at(std::initializer_list<std::int64_t> index) const {
  if (static_cast<int>(index.size()) != rank()) throw ShapeError("at(): index rank mismatch");
  std::int64_t flat = 0;
  int axis = 0;
  for (auto i : index) {
    const auto d = impl_->shape[static_cast<std::size_t>(axis++)];
    if (i < 0 || i >= d) throw ShapeError("at(): index out of range");
    flat = flat * d + i;
  }
  return impl_->data[static_cast<std::size_t>(flat)];
}

bool Tensor::requires_grad() const { return impl_ && impl_->requires_grad; }

Tensor& Tensor::set_requires_grad(bool value) {
  impl_->requires_grad = value;
  return *this;
}

bool Tensor::has_grad() const { return impl_ && !impl_->grad.empty(); }
std::span<const double> Tensor::grad() const { return impl_->grad; }

Tensor Tensor::grad_tensor() const {
  if (!has_grad()) return zeros(shape(), DType::kF64);
  return from_vector(shape(), {impl_->grad.begin(), impl_->grad.end()}, DType::kF64);
}

void Tensor::zero_grad() { impl_->grad.clear(); }

Tensor Tensor::detach() const {
  auto impl = std::make_shared<detail::TensorImpl>();
  impl->shape = impl_->shape;
  impl->dtype = impl_->dtype;
  impl->data = impl_->data;
  return wrap(std::move(impl));
}

Tensor Tensor::to(DType dtype) const {
  Tensor t = detach();
  t.impl_->dtype = dtype;
  detail::finalize(t, "to");
  return t;
}

// ---------------------------------------------------------------------------

GradTape::GradTape() : previous_(g_active_tape) { g_active_tape = this; }

GradTape::~GradTape() {
  if (g_active_tape == this) g_active_tape = previous_;
}

GradTape* GradTape::active() { return g_active_tape; }

void GradTape::record(std::shared_ptr<detail::TensorImpl> output, BackwardFn fn) {
  entries_.push_back({std::move(output), std::move(fn)});
}

void GradTape::backward(const Tensor& loss) {
  if (consumed_) throw AutogradError("backward() called twice on the same tape");
  if (!loss.defined() || loss.numel() != 1) {
    throw AutogradError("backward() requires a scalar loss");
  }
  if (!loss.requires_grad()) throw AutogradError("loss does not depend on any tracked tensor");
  consumed_ = true;
  // Stop recording while closures run.
  GradTape* saved = g_active_tape;
  g_active_tape = nullptr;
  auto& seed = detail::grad_buffer(*loss.impl());
  seed[0] += 1.0;
  for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) {
    if (it->output->grad.empty()) continue;
    it->fn();
  }
  g_active_tape = saved;
}

NoGradGuard::NoGradGuard() : saved_(g_active_tape) { g_active_tape = nullptr; }
NoGradGuard::~NoGradGuard() { g_active_tape = saved_; }

// ---------------------------------------------------------------------------

namespace detail {

bool needs_grad(std::initializer_list<const Tensor*> inputs) {
  if (g_active_tape == nullptr) return false;
  for (const Tensor* t : inputs) {
    if (t && t->defined() && t->requires_grad()) return true;
  }
  return false;
}

bool needs_grad(const std::vector<Tensor>& inputs) {
  if (g_active_tape == nullptr) return false;
  for (const Tensor& t : inputs) {
    if (t.defined() && t.requires_grad()) return true;
  }
  return false;
}

DType promote(std::initializer_list<const Tensor*> inputs) {
  bool any = false;
  for (const Tensor* t : inputs) {
    if (!t || !t->defined()) continue;
    any = true;
    if (t->dtype() == DType::kF64) return DType::kF64;
  }
  return any ? DType::kF32 : default_dtype();
}

Tensor make_output(const Shape& shape, std::initializer_list<const Tensor*> inputs) {
  return Tensor::zeros(shape, promote(inputs));
}

Tensor make_output(const Shape& shape, DType dtype) { return Tensor::zeros(shape, dtype); }

void finalize(const Tensor& out, const char* op_name) {
  auto& data = out.impl()->data;
  if (out.dtype() == DType::kF32) {
    for (double& v : data) v = static_cast<double>(static_cast<float>(v));
  }
  if (g_debug_checks) {
    for (double v : data) {
      if (!std::isfinite(v)) {
        throw NumericalError(std::string("non-finite value produced by ") + op_name);
      }
    }
  }
}

void record(const Tensor& out, GradTape::BackwardFn fn) {
  if (g_active_tape == nullptr) return;
  out.impl()->requires_grad = true;
  g_active_tape->record(out.impl_ptr(), std::move(fn));
}

Buffer& grad_buffer(TensorImpl& t) {
  if (t.grad.empty()) t.grad.assign(t.data.size(), 0.0);
  return t.grad;
}

}  // namespace detail
}  // namespace afldm
