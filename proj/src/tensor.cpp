#include "conformer/tensor.hpp"

#include <atomic>

namespace conformer {
namespace {

std::atomic<int64_t> next_id{1};

}  // namespace

int64_t shape_numel(const std::vector<int64_t>& shape) {
  int64_t n = 1;
  for (int64_t d : shape) {
    if (d < 0) throw ShapeError("negative dimension in shape " + shape_to_string(shape));
    n *= d;
  }
  return n;
}

std::string shape_to_string(const std::vector<int64_t>& shape) {
  std::string s = "[";
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ", ";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

Tensor Tensor::empty(std::vector<int64_t> shape, DType dt) {
  Tensor t;
  t.shape_ = std::move(shape);
  t.numel_ = shape_numel(t.shape_);
  t.dtype_ = dt;
  t.storage_ = std::make_shared<std::vector<uint8_t>>(t.numel_ * dtype_size(dt));
  t.id_ = next_id.fetch_add(1, std::memory_order_relaxed);
  return t;
}

Tensor Tensor::zeros(std::vector<int64_t> shape, DType dt) {
  // vector<uint8_t> value-initializes, so empty() is already zeroed.
  return empty(std::move(shape), dt);
}

Tensor Tensor::full(std::vector<int64_t> shape, double value, DType dt) {
  Tensor t = empty(std::move(shape), dt);
  dispatch_dtype(dt, [&]<class T>() {
    T* p = t.data<T>();
    T v = static_cast<T>(value);
    for (int64_t i = 0; i < t.numel(); ++i) p[i] = v;
  });
  return t;
}

Tensor Tensor::from_values(std::vector<int64_t> shape, const std::vector<double>& values,
                           DType dt) {
  Tensor t = empty(std::move(shape), dt);
  if (static_cast<int64_t>(values.size()) != t.numel())
    throw ShapeError("from_values: " + std::to_string(values.size()) + " values for shape " +
                     t.shape_str());
  dispatch_dtype(dt, [&]<class T>() {
    T* p = t.data<T>();
    for (int64_t i = 0; i < t.numel(); ++i) p[i] = static_cast<T>(values[i]);
  });
  return t;
}

int64_t Tensor::dim(size_t i) const {
  if (i >= shape_.size())
    throw ShapeError("dim " + std::to_string(i) + " out of range for " + shape_str());
  return shape_[i];
}

double Tensor::scalar_at(int64_t flat_index) const {
  if (flat_index < 0 || flat_index >= numel_)
    throw ShapeError("flat index " + std::to_string(flat_index) + " out of range");
  return dispatch_dtype(dtype_, [&]<class T>() -> double {
    return static_cast<double>(data<T>()[flat_index]);
  });
}

void Tensor::set_scalar(int64_t flat_index, double value) {
  if (flat_index < 0 || flat_index >= numel_)
    throw ShapeError("flat index " + std::to_string(flat_index) + " out of range");
  dispatch_dtype(dtype_, [&]<class T>() { data<T>()[flat_index] = static_cast<T>(value); });
}

double Tensor::item() const {
  if (numel_ != 1) throw ShapeError("item() on tensor of shape " + shape_str());
  return scalar_at(0);
}

Tensor Tensor::clone() const {
  Tensor t = empty(shape_, dtype_);
  std::memcpy(t.storage_->data(), storage_->data(), storage_->size());
  return t;
}

Tensor Tensor::astype(DType dt) const {
  if (dt == dtype_) return clone();
  Tensor t = empty(shape_, dt);
  dispatch_dtype(dtype_, [&]<class S>() {
    const S* src = data<S>();
    dispatch_dtype(dt, [&]<class D>() {
      D* dst = t.data<D>();
      for (int64_t i = 0; i < numel_; ++i) dst[i] = static_cast<D>(src[i]);
    });
  });
  return t;
}

Tensor Tensor::view(std::vector<int64_t> new_shape) const {
  if (shape_numel(new_shape) != numel_)
    throw ShapeError("view " + shape_to_string(new_shape) + " incompatible with " + shape_str());
  Tensor t;
  t.shape_ = std::move(new_shape);
  t.numel_ = numel_;
  t.dtype_ = dtype_;
  t.storage_ = storage_;
  t.id_ = next_id.fetch_add(1, std::memory_order_relaxed);
  return t;
}

std::string Tensor::shape_str() const { return shape_to_string(shape_); }

Tensor ones_like(const Tensor& t) { return Tensor::full(t.shape(), 1.0, t.dtype()); }
Tensor zeros_like(const Tensor& t) { return Tensor::zeros(t.shape(), t.dtype()); }

}  // namespace conformer
