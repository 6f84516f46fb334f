#pragma once

#include <cstring>
#include <memory>
#include <string>
#include <vector>

#include "conformer/common.hpp"

namespace conformer {

// Dense row-major tensor. Storage is shared between copies (copying a Tensor is
// cheap and aliases the same buffer), shapes are immutable after construction,
// and every construction gets a fresh id. Ops treat inputs as read-only; the
// few deliberate in-place mutations (optimizer updates, running statistics) go
// through data() and are documented at the call site.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(std::vector<int64_t> shape, DType dt = DType::f32);
  // Uninitialized storage, for outputs that are fully overwritten.
  static Tensor empty(std::vector<int64_t> shape, DType dt = DType::f32);
  static Tensor full(std::vector<int64_t> shape, double value, DType dt = DType::f32);
  static Tensor from_values(std::vector<int64_t> shape, const std::vector<double>& values,
                            DType dt = DType::f32);

  bool defined() const { return storage_ != nullptr; }
  const std::vector<int64_t>& shape() const { return shape_; }
  int64_t dim(size_t i) const;
  size_t rank() const { return shape_.size(); }
  int64_t numel() const { return numel_; }
  DType dtype() const { return dtype_; }
  int64_t id() const { return id_; }

  template <class T>
  T* data() {
    check_dtype<T>();
    return reinterpret_cast<T*>(storage_->data());
  }
  template <class T>
  const T* data() const {
    check_dtype<T>();
    return reinterpret_cast<const T*>(storage_->data());
  }

  // Element read/write through double, for tests and glue code.
  double scalar_at(int64_t flat_index) const;
  void set_scalar(int64_t flat_index, double value);
  // Value of a single-element tensor.
  double item() const;

  Tensor clone() const;        // deep copy, new id
  Tensor astype(DType dt) const;
  // Same storage, new shape (element count must match), new id.
  Tensor view(std::vector<int64_t> new_shape) const;

  long storage_use_count() const { return storage_.use_count(); }
  bool same_storage(const Tensor& other) const { return storage_ == other.storage_; }

  std::string shape_str() const;

 private:
  template <class T>
  void check_dtype() const {
    constexpr DType want = std::is_same_v<T, float> ? DType::f32 : DType::f64;
    static_assert(std::is_same_v<T, float> || std::is_same_v<T, double>);
    if (!storage_) throw ContractError("access to undefined tensor");
    if (want != dtype_)
      throw ContractError(std::string("tensor dtype is ") + dtype_name(dtype_) +
                          ", accessed as " + dtype_name(want));
  }

  std::vector<int64_t> shape_;
  int64_t numel_ = 0;
  DType dtype_ = DType::f32;
  std::shared_ptr<std::vector<uint8_t>> storage_;
  int64_t id_ = 0;
};

Tensor ones_like(const Tensor& t);
Tensor zeros_like(const Tensor& t);

int64_t shape_numel(const std::vector<int64_t>& shape);
std::string shape_to_string(const std::vector<int64_t>& shape);

}  // namespace conformer
