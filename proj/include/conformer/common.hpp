#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace conformer {

// Error taxonomy. Everything user-facing derives from Error so the CLI can
// map exceptions onto exit codes in one place.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Mismatched tensor shapes, invalid axes, non-divisible resolutions and the like.
struct ShapeError : Error {
  using Error::Error;
};

// Bad or inconsistent configuration (unknown JSON keys, invalid field values).
struct ConfigError : Error {
  using Error::Error;
};

// Broken internal contract: non-determinism detected, non-finite loss, misuse of
// an op outside its documented domain.
struct ContractError : Error {
  using Error::Error;
};

// File IO and format problems (truncated checkpoints, bad magic, PNG errors).
struct IoError : Error {
  using Error::Error;
};

enum class DType : uint8_t { f32 = 0, f64 = 1 };

inline size_t dtype_size(DType dt) { return dt == DType::f32 ? 4 : 8; }
inline const char* dtype_name(DType dt) { return dt == DType::f32 ? "f32" : "f64"; }

// Run a templated callable with the C++ type matching a runtime dtype.
template <class F>
decltype(auto) dispatch_dtype(DType dt, F&& f) {
  if (dt == DType::f32) return f.template operator()<float>();
  return f.template operator()<double>();
}

}  // namespace conformer
