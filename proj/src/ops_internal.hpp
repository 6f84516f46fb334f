#pragma once

// Shared kernel helpers for the op implementations. Not installed, not public.

#include <cstdint>
#include <vector>

#include "conformer/tensor.hpp"
#include "conformer/threading.hpp"

namespace conformer {
namespace detail {

// C += op(A) * op(B) with row-major dense operands; C is M x N and must be
// initialized by the caller. op(A) is M x K, op(B) is K x N; the trans flags
// describe the stored layout (ta: A stored K x M, tb: B stored N x K).
// The accumulation pattern is fixed (two-row blocks over i, eight interleaved
// k-partials in the tb variant) and parallelism only splits output rows, so
// results are bit-identical for any thread count.
template <class T>
void gemm(const T* A, const T* B, T* C, int64_t M, int64_t N, int64_t K, bool ta, bool tb,
          bool parallel) {
  int64_t grain = parallel ? 4 : M + 1;  // rows per chunk floor; large grain disables the pool
  if (!ta && !tb) {
    parallel_for(0, M, [&](int64_t lo, int64_t hi) {
      int64_t i = lo;
      for (; i + 2 <= hi; i += 2) {
        T* __restrict__ c0 = C + i * N;
        T* __restrict__ c1 = C + (i + 1) * N;
        const T* a0 = A + i * K;
        const T* a1 = A + (i + 1) * K;
        for (int64_t k = 0; k < K; ++k) {
          T av0 = a0[k], av1 = a1[k];
          const T* __restrict__ b = B + k * N;
          for (int64_t j = 0; j < N; ++j) {
            c0[j] += av0 * b[j];
            c1[j] += av1 * b[j];
          }
        }
      }
      for (; i < hi; ++i) {
        T* __restrict__ c = C + i * N;
        const T* a = A + i * K;
        for (int64_t k = 0; k < K; ++k) {
          T av = a[k];
          const T* __restrict__ b = B + k * N;
          for (int64_t j = 0; j < N; ++j) c[j] += av * b[j];
        }
      }
    }, grain);
  } else if (!ta && tb) {
    parallel_for(0, M, [&](int64_t lo, int64_t hi) {
      for (int64_t i = lo; i < hi; ++i) {
        const T* __restrict__ a = A + i * K;
        T* c = C + i * N;
        for (int64_t j = 0; j < N; ++j) {
          const T* __restrict__ b = B + j * K;
          T p[8] = {};
          int64_t k = 0;
          for (; k + 8 <= K; k += 8)
            for (int u = 0; u < 8; ++u) p[u] += a[k + u] * b[k + u];
          T acc = ((p[0] + p[1]) + (p[2] + p[3])) + ((p[4] + p[5]) + (p[6] + p[7]));
          for (; k < K; ++k) acc += a[k] * b[k];
          c[j] += acc;
        }
      }
    }, grain);
  } else if (ta && !tb) {
    parallel_for(0, M, [&](int64_t lo, int64_t hi) {
      int64_t i = lo;
      for (; i + 2 <= hi; i += 2) {
        T* __restrict__ c0 = C + i * N;
        T* __restrict__ c1 = C + (i + 1) * N;
        for (int64_t k = 0; k < K; ++k) {
          T av0 = A[k * M + i], av1 = A[k * M + i + 1];
          const T* __restrict__ b = B + k * N;
          for (int64_t j = 0; j < N; ++j) {
            c0[j] += av0 * b[j];
            c1[j] += av1 * b[j];
          }
        }
      }
      for (; i < hi; ++i) {
        T* __restrict__ c = C + i * N;
        for (int64_t k = 0; k < K; ++k) {
          T av = A[k * M + i];
          const T* __restrict__ b = B + k * N;
          for (int64_t j = 0; j < N; ++j) c[j] += av * b[j];
        }
      }
    }, grain);
  } else {
    throw ContractError("gemm: both operands transposed is unsupported");
  }
}

// Broadcast plan for binary elementwise ops: strides are expressed over the
// output shape, with zero stride on broadcast axes.
struct Broadcast {
  std::vector<int64_t> out_shape;
  std::vector<int64_t> a_stride, b_stride;
  int64_t numel;

  Broadcast(const std::vector<int64_t>& a, const std::vector<int64_t>& b);
};

// Calls fn(out_index, a_index, b_index) for every output element in ascending
// output order.
template <class F>
void broadcast_walk(const Broadcast& bc, F&& fn) {
  size_t r = bc.out_shape.size();
  if (r == 0) {
    fn(int64_t{0}, int64_t{0}, int64_t{0});
    return;
  }
  std::vector<int64_t> idx(r, 0);
  int64_t ai = 0, bi = 0;
  for (int64_t o = 0; o < bc.numel; ++o) {
    fn(o, ai, bi);
    for (size_t d = r; d-- > 0;) {
      idx[d] += 1;
      ai += bc.a_stride[d];
      bi += bc.b_stride[d];
      if (idx[d] < bc.out_shape[d]) break;
      ai -= bc.a_stride[d] * bc.out_shape[d];
      bi -= bc.b_stride[d] * bc.out_shape[d];
      idx[d] = 0;
    }
  }
}

// Sums grad down to shape (inverting a broadcast). Deterministic input order.
Tensor reduce_to_shape(const Tensor& grad, const std::vector<int64_t>& shape);

std::vector<int64_t> contiguous_strides(const std::vector<int64_t>& shape);

}  // namespace detail
}  // namespace conformer
