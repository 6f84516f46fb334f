#include "conformer/ops.hpp"
#include "ops_internal.hpp"

namespace conformer {
namespace {

using detail::gemm;

struct BatchedShapes {
  std::vector<int64_t> batch;       // broadcast batch dims of the output
  std::vector<int64_t> a_bstride;   // per batch-dim strides into a / b, 0 if broadcast
  std::vector<int64_t> b_bstride;
  int64_t M, N, K, batch_count;
};

BatchedShapes plan_matmul(const Tensor& a, const Tensor& b, bool trans_b) {
  if (a.rank() < 2 || b.rank() < 2)
    throw ShapeError("matmul needs rank >= 2, got " + a.shape_str() + " and " + b.shape_str());
  BatchedShapes p;
  p.M = a.dim(a.rank() - 2);
  p.K = a.dim(a.rank() - 1);
  int64_t bk = trans_b ? b.dim(b.rank() - 1) : b.dim(b.rank() - 2);
  p.N = trans_b ? b.dim(b.rank() - 2) : b.dim(b.rank() - 1);
  if (bk != p.K)
    throw ShapeError("matmul inner dims disagree: " + a.shape_str() + " x " + b.shape_str() +
                     (trans_b ? " (b transposed)" : ""));
  std::vector<int64_t> ab(a.shape().begin(), a.shape().end() - 2);
  std::vector<int64_t> bb(b.shape().begin(), b.shape().end() - 2);
  detail::Broadcast bc(ab, bb);
  p.batch = bc.out_shape;
  p.batch_count = bc.numel;
  // element strides -> matrix strides
  p.a_bstride = bc.a_stride;
  p.b_bstride = bc.b_stride;
  for (auto& s : p.a_bstride) s *= p.M * p.K;
  int64_t bmat = trans_b ? p.N * p.K : p.K * p.N;
  for (auto& s : p.b_bstride) s *= bmat;
  return p;
}

// Offset of batch index i under the given per-dim strides.
int64_t batch_offset(int64_t i, const std::vector<int64_t>& batch,
                     const std::vector<int64_t>& stride) {
  int64_t off = 0;
  for (size_t d = batch.size(); d-- > 0;) {
    off += (i % batch[d]) * stride[d];
    i /= batch[d];
  }
  return off;
}

template <class T>
void run_batched(const T* A, const T* B, T* C, const BatchedShapes& p, bool trans_b) {
  if (p.batch_count == 1) {
    gemm(A, B, C, p.M, p.N, p.K, false, trans_b, /*parallel=*/true);
    return;
  }
  parallel_for(0, p.batch_count, [&](int64_t lo, int64_t hi) {
    for (int64_t i = lo; i < hi; ++i) {
      const T* a = A + batch_offset(i, p.batch, p.a_bstride);
      const T* b = B + batch_offset(i, p.batch, p.b_bstride);
      gemm(a, b, C + i * p.M * p.N, p.M, p.N, p.K, false, trans_b, /*parallel=*/false);
    }
  }, 1);
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b, bool trans_b, Tape* tape) {
  if (a.dtype() != b.dtype()) throw ShapeError("matmul dtype mismatch");
  BatchedShapes p = plan_matmul(a, b, trans_b);
  std::vector<int64_t> out_shape = p.batch;
  out_shape.push_back(p.M);
  out_shape.push_back(p.N);
  Tensor out = Tensor::zeros(out_shape, a.dtype());
  dispatch_dtype(a.dtype(), [&]<class T>() {
    run_batched(a.data<T>(), b.data<T>(), out.data<T>(), p, trans_b);
  });
  if (tape) {
    tape->record(out, [a, b, trans_b](const Tensor& g, Tape& t) {
      // dA = g . op(B)^T and dB = A^T . g (or g^T . A when b was transposed),
      // then batch-broadcast dims fold back by summation.
      Tensor da_full = matmul(g, b, !trans_b);
      t.accumulate(a, detail::reduce_to_shape(da_full, a.shape()));

      BatchedShapes p2 = plan_matmul(a, b, trans_b);
      Tensor db_full;
      if (!trans_b) {
        // dB[k,n] = sum_m A[m,k] g[m,n], batch-wise gemm_tn
        std::vector<int64_t> shp = p2.batch;
        shp.push_back(p2.K);
        shp.push_back(p2.N);
        db_full = Tensor::zeros(shp, a.dtype());
        dispatch_dtype(a.dtype(), [&]<class T>() {
          const T* A = a.data<T>();
          const T* G = g.data<T>();
          T* D = db_full.data<T>();
          parallel_for(0, p2.batch_count, [&](int64_t lo, int64_t hi) {
            for (int64_t i = lo; i < hi; ++i) {
              const T* ai = A + batch_offset(i, p2.batch, p2.a_bstride);
              gemm(ai, G + i * p2.M * p2.N, D + i * p2.K * p2.N, p2.K, p2.N, p2.M, true, false,
                   p2.batch_count == 1);
            }
          }, 1);
        });
      } else {
        // b stored [.., N, K]; dB[n,k] = sum_m g[m,n] A[m,k], gemm_tn(g, A)
        std::vector<int64_t> shp = p2.batch;
        shp.push_back(p2.N);
        shp.push_back(p2.K);
        db_full = Tensor::zeros(shp, a.dtype());
        dispatch_dtype(a.dtype(), [&]<class T>() {
          const T* A = a.data<T>();
          const T* G = g.data<T>();
          T* D = db_full.data<T>();
          parallel_for(0, p2.batch_count, [&](int64_t lo, int64_t hi) {
            for (int64_t i = lo; i < hi; ++i) {
              const T* ai = A + batch_offset(i, p2.batch, p2.a_bstride);
              gemm(G + i * p2.M * p2.N, ai, D + i * p2.N * p2.K, p2.N, p2.K, p2.M, true, false,
                   p2.batch_count == 1);
            }
          }, 1);
        });
      }
      // db_full has full batch dims; fold down to b's own batch shape.
      std::vector<int64_t> bshape = b.shape();
      t.accumulate(b, detail::reduce_to_shape(db_full, bshape));
    });
  }
  return out;
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor* bias, Tape* tape) {
  if (x.dtype() != w.dtype()) throw ShapeError("linear dtype mismatch");
  if (w.rank() != 2) throw ShapeError("linear weight must be [out, in], got " + w.shape_str());
  int64_t in = w.dim(1), out_f = w.dim(0);
  if (x.rank() < 1 || x.dim(x.rank() - 1) != in)
    throw ShapeError("linear input " + x.shape_str() + " incompatible with weight " +
                     w.shape_str());
  if (bias && !(bias->rank() == 1 && bias->dim(0) == out_f))
    throw ShapeError("linear bias must be [out]");
  int64_t rows = x.numel() / in;
  std::vector<int64_t> out_shape = x.shape();
  out_shape.back() = out_f;
  Tensor out = Tensor::zeros(out_shape, x.dtype());
  dispatch_dtype(x.dtype(), [&]<class T>() {
    gemm(x.data<T>(), w.data<T>(), out.data<T>(), rows, out_f, in, false, true, true);
    if (bias) {
      const T* pb = bias->data<T>();
      T* po = out.data<T>();
      parallel_for(0, rows, [&](int64_t lo, int64_t hi) {
        for (int64_t r = lo; r < hi; ++r)
          for (int64_t j = 0; j < out_f; ++j) po[r * out_f + j] += pb[j];
      }, 4096);
    }
  });
  if (tape) {
    bool has_bias = bias != nullptr;
    Tensor bias_t = has_bias ? *bias : Tensor();
    tape->record(out, [x, w, bias_t, has_bias, rows, in, out_f](const Tensor& g, Tape& t) {
      Tensor gx = Tensor::zeros(x.shape(), x.dtype());
      Tensor gw = Tensor::zeros(w.shape(), w.dtype());
      dispatch_dtype(x.dtype(), [&]<class T>() {
        // dX = g . W, dW = g^T . X
        gemm(g.data<T>(), w.data<T>(), gx.data<T>(), rows, in, out_f, false, false, true);
        gemm(g.data<T>(), x.data<T>(), gw.data<T>(), out_f, in, rows, true, false, true);
      });
      t.accumulate(x, std::move(gx));
      t.accumulate(w, std::move(gw));
      if (has_bias) {
        Tensor gb = Tensor::zeros(bias_t.shape(), bias_t.dtype());
        dispatch_dtype(x.dtype(), [&]<class T>() {
          const T* pg = g.data<T>();
          T* pb = gb.data<T>();
          for (int64_t r = 0; r < rows; ++r)
            for (int64_t j = 0; j < out_f; ++j) pb[j] += pg[r * out_f + j];
        });
        t.accumulate(bias_t, std::move(gb));
      }
    });
  }
  return out;
}

}  // namespace conformer
