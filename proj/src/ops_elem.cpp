#include <cmath>

#include "conformer/ops.hpp"
#include "ops_internal.hpp"

namespace conformer {
namespace detail {

Broadcast::Broadcast(const std::vector<int64_t>& a, const std::vector<int64_t>& b) {
  size_t r = std::max(a.size(), b.size());
  out_shape.resize(r);
  a_stride.assign(r, 0);
  b_stride.assign(r, 0);
  std::vector<int64_t> ap(r, 1), bp(r, 1);
  for (size_t i = 0; i < a.size(); ++i) ap[r - a.size() + i] = a[i];
  for (size_t i = 0; i < b.size(); ++i) bp[r - b.size() + i] = b[i];
  for (size_t i = 0; i < r; ++i) {
    if (ap[i] == bp[i]) out_shape[i] = ap[i];
    else if (ap[i] == 1) out_shape[i] = bp[i];
    else if (bp[i] == 1) out_shape[i] = ap[i];
    else
      throw ShapeError("cannot broadcast " + shape_to_string(a) + " with " + shape_to_string(b));
  }
  numel = shape_numel(out_shape);
  // contiguous strides over the padded shapes, zeroed where broadcast
  int64_t as = 1, bs = 1;
  for (size_t i = r; i-- > 0;) {
    a_stride[i] = ap[i] == 1 ? 0 : as;
    b_stride[i] = bp[i] == 1 ? 0 : bs;
    as *= ap[i];
    bs *= bp[i];
  }
}

std::vector<int64_t> contiguous_strides(const std::vector<int64_t>& shape) {
  std::vector<int64_t> st(shape.size(), 1);
  for (size_t i = shape.size(); i-- > 1;) st[i - 1] = st[i] * shape[i];
  return st;
}

Tensor reduce_to_shape(const Tensor& grad, const std::vector<int64_t>& shape) {
  if (grad.shape() == shape) return grad;
  Tensor out = Tensor::zeros(shape, grad.dtype());
  Broadcast bc(shape, grad.shape());
  if (bc.out_shape != grad.shape())
    throw ContractError("gradient shape " + grad.shape_str() + " cannot reduce to " +
                        shape_to_string(shape));
  dispatch_dtype(grad.dtype(), [&]<class T>() {
    const T* g = grad.data<T>();
    T* o = out.data<T>();
    broadcast_walk(bc, [&](int64_t, int64_t oi, int64_t gi) { o[oi] += g[gi]; });
  });
  return out;
}

namespace {

template <class FwdT, class BwdA, class BwdB>
Tensor binary_op(const Tensor& a, const Tensor& b, Tape* tape, FwdT fwd, BwdA bwd_a, BwdB bwd_b) {
  if (a.dtype() != b.dtype())
    throw ShapeError(std::string("dtype mismatch: ") + dtype_name(a.dtype()) + " vs " +
                     dtype_name(b.dtype()));
  Broadcast bc(a.shape(), b.shape());
  Tensor out = Tensor::empty(bc.out_shape, a.dtype());
  dispatch_dtype(a.dtype(), [&]<class T>() {
    const T* pa = a.data<T>();
    const T* pb = b.data<T>();
    T* po = out.data<T>();
    if (a.shape() == b.shape()) {
      for (int64_t i = 0; i < out.numel(); ++i) po[i] = fwd(pa[i], pb[i]);
    } else {
      broadcast_walk(bc, [&](int64_t oi, int64_t ai, int64_t bi) { po[oi] = fwd(pa[ai], pb[bi]); });
    }
  });
  if (tape) {
    tape->record(out, [a, b, bwd_a, bwd_b](const Tensor& g, Tape& t) {
      t.accumulate(a, reduce_to_shape(bwd_a(g, a, b), a.shape()));
      t.accumulate(b, reduce_to_shape(bwd_b(g, a, b), b.shape()));
    });
  }
  return out;
}

}  // namespace
}  // namespace detail

using detail::binary_op;

Tensor add(const Tensor& a, const Tensor& b, Tape* tape) {
  return binary_op(
      a, b, tape, [](auto x, auto y) { return x + y; },
      [](const Tensor& g, const Tensor&, const Tensor&) { return g; },
      [](const Tensor& g, const Tensor&, const Tensor&) { return g; });
}

Tensor sub(const Tensor& a, const Tensor& b, Tape* tape) {
  return binary_op(
      a, b, tape, [](auto x, auto y) { return x - y; },
      [](const Tensor& g, const Tensor&, const Tensor&) { return g; },
      [](const Tensor& g, const Tensor&, const Tensor&) { return scale(g, -1.0); });
}

Tensor mul(const Tensor& a, const Tensor& b, Tape* tape) {
  return binary_op(
      a, b, tape, [](auto x, auto y) { return x * y; },
      [](const Tensor& g, const Tensor&, const Tensor& b2) { return mul(g, b2); },
      [](const Tensor& g, const Tensor& a2, const Tensor&) { return mul(g, a2); });
}

Tensor scale(const Tensor& a, double s, Tape* tape) {
  Tensor out = Tensor::empty(a.shape(), a.dtype());
  dispatch_dtype(a.dtype(), [&]<class T>() {
    const T* pa = a.data<T>();
    T* po = out.data<T>();
    T sv = static_cast<T>(s);
    for (int64_t i = 0; i < a.numel(); ++i) po[i] = pa[i] * sv;
  });
  if (tape) {
    tape->record(out, [a, s](const Tensor& g, Tape& t) { t.accumulate(a, scale(g, s)); });
  }
  return out;
}

Tensor relu(const Tensor& x, Tape* tape) {
  Tensor out = Tensor::empty(x.shape(), x.dtype());
  dispatch_dtype(x.dtype(), [&]<class T>() {
    const T* px = x.data<T>();
    T* po = out.data<T>();
    for (int64_t i = 0; i < x.numel(); ++i) po[i] = px[i] > T(0) ? px[i] : T(0);
  });
  if (tape) {
    tape->record(out, [x](const Tensor& g, Tape& t) {
      Tensor gx = Tensor::empty(x.shape(), x.dtype());
      dispatch_dtype(x.dtype(), [&]<class T>() {
        const T* px = x.data<T>();
        const T* pg = g.data<T>();
        T* pgx = gx.data<T>();
        for (int64_t i = 0; i < x.numel(); ++i) pgx[i] = px[i] > T(0) ? pg[i] : T(0);
      });
      t.accumulate(x, std::move(gx));
    });
  }
  return out;
}

Tensor gelu(const Tensor& x, Tape* tape) {
  Tensor out = Tensor::empty(x.shape(), x.dtype());
  dispatch_dtype(x.dtype(), [&]<class T>() {
    const T* px = x.data<T>();
    T* po = out.data<T>();
    for (int64_t i = 0; i < x.numel(); ++i) {
      double v = static_cast<double>(px[i]);
      po[i] = static_cast<T>(0.5 * v * (1.0 + std::erf(v * M_SQRT1_2)));
    }
  });
  if (tape) {
    tape->record(out, [x](const Tensor& g, Tape& t) {
      Tensor gx = Tensor::empty(x.shape(), x.dtype());
      dispatch_dtype(x.dtype(), [&]<class T>() {
        const T* px = x.data<T>();
        const T* pg = g.data<T>();
        T* pgx = gx.data<T>();
        for (int64_t i = 0; i < x.numel(); ++i) {
          double v = static_cast<double>(px[i]);
          double cdf = 0.5 * (1.0 + std::erf(v * M_SQRT1_2));
          double pdf = std::exp(-0.5 * v * v) / std::sqrt(2.0 * M_PI);
          pgx[i] = static_cast<T>(static_cast<double>(pg[i]) * (cdf + v * pdf));
        }
      });
      t.accumulate(x, std::move(gx));
    });
  }
  return out;
}

bool all_finite(const Tensor& t) {
  return dispatch_dtype(t.dtype(), [&]<class T>() {
    const T* p = t.data<T>();
    for (int64_t i = 0; i < t.numel(); ++i)
      if (!std::isfinite(static_cast<double>(p[i]))) return false;
    return true;
  });
}

std::vector<int> argmax_rows(const Tensor& logits) {
  if (logits.rank() != 2) throw ShapeError("argmax_rows expects [N, C], got " + logits.shape_str());
  int64_t n = logits.dim(0), c = logits.dim(1);
  std::vector<int> out(n);
  dispatch_dtype(logits.dtype(), [&]<class T>() {
    const T* p = logits.data<T>();
    for (int64_t i = 0; i < n; ++i) {
      const T* row = p + i * c;
      int best = 0;
      for (int64_t j = 1; j < c; ++j)
        if (row[j] > row[best]) best = static_cast<int>(j);
      out[i] = best;
    }
  });
  return out;
}

}  // namespace conformer
