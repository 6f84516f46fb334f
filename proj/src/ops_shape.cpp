#include <algorithm>
#include <cstring>
#include <numeric>

#include "conformer/ops.hpp"
#include "ops_internal.hpp"

namespace conformer {

Tensor reshape(const Tensor& x, std::vector<int64_t> shape, Tape* tape) {
  // one -1 dim is inferred
  int64_t known = 1, infer = -1;
  for (size_t i = 0; i < shape.size(); ++i) {
    if (shape[i] == -1) {
      if (infer >= 0) throw ShapeError("reshape: more than one -1 dimension");
      infer = static_cast<int64_t>(i);
    } else {
      known *= shape[i];
    }
  }
  if (infer >= 0) {
    if (known == 0 || x.numel() % known != 0)
      throw ShapeError("reshape: cannot infer dimension for " + x.shape_str());
    shape[infer] = x.numel() / known;
  }
  Tensor out = x.view(std::move(shape));
  if (tape) {
    tape->record(out, [x, out](const Tensor& g, Tape& t) {
      t.accumulate(x, g.view(x.shape()));
    });
  }
  return out;
}

Tensor permute(const Tensor& x, std::vector<int> perm, Tape* tape) {
  size_t r = x.rank();
  if (perm.size() != r) throw ShapeError("permute: perm size must equal rank");
  std::vector<bool> seen(r, false);
  std::vector<int64_t> out_shape(r);
  for (size_t i = 0; i < r; ++i) {
    int p = perm[i];
    if (p < 0 || p >= static_cast<int>(r) || seen[p]) throw ShapeError("permute: invalid perm");
    seen[p] = true;
    out_shape[i] = x.dim(p);
  }
  Tensor out = Tensor::empty(out_shape, x.dtype());
  auto in_strides = detail::contiguous_strides(x.shape());
  // stride in the input for each output axis
  std::vector<int64_t> map_stride(r);
  for (size_t i = 0; i < r; ++i) map_stride[i] = in_strides[perm[i]];
  dispatch_dtype(x.dtype(), [&]<class T>() {
    const T* px = x.data<T>();
    T* po = out.data<T>();
    std::vector<int64_t> idx(r, 0);
    int64_t src = 0;
    for (int64_t o = 0; o < out.numel(); ++o) {
      po[o] = px[src];
      for (size_t d = r; d-- > 0;) {
        idx[d] += 1;
        src += map_stride[d];
        if (idx[d] < out_shape[d]) break;
        src -= map_stride[d] * out_shape[d];
        idx[d] = 0;
      }
    }
  });
  if (tape) {
    std::vector<int> inv(r);
    for (size_t i = 0; i < r; ++i) inv[perm[i]] = static_cast<int>(i);
    tape->record(out, [x, inv](const Tensor& g, Tape& t) {
      t.accumulate(x, permute(g, inv));
    });
  }
  return out;
}

Tensor concat(const std::vector<Tensor>& xs, int axis, Tape* tape) {
  if (xs.empty()) throw ShapeError("concat: no inputs");
  size_t r = xs[0].rank();
  int ax = axis < 0 ? axis + static_cast<int>(r) : axis;
  if (ax < 0 || ax >= static_cast<int>(r)) throw ShapeError("concat: axis out of range");
  std::vector<int64_t> out_shape = xs[0].shape();
  int64_t total = 0;
  for (const Tensor& t : xs) {
    if (t.rank() != r || t.dtype() != xs[0].dtype())
      throw ShapeError("concat: rank or dtype mismatch");
    for (size_t d = 0; d < r; ++d)
      if (d != static_cast<size_t>(ax) && t.dim(d) != out_shape[d])
        throw ShapeError("concat: shape mismatch at dim " + std::to_string(d));
    total += t.dim(ax);
  }
  out_shape[ax] = total;
  Tensor out = Tensor::empty(out_shape, xs[0].dtype());
  int64_t outer = 1, inner = 1;
  for (int d = 0; d < ax; ++d) outer *= out_shape[d];
  for (size_t d = ax + 1; d < r; ++d) inner *= out_shape[d];
  dispatch_dtype(out.dtype(), [&]<class T>() {
    T* po = out.data<T>();
    int64_t off = 0;
    for (const Tensor& t : xs) {
      const T* pt = t.data<T>();
      int64_t len = t.dim(ax) * inner;
      for (int64_t o = 0; o < outer; ++o)
        std::memcpy(po + (o * total + off) * inner, pt + o * len, len * sizeof(T));
      off += t.dim(ax);
    }
  });
  if (tape) {
    tape->record(out, [xs, ax](const Tensor& g, Tape& t) {
      int64_t off = 0;
      for (const Tensor& x : xs) {
        t.accumulate(x, slice(g, ax, off, x.dim(ax)));
        off += x.dim(ax);
      }
    });
  }
  return out;
}

Tensor slice(const Tensor& x, int axis, int64_t start, int64_t length, Tape* tape) {
  size_t r = x.rank();
  int ax = axis < 0 ? axis + static_cast<int>(r) : axis;
  if (ax < 0 || ax >= static_cast<int>(r)) throw ShapeError("slice: axis out of range");
  if (start < 0 || length < 0 || start + length > x.dim(ax))
    throw ShapeError("slice: range [" + std::to_string(start) + ", " +
                     std::to_string(start + length) + ") exceeds dim " +
                     std::to_string(x.dim(ax)));
  std::vector<int64_t> out_shape = x.shape();
  out_shape[ax] = length;
  Tensor out = Tensor::empty(out_shape, x.dtype());
  int64_t outer = 1, inner = 1;
  for (int d = 0; d < ax; ++d) outer *= x.dim(d);
  for (size_t d = ax + 1; d < r; ++d) inner *= x.dim(d);
  int64_t in_len = x.dim(ax);
  dispatch_dtype(x.dtype(), [&]<class T>() {
    const T* px = x.data<T>();
    T* po = out.data<T>();
    for (int64_t o = 0; o < outer; ++o)
      std::memcpy(po + o * length * inner, px + (o * in_len + start) * inner,
                  length * inner * sizeof(T));
  });
  if (tape) {
    tape->record(out, [x, ax, start, length, outer, inner, in_len](const Tensor& g, Tape& t) {
      Tensor gx = Tensor::zeros(x.shape(), x.dtype());
      dispatch_dtype(x.dtype(), [&]<class T>() {
        const T* pg = g.data<T>();
        T* px = gx.data<T>();
        for (int64_t o = 0; o < outer; ++o)
          std::memcpy(px + (o * in_len + start) * inner, pg + o * length * inner,
                      length * inner * sizeof(T));
      });
      t.accumulate(x, std::move(gx));
    });
  }
  return out;
}

namespace {

Tensor reduce_impl(const Tensor& x, const std::vector<int>& axes, bool keepdim, bool take_mean,
                   Tape* tape) {
  size_t r = x.rank();
  std::vector<bool> reduced(r, false);
  for (int a : axes) {
    int ax = a < 0 ? a + static_cast<int>(r) : a;
    if (ax < 0 || ax >= static_cast<int>(r)) throw ShapeError("reduce: axis out of range");
    reduced[ax] = true;
  }
  std::vector<int64_t> out_shape;
  int64_t count = 1;
  for (size_t d = 0; d < r; ++d) {
    if (reduced[d]) {
      count *= x.dim(d);
      if (keepdim) out_shape.push_back(1);
    } else {
      out_shape.push_back(x.dim(d));
    }
  }
  // map input index -> output flat index via per-dim strides (0 on reduced dims)
  auto out_strides_full = [&] {
    std::vector<int64_t> kept;
    for (size_t d = 0; d < r; ++d)
      if (!reduced[d]) kept.push_back(x.dim(d));
    auto ks = detail::contiguous_strides(kept);
    std::vector<int64_t> full(r, 0);
    size_t ki = 0;
    for (size_t d = 0; d < r; ++d)
      if (!reduced[d]) full[d] = ks[ki++];
    return full;
  }();
  Tensor out_d = Tensor::zeros(out_shape.empty() ? std::vector<int64_t>{} : out_shape, DType::f64);
  {
    std::vector<int64_t> idx(r, 0);
    double* po = out_d.data<double>();
    dispatch_dtype(x.dtype(), [&]<class T>() {
      const T* px = x.data<T>();
      int64_t oi = 0;
      for (int64_t i = 0; i < x.numel(); ++i) {
        po[oi] += static_cast<double>(px[i]);
        for (size_t d = r; d-- > 0;) {
          idx[d] += 1;
          oi += out_strides_full[d];
          if (idx[d] < x.dim(d)) break;
          oi -= out_strides_full[d] * x.dim(d);
          idx[d] = 0;
        }
      }
    });
    if (take_mean && count > 0) {
      for (int64_t i = 0; i < out_d.numel(); ++i) po[i] /= count;
    }
  }
  Tensor out = out_d.astype(x.dtype());
  if (tape) {
    double factor = take_mean && count > 0 ? 1.0 / count : 1.0;
    tape->record(out, [x, out_strides_full, factor, r](const Tensor& g, Tape& t) {
      Tensor gx = Tensor::empty(x.shape(), x.dtype());
      dispatch_dtype(x.dtype(), [&]<class T>() {
        const T* pg = g.data<T>();
        T* px = gx.data<T>();
        std::vector<int64_t> idx(r, 0);
        int64_t oi = 0;
        for (int64_t i = 0; i < gx.numel(); ++i) {
          px[i] = static_cast<T>(static_cast<double>(pg[oi]) * factor);
          for (size_t d = r; d-- > 0;) {
            idx[d] += 1;
            oi += out_strides_full[d];
            if (idx[d] < x.dim(d)) break;
            oi -= out_strides_full[d] * x.dim(d);
            idx[d] = 0;
          }
        }
      });
      t.accumulate(x, std::move(gx));
    });
  }
  return out;
}

}  // namespace

Tensor sum(const Tensor& x, const std::vector<int>& axes, bool keepdim, Tape* tape) {
  return reduce_impl(x, axes, keepdim, false, tape);
}

Tensor mean(const Tensor& x, const std::vector<int>& axes, bool keepdim, Tape* tape) {
  return reduce_impl(x, axes, keepdim, true, tape);
}

Tensor sum_all(const Tensor& x, Tape* tape) {
  std::vector<int> axes(x.rank());
  std::iota(axes.begin(), axes.end(), 0);
  return reduce_impl(x, axes, false, false, tape);
}

}  // namespace conformer
