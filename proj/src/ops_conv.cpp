#include <cmath>
#include <limits>

#include "conformer/ops.hpp"
#include "ops_internal.hpp"

namespace conformer {
namespace {

using detail::gemm;

struct ConvDims {
  int64_t n, cin, h, w, cout, kh, kw, ho, wo;
  int stride, pad;
};

ConvDims conv_dims(const Tensor& x, const Tensor& w, int stride, int pad) {
  if (x.rank() != 4 || w.rank() != 4)
    throw ShapeError("conv2d expects NCHW input and OIHW weight, got " + x.shape_str() + " and " +
                     w.shape_str());
  if (stride < 1 || pad < 0) throw ShapeError("conv2d: bad stride/padding");
  ConvDims d;
  d.n = x.dim(0); d.cin = x.dim(1); d.h = x.dim(2); d.w = x.dim(3);
  d.cout = w.dim(0); d.kh = w.dim(2); d.kw = w.dim(3);
  if (w.dim(1) != d.cin)
    throw ShapeError("conv2d channel mismatch: input " + x.shape_str() + " weight " +
                     w.shape_str());
  d.stride = stride;
  d.pad = pad;
  d.ho = (d.h + 2 * pad - d.kh) / stride + 1;
  d.wo = (d.w + 2 * pad - d.kw) / stride + 1;
  if (d.ho < 1 || d.wo < 1) throw ShapeError("conv2d output would be empty");
  return d;
}

// col is [cin*kh*kw, ho*wo] for one image.
template <class T>
void im2col(const T* x, const ConvDims& d, T* col) {
  int64_t P = d.ho * d.wo;
  for (int64_t c = 0; c < d.cin; ++c) {
    const T* xc = x + c * d.h * d.w;
    for (int64_t ki = 0; ki < d.kh; ++ki) {
      for (int64_t kj = 0; kj < d.kw; ++kj) {
        T* row = col + ((c * d.kh + ki) * d.kw + kj) * P;
        for (int64_t oy = 0; oy < d.ho; ++oy) {
          int64_t iy = oy * d.stride - d.pad + ki;
          T* dst = row + oy * d.wo;
          if (iy < 0 || iy >= d.h) {
            for (int64_t ox = 0; ox < d.wo; ++ox) dst[ox] = T(0);
            continue;
          }
          const T* src = xc + iy * d.w;
          for (int64_t ox = 0; ox < d.wo; ++ox) {
            int64_t ix = ox * d.stride - d.pad + kj;
            dst[ox] = (ix >= 0 && ix < d.w) ? src[ix] : T(0);
          }
        }
      }
    }
  }
}

template <class T>
void col2im_add(const T* col, const ConvDims& d, T* x) {
  int64_t P = d.ho * d.wo;
  for (int64_t c = 0; c < d.cin; ++c) {
    T* xc = x + c * d.h * d.w;
    for (int64_t ki = 0; ki < d.kh; ++ki) {
      for (int64_t kj = 0; kj < d.kw; ++kj) {
        const T* row = col + ((c * d.kh + ki) * d.kw + kj) * P;
        for (int64_t oy = 0; oy < d.ho; ++oy) {
          int64_t iy = oy * d.stride - d.pad + ki;
          if (iy < 0 || iy >= d.h) continue;
          const T* src = row + oy * d.wo;
          T* dst = xc + iy * d.w;
          for (int64_t ox = 0; ox < d.wo; ++ox) {
            int64_t ix = ox * d.stride - d.pad + kj;
            if (ix >= 0 && ix < d.w) dst[ix] += src[ox];
          }
        }
      }
    }
  }
}

template <class T>
void conv_forward(const T* x, const T* w, const T* bias, T* y, const ConvDims& d) {
  int64_t K = d.cin * d.kh * d.kw, P = d.ho * d.wo;
  auto run_one = [&](const T* xi, T* yi, T* col, bool par) {
    im2col(xi, d, col);
    gemm(w, col, yi, d.cout, P, K, false, false, par);
    if (bias)
      for (int64_t c = 0; c < d.cout; ++c) {
        T b = bias[c];
        T* row = yi + c * P;
        for (int64_t p = 0; p < P; ++p) row[p] += b;
      }
  };
  if (d.n == 1) {
    std::vector<T> col(K * P);
    run_one(x, y, col.data(), true);
    return;
  }
  parallel_for(0, d.n, [&](int64_t lo, int64_t hi) {
    std::vector<T> col(K * P);
    for (int64_t i = lo; i < hi; ++i)
      run_one(x + i * d.cin * d.h * d.w, y + i * d.cout * P, col.data(), false);
  }, 1);
}

}  // namespace

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor* bias, int stride, int padding,
              Tape* tape) {
  ConvDims d = conv_dims(x, w, stride, padding);
  if (bias && !(bias->rank() == 1 && bias->dim(0) == d.cout))
    throw ShapeError("conv2d bias must be [Cout]");
  Tensor out = Tensor::zeros({d.n, d.cout, d.ho, d.wo}, x.dtype());
  dispatch_dtype(x.dtype(), [&]<class T>() {
    conv_forward(x.data<T>(), w.data<T>(), bias ? bias->data<T>() : nullptr, out.data<T>(), d);
  });
  if (tape) {
    bool has_bias = bias != nullptr;
    Tensor bias_t = has_bias ? *bias : Tensor();
    tape->record(out, [x, w, bias_t, has_bias, d](const Tensor& g, Tape& t) {
      int64_t K = d.cin * d.kh * d.kw, P = d.ho * d.wo;
      Tensor gx = Tensor::zeros(x.shape(), x.dtype());
      Tensor gw = Tensor::zeros(w.shape(), w.dtype());
      dispatch_dtype(x.dtype(), [&]<class T>() {
        const T* px = x.data<T>();
        const T* pw = w.data<T>();
        const T* pg = g.data<T>();
        T* pgx = gx.data<T>();
        T* pgw = gw.data<T>();
        {
          // dW accumulates over images in index order regardless of thread
          // count; only the inner gemm is parallel.
          std::vector<T> col(K * P);
          for (int64_t i = 0; i < d.n; ++i) {
            im2col(px + i * d.cin * d.h * d.w, d, col.data());
            gemm(pg + i * d.cout * P, col.data(), pgw, d.cout, K, P, false, true, true);
          }
        }
        // dX per image is independent, parallel over images.
        parallel_for(0, d.n, [&](int64_t lo, int64_t hi) {
          std::vector<T> dcol(K * P);
          for (int64_t i = lo; i < hi; ++i) {
            std::fill(dcol.begin(), dcol.end(), T(0));
            gemm(pw, pg + i * d.cout * P, dcol.data(), K, P, d.cout, true, false, d.n == 1);
            col2im_add(dcol.data(), d, pgx + i * d.cin * d.h * d.w);
          }
        }, 1);
      });
      t.accumulate(x, std::move(gx));
      t.accumulate(w, std::move(gw));
      if (has_bias) {
        Tensor gb = Tensor::zeros(bias_t.shape(), bias_t.dtype());
        dispatch_dtype(x.dtype(), [&]<class T>() {
          const T* pg = g.data<T>();
          T* pb = gb.data<T>();
          for (int64_t i = 0; i < d.n; ++i)
            for (int64_t c = 0; c < d.cout; ++c) {
              const T* row = pg + (i * d.cout + c) * P;
              T acc = 0;
              for (int64_t p = 0; p < P; ++p) acc += row[p];
              pb[c] += acc;
            }
        });
        t.accumulate(bias_t, std::move(gb));
      }
    });
  }
  return out;
}

Tensor pool2d(const Tensor& x, PoolKind kind, int kernel, int stride, int padding, Tape* tape) {
  if (x.rank() != 4) throw ShapeError("pool2d expects NCHW, got " + x.shape_str());
  if (kernel < 1 || stride < 1 || padding < 0) throw ShapeError("pool2d: bad kernel/stride/pad");
  // padding < kernel guarantees every window overlaps the input
  if (padding >= kernel) throw ShapeError("pool2d: padding must be smaller than kernel");
  int64_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  int64_t ho = (h + 2 * padding - kernel) / stride + 1;
  int64_t wo = (w + 2 * padding - kernel) / stride + 1;
  if (ho < 1 || wo < 1) throw ShapeError("pool2d output would be empty");
  Tensor out = Tensor::empty({n, c, ho, wo}, x.dtype());
  // argmax is stored per output for the max backward pass
  std::shared_ptr<std::vector<int64_t>> argmax;
  if (kind == PoolKind::max) argmax = std::make_shared<std::vector<int64_t>>(n * c * ho * wo);
  double inv_area = 1.0 / (static_cast<double>(kernel) * kernel);

  dispatch_dtype(x.dtype(), [&]<class T>() {
    const T* px = x.data<T>();
    T* po = out.data<T>();
    parallel_for(0, n * c, [&](int64_t lo, int64_t hi) {
      for (int64_t nc = lo; nc < hi; ++nc) {
        const T* slice_in = px + nc * h * w;
        T* slice_out = po + nc * ho * wo;
        for (int64_t oy = 0; oy < ho; ++oy)
          for (int64_t ox = 0; ox < wo; ++ox) {
            int64_t y0 = oy * stride - padding, x0 = ox * stride - padding;
            if (kind == PoolKind::max) {
              T best = -std::numeric_limits<T>::infinity();
              int64_t best_idx = -1;
              for (int64_t ky = 0; ky < kernel; ++ky)
                for (int64_t kx = 0; kx < kernel; ++kx) {
                  int64_t iy = y0 + ky, ix = x0 + kx;
                  if (iy < 0 || iy >= h || ix < 0 || ix >= w) continue;
                  T v = slice_in[iy * w + ix];
                  if (best_idx < 0 || v > best) {
                    best = v;
                    best_idx = iy * w + ix;
                  }
                }
              slice_out[oy * wo + ox] = best;
              if (argmax) (*argmax)[nc * ho * wo + oy * wo + ox] = best_idx;
            } else {
              double acc = 0;
              for (int64_t ky = 0; ky < kernel; ++ky)
                for (int64_t kx = 0; kx < kernel; ++kx) {
                  int64_t iy = y0 + ky, ix = x0 + kx;
                  if (iy < 0 || iy >= h || ix < 0 || ix >= w) continue;
                  acc += static_cast<double>(slice_in[iy * w + ix]);
                }
              slice_out[oy * wo + ox] = static_cast<T>(acc * inv_area);
            }
          }
      }
    }, 1);
  });

  if (tape) {
    tape->record(out, [x, kind, kernel, stride, padding, n, c, h, w, ho, wo, argmax,
                       inv_area](const Tensor& g, Tape& t) {
      Tensor gx = Tensor::zeros(x.shape(), x.dtype());
      dispatch_dtype(x.dtype(), [&]<class T>() {
        const T* pg = g.data<T>();
        T* pgx = gx.data<T>();
        parallel_for(0, n * c, [&](int64_t lo, int64_t hi) {
          for (int64_t nc = lo; nc < hi; ++nc) {
            const T* gs = pg + nc * ho * wo;
            T* xs = pgx + nc * h * w;
            for (int64_t oy = 0; oy < ho; ++oy)
              for (int64_t ox = 0; ox < wo; ++ox) {
                T gv = gs[oy * wo + ox];
                if (kind == PoolKind::max) {
                  xs[(*argmax)[nc * ho * wo + oy * wo + ox]] += gv;
                } else {
                  int64_t y0 = oy * stride - padding, x0 = ox * stride - padding;
                  T contrib = static_cast<T>(static_cast<double>(gv) * inv_area);
                  for (int64_t ky = 0; ky < kernel; ++ky)
                    for (int64_t kx = 0; kx < kernel; ++kx) {
                      int64_t iy = y0 + ky, ix = x0 + kx;
                      if (iy < 0 || iy >= h || ix < 0 || ix >= w) continue;
                      xs[iy * w + ix] += contrib;
                    }
                }
              }
          }
        }, 1);
      });
      t.accumulate(x, std::move(gx));
    });
  }
  return out;
}

Tensor max_pool2d(const Tensor& x, int kernel, int stride, int padding, Tape* tape) {
  return pool2d(x, PoolKind::max, kernel, stride, padding, tape);
}

Tensor avg_pool2d(const Tensor& x, int kernel, int stride, int padding, Tape* tape) {
  return pool2d(x, PoolKind::avg, kernel, stride, padding, tape);
}

Tensor resample_nearest(const Tensor& x, int out_h, int out_w, Tape* tape) {
  if (x.rank() != 4) throw ShapeError("resample_nearest expects NCHW, got " + x.shape_str());
  if (out_h < 1 || out_w < 1) throw ShapeError("resample_nearest: bad output size");
  int64_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  Tensor out = Tensor::empty({n, c, out_h, out_w}, x.dtype());
  std::vector<int64_t> ymap(out_h), xmap(out_w);
  for (int64_t y = 0; y < out_h; ++y) ymap[y] = y * h / out_h;
  for (int64_t x2 = 0; x2 < out_w; ++x2) xmap[x2] = x2 * w / out_w;
  dispatch_dtype(x.dtype(), [&]<class T>() {
    const T* px = x.data<T>();
    T* po = out.data<T>();
    parallel_for(0, n * c, [&](int64_t lo, int64_t hi) {
      for (int64_t nc = lo; nc < hi; ++nc) {
        const T* in = px + nc * h * w;
        T* o = po + nc * out_h * out_w;
        for (int64_t y = 0; y < out_h; ++y) {
          const T* row = in + ymap[y] * w;
          for (int64_t x2 = 0; x2 < out_w; ++x2) o[y * out_w + x2] = row[xmap[x2]];
        }
      }
    }, 1);
  });
  if (tape) {
    tape->record(out, [x, n, c, h, w, out_h, out_w, ymap, xmap](const Tensor& g, Tape& t) {
      Tensor gx = Tensor::zeros(x.shape(), x.dtype());
      dispatch_dtype(x.dtype(), [&]<class T>() {
        const T* pg = g.data<T>();
        T* po = gx.data<T>();
        parallel_for(0, n * c, [&](int64_t lo, int64_t hi) {
          for (int64_t nc = lo; nc < hi; ++nc) {
            const T* gs = pg + nc * out_h * out_w;
            T* xs = po + nc * h * w;
            for (int64_t y = 0; y < out_h; ++y)
              for (int64_t x2 = 0; x2 < out_w; ++x2)
                xs[ymap[y] * w + xmap[x2]] += gs[y * out_w + x2];
          }
        }, 1);
      });
      t.accumulate(x, std::move(gx));
    });
  }
  return out;
}

}  // namespace conformer
