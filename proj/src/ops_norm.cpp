#include <cmath>
#include <limits>

#include "conformer/ops.hpp"
#include "ops_internal.hpp"

namespace conformer {
namespace {

void resolve_axis(int& axis, size_t rank) {
  if (axis < 0) axis += static_cast<int>(rank);
  if (axis < 0 || axis >= static_cast<int>(rank))
    throw ShapeError("axis out of range for rank " + std::to_string(rank));
}

}  // namespace

Tensor softmax(const Tensor& x, int axis, Tape* tape) {
  int ax = axis;
  resolve_axis(ax, x.rank());
  int64_t len = x.dim(ax);
  int64_t inner = 1, outer = 1;
  for (size_t i = ax + 1; i < x.rank(); ++i) inner *= x.dim(i);
  for (int i = 0; i < ax; ++i) outer *= x.dim(i);
  Tensor out = Tensor::empty(x.shape(), x.dtype());
  dispatch_dtype(x.dtype(), [&]<class T>() {
    const T* px = x.data<T>();
    T* po = out.data<T>();
    parallel_for(0, outer * inner, [&](int64_t lo, int64_t hi) {
      for (int64_t oi = lo; oi < hi; ++oi) {
        int64_t o = oi / inner, in = oi % inner;
        const T* xs = px + o * len * inner + in;
        T* os = po + o * len * inner + in;
        double mx = -std::numeric_limits<double>::infinity();
        for (int64_t k = 0; k < len; ++k) mx = std::max(mx, static_cast<double>(xs[k * inner]));
        double denom = 0;
        for (int64_t k = 0; k < len; ++k) {
          double e = std::exp(static_cast<double>(xs[k * inner]) - mx);
          os[k * inner] = static_cast<T>(e);
          denom += e;
        }
        double inv = 1.0 / denom;
        for (int64_t k = 0; k < len; ++k)
          os[k * inner] = static_cast<T>(static_cast<double>(os[k * inner]) * inv);
      }
    }, 256);
  });
  if (tape) {
    tape->record(out, [x, out, ax, len, inner, outer](const Tensor& g, Tape& t) {
      // dx = y * (g - sum_k g_k y_k) along the softmax axis
      Tensor gx = Tensor::empty(x.shape(), x.dtype());
      dispatch_dtype(x.dtype(), [&]<class T>() {
        const T* py = out.data<T>();
        const T* pg = g.data<T>();
        T* pgx = gx.data<T>();
        parallel_for(0, outer * inner, [&](int64_t lo, int64_t hi) {
          for (int64_t oi = lo; oi < hi; ++oi) {
            int64_t o = oi / inner, in = oi % inner;
            int64_t base = o * len * inner + in;
            double dot = 0;
            for (int64_t k = 0; k < len; ++k)
              dot += static_cast<double>(pg[base + k * inner]) *
                     static_cast<double>(py[base + k * inner]);
            for (int64_t k = 0; k < len; ++k) {
              double y = py[base + k * inner];
              pgx[base + k * inner] =
                  static_cast<T>(y * (static_cast<double>(pg[base + k * inner]) - dot));
            }
          }
        }, 256);
      });
      t.accumulate(x, std::move(gx));
    });
  }
  return out;
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps,
                  Tape* tape) {
  if (x.rank() < 1) throw ShapeError("layer_norm needs rank >= 1");
  int64_t e = x.dim(x.rank() - 1);
  if (!(gamma.rank() == 1 && gamma.dim(0) == e && beta.rank() == 1 && beta.dim(0) == e))
    throw ShapeError("layer_norm affine params must be [" + std::to_string(e) + "]");
  int64_t rows = x.numel() / e;
  Tensor out = Tensor::empty(x.shape(), x.dtype());
  // per-row inverse stddev and mean, kept for backward
  Tensor stats = Tensor::empty({rows, 2}, DType::f64);
  dispatch_dtype(x.dtype(), [&]<class T>() {
    const T* px = x.data<T>();
    const T* pg = gamma.data<T>();
    const T* pb = beta.data<T>();
    T* po = out.data<T>();
    double* ps = stats.data<double>();
    parallel_for(0, rows, [&](int64_t lo, int64_t hi) {
      for (int64_t r = lo; r < hi; ++r) {
        const T* row = px + r * e;
        double m = 0;
        for (int64_t k = 0; k < e; ++k) m += static_cast<double>(row[k]);
        m /= e;
        double v = 0;
        for (int64_t k = 0; k < e; ++k) {
          double d = static_cast<double>(row[k]) - m;
          v += d * d;
        }
        v /= e;  // biased variance
        double inv = 1.0 / std::sqrt(v + eps);
        ps[r * 2] = m;
        ps[r * 2 + 1] = inv;
        T* orow = po + r * e;
        for (int64_t k = 0; k < e; ++k) {
          double xh = (static_cast<double>(row[k]) - m) * inv;
          orow[k] = static_cast<T>(xh * static_cast<double>(pg[k]) + static_cast<double>(pb[k]));
        }
      }
    }, 64);
  });
  if (tape) {
    tape->record(out, [x, gamma, beta, stats, rows, e](const Tensor& g, Tape& t) {
      Tensor gx = Tensor::empty(x.shape(), x.dtype());
      Tensor gg = Tensor::zeros(gamma.shape(), gamma.dtype());
      Tensor gb = Tensor::zeros(beta.shape(), beta.dtype());
      dispatch_dtype(x.dtype(), [&]<class T>() {
        const T* px = x.data<T>();
        const T* pgam = gamma.data<T>();
        const T* pg = g.data<T>();
        const double* ps = stats.data<double>();
        T* pgx = gx.data<T>();
        T* pgg = gg.data<T>();
        T* pgb = gb.data<T>();
        parallel_for(0, rows, [&](int64_t lo, int64_t hi) {
          for (int64_t r = lo; r < hi; ++r) {
            const T* row = px + r * e;
            const T* grow = pg + r * e;
            T* gxrow = pgx + r * e;
            double m = ps[r * 2], inv = ps[r * 2 + 1];
            double s1 = 0, s2 = 0;  // mean(h), mean(h * xhat) with h = g * gamma
            for (int64_t k = 0; k < e; ++k) {
              double xh = (static_cast<double>(row[k]) - m) * inv;
              double hv = static_cast<double>(grow[k]) * static_cast<double>(pgam[k]);
              s1 += hv;
              s2 += hv * xh;
            }
            s1 /= e;
            s2 /= e;
            for (int64_t k = 0; k < e; ++k) {
              double xh = (static_cast<double>(row[k]) - m) * inv;
              double hv = static_cast<double>(grow[k]) * static_cast<double>(pgam[k]);
              gxrow[k] = static_cast<T>((hv - s1 - xh * s2) * inv);
            }
          }
        }, 64);
        // column reductions for the affine params, rows in ascending order
        parallel_for(0, e, [&](int64_t lo, int64_t hi) {
          for (int64_t k = lo; k < hi; ++k) {
            double ag = 0, ab = 0;
            for (int64_t r = 0; r < rows; ++r) {
              double xh = (static_cast<double>(px[r * e + k]) - ps[r * 2]) * ps[r * 2 + 1];
              double gv = static_cast<double>(pg[r * e + k]);
              ag += gv * xh;
              ab += gv;
            }
            pgg[k] = static_cast<T>(ag);
            pgb[k] = static_cast<T>(ab);
          }
        }, 16);
      });
      t.accumulate(x, std::move(gx));
      t.accumulate(gamma, std::move(gg));
      t.accumulate(beta, std::move(gb));
    });
  }
  return out;
}

Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, Tensor& running_mean,
                  Tensor& running_var, bool training, double eps, double momentum, Tape* tape) {
  if (x.rank() != 4) throw ShapeError("batch_norm expects NCHW, got " + x.shape_str());
  int64_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  auto check1d = [c](const Tensor& t, const char* name) {
    if (!(t.rank() == 1 && t.dim(0) == c))
      throw ShapeError(std::string("batch_norm ") + name + " must be [C]");
  };
  check1d(gamma, "gamma");
  check1d(beta, "beta");
  check1d(running_mean, "running_mean");
  check1d(running_var, "running_var");
  int64_t m = n * h * w;
  int64_t plane = h * w;

  // per-channel mean and inverse stddev used for normalization
  Tensor stats = Tensor::empty({c, 2}, DType::f64);
  dispatch_dtype(x.dtype(), [&]<class T>() {
    const T* px = x.data<T>();
    double* ps = stats.data<double>();
    if (training) {
      if (m < 2) throw ShapeError("batch_norm training needs more than one value per channel");
      T* prm = running_mean.data<T>();
      T* prv = running_var.data<T>();
      parallel_for(0, c, [&](int64_t lo, int64_t hi) {
        for (int64_t ch = lo; ch < hi; ++ch) {
          double s = 0;
          for (int64_t i = 0; i < n; ++i) {
            const T* p = px + (i * c + ch) * plane;
            for (int64_t k = 0; k < plane; ++k) s += static_cast<double>(p[k]);
          }
          double mean = s / m;
          double v = 0;
          for (int64_t i = 0; i < n; ++i) {
            const T* p = px + (i * c + ch) * plane;
            for (int64_t k = 0; k < plane; ++k) {
              double d = static_cast<double>(p[k]) - mean;
              v += d * d;
            }
          }
          double var_b = v / m;                 // normalizes the batch
          double var_u = v / (m - 1);           // feeds the running estimate
          ps[ch * 2] = mean;
          ps[ch * 2 + 1] = 1.0 / std::sqrt(var_b + eps);
          prm[ch] = static_cast<T>((1.0 - momentum) * static_cast<double>(prm[ch]) +
                                   momentum * mean);
          prv[ch] = static_cast<T>((1.0 - momentum) * static_cast<double>(prv[ch]) +
                                   momentum * var_u);
        }
      }, 1);
    } else {
      const T* prm = running_mean.data<T>();
      const T* prv = running_var.data<T>();
      for (int64_t ch = 0; ch < c; ++ch) {
        ps[ch * 2] = static_cast<double>(prm[ch]);
        ps[ch * 2 + 1] = 1.0 / std::sqrt(static_cast<double>(prv[ch]) + eps);
      }
    }
  });

  Tensor out = Tensor::empty(x.shape(), x.dtype());
  dispatch_dtype(x.dtype(), [&]<class T>() {
    const T* px = x.data<T>();
    const T* pgam = gamma.data<T>();
    const T* pbet = beta.data<T>();
    const double* ps = stats.data<double>();
    T* po = out.data<T>();
    parallel_for(0, n * c, [&](int64_t lo, int64_t hi) {
      for (int64_t ic = lo; ic < hi; ++ic) {
        int64_t ch = ic % c;
        double mean = ps[ch * 2], inv = ps[ch * 2 + 1];
        double gsc = static_cast<double>(pgam[ch]) * inv;
        double off = static_cast<double>(pbet[ch]) - mean * gsc;
        const T* p = px + ic * plane;
        T* o = po + ic * plane;
        for (int64_t k = 0; k < plane; ++k)
          o[k] = static_cast<T>(static_cast<double>(p[k]) * gsc + off);
      }
    }, 4);
  });

  if (tape) {
    tape->record(out, [x, gamma, beta, stats, training, n, c, plane, m](const Tensor& g, Tape& t) {
      Tensor gx = Tensor::empty(x.shape(), x.dtype());
      Tensor gg = Tensor::zeros(gamma.shape(), gamma.dtype());
      Tensor gb = Tensor::zeros(beta.shape(), beta.dtype());
      dispatch_dtype(x.dtype(), [&]<class T>() {
        const T* px = x.data<T>();
        const T* pgam = gamma.data<T>();
        const T* pg = g.data<T>();
        const double* ps = stats.data<double>();
        T* pgx = gx.data<T>();
        T* pgg = gg.data<T>();
        T* pgb = gb.data<T>();
        parallel_for(0, c, [&](int64_t lo, int64_t hi) {
          for (int64_t ch = lo; ch < hi; ++ch) {
            double mean = ps[ch * 2], inv = ps[ch * 2 + 1];
            double s1 = 0, s2 = 0;  // sum(g), sum(g * xhat) over the channel
            for (int64_t i = 0; i < n; ++i) {
              const T* gp = pg + (i * c + ch) * plane;
              const T* xp = px + (i * c + ch) * plane;
              for (int64_t k = 0; k < plane; ++k) {
                double gv = static_cast<double>(gp[k]);
                double xh = (static_cast<double>(xp[k]) - mean) * inv;
                s1 += gv;
                s2 += gv * xh;
              }
            }
            pgg[ch] = static_cast<T>(s2);
            pgb[ch] = static_cast<T>(s1);
            double gam_inv = static_cast<double>(pgam[ch]) * inv;
            if (training) {
              double m1 = s1 / m, m2 = s2 / m;
              for (int64_t i = 0; i < n; ++i) {
                const T* gp = pg + (i * c + ch) * plane;
                const T* xp = px + (i * c + ch) * plane;
                T* op = pgx + (i * c + ch) * plane;
                for (int64_t k = 0; k < plane; ++k) {
                  double gv = static_cast<double>(gp[k]);
                  double xh = (static_cast<double>(xp[k]) - mean) * inv;
                  op[k] = static_cast<T>(gam_inv * (gv - m1 - xh * m2));
                }
              }
            } else {
              // running stats are constants, so the jacobian is diagonal
              for (int64_t i = 0; i < n; ++i) {
                const T* gp = pg + (i * c + ch) * plane;
                T* op = pgx + (i * c + ch) * plane;
                for (int64_t k = 0; k < plane; ++k)
                  op[k] = static_cast<T>(static_cast<double>(gp[k]) * gam_inv);
              }
            }
          }
        }, 1);
      });
      t.accumulate(x, std::move(gx));
      t.accumulate(gamma, std::move(gg));
      t.accumulate(beta, std::move(gb));
    });
  }
  return out;
}

}  // namespace conformer
