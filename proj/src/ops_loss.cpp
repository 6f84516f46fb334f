#include <cmath>
#include <limits>

#include "conformer/ops.hpp"
#include "ops_internal.hpp"

namespace conformer {

Tensor cross_entropy(const Tensor& logits, const std::vector<int>& labels, Tape* tape) {
  if (logits.rank() != 2)
    throw ShapeError("cross_entropy expects [N, C] logits, got " + logits.shape_str());
  int64_t n = logits.dim(0), c = logits.dim(1);
  if (static_cast<int64_t>(labels.size()) != n)
    throw ShapeError("cross_entropy: " + std::to_string(labels.size()) + " labels for batch " +
                     std::to_string(n));
  for (int l : labels)
    if (l < 0 || l >= c) throw ShapeError("cross_entropy: label " + std::to_string(l) +
                                          " outside [0, " + std::to_string(c) + ")");
  Tensor out = Tensor::empty({}, logits.dtype());
  dispatch_dtype(logits.dtype(), [&]<class T>() {
    const T* p = logits.data<T>();
    double total = 0;
    for (int64_t i = 0; i < n; ++i) {
      const T* row = p + i * c;
      double mx = -std::numeric_limits<double>::infinity();
      for (int64_t j = 0; j < c; ++j) mx = std::max(mx, static_cast<double>(row[j]));
      double denom = 0;
      for (int64_t j = 0; j < c; ++j) denom += std::exp(static_cast<double>(row[j]) - mx);
      double lse = mx + std::log(denom);
      total += lse - static_cast<double>(row[labels[i]]);
    }
    out.data<T>()[0] = static_cast<T>(total / n);
  });
  if (tape) {
    tape->record(out, [logits, labels, n, c](const Tensor& g, Tape& t) {
      // d logits = (softmax - onehot) * g / N
      double gv = g.scalar_at(0);
      Tensor gx = Tensor::empty(logits.shape(), logits.dtype());
      dispatch_dtype(logits.dtype(), [&]<class T>() {
        const T* p = logits.data<T>();
        T* pg = gx.data<T>();
        for (int64_t i = 0; i < n; ++i) {
          const T* row = p + i * c;
          T* grow = pg + i * c;
          double mx = -std::numeric_limits<double>::infinity();
          for (int64_t j = 0; j < c; ++j) mx = std::max(mx, static_cast<double>(row[j]));
          double denom = 0;
          for (int64_t j = 0; j < c; ++j) denom += std::exp(static_cast<double>(row[j]) - mx);
          for (int64_t j = 0; j < c; ++j) {
            double soft = std::exp(static_cast<double>(row[j]) - mx) / denom;
            double delta = j == labels[i] ? 1.0 : 0.0;
            grow[j] = static_cast<T>((soft - delta) * gv / n);
          }
        }
      });
      t.accumulate(logits, std::move(gx));
    });
  }
  return out;
}

}  // namespace conformer
