#include "conformer/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <sstream>

namespace conformer {

std::string GradCheckReport::to_string() const {
  std::ostringstream os;
  for (const auto& e : entries) {
    os << e.name << ": coords=" << e.checked_coords << " max_rel_err=" << e.max_rel_err
       << " max_abs_err=" << e.max_abs_err << "\n";
  }
  os << (passed ? "PASS" : "FAIL") << " worst=" << worst_rel_err;
  if (!worst_name.empty()) os << " at " << worst_name;
  return os.str();
}

GradCheckReport grad_check(const std::function<Tensor(Tape*)>& forward, ParamStore& params,
                           double eps, double tol, int64_t max_coords, Rng& rng) {
  // Determinism gate: two untaped evaluations must agree bitwise.
  Tensor l1 = forward(nullptr);
  Tensor l2 = forward(nullptr);
  if (l1.numel() != 1) throw ContractError("grad_check: forward must return a scalar");
  {
    double a = l1.item(), b = l2.item();
    uint64_t ba, bb;
    std::memcpy(&ba, &a, 8);
    std::memcpy(&bb, &b, 8);
    if (ba != bb) {
      std::ostringstream os;
      os << "grad_check: forward is not deterministic (" << a << " vs " << b
         << "); check for unseeded randomness or training-mode statistics";
      throw ContractError(os.str());
    }
  }

  Tape tape;
  Tensor loss = forward(&tape);
  auto grads = tape.backward(loss);

  GradCheckReport report;
  report.passed = true;
  for (auto& entry : params.entries()) {
    if (!entry.trainable) continue;
    Tensor& t = entry.tensor;
    Tensor analytic = grad_or_zeros(grads, t);
    int64_t n = t.numel();
    std::vector<int64_t> coords;
    if (n <= max_coords) {
      coords.resize(n);
      for (int64_t i = 0; i < n; ++i) coords[i] = i;
    } else {
      for (int64_t i = 0; i < max_coords; ++i)
        coords.push_back(static_cast<int64_t>(rng.next_below(static_cast<uint64_t>(n))));
    }
    GradCheckEntry ge{entry.name, static_cast<int64_t>(coords.size()), 0.0, 0.0};
    for (int64_t ci : coords) {
      double saved = t.scalar_at(ci);
      t.set_scalar(ci, saved + eps);
      double lp = forward(nullptr).item();
      t.set_scalar(ci, saved - eps);
      double lm = forward(nullptr).item();
      t.set_scalar(ci, saved);
      double numeric = (lp - lm) / (2.0 * eps);
      double a = analytic.scalar_at(ci);
      double abs_err = std::abs(a - numeric);
      // Floor well above central-difference round-off (~ulp(loss)/eps ~ 1e-12)
      // so parameters whose true gradient is exactly zero (e.g. biases killed
      // by softmax shift invariance) compare noise against the floor, not 0/0.
      double rel = abs_err / std::max({std::abs(a), std::abs(numeric), 1e-6});
      ge.max_rel_err = std::max(ge.max_rel_err, rel);
      ge.max_abs_err = std::max(ge.max_abs_err, abs_err);
    }
    if (ge.max_rel_err > report.worst_rel_err) {
      report.worst_rel_err = ge.max_rel_err;
      report.worst_name = entry.name;
    }
    if (ge.max_rel_err > tol) report.passed = false;
    report.entries.push_back(ge);
  }
  return report;
}

}  // namespace conformer
