#include "doctest.h"

#include <functional>

#include "conformer/gradcheck.hpp"
#include "conformer/ops.hpp"
#include "test_support.hpp"

using namespace conformer;
using testsup::fd_grad;
using testsup::max_abs_diff;
using testsup::random_tensor;

TEST_SUITE_BEGIN("autodiff");

namespace {

// Runs fn under a fresh tape, backprops from its scalar output, and compares
// the analytic gradient for each listed tensor against central differences.
void check_grads(const std::function<Tensor(Tape*)>& fn, std::vector<Tensor*> wrt,
                 double tol = 1e-6, double eps = 1e-5) {
  Tape tape;
  Tensor loss = fn(&tape);
  REQUIRE(loss.numel() == 1);
  auto grads = tape.backward(loss);
  for (Tensor* t : wrt) {
    Tensor analytic = grad_or_zeros(grads, *t);
    Tensor numeric = fd_grad([&] { return fn(nullptr).item(); }, *t, eps);
    double err = max_abs_diff(analytic, numeric);
    INFO("tensor id ", t->id(), " err ", err);
    CHECK(err < tol);
  }
}

}  // namespace

TEST_CASE("add, sub, mul with broadcasting") {
  Rng rng(41);
  Tensor a = random_tensor({3, 4}, rng, DType::f64);
  Tensor b = random_tensor({1, 4}, rng, DType::f64);
  Tensor c = random_tensor({3, 1}, rng, DType::f64);
  check_grads([&](Tape* t) { return sum_all(mul(add(a, b, t), sub(a, c, t), t), t); },
              {&a, &b, &c});
}

TEST_CASE("scale and weighted sums") {
  Rng rng(42);
  Tensor a = random_tensor({5}, rng, DType::f64);
  check_grads([&](Tape* t) { return sum_all(scale(a, -2.5, t), t); }, {&a});
}

TEST_CASE("relu and gelu away from the kink") {
  Rng rng(43);
  Tensor a = random_tensor({4, 6}, rng, DType::f64);
  // keep values away from zero so finite differences stay clean
  for (int64_t i = 0; i < a.numel(); ++i) {
    double v = a.scalar_at(i);
    a.set_scalar(i, v >= 0 ? v + 0.05 : v - 0.05);
  }
  check_grads([&](Tape* t) { return sum_all(relu(a, t), t); }, {&a});
  check_grads([&](Tape* t) { return sum_all(gelu(a, t), t); }, {&a});
}

TEST_CASE("matmul gradients, both layouts") {
  Rng rng(44);
  Tensor a = random_tensor({3, 4}, rng, DType::f64);
  Tensor b = random_tensor({4, 5}, rng, DType::f64);
  Tensor bt = random_tensor({5, 4}, rng, DType::f64);
  Tensor wsum = random_tensor({3, 5}, rng, DType::f64);
  check_grads([&](Tape* t) { return sum_all(mul(matmul(a, b, false, t), wsum, t), t); }, {&a, &b});
  check_grads([&](Tape* t) { return sum_all(mul(matmul(a, bt, true, t), wsum, t), t); }, {&a, &bt});
}

TEST_CASE("batched matmul with broadcast weight") {
  Rng rng(45);
  Tensor a = random_tensor({2, 2, 3, 4}, rng, DType::f64);
  Tensor b = random_tensor({4, 3}, rng, DType::f64);
  Tensor w = random_tensor({2, 2, 3, 3}, rng, DType::f64);
  check_grads([&](Tape* t) { return sum_all(mul(matmul(a, b, false, t), w, t), t); }, {&a, &b});
}

TEST_CASE("linear layer gradients") {
  Rng rng(46);
  Tensor x = random_tensor({6, 4}, rng, DType::f64);
  Tensor w = random_tensor({3, 4}, rng, DType::f64);
  Tensor b = random_tensor({3}, rng, DType::f64);
  Tensor mask = random_tensor({6, 3}, rng, DType::f64);
  check_grads([&](Tape* t) { return sum_all(mul(linear(x, w, &b, t), mask, t), t); },
              {&x, &w, &b});
}

TEST_CASE("conv2d gradients") {
  Rng rng(47);
  Tensor x = random_tensor({2, 2, 5, 5}, rng, DType::f64);
  Tensor w = random_tensor({3, 2, 3, 3}, rng, DType::f64);
  Tensor b = random_tensor({3}, rng, DType::f64);
  Tensor mask = random_tensor({2, 3, 3, 3}, rng, DType::f64);
  check_grads(
      [&](Tape* t) { return sum_all(mul(conv2d(x, w, &b, 2, 1, t), mask, t), t); },
      {&x, &w, &b}, 1e-5);
}

TEST_CASE("pooling gradients") {
  Rng rng(48);
  Tensor x = random_tensor({2, 2, 6, 6}, rng, DType::f64);
  Tensor mask = random_tensor({2, 2, 3, 3}, rng, DType::f64);
  check_grads([&](Tape* t) { return sum_all(mul(max_pool2d(x, 2, 2, 0, t), mask, t), t); }, {&x});
  check_grads([&](Tape* t) { return sum_all(mul(avg_pool2d(x, 3, 2, 1, t), mask, t), t); }, {&x});
}

TEST_CASE("resample_nearest gradients") {
  Rng rng(49);
  Tensor x = random_tensor({1, 2, 3, 3}, rng, DType::f64);
  Tensor mask = random_tensor({1, 2, 6, 6}, rng, DType::f64);
  check_grads([&](Tape* t) { return sum_all(mul(resample_nearest(x, 6, 6, t), mask, t), t); },
              {&x});
  Tensor mask2 = random_tensor({1, 2, 2, 2}, rng, DType::f64);
  check_grads([&](Tape* t) { return sum_all(mul(resample_nearest(x, 2, 2, t), mask2, t), t); },
              {&x});
}

TEST_CASE("softmax gradients") {
  Rng rng(50);
  Tensor x = random_tensor({3, 5}, rng, DType::f64, -2, 2);
  Tensor mask = random_tensor({3, 5}, rng, DType::f64);
  check_grads([&](Tape* t) { return sum_all(mul(softmax(x, -1, t), mask, t), t); }, {&x});
}

TEST_CASE("layer_norm gradients") {
  Rng rng(51);
  Tensor x = random_tensor({4, 8}, rng, DType::f64, -2, 2);
  Tensor gamma = random_tensor({8}, rng, DType::f64, 0.5, 1.5);
  Tensor beta = random_tensor({8}, rng, DType::f64, -0.5, 0.5);
  Tensor mask = random_tensor({4, 8}, rng, DType::f64);
  check_grads(
      [&](Tape* t) { return sum_all(mul(layer_norm(x, gamma, beta, 1e-6, t), mask, t), t); },
      {&x, &gamma, &beta}, 1e-5);
}

TEST_CASE("batch_norm gradients in both modes") {
  Rng rng(52);
  Tensor x = random_tensor({3, 2, 4, 4}, rng, DType::f64, -2, 2);
  Tensor gamma = random_tensor({2}, rng, DType::f64, 0.5, 1.5);
  Tensor beta = random_tensor({2}, rng, DType::f64, -0.5, 0.5);
  Tensor mask = random_tensor({3, 2, 4, 4}, rng, DType::f64);
  SUBCASE("training mode, stats restored between probes") {
    // running buffers are copied fresh per evaluation so the fd probes see a
    // pure function of x
    Tensor rm0 = Tensor::zeros({2}, DType::f64);
    Tensor rv0 = Tensor::full({2}, 1.0, DType::f64);
    auto fn = [&](Tape* t) {
      Tensor rm = rm0.clone(), rv = rv0.clone();
      return sum_all(mul(batch_norm(x, gamma, beta, rm, rv, true, 1e-5, 0.1, t), mask, t), t);
    };
    check_grads(fn, {&x, &gamma, &beta}, 1e-5);
  }
  SUBCASE("eval mode") {
    Tensor rm = Tensor::from_values({2}, {0.1, -0.2}, DType::f64);
    Tensor rv = Tensor::from_values({2}, {1.3, 0.8}, DType::f64);
    check_grads(
        [&](Tape* t) {
          return sum_all(mul(batch_norm(x, gamma, beta, rm, rv, false, 1e-5, 0.1, t), mask, t), t);
        },
        {&x, &gamma, &beta}, 1e-5);
  }
}

TEST_CASE("shape op gradients") {
  Rng rng(53);
  Tensor x = random_tensor({2, 3, 4}, rng, DType::f64);
  Tensor mask = random_tensor({4, 6}, rng, DType::f64);
  check_grads([&](Tape* t) { return sum_all(mul(reshape(x, {4, 6}, t), mask, t), t); }, {&x});
  Tensor maskp = random_tensor({4, 2, 3}, rng, DType::f64);
  check_grads([&](Tape* t) { return sum_all(mul(permute(x, {2, 0, 1}, t), maskp, t), t); }, {&x});
  Tensor y = random_tensor({2, 2, 4}, rng, DType::f64);
  Tensor maskc = random_tensor({2, 5, 4}, rng, DType::f64);
  check_grads([&](Tape* t) { return sum_all(mul(concat({x, y}, 1, t), maskc, t), t); }, {&x, &y});
  Tensor masks = random_tensor({2, 2, 4}, rng, DType::f64);
  check_grads([&](Tape* t) { return sum_all(mul(slice(x, 1, 1, 2, t), masks, t), t); }, {&x});
}

TEST_CASE("reduction gradients") {
  Rng rng(54);
  Tensor x = random_tensor({3, 4, 2}, rng, DType::f64);
  Tensor mask = random_tensor({3, 2}, rng, DType::f64);
  check_grads([&](Tape* t) { return sum_all(mul(sum(x, {1}, false, t), mask, t), t); }, {&x});
  check_grads([&](Tape* t) { return sum_all(mul(mean(x, {1}, false, t), mask, t), t); }, {&x});
}

TEST_CASE("cross_entropy gradient") {
  Rng rng(55);
  Tensor logits = random_tensor({4, 5}, rng, DType::f64, -2, 2);
  std::vector<int> labels = {0, 4, 2, 2};
  check_grads([&](Tape* t) { return cross_entropy(logits, labels, t); }, {&logits});
}

TEST_CASE("fan-out accumulates gradients from every consumer") {
  Tensor x = Tensor::from_values({2}, {1.5, -0.5}, DType::f64);
  Tape tape;
  Tensor a = mul(x, x, &tape);        // x^2
  Tensor b = scale(x, 3.0, &tape);    // 3x
  Tensor loss = sum_all(add(a, b, &tape), &tape);
  auto grads = tape.backward(loss);
  Tensor g = grad_or_zeros(grads, x);
  // d/dx (x^2 + 3x) = 2x + 3
  CHECK(g.scalar_at(0) == doctest::Approx(2 * 1.5 + 3).epsilon(1e-12));
  CHECK(g.scalar_at(1) == doctest::Approx(2 * -0.5 + 3).epsilon(1e-12));
}

TEST_CASE("tensors outside the graph get zero gradients") {
  Tensor x = Tensor::from_values({2}, {1, 2}, DType::f64);
  Tensor unused = Tensor::from_values({3}, {1, 2, 3}, DType::f64);
  Tape tape;
  Tensor loss = sum_all(x, &tape);
  auto grads = tape.backward(loss);
  Tensor g = grad_or_zeros(grads, unused);
  REQUIRE(g.shape() == unused.shape());
  for (int64_t i = 0; i < 3; ++i) CHECK(g.scalar_at(i) == 0.0);
}

TEST_CASE("gradient shapes always match their tensors") {
  Rng rng(56);
  Tensor x = random_tensor({2, 3}, rng, DType::f64);
  Tensor w = random_tensor({4, 3}, rng, DType::f64);
  Tape tape;
  Tensor loss = sum_all(linear(x, w, nullptr, &tape), &tape);
  auto grads = tape.backward(loss);
  CHECK(grad_or_zeros(grads, x).shape() == x.shape());
  CHECK(grad_or_zeros(grads, w).shape() == w.shape());
}

TEST_CASE("grad_check passes on a small composite and flags a broken gradient") {
  Rng rng(57);
  ParamStore params;
  Tensor& w = params.add("w", random_tensor({3, 4}, rng, DType::f64));
  Tensor& b = params.add("b", random_tensor({3}, rng, DType::f64));
  params.add("buffer", Tensor::zeros({2}, DType::f64), /*trainable=*/false);
  Tensor x = random_tensor({5, 4}, rng, DType::f64);
  auto fwd = [&](Tape* t) { return sum_all(gelu(linear(x, w, &b, t), t), t); };
  Rng probe(1);
  auto report = grad_check(fwd, params, 1e-4, 1e-4, 64, probe);
  CHECK(report.passed);
  CHECK(report.worst_rel_err < 1e-4);
  CHECK(report.entries.size() == 2);  // buffer skipped

  SUBCASE("a corrupted analytic gradient is caught") {
    auto bad = [&](Tape* t) {
      Tensor loss = sum_all(linear(x, w, &b, t), t);
      if (t) {
        // bogus extra node on the loss claiming d(loss)/d(b) += 1
        t->record(loss, [&b](const Tensor&, Tape& tp) { tp.accumulate(b, ones_like(b)); });
      }
      return loss;
    };
    auto bad_report = grad_check(bad, params, 1e-4, 1e-4, 64, probe);
    CHECK_FALSE(bad_report.passed);
    CHECK(bad_report.worst_name == "b");
  }
  SUBCASE("non-deterministic forward aborts") {
    int calls = 0;
    auto flaky = [&](Tape* t) {
      ++calls;
      return sum_all(scale(x, 1.0 + calls * 1e-12, t), t);
    };
    CHECK_THROWS_AS(grad_check(flaky, params, 1e-4, 1e-4, 8, probe), ContractError);
  }
}

TEST_SUITE_END();
