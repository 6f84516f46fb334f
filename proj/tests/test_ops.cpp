#include "doctest.h"

#include <vector>

#include "conformer/ops.hpp"
#include "test_support.hpp"

using namespace conformer;
using testsup::bit_equal;
using testsup::max_abs_diff;
using testsup::random_tensor;

TEST_SUITE_BEGIN("ops");

TEST_CASE("softmax of [1,2,3] matches frozen values") {
  Tensor x = Tensor::from_values({3}, {1, 2, 3}, DType::f64);
  Tensor y = softmax(x, 0);
  // independently derived: e^k / (e^1 + e^2 + e^3)
  CHECK(y.scalar_at(0) == doctest::Approx(0.09003057317038046).epsilon(1e-12));
  CHECK(y.scalar_at(1) == doctest::Approx(0.24472847105479767).epsilon(1e-12));
  CHECK(y.scalar_at(2) == doctest::Approx(0.6652409557748219).epsilon(1e-12));
  double s = y.scalar_at(0) + y.scalar_at(1) + y.scalar_at(2);
  CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("softmax rows sum to one on random input") {
  Rng rng(11);
  Tensor x = random_tensor({4, 7, 5}, rng, DType::f32, -4, 4);
  Tensor y = softmax(x, -1);
  for (int64_t r = 0; r < 28; ++r) {
    double s = 0;
    for (int64_t k = 0; k < 5; ++k) s += y.scalar_at(r * 5 + k);
    CHECK(s == doctest::Approx(1.0).epsilon(1e-5));
  }
}

TEST_CASE("softmax along a middle axis") {
  Rng rng(12);
  Tensor x = random_tensor({2, 4, 3}, rng, DType::f64, -3, 3);
  Tensor y = softmax(x, 1);
  for (int64_t o = 0; o < 2; ++o)
    for (int64_t in = 0; in < 3; ++in) {
      double s = 0;
      for (int64_t k = 0; k < 4; ++k) s += y.scalar_at(o * 12 + k * 3 + in);
      CHECK(s == doctest::Approx(1.0).epsilon(1e-10));
    }
}

TEST_CASE("layer_norm of [1,2,3,4] with unit affine matches frozen values") {
  Tensor x = Tensor::from_values({1, 4}, {1, 2, 3, 4}, DType::f64);
  Tensor gamma = Tensor::full({4}, 1.0, DType::f64);
  Tensor beta = Tensor::zeros({4}, DType::f64);
  Tensor y = layer_norm(x, gamma, beta, 1e-6);
  // (x - 2.5) / sqrt(1.25 + eps)
  CHECK(y.scalar_at(0) == doctest::Approx(-1.3416401).epsilon(1e-5));
  CHECK(y.scalar_at(1) == doctest::Approx(-0.4472134).epsilon(1e-5));
  CHECK(y.scalar_at(2) == doctest::Approx(0.4472134).epsilon(1e-5));
  CHECK(y.scalar_at(3) == doctest::Approx(1.3416401).epsilon(1e-5));
}

TEST_CASE("layer_norm rows have zero mean and unit variance") {
  Rng rng(13);
  Tensor x = random_tensor({6, 16}, rng, DType::f64, -2, 5);
  Tensor gamma = Tensor::full({16}, 1.0, DType::f64);
  Tensor beta = Tensor::zeros({16}, DType::f64);
  Tensor y = layer_norm(x, gamma, beta, 1e-6);
  for (int64_t r = 0; r < 6; ++r) {
    double m = 0, v = 0;
    for (int64_t k = 0; k < 16; ++k) m += y.scalar_at(r * 16 + k);
    m /= 16;
    for (int64_t k = 0; k < 16; ++k) {
      double d = y.scalar_at(r * 16 + k) - m;
      v += d * d;
    }
    v /= 16;
    CHECK(m == doctest::Approx(0.0).epsilon(1e-9));
    CHECK(v == doctest::Approx(1.0).epsilon(1e-4));
  }
}

TEST_CASE("batch_norm on a two-value channel matches frozen values") {
  // channel values {1, 3}: mean 2, biased var 1 -> normalized to about -1, +1
  Tensor x = Tensor::from_values({2, 1, 1, 1}, {1, 3}, DType::f64);
  Tensor gamma = Tensor::full({1}, 1.0, DType::f64);
  Tensor beta = Tensor::zeros({1}, DType::f64);
  Tensor rm = Tensor::zeros({1}, DType::f64);
  Tensor rv = Tensor::full({1}, 1.0, DType::f64);
  Tensor y = batch_norm(x, gamma, beta, rm, rv, true, 1e-5, 0.1);
  CHECK(y.scalar_at(0) == doctest::Approx(-1.0).epsilon(1e-3));
  CHECK(y.scalar_at(1) == doctest::Approx(1.0).epsilon(1e-3));
  // running stats: 0.9 * old + 0.1 * batch, unbiased variance 2
  CHECK(rm.scalar_at(0) == doctest::Approx(0.2).epsilon(1e-9));
  CHECK(rv.scalar_at(0) == doctest::Approx(0.9 * 1.0 + 0.1 * 2.0).epsilon(1e-9));
}

TEST_CASE("batch_norm eval mode uses running statistics") {
  Tensor x = Tensor::from_values({1, 1, 1, 2}, {5, 7}, DType::f64);
  Tensor gamma = Tensor::full({1}, 2.0, DType::f64);
  Tensor beta = Tensor::full({1}, 0.5, DType::f64);
  Tensor rm = Tensor::full({1}, 5.0, DType::f64);
  Tensor rv = Tensor::full({1}, 4.0, DType::f64);
  Tensor y = batch_norm(x, gamma, beta, rm, rv, false, 0.0, 0.1);
  CHECK(y.scalar_at(0) == doctest::Approx(0.5).epsilon(1e-9));        // (5-5)/2*2+0.5
  CHECK(y.scalar_at(1) == doctest::Approx(2.5).epsilon(1e-9));        // (7-5)/2*2+0.5
  CHECK(rm.scalar_at(0) == doctest::Approx(5.0).epsilon(1e-12));      // untouched
}

TEST_CASE("conv2d matches the loop oracle") {
  Rng rng(21);
  for (auto [stride, pad] : std::vector<std::pair<int, int>>{{1, 0}, {1, 1}, {2, 1}, {2, 3}}) {
    Tensor x = random_tensor({2, 3, 9, 8}, rng, DType::f64);
    Tensor w = random_tensor({4, 3, 3, 3}, rng, DType::f64);
    Tensor b = random_tensor({4}, rng, DType::f64);
    Tensor got = conv2d(x, w, &b, stride, pad);
    Tensor want = testsup::conv2d_ref(x, w, &b, stride, pad);
    CHECK(max_abs_diff(got, want) < 1e-12);
  }
}

TEST_CASE("conv2d 1x1 equals a per-pixel linear map") {
  Rng rng(22);
  Tensor x = random_tensor({1, 5, 4, 4}, rng, DType::f64);
  Tensor w = random_tensor({2, 5, 1, 1}, rng, DType::f64);
  Tensor got = conv2d(x, w, nullptr, 1, 0);
  Tensor want = testsup::conv2d_ref(x, w, nullptr, 1, 0);
  CHECK(max_abs_diff(got, want) < 1e-13);
}

TEST_CASE("conv2d identity kernel reproduces the input") {
  Rng rng(23);
  Tensor x = random_tensor({1, 2, 5, 5}, rng, DType::f32);
  // 3x3 kernels, each output channel passes through its own input channel
  Tensor w = Tensor::zeros({2, 2, 3, 3}, DType::f32);
  w.set_scalar(((0 * 2 + 0) * 3 + 1) * 3 + 1, 1.0);
  w.set_scalar(((1 * 2 + 1) * 3 + 1) * 3 + 1, 1.0);
  Tensor y = conv2d(x, w, nullptr, 1, 1);
  CHECK(max_abs_diff(y, x) == 0.0);
}

TEST_CASE("matmul matches the loop oracle, with and without trans_b") {
  Rng rng(24);
  Tensor a = random_tensor({5, 7}, rng, DType::f64);
  Tensor b = random_tensor({7, 6}, rng, DType::f64);
  CHECK(max_abs_diff(matmul(a, b), testsup::matmul_ref(a, b)) < 1e-12);
  Tensor bt = permute(b, {1, 0});
  CHECK(max_abs_diff(matmul(a, bt, true), testsup::matmul_ref(a, b)) < 1e-12);
}

TEST_CASE("batched matmul broadcasts batch dims") {
  Rng rng(25);
  Tensor a = random_tensor({2, 3, 4, 5}, rng, DType::f64);
  Tensor b = random_tensor({5, 6}, rng, DType::f64);
  Tensor y = matmul(a, b);
  REQUIRE(y.shape() == std::vector<int64_t>{2, 3, 4, 6});
  for (int64_t batch = 0; batch < 6; ++batch) {
    Tensor as = Tensor::zeros({4, 5}, DType::f64);
    for (int64_t i = 0; i < 20; ++i) as.set_scalar(i, a.scalar_at(batch * 20 + i));
    Tensor want = testsup::matmul_ref(as, b);
    for (int64_t i = 0; i < 24; ++i)
      CHECK(y.scalar_at(batch * 24 + i) == doctest::Approx(want.scalar_at(i)).epsilon(1e-10));
  }
}

TEST_CASE("linear applies [out, in] weights plus bias") {
  Tensor x = Tensor::from_values({1, 2}, {3, 5}, DType::f64);
  Tensor w = Tensor::from_values({2, 2}, {1, 0, 0, 1}, DType::f64);
  Tensor b = Tensor::from_values({2}, {0.5, -0.5}, DType::f64);
  Tensor y = linear(x, w, &b);
  CHECK(y.scalar_at(0) == doctest::Approx(3.5));
  CHECK(y.scalar_at(1) == doctest::Approx(4.5));
}

TEST_CASE("pooling matches the window oracle") {
  Rng rng(26);
  Tensor x = random_tensor({1, 1, 6, 6}, rng, DType::f64);
  SUBCASE("max 3x3 stride 2 pad 1") {
    CHECK(max_abs_diff(max_pool2d(x, 3, 2, 1), testsup::pool2d_ref(x, true, 3, 2, 1)) == 0.0);
  }
  SUBCASE("avg 2x2 stride 2 pad 0") {
    CHECK(max_abs_diff(avg_pool2d(x, 2, 2, 0), testsup::pool2d_ref(x, false, 2, 2, 0)) < 1e-14);
  }
  SUBCASE("avg 3x3 stride 1 pad 1 counts padding as zero") {
    CHECK(max_abs_diff(avg_pool2d(x, 3, 1, 1), testsup::pool2d_ref(x, false, 3, 1, 1)) < 1e-14);
  }
}

TEST_CASE("avg pool of a constant image is constant away from borders") {
  Tensor x = Tensor::full({1, 1, 8, 8}, 3.25, DType::f32);
  Tensor y = avg_pool2d(x, 2, 2, 0);
  for (int64_t i = 0; i < y.numel(); ++i) CHECK(y.scalar_at(i) == doctest::Approx(3.25));
}

TEST_CASE("resample_nearest uses floor(dst * in / out)") {
  Tensor x = Tensor::from_values({1, 1, 2, 2}, {1, 2, 3, 4}, DType::f32);
  SUBCASE("2x upsample tiles each source pixel") {
    Tensor y = resample_nearest(x, 4, 4);
    std::vector<double> want = {1, 1, 2, 2, 1, 1, 2, 2, 3, 3, 4, 4, 3, 3, 4, 4};
    for (int64_t i = 0; i < 16; ++i) CHECK(y.scalar_at(i) == doctest::Approx(want[i]));
  }
  SUBCASE("identity size is a copy") {
    Tensor y = resample_nearest(x, 2, 2);
    CHECK(max_abs_diff(x, y) == 0.0);
  }
  SUBCASE("downsample picks top-left of each cell") {
    Tensor big = Tensor::from_values({1, 1, 4, 2}, {1, 2, 3, 4, 5, 6, 7, 8}, DType::f32);
    Tensor y = resample_nearest(big, 2, 2);
    CHECK(y.scalar_at(0) == doctest::Approx(1));
    CHECK(y.scalar_at(1) == doctest::Approx(2));
    CHECK(y.scalar_at(2) == doctest::Approx(5));
    CHECK(y.scalar_at(3) == doctest::Approx(6));
  }
}

TEST_CASE("gelu matches the exact erf form at reference points") {
  Tensor x = Tensor::from_values({5}, {-2, -1, 0, 1, 2}, DType::f64);
  Tensor y = gelu(x);
  CHECK(y.scalar_at(0) == doctest::Approx(-0.04550026389635842).epsilon(1e-10));
  CHECK(y.scalar_at(1) == doctest::Approx(-0.15865525393145707).epsilon(1e-10));
  CHECK(y.scalar_at(2) == doctest::Approx(0.0));
  CHECK(y.scalar_at(3) == doctest::Approx(0.8413447460685429).epsilon(1e-10));
  CHECK(y.scalar_at(4) == doctest::Approx(1.9544997361036416).epsilon(1e-10));
}

TEST_CASE("relu clamps negatives") {
  Tensor x = Tensor::from_values({4}, {-3, -0.5, 0, 2}, DType::f32);
  Tensor y = relu(x);
  CHECK(y.scalar_at(0) == 0.0);
  CHECK(y.scalar_at(1) == 0.0);
  CHECK(y.scalar_at(2) == 0.0);
  CHECK(y.scalar_at(3) == doctest::Approx(2.0));
}

TEST_CASE("cross_entropy frozen values") {
  SUBCASE("logits [2,0] with label 0 gives ln(1+exp(-2))") {
    Tensor logits = Tensor::from_values({1, 2}, {2, 0}, DType::f64);
    Tensor loss = cross_entropy(logits, {0});
    CHECK(loss.item() == doctest::Approx(0.12692801104297263).epsilon(1e-10));
  }
  SUBCASE("uniform logits over 10 classes give ln(10)") {
    Tensor logits = Tensor::full({3, 10}, 0.7, DType::f64);
    Tensor loss = cross_entropy(logits, {0, 5, 9});
    CHECK(loss.item() == doctest::Approx(2.302585092994046).epsilon(1e-10));
  }
  SUBCASE("shift invariance") {
    Rng rng(27);
    Tensor a = random_tensor({4, 6}, rng, DType::f64);
    Tensor b = add(a, Tensor::full({4, 6}, 13.5, DType::f64));
    std::vector<int> labels = {0, 2, 5, 1};
    CHECK(cross_entropy(a, labels).item() ==
          doctest::Approx(cross_entropy(b, labels).item()).epsilon(1e-9));
  }
}

TEST_CASE("broadcast add against explicit expansion") {
  Rng rng(28);
  Tensor a = random_tensor({2, 3, 4}, rng, DType::f64);
  Tensor b = random_tensor({1, 3, 1}, rng, DType::f64);
  Tensor y = add(a, b);
  for (int64_t i = 0; i < 2; ++i)
    for (int64_t j = 0; j < 3; ++j)
      for (int64_t k = 0; k < 4; ++k)
        CHECK(y.scalar_at((i * 3 + j) * 4 + k) ==
              doctest::Approx(a.scalar_at((i * 3 + j) * 4 + k) + b.scalar_at(j)));
}

TEST_CASE("reshape, permute, concat, slice round trips") {
  Rng rng(29);
  Tensor x = random_tensor({2, 3, 4}, rng, DType::f32);
  SUBCASE("reshape keeps values in row-major order") {
    Tensor y = reshape(x, {6, 4});
    CHECK(bit_equal(x.view({6, 4}), y));
    Tensor z = reshape(y, {2, -1});
    CHECK(z.shape() == std::vector<int64_t>{2, 12});
  }
  SUBCASE("permute twice with inverse is identity") {
    Tensor y = permute(x, {2, 0, 1});
    REQUIRE(y.shape() == std::vector<int64_t>{4, 2, 3});
    Tensor z = permute(y, {1, 2, 0});
    CHECK(bit_equal(x, z));
  }
  SUBCASE("concat of slices is identity") {
    Tensor a = slice(x, 1, 0, 1);
    Tensor b = slice(x, 1, 1, 2);
    Tensor y = concat({a, b}, 1);
    CHECK(bit_equal(x, y));
  }
}

TEST_CASE("sum and mean reductions") {
  Tensor x = Tensor::from_values({2, 3}, {1, 2, 3, 4, 5, 6}, DType::f64);
  Tensor s0 = sum(x, {0}, false);
  REQUIRE(s0.shape() == std::vector<int64_t>{3});
  CHECK(s0.scalar_at(0) == doctest::Approx(5));
  CHECK(s0.scalar_at(1) == doctest::Approx(7));
  CHECK(s0.scalar_at(2) == doctest::Approx(9));
  Tensor m1 = mean(x, {1}, true);
  REQUIRE(m1.shape() == std::vector<int64_t>{2, 1});
  CHECK(m1.scalar_at(0) == doctest::Approx(2));
  CHECK(m1.scalar_at(1) == doctest::Approx(5));
  CHECK(sum_all(x).item() == doctest::Approx(21));
}

TEST_CASE("argmax_rows picks the first maximum on ties") {
  Tensor x = Tensor::from_values({2, 3}, {1, 3, 3, 2, 0, 1}, DType::f32);
  auto idx = argmax_rows(x);
  CHECK(idx[0] == 1);
  CHECK(idx[1] == 0);
}

TEST_CASE("shape errors are reported") {
  Tensor a = Tensor::zeros({2, 3});
  Tensor b = Tensor::zeros({4, 5});
  CHECK_THROWS_AS(add(a, b), ShapeError);
  CHECK_THROWS_AS(matmul(a, a), ShapeError);
  Tensor x = Tensor::zeros({1, 2, 4, 4});
  Tensor w = Tensor::zeros({3, 5, 1, 1});
  CHECK_THROWS_AS(conv2d(x, w, nullptr, 1, 0), ShapeError);
  CHECK_THROWS_AS(cross_entropy(Tensor::zeros({2, 3}), {0, 7}), ShapeError);
  CHECK_THROWS_AS(slice(a, 1, 2, 5), ShapeError);
}

TEST_SUITE_END();
