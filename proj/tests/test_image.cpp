#include <zlib.h>

#include <cstdint>
#include <vector>

#include "conformer/image.hpp"
#include "conformer/rng.hpp"
#include "doctest.h"
#include "test_support.hpp"

using namespace conformer;
using testsup::bit_equal;
using testsup::max_abs_diff;
using testsup::random_tensor;

namespace {

// 7x5 RGB PNG written by an external encoder (adaptive per-row filters),
// plus the pixel values it encodes.
const std::vector<uint8_t> kExternalRgbPng = {
    137, 80, 78, 71, 13, 10, 26, 10, 0, 0, 0, 13,
    73, 72, 68, 82, 0, 0, 0, 7, 0, 0, 0, 5,
    8, 2, 0, 0, 0, 6, 248, 97, 143, 0, 0, 0,
    121, 73, 68, 65, 84, 120, 156, 1, 110, 0, 145, 255,
    0, 232, 202, 212, 61, 86, 72, 3, 173, 217, 208, 163,
    23, 164, 226, 221, 54, 225, 96, 81, 81, 144, 0, 63,
    56, 79, 228, 59, 159, 232, 99, 207, 169, 204, 114, 165,
    83, 234, 231, 226, 236, 254, 8, 236, 1, 26, 20, 227,
    51, 85, 65, 26, 61, 12, 119, 162, 43, 73, 204, 235,
    7, 106, 228, 0, 250, 32, 4, 20, 176, 255, 162, 37,
    113, 226, 40, 199, 234, 79, 46, 28, 182, 160, 41, 97,
    254, 232, 52, 43, 0, 53, 238, 184, 150, 28, 145, 217,
    204, 227, 24, 231, 157, 95, 183, 106, 252, 79, 142, 250,
    26, 244, 229, 208, 55, 155, 109, 248, 21, 84, 0, 0,
    0, 0, 73, 69, 78, 68, 174, 66, 96, 130,
};
const std::vector<uint8_t> kExternalRgbPixels = {
    232, 202, 212, 61, 86, 72, 3, 173, 217, 208, 163, 23,
    164, 226, 221, 54, 225, 96, 81, 81, 144, 63, 56, 79,
    228, 59, 159, 232, 99, 207, 169, 204, 114, 165, 83, 234,
    231, 226, 236, 254, 8, 236, 26, 20, 227, 77, 105, 36,
    103, 166, 48, 222, 72, 91, 39, 20, 70, 46, 126, 42,
    46, 120, 74, 46, 196, 226, 239, 233, 149, 209, 17, 92,
    200, 96, 138, 67, 202, 42, 108, 43, 40, 84, 95, 117,
    53, 238, 184, 150, 28, 145, 217, 204, 227, 24, 231, 157,
    95, 183, 106, 252, 79, 142, 250, 26, 244,
};

// 6x4 grayscale PNG from the same external encoder: pixel (y,x) = 10*(6y+x)+3.
const std::vector<uint8_t> kExternalGrayPng = {
    137, 80, 78, 71, 13, 10, 26, 10, 0, 0, 0, 13,
    73, 72, 68, 82, 0, 0, 0, 6, 0, 0, 0, 4,
    8, 0, 0, 0, 0, 136, 111, 17, 159, 0, 0, 0,
    19, 73, 68, 65, 84, 120, 156, 99, 100, 230, 226, 226,
    226, 226, 98, 177, 193, 66, 1, 0, 20, 225, 1, 141,
    166, 199, 244, 125, 0, 0, 0, 0, 73, 69, 78, 68,
    174, 66, 96, 130,
};

// 4x3 16-bit grayscale PNG — a format the decoder must refuse.
const std::vector<uint8_t> kExternal16BitPng = {
    137, 80, 78, 71, 13, 10, 26, 10, 0, 0, 0, 13,
    73, 72, 68, 82, 0, 0, 0, 4, 0, 0, 0, 3,
    16, 0, 0, 0, 0, 193, 15, 45, 89, 0, 0, 0,
    31, 73, 68, 65, 84, 120, 156, 99, 100, 96, 96, 126,
    206, 242, 156, 229, 57, 35, 255, 28, 22, 8, 67, 222,
    130, 229, 57, 203, 115, 230, 231, 0, 112, 190, 9, 71,
    4, 42, 235, 119, 0, 0, 0, 0, 73, 69, 78, 68,
    174, 66, 96, 130,
};

Image random_image(int h, int w, int c, uint64_t seed) {
  Image img = Image::make(h, w, c);
  Rng rng(seed);
  for (auto& px : img.pixels) px = static_cast<uint8_t>(rng.next_below(256));
  return img;
}

// Rewrites the CRC of the chunk starting at byte `pos` (the length field) so
// deliberately patched fixtures stay structurally valid.
void fix_chunk_crc(std::vector<uint8_t>& png, size_t pos) {
  uint32_t len = (png[pos] << 24) | (png[pos + 1] << 16) | (png[pos + 2] << 8) | png[pos + 3];
  uint32_t crc = static_cast<uint32_t>(crc32(0, png.data() + pos + 4, 4 + len));
  png[pos + 8 + len + 0] = static_cast<uint8_t>(crc >> 24);
  png[pos + 8 + len + 1] = static_cast<uint8_t>(crc >> 16);
  png[pos + 8 + len + 2] = static_cast<uint8_t>(crc >> 8);
  png[pos + 8 + len + 3] = static_cast<uint8_t>(crc);
}

}  // namespace

TEST_SUITE_BEGIN("image");

TEST_CASE("png round trip preserves pixels and encoding is deterministic") {
  for (int channels : {1, 3}) {
    Image img = random_image(11, 7, channels, 42 + channels);
    std::vector<uint8_t> bytes = encode_png(img);
    Image back = decode_png(bytes);
    CHECK(back.height == img.height);
    CHECK(back.width == img.width);
    CHECK(back.channels == img.channels);
    CHECK(back.pixels == img.pixels);
    CHECK(encode_png(img) == bytes);
  }
}

TEST_CASE("decoder reproduces externally encoded files exactly") {
  Image rgb = decode_png(kExternalRgbPng);
  CHECK(rgb.height == 5);
  CHECK(rgb.width == 7);
  CHECK(rgb.channels == 3);
  CHECK(rgb.pixels == kExternalRgbPixels);

  Image gray = decode_png(kExternalGrayPng);
  CHECK(gray.height == 4);
  CHECK(gray.width == 6);
  CHECK(gray.channels == 1);
  for (int y = 0; y < 4; ++y)
    for (int x = 0; x < 6; ++x)
      CHECK(gray.at(y, x, 0) == static_cast<uint8_t>(10 * (6 * y + x) + 3));
}

TEST_CASE("decoder exercises every scanline filter type") {
  // One row per filter (0..4), 4-pixel RGB rows, hand-assembled stream.
  const int w = 4, h = 5, c = 3;
  Image img = random_image(h, w, c, 99);
  size_t rowbytes = static_cast<size_t>(w) * c;
  std::vector<uint8_t> raw;
  std::vector<uint8_t> prev(rowbytes, 0);
  for (int y = 0; y < h; ++y) {
    const uint8_t* cur = img.pixels.data() + y * rowbytes;
    raw.push_back(static_cast<uint8_t>(y));  // filter type = row index
    for (size_t i = 0; i < rowbytes; ++i) {
      int a = i >= static_cast<size_t>(c) ? cur[i - c] : 0;
      int b = prev[i];
      int cc = i >= static_cast<size_t>(c) ? prev[i - c] : 0;
      int pred = 0;
      switch (y) {
        case 0: pred = 0; break;
        case 1: pred = a; break;
        case 2: pred = b; break;
        case 3: pred = (a + b) / 2; break;
        case 4: {
          int p = a + b - cc;
          int pa = std::abs(p - a), pb = std::abs(p - b), pc = std::abs(p - cc);
          pred = (pa <= pb && pa <= pc) ? a : (pb <= pc ? b : cc);
          break;
        }
      }
      raw.push_back(static_cast<uint8_t>((cur[i] - pred) & 0xff));
    }
    std::copy(cur, cur + rowbytes, prev.begin());
  }
  // Wrap the filtered stream in a minimal PNG.
  std::vector<uint8_t> png = {137, 80, 78, 71, 13, 10, 26, 10};
  auto chunk = [&](const char type[4], const std::vector<uint8_t>& payload) {
    size_t pos = png.size();
    uint32_t len = static_cast<uint32_t>(payload.size());
    png.push_back(len >> 24); png.push_back(len >> 16); png.push_back(len >> 8); png.push_back(len);
    png.insert(png.end(), type, type + 4);
    png.insert(png.end(), payload.begin(), payload.end());
    png.resize(png.size() + 4);
    fix_chunk_crc(png, pos);
  };
  chunk("IHDR", {0, 0, 0, w, 0, 0, 0, h, 8, 2, 0, 0, 0});
  uLongf bound = compressBound(raw.size());
  std::vector<uint8_t> idat(bound);
  uLongf got = bound;
  REQUIRE(compress2(idat.data(), &got, raw.data(), raw.size(), 6) == Z_OK);
  idat.resize(got);
  chunk("IDAT", idat);
  chunk("IEND", {});

  Image back = decode_png(png);
  CHECK(back.pixels == img.pixels);
}

TEST_CASE("decoder rejects malformed and unsupported files") {
  // Truncation: drop the IEND tail.
  std::vector<uint8_t> cut(kExternalGrayPng.begin(), kExternalGrayPng.end() - 12);
  CHECK_THROWS_AS(decode_png(cut), IoError);

  // Bad signature.
  std::vector<uint8_t> sig = kExternalGrayPng;
  sig[0] ^= 0xff;
  CHECK_THROWS_AS(decode_png(sig), IoError);

  // Corrupted IDAT payload fails the CRC check.
  std::vector<uint8_t> crc = kExternalGrayPng;
  crc[45] ^= 0x01;  // inside the IDAT payload
  CHECK_THROWS_WITH_AS(decode_png(crc), doctest::Contains("CRC"), IoError);

  // 16-bit depth refused.
  CHECK_THROWS_WITH_AS(decode_png(kExternal16BitPng), doctest::Contains("bit depth"), IoError);

  // Palette color type refused (patch the color-type byte, restore the CRC).
  std::vector<uint8_t> pal = kExternalGrayPng;
  pal[25] = 3;            // IHDR color type
  fix_chunk_crc(pal, 8);  // IHDR chunk starts right after the signature
  CHECK_THROWS_WITH_AS(decode_png(pal), doctest::Contains("color type"), IoError);

  CHECK_THROWS_AS(decode_png(std::vector<uint8_t>{}), IoError);
}

TEST_CASE("tensor and image conversions round trip") {
  Image img = random_image(6, 9, 3, 7);
  Tensor t = image_to_tensor(img);
  CHECK(t.shape() == std::vector<int64_t>{3, 6, 9});
  CHECK(t.dtype() == DType::f32);
  CHECK(t.scalar_at(0) == doctest::Approx(img.at(0, 0, 0) / 255.0));
  Image back = tensor_to_image(t);
  CHECK(back.pixels == img.pixels);
  CHECK(back.channels == 3);

  // [H,W] and [1,H,W] both map to grayscale; out-of-range values clamp.
  Tensor g = Tensor::from_values({2, 2}, {-0.5, 0.0, 0.5, 1.5});
  Image gi = tensor_to_image(g);
  CHECK(gi.channels == 1);
  CHECK(gi.at(0, 0, 0) == 0);
  CHECK(gi.at(0, 1, 0) == 0);
  CHECK(gi.at(1, 0, 0) == 128);  // round(0.5*255) = round(127.5)
  CHECK(gi.at(1, 1, 0) == 255);

  CHECK_THROWS_AS(tensor_to_image(Tensor::zeros({2, 4, 4})), ShapeError);
}

TEST_CASE("viridis lookup hits the reference anchors") {
  CHECK(viridis(0.0) == std::array<uint8_t, 3>{68, 1, 84});
  CHECK(viridis(1.0) == std::array<uint8_t, 3>{253, 231, 37});
  CHECK(viridis(0.5) == std::array<uint8_t, 3>{33, 145, 140});
  // Clamping.
  CHECK(viridis(-2.0) == viridis(0.0));
  CHECK(viridis(3.0) == viridis(1.0));
}

TEST_CASE("bilinear resize matches frozen reference values") {
  // Half-pixel centers with edge clamping; references computed with an
  // independent implementation of the same convention.
  Tensor src = Tensor::from_values({1, 1, 2, 3}, {0, 1, 2, 3, 4, 5}, DType::f64);
  Tensor up = bilinear_resize(src, 4, 5);
  const double expect_up[4][5] = {
      {0.00, 0.40, 1.00, 1.60, 2.00},
      {0.75, 1.15, 1.75, 2.35, 2.75},
      {2.25, 2.65, 3.25, 3.85, 4.25},
      {3.00, 3.40, 4.00, 4.60, 5.00},
  };
  for (int y = 0; y < 4; ++y)
    for (int x = 0; x < 5; ++x)
      CHECK(up.scalar_at(y * 5 + x) == doctest::Approx(expect_up[y][x]).epsilon(1e-12));

  Tensor src2 = Tensor::empty({4, 4}, DType::f64);
  for (int i = 0; i < 16; ++i) src2.set_scalar(i, i);
  Tensor down = bilinear_resize(src2, 2, 2);
  const double expect_down[4] = {2.5, 4.5, 10.5, 12.5};
  for (int i = 0; i < 4; ++i)
    CHECK(down.scalar_at(i) == doctest::Approx(expect_down[i]).epsilon(1e-12));
}

TEST_CASE("resize identity, constants, and leading-dim independence") {
  Rng rng(3);
  Tensor t = random_tensor({3, 6, 5}, rng, DType::f32);
  CHECK(bit_equal(bilinear_resize(t, 6, 5), t));

  Tensor c = Tensor::full({2, 4, 4}, 0.75);
  Tensor cu = bilinear_resize(c, 9, 7);
  for (int64_t i = 0; i < cu.numel(); ++i) CHECK(cu.scalar_at(i) == doctest::Approx(0.75));

  // A batch resize equals per-plane resizes.
  Tensor batch = random_tensor({2, 3, 5, 5}, rng, DType::f32);
  Tensor whole = bilinear_resize(batch, 8, 8);
  for (int n = 0; n < 2; ++n)
    for (int ch = 0; ch < 3; ++ch) {
      Tensor plane = Tensor::empty({5, 5}, DType::f32);
      for (int i = 0; i < 25; ++i)
        plane.set_scalar(i, batch.scalar_at(((n * 3 + ch) * 25) + i));
      Tensor pr = bilinear_resize(plane, 8, 8);
      for (int i = 0; i < 64; ++i)
        CHECK(pr.scalar_at(i) == whole.scalar_at(((n * 3 + ch) * 64) + i));
    }
}

TEST_CASE("quadrant rotations are exact index permutations") {
  Rng rng(11);
  Tensor t = random_tensor({3, 9, 9}, rng, DType::f32);

  CHECK(bit_equal(rotate_bilinear(t, 0.0), t));
  CHECK(bit_equal(rotate_bilinear(t, 360.0), t));
  CHECK(bit_equal(rotate_bilinear(t, -360.0), t));

  // 180 degrees = index reversal in both spatial dims.
  Tensor r180 = rotate_bilinear(t, 180.0);
  Tensor flip = Tensor::empty({3, 9, 9}, DType::f32);
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < 9; ++y)
      for (int x = 0; x < 9; ++x)
        flip.set_scalar((c * 9 + y) * 9 + x, t.scalar_at((c * 9 + (8 - y)) * 9 + (8 - x)));
  CHECK(bit_equal(r180, flip));

  // Two quarter turns compose into the half turn, all exact.
  CHECK(bit_equal(rotate_bilinear(rotate_bilinear(t, 90.0), 90.0), r180));
  CHECK(bit_equal(rotate_bilinear(t, -180.0), r180));
}

TEST_CASE("off-grid rotation interpolates within bounds and zero-fills corners") {
  Rng rng(5);
  Tensor t = Tensor::empty({1, 8, 8}, DType::f32);
  for (int i = 0; i < 64; ++i) t.set_scalar(i, 0.5 + 0.4 * rng.uniform(-1.0, 1.0));
  double lo = 1e9, hi = -1e9;
  for (int i = 0; i < 64; ++i) {
    lo = std::min(lo, t.scalar_at(i));
    hi = std::max(hi, t.scalar_at(i));
  }
  Tensor r = rotate_bilinear(t, 60.0);
  for (int i = 0; i < 64; ++i) {
    double v = r.scalar_at(i);
    CHECK(v >= 0.0);  // zero fill can only pull toward 0
    CHECK(v <= hi + 1e-6);
  }
  // The corner maps outside the frame entirely: exact zero.
  CHECK(r.scalar_at(0) == 0.0);
  CHECK(r.scalar_at(63) == 0.0);
  // Deterministic.
  CHECK(bit_equal(rotate_bilinear(t, 60.0), r));
}

TEST_CASE("png file io round trips through disk") {
  Image img = random_image(5, 5, 3, 123);
  std::string path = "test_image_roundtrip.png";
  write_png(path, img);
  Image back = read_png(path);
  CHECK(back.pixels == img.pixels);
  std::remove(path.c_str());
  CHECK_THROWS_AS(read_png("does_not_exist_anywhere.png"), IoError);
}

TEST_SUITE_END();
