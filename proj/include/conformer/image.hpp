#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "conformer/tensor.hpp"

namespace conformer {

// 8-bit image, row-major, channels interleaved. channels is 1 (grayscale) or
// 3 (RGB).
struct Image {
  int height = 0;
  int width = 0;
  int channels = 0;
  std::vector<uint8_t> pixels;  // height * width * channels

  static Image make(int height, int width, int channels);
  uint8_t& at(int y, int x, int c) {
    return pixels[static_cast<size_t>((y * width + x) * channels + c)];
  }
  uint8_t at(int y, int x, int c) const {
    return pixels[static_cast<size_t>((y * width + x) * channels + c)];
  }
};

// PNG codec over zlib. Supports 8-bit grayscale and RGB, no interlacing.
// Encoding is deterministic: the same image always yields the same bytes
// (filter type 0 on every scanline, fixed compression level). Decoding
// handles all five standard scanline filters and verifies chunk CRCs.
// Anything else (16-bit, palette, alpha, interlaced) raises IoError.
std::vector<uint8_t> encode_png(const Image& img);
Image decode_png(const uint8_t* data, size_t size);
Image decode_png(const std::vector<uint8_t>& data);
void write_png(const std::string& path, const Image& img);
Image read_png(const std::string& path);

// Conversions between images and float tensors. Tensor values live in [0,1]:
// image_to_tensor divides by 255 and yields a [C,H,W] f32 tensor;
// tensor_to_image accepts [H,W], [1,H,W] or [3,H,W] (f32 or f64), clamps to
// [0,1] and rounds to the nearest byte.
Tensor image_to_tensor(const Image& img);
Image tensor_to_image(const Tensor& t);

// Viridis colormap lookup: v in [0,1] (clamped) to RGB.
std::array<uint8_t, 3> viridis(double v);

// Bilinear resize with half-pixel sample centers and edge clamping. The last
// two dims are treated as H,W; any leading dims are mapped independently, so
// [H,W], [C,H,W] and [N,C,H,W] all work. Resizing to the input size is the
// identity.
Tensor bilinear_resize(const Tensor& src, int out_h, int out_w);

// Rotation by `degrees` counter-clockwise about the image center, bilinear
// resampling, zero fill outside the frame. Quadrant angles (0/90/180/270) use
// exact cos/sin so the sample points land on the integer grid: 180 degrees is
// a pure index reversal, bit-exact. Shape handling matches bilinear_resize.
Tensor rotate_bilinear(const Tensor& src, double degrees);

}  // namespace conformer
