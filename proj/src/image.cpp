#include "conformer/image.hpp"

#include <zlib.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

#include "conformer/common.hpp"

namespace conformer {

namespace {

constexpr uint8_t kPngSignature[8] = {137, 80, 78, 71, 13, 10, 26, 10};

void put_u32be(std::vector<uint8_t>& out, uint32_t v) {
  out.push_back(static_cast<uint8_t>(v >> 24));
  out.push_back(static_cast<uint8_t>(v >> 16));
  out.push_back(static_cast<uint8_t>(v >> 8));
  out.push_back(static_cast<uint8_t>(v));
}

uint32_t get_u32be(const uint8_t* p) {
  return (static_cast<uint32_t>(p[0]) << 24) | (static_cast<uint32_t>(p[1]) << 16) |
         (static_cast<uint32_t>(p[2]) << 8) | static_cast<uint32_t>(p[3]);
}

// Appends one chunk: length, 4-byte type, payload, CRC over type+payload.
void append_chunk(std::vector<uint8_t>& out, const char type[4],
                  const std::vector<uint8_t>& payload) {
  put_u32be(out, static_cast<uint32_t>(payload.size()));
  size_t crc_start = out.size();
  out.insert(out.end(), type, type + 4);
  out.insert(out.end(), payload.begin(), payload.end());
  uint32_t crc = static_cast<uint32_t>(
      crc32(0, out.data() + crc_start, static_cast<uInt>(4 + payload.size())));
  put_u32be(out, crc);
}

int paeth(int a, int b, int c) {
  int p = a + b - c;
  int pa = std::abs(p - a), pb = std::abs(p - b), pc = std::abs(p - c);
  if (pa <= pb && pa <= pc) return a;
  if (pb <= pc) return b;
  return c;
}

void check_image(const Image& img, const char* who) {
  if (img.height < 1 || img.width < 1)
    throw IoError(std::string(who) + ": empty image");
  if (img.channels != 1 && img.channels != 3)
    throw IoError(std::string(who) + ": channels must be 1 or 3, got " +
                  std::to_string(img.channels));
  size_t want = static_cast<size_t>(img.height) * img.width * img.channels;
  if (img.pixels.size() != want)
    throw IoError(std::string(who) + ": pixel buffer size mismatch");
}

// Geometry kernels share this slice walker: the last two dims are H,W, all
// leading dims are independent planes.
struct Planes {
  int64_t count, h, w;
};

Planes plane_view(const Tensor& t, const char* who) {
  if (t.shape().size() < 2)
    throw ShapeError(std::string(who) + ": need at least 2 dims, got rank " +
                     std::to_string(t.shape().size()));
  int64_t h = t.shape()[t.shape().size() - 2];
  int64_t w = t.shape()[t.shape().size() - 1];
  return {t.numel() / (h * w), h, w};
}

template <class T>
void resize_planes(const T* src, T* dst, Planes in, int64_t oh, int64_t ow) {
  double sy = static_cast<double>(in.h) / static_cast<double>(oh);
  double sx = static_cast<double>(in.w) / static_cast<double>(ow);
  for (int64_t p = 0; p < in.count; ++p) {
    const T* sp = src + p * in.h * in.w;
    T* dp = dst + p * oh * ow;
    for (int64_t y = 0; y < oh; ++y) {
      double fy = (static_cast<double>(y) + 0.5) * sy - 0.5;
      int64_t y0 = static_cast<int64_t>(std::floor(fy));
      double wy = fy - static_cast<double>(y0);
      int64_t y0c = std::clamp<int64_t>(y0, 0, in.h - 1);
      int64_t y1c = std::clamp<int64_t>(y0 + 1, 0, in.h - 1);
      for (int64_t x = 0; x < ow; ++x) {
        double fx = (static_cast<double>(x) + 0.5) * sx - 0.5;
        int64_t x0 = static_cast<int64_t>(std::floor(fx));
        double wx = fx - static_cast<double>(x0);
        int64_t x0c = std::clamp<int64_t>(x0, 0, in.w - 1);
        int64_t x1c = std::clamp<int64_t>(x0 + 1, 0, in.w - 1);
        double top = (1.0 - wx) * sp[y0c * in.w + x0c] + wx * sp[y0c * in.w + x1c];
        double bot = (1.0 - wx) * sp[y1c * in.w + x0c] + wx * sp[y1c * in.w + x1c];
        dp[y * ow + x] = static_cast<T>((1.0 - wy) * top + wy * bot);
      }
    }
  }
}

template <class T>
void rotate_planes(const T* src, T* dst, Planes in, double cosv, double sinv) {
  double cy = static_cast<double>(in.h - 1) / 2.0;
  double cx = static_cast<double>(in.w - 1) / 2.0;
  for (int64_t p = 0; p < in.count; ++p) {
    const T* sp = src + p * in.h * in.w;
    T* dp = dst + p * in.h * in.w;
    for (int64_t y = 0; y < in.h; ++y) {
      for (int64_t x = 0; x < in.w; ++x) {
        // Inverse map: rotate the output coordinate back by -theta.
        double dy = static_cast<double>(y) - cy;
        double dx = static_cast<double>(x) - cx;
        double fy = cy + cosv * dy + sinv * dx;
        double fx = cx - sinv * dy + cosv * dx;
        int64_t y0 = static_cast<int64_t>(std::floor(fy));
        int64_t x0 = static_cast<int64_t>(std::floor(fx));
        double wy = fy - static_cast<double>(y0);
        double wx = fx - static_cast<double>(x0);
        auto tap = [&](int64_t yy, int64_t xx) -> double {
          if (yy < 0 || yy >= in.h || xx < 0 || xx >= in.w) return 0.0;
          return sp[yy * in.w + xx];
        };
        double top = (1.0 - wx) * tap(y0, x0) + wx * tap(y0, x0 + 1);
        double bot = (1.0 - wx) * tap(y0 + 1, x0) + wx * tap(y0 + 1, x0 + 1);
        dp[y * in.w + x] = static_cast<T>((1.0 - wy) * top + wy * bot);
      }
    }
  }
}

// Standard 256-entry viridis lookup table (8-bit RGB).
constexpr uint8_t kViridis[256][3] = {
    {68, 1, 84}, {68, 2, 86}, {69, 4, 87}, {69, 5, 89}, {70, 7, 90}, {70, 8, 92}, {70, 10, 93}, {70, 11, 94},
    {71, 13, 96}, {71, 14, 97}, {71, 16, 99}, {71, 17, 100}, {71, 19, 101}, {72, 20, 103}, {72, 22, 104}, {72, 23, 105},
    {72, 24, 106}, {72, 26, 108}, {72, 27, 109}, {72, 28, 110}, {72, 29, 111}, {72, 31, 112}, {72, 32, 113}, {72, 33, 115},
    {72, 35, 116}, {72, 36, 117}, {72, 37, 118}, {72, 38, 119}, {72, 40, 120}, {72, 41, 121}, {71, 42, 122}, {71, 44, 122},
    {71, 45, 123}, {71, 46, 124}, {71, 47, 125}, {70, 48, 126}, {70, 50, 126}, {70, 51, 127}, {70, 52, 128}, {69, 53, 129},
    {69, 55, 129}, {69, 56, 130}, {68, 57, 131}, {68, 58, 131}, {68, 59, 132}, {67, 61, 132}, {67, 62, 133}, {66, 63, 133},
    {66, 64, 134}, {66, 65, 134}, {65, 66, 135}, {65, 68, 135}, {64, 69, 136}, {64, 70, 136}, {63, 71, 136}, {63, 72, 137},
    {62, 73, 137}, {62, 74, 137}, {62, 76, 138}, {61, 77, 138}, {61, 78, 138}, {60, 79, 138}, {60, 80, 139}, {59, 81, 139},
    {59, 82, 139}, {58, 83, 139}, {58, 84, 140}, {57, 85, 140}, {57, 86, 140}, {56, 88, 140}, {56, 89, 140}, {55, 90, 140},
    {55, 91, 141}, {54, 92, 141}, {54, 93, 141}, {53, 94, 141}, {53, 95, 141}, {52, 96, 141}, {52, 97, 141}, {51, 98, 141},
    {51, 99, 141}, {50, 100, 142}, {50, 101, 142}, {49, 102, 142}, {49, 103, 142}, {49, 104, 142}, {48, 105, 142}, {48, 106, 142},
    {47, 107, 142}, {47, 108, 142}, {46, 109, 142}, {46, 110, 142}, {46, 111, 142}, {45, 112, 142}, {45, 113, 142}, {44, 113, 142},
    {44, 114, 142}, {44, 115, 142}, {43, 116, 142}, {43, 117, 142}, {42, 118, 142}, {42, 119, 142}, {42, 120, 142}, {41, 121, 142},
    {41, 122, 142}, {41, 123, 142}, {40, 124, 142}, {40, 125, 142}, {39, 126, 142}, {39, 127, 142}, {39, 128, 142}, {38, 129, 142},
    {38, 130, 142}, {38, 130, 142}, {37, 131, 142}, {37, 132, 142}, {37, 133, 142}, {36, 134, 142}, {36, 135, 142}, {35, 136, 142},
    {35, 137, 142}, {35, 138, 141}, {34, 139, 141}, {34, 140, 141}, {34, 141, 141}, {33, 142, 141}, {33, 143, 141}, {33, 144, 141},
    {33, 145, 140}, {32, 146, 140}, {32, 146, 140}, {32, 147, 140}, {31, 148, 140}, {31, 149, 139}, {31, 150, 139}, {31, 151, 139},
    {31, 152, 139}, {31, 153, 138}, {31, 154, 138}, {30, 155, 138}, {30, 156, 137}, {30, 157, 137}, {31, 158, 137}, {31, 159, 136},
    {31, 160, 136}, {31, 161, 136}, {31, 161, 135}, {31, 162, 135}, {32, 163, 134}, {32, 164, 134}, {33, 165, 133}, {33, 166, 133},
    {34, 167, 133}, {34, 168, 132}, {35, 169, 131}, {36, 170, 131}, {37, 171, 130}, {37, 172, 130}, {38, 173, 129}, {39, 173, 129},
    {40, 174, 128}, {41, 175, 127}, {42, 176, 127}, {44, 177, 126}, {45, 178, 125}, {46, 179, 124}, {47, 180, 124}, {49, 181, 123},
    {50, 182, 122}, {52, 182, 121}, {53, 183, 121}, {55, 184, 120}, {56, 185, 119}, {58, 186, 118}, {59, 187, 117}, {61, 188, 116},
    {63, 188, 115}, {64, 189, 114}, {66, 190, 113}, {68, 191, 112}, {70, 192, 111}, {72, 193, 110}, {74, 193, 109}, {76, 194, 108},
    {78, 195, 107}, {80, 196, 106}, {82, 197, 105}, {84, 197, 104}, {86, 198, 103}, {88, 199, 101}, {90, 200, 100}, {92, 200, 99},
    {94, 201, 98}, {96, 202, 96}, {99, 203, 95}, {101, 203, 94}, {103, 204, 92}, {105, 205, 91}, {108, 205, 90}, {110, 206, 88},
    {112, 207, 87}, {115, 208, 86}, {117, 208, 84}, {119, 209, 83}, {122, 209, 81}, {124, 210, 80}, {127, 211, 78}, {129, 211, 77},
    {132, 212, 75}, {134, 213, 73}, {137, 213, 72}, {139, 214, 70}, {142, 214, 69}, {144, 215, 67}, {147, 215, 65}, {149, 216, 64},
    {152, 216, 62}, {155, 217, 60}, {157, 217, 59}, {160, 218, 57}, {162, 218, 55}, {165, 219, 54}, {168, 219, 52}, {170, 220, 50},
    {173, 220, 48}, {176, 221, 47}, {178, 221, 45}, {181, 222, 43}, {184, 222, 41}, {186, 222, 40}, {189, 223, 38}, {192, 223, 37},
    {194, 223, 35}, {197, 224, 33}, {200, 224, 32}, {202, 225, 31}, {205, 225, 29}, {208, 225, 28}, {210, 226, 27}, {213, 226, 26},
    {216, 226, 25}, {218, 227, 25}, {221, 227, 24}, {223, 227, 24}, {226, 228, 24}, {229, 228, 25}, {231, 228, 25}, {234, 229, 26},
    {236, 229, 27}, {239, 229, 28}, {241, 229, 29}, {244, 230, 30}, {246, 230, 32}, {248, 230, 33}, {251, 231, 35}, {253, 231, 37},
};

}  // namespace

Image Image::make(int height, int width, int channels) {
  Image img;
  img.height = height;
  img.width = width;
  img.channels = channels;
  img.pixels.assign(static_cast<size_t>(height) * width * channels, 0);
  return img;
}

std::vector<uint8_t> encode_png(const Image& img) {
  check_image(img, "encode_png");
  std::vector<uint8_t> out(kPngSignature, kPngSignature + 8);

  std::vector<uint8_t> ihdr;
  put_u32be(ihdr, static_cast<uint32_t>(img.width));
  put_u32be(ihdr, static_cast<uint32_t>(img.height));
  ihdr.push_back(8);                                      // bit depth
  ihdr.push_back(img.channels == 1 ? 0 : 2);              // color type
  ihdr.push_back(0);                                      // compression
  ihdr.push_back(0);                                      // filter method
  ihdr.push_back(0);                                      // no interlace
  append_chunk(out, "IHDR", ihdr);

  // Filter type 0 on every scanline keeps the byte stream a pure function of
  // the pixels (no per-row filter heuristics).
  size_t rowbytes = static_cast<size_t>(img.width) * img.channels;
  std::vector<uint8_t> raw((rowbytes + 1) * img.height);
  for (int y = 0; y < img.height; ++y) {
    uint8_t* row = raw.data() + static_cast<size_t>(y) * (rowbytes + 1);
    row[0] = 0;
    std::memcpy(row + 1, img.pixels.data() + static_cast<size_t>(y) * rowbytes, rowbytes);
  }
  uLongf bound = compressBound(static_cast<uLong>(raw.size()));
  std::vector<uint8_t> idat(bound);
  uLongf got = bound;
  int rc = compress2(idat.data(), &got, raw.data(), static_cast<uLong>(raw.size()), 6);
  if (rc != Z_OK) throw IoError("encode_png: deflate failed");
  idat.resize(got);
  append_chunk(out, "IDAT", idat);
  append_chunk(out, "IEND", {});
  return out;
}

Image decode_png(const std::vector<uint8_t>& data) {
  return decode_png(data.data(), data.size());
}

Image decode_png(const uint8_t* data, size_t size) {
  if (size < 8 || std::memcmp(data, kPngSignature, 8) != 0)
    throw IoError("decode_png: not a PNG (bad signature)");

  size_t pos = 8;
  bool saw_ihdr = false, saw_iend = false;
  uint32_t width = 0, height = 0;
  int channels = 0;
  std::vector<uint8_t> idat;

  while (pos < size) {
    if (size - pos < 12) throw IoError("decode_png: truncated chunk header");
    uint32_t len = get_u32be(data + pos);
    if (size - pos - 12 < len) throw IoError("decode_png: truncated chunk payload");
    const uint8_t* type = data + pos + 4;
    const uint8_t* payload = data + pos + 8;
    uint32_t want_crc = get_u32be(payload + len);
    uint32_t got_crc = static_cast<uint32_t>(crc32(0, type, static_cast<uInt>(4 + len)));
    if (want_crc != got_crc) throw IoError("decode_png: chunk CRC mismatch");

    if (std::memcmp(type, "IHDR", 4) == 0) {
      if (saw_ihdr || len != 13) throw IoError("decode_png: malformed IHDR");
      saw_ihdr = true;
      width = get_u32be(payload);
      height = get_u32be(payload + 4);
      int bit_depth = payload[8], color_type = payload[9];
      int compression = payload[10], filter = payload[11], interlace = payload[12];
      if (width == 0 || height == 0 || width > (1u << 24) || height > (1u << 24))
        throw IoError("decode_png: bad dimensions");
      if (bit_depth != 8)
        throw IoError("decode_png: unsupported bit depth " + std::to_string(bit_depth) +
                      " (only 8-bit)");
      if (color_type != 0 && color_type != 2)
        throw IoError("decode_png: unsupported color type " + std::to_string(color_type) +
                      " (only grayscale and RGB)");
      if (compression != 0 || filter != 0)
        throw IoError("decode_png: unsupported compression/filter method");
      if (interlace != 0) throw IoError("decode_png: interlaced PNGs unsupported");
      channels = color_type == 0 ? 1 : 3;
    } else if (std::memcmp(type, "IDAT", 4) == 0) {
      if (!saw_ihdr) throw IoError("decode_png: IDAT before IHDR");
      idat.insert(idat.end(), payload, payload + len);
    } else if (std::memcmp(type, "IEND", 4) == 0) {
      saw_iend = true;
      break;
    }
    // All other chunks (ancillary or PLTE-as-suggestion) are skipped.
    pos += 12 + static_cast<size_t>(len);
  }
  if (!saw_ihdr) throw IoError("decode_png: missing IHDR");
  if (!saw_iend) throw IoError("decode_png: missing IEND (truncated file)");
  if (idat.empty()) throw IoError("decode_png: no IDAT data");

  size_t rowbytes = static_cast<size_t>(width) * channels;
  size_t expect = (rowbytes + 1) * height;
  std::vector<uint8_t> raw(expect);
  uLongf got = static_cast<uLongf>(expect);
  int rc = uncompress(raw.data(), &got, idat.data(), static_cast<uLong>(idat.size()));
  if (rc != Z_OK || got != expect) throw IoError("decode_png: corrupt image data stream");

  Image img = Image::make(static_cast<int>(height), static_cast<int>(width), channels);
  int bpp = channels;
  std::vector<uint8_t> prev(rowbytes, 0);
  for (uint32_t y = 0; y < height; ++y) {
    const uint8_t* src = raw.data() + static_cast<size_t>(y) * (rowbytes + 1);
    uint8_t filter = src[0];
    uint8_t* cur = img.pixels.data() + static_cast<size_t>(y) * rowbytes;
    for (size_t i = 0; i < rowbytes; ++i) {
      int x = src[1 + i];
      int a = i >= static_cast<size_t>(bpp) ? cur[i - bpp] : 0;
      int b = prev[i];
      int c = i >= static_cast<size_t>(bpp) ? prev[i - bpp] : 0;
      int v;
      switch (filter) {
        case 0: v = x; break;
        case 1: v = x + a; break;
        case 2: v = x + b; break;
        case 3: v = x + (a + b) / 2; break;
        case 4: v = x + paeth(a, b, c); break;
        default: throw IoError("decode_png: unknown scanline filter");
      }
      cur[i] = static_cast<uint8_t>(v & 0xff);
    }
    std::memcpy(prev.data(), cur, rowbytes);
  }
  return img;
}

void write_png(const std::string& path, const Image& img) {
  std::vector<uint8_t> bytes = encode_png(img);
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("write_png: cannot open " + path);
  f.write(reinterpret_cast<const char*>(bytes.data()),
          static_cast<std::streamsize>(bytes.size()));
  if (!f) throw IoError("write_png: short write to " + path);
}

Image read_png(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("read_png: cannot open " + path);
  std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(f)),
                             std::istreambuf_iterator<char>());
  return decode_png(bytes.data(), bytes.size());
}

Tensor image_to_tensor(const Image& img) {
  check_image(img, "image_to_tensor");
  Tensor t = Tensor::empty({img.channels, img.height, img.width}, DType::f32);
  float* d = t.data<float>();
  for (int c = 0; c < img.channels; ++c)
    for (int y = 0; y < img.height; ++y)
      for (int x = 0; x < img.width; ++x)
        *d++ = static_cast<float>(img.at(y, x, c)) / 255.0f;
  return t;
}

Image tensor_to_image(const Tensor& t) {
  int64_t c, h, w;
  if (t.shape().size() == 2) {
    c = 1, h = t.shape()[0], w = t.shape()[1];
  } else if (t.shape().size() == 3 && (t.shape()[0] == 1 || t.shape()[0] == 3)) {
    c = t.shape()[0], h = t.shape()[1], w = t.shape()[2];
  } else {
    throw ShapeError("tensor_to_image: expected [H,W], [1,H,W] or [3,H,W]");
  }
  Image img = Image::make(static_cast<int>(h), static_cast<int>(w), static_cast<int>(c));
  for (int64_t cc = 0; cc < c; ++cc)
    for (int64_t y = 0; y < h; ++y)
      for (int64_t x = 0; x < w; ++x) {
        double v = t.scalar_at((cc * h + y) * w + x);
        v = std::clamp(v, 0.0, 1.0);
        img.at(static_cast<int>(y), static_cast<int>(x), static_cast<int>(cc)) =
            static_cast<uint8_t>(std::lround(v * 255.0));
      }
  return img;
}

std::array<uint8_t, 3> viridis(double v) {
  if (!(v >= 0.0)) v = 0.0;  // NaN lands at the low end
  if (v > 1.0) v = 1.0;
  int idx = static_cast<int>(std::lround(v * 255.0));
  return {kViridis[idx][0], kViridis[idx][1], kViridis[idx][2]};
}

Tensor bilinear_resize(const Tensor& src, int out_h, int out_w) {
  if (out_h < 1 || out_w < 1) throw ShapeError("bilinear_resize: output size must be positive");
  Planes in = plane_view(src, "bilinear_resize");
  std::vector<int64_t> out_shape = src.shape();
  out_shape[out_shape.size() - 2] = out_h;
  out_shape[out_shape.size() - 1] = out_w;
  Tensor out = Tensor::empty(out_shape, src.dtype());
  dispatch_dtype(src.dtype(), [&]<class T>() {
    resize_planes<T>(src.data<T>(), out.data<T>(), in, out_h, out_w);
  });
  return out;
}

Tensor rotate_bilinear(const Tensor& src, double degrees) {
  Planes in = plane_view(src, "rotate_bilinear");
  double d = std::fmod(degrees, 360.0);
  if (d < 0) d += 360.0;
  double cosv, sinv;
  if (d == 0.0) {
    cosv = 1.0, sinv = 0.0;
  } else if (d == 90.0) {
    cosv = 0.0, sinv = 1.0;
  } else if (d == 180.0) {
    cosv = -1.0, sinv = 0.0;
  } else if (d == 270.0) {
    cosv = 0.0, sinv = -1.0;
  } else {
    double rad = d * 3.14159265358979323846 / 180.0;
    cosv = std::cos(rad);
    sinv = std::sin(rad);
  }
  Tensor out = Tensor::empty(src.shape(), src.dtype());
  dispatch_dtype(src.dtype(), [&]<class T>() {
    rotate_planes<T>(src.data<T>(), out.data<T>(), in, cosv, sinv);
  });
  return out;
}

}  // namespace conformer
