#include "conformer/serialize.hpp"

#include <cstring>
#include <fstream>

namespace conformer {
namespace io {

namespace {

template <class U>
void write_le(std::ostream& s, U v) {
  uint8_t buf[sizeof(U)];
  for (size_t i = 0; i < sizeof(U); ++i) buf[i] = static_cast<uint8_t>(v >> (8 * i));
  s.write(reinterpret_cast<const char*>(buf), sizeof(U));
}

template <class U>
U read_le(std::istream& s) {
  uint8_t buf[sizeof(U)];
  s.read(reinterpret_cast<char*>(buf), sizeof(U));
  if (!s) throw IoError("unexpected end of stream");
  U v = 0;
  for (size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(buf[i]) << (8 * i);
  return v;
}

}  // namespace

void write_u8(std::ostream& s, uint8_t v) { write_le<uint8_t>(s, v); }
void write_u16(std::ostream& s, uint16_t v) { write_le<uint16_t>(s, v); }
void write_u32(std::ostream& s, uint32_t v) { write_le<uint32_t>(s, v); }
void write_u64(std::ostream& s, uint64_t v) { write_le<uint64_t>(s, v); }

void write_f32(std::ostream& s, float v) {
  uint32_t bits;
  std::memcpy(&bits, &v, 4);
  write_le<uint32_t>(s, bits);
}

void write_bytes(std::ostream& s, const void* data, size_t n) {
  s.write(reinterpret_cast<const char*>(data), n);
}

uint8_t read_u8(std::istream& s) { return read_le<uint8_t>(s); }
uint16_t read_u16(std::istream& s) { return read_le<uint16_t>(s); }
uint32_t read_u32(std::istream& s) { return read_le<uint32_t>(s); }
uint64_t read_u64(std::istream& s) { return read_le<uint64_t>(s); }

float read_f32(std::istream& s) {
  uint32_t bits = read_le<uint32_t>(s);
  float v;
  std::memcpy(&v, &bits, 4);
  return v;
}

void read_bytes(std::istream& s, void* data, size_t n) {
  s.read(reinterpret_cast<char*>(data), n);
  if (!s) throw IoError("unexpected end of stream");
}

}  // namespace io

namespace {

constexpr char kTensorMagic[4] = {'T', 'N', 'S', 'R'};
constexpr uint32_t kTensorVersion = 1;

// f32 payloads are written value by value through the LE packer; on the
// little-endian hosts we run on this matches a raw memcpy byte for byte.
void write_f32_payload(std::ostream& s, const Tensor& t) {
  if (t.dtype() == DType::f32) {
    const float* p = t.data<float>();
    for (int64_t i = 0; i < t.numel(); ++i) io::write_f32(s, p[i]);
  } else {
    const double* p = t.data<double>();
    for (int64_t i = 0; i < t.numel(); ++i) io::write_f32(s, static_cast<float>(p[i]));
  }
}

}  // namespace

void write_tensor(std::ostream& s, const Tensor& t) {
  io::write_bytes(s, kTensorMagic, 4);
  io::write_u32(s, kTensorVersion);
  if (t.rank() > 255) throw IoError("tensor rank too large for TNSR");
  io::write_u8(s, static_cast<uint8_t>(t.rank()));
  for (int64_t d : t.shape()) io::write_u64(s, static_cast<uint64_t>(d));
  write_f32_payload(s, t);
}

Tensor read_tensor(std::istream& s) {
  char magic[4];
  io::read_bytes(s, magic, 4);
  if (std::memcmp(magic, kTensorMagic, 4) != 0) throw IoError("bad TNSR magic");
  uint32_t version = io::read_u32(s);
  if (version != kTensorVersion)
    throw IoError("unsupported TNSR version " + std::to_string(version));
  uint8_t rank = io::read_u8(s);
  std::vector<int64_t> shape(rank);
  for (auto& d : shape) d = static_cast<int64_t>(io::read_u64(s));
  Tensor t = Tensor::empty(shape, DType::f32);
  float* p = t.data<float>();
  for (int64_t i = 0; i < t.numel(); ++i) p[i] = io::read_f32(s);
  return t;
}

void save_tensor(const std::string& path, const Tensor& t) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open " + path + " for writing");
  write_tensor(f, t);
  if (!f) throw IoError("write failed for " + path);
}

Tensor load_tensor(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open " + path);
  return read_tensor(f);
}

}  // namespace conformer
