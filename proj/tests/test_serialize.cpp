#include "doctest.h"

#include <cstdio>
#include <fstream>
#include <sstream>

#include "conformer/serialize.hpp"
#include "test_support.hpp"

using namespace conformer;

TEST_SUITE_BEGIN("serialize");

namespace {

std::string temp_path(const char* name) {
  return std::string("serialize_test_") + name + ".bin";
}

std::string file_bytes(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  std::ostringstream os;
  os << f.rdbuf();
  return os.str();
}

}  // namespace

TEST_CASE("TNSR header layout is exactly as specified") {
  Tensor t = Tensor::from_values({2, 3}, {1, 2, 3, 4, 5, 6}, DType::f32);
  std::ostringstream os(std::ios::binary);
  write_tensor(os, t);
  std::string b = os.str();
  // magic, u32 version, u8 rank, 2 u64 dims, 6 f32 values
  REQUIRE(b.size() == 4 + 4 + 1 + 16 + 24);
  CHECK(b.substr(0, 4) == "TNSR");
  CHECK(static_cast<uint8_t>(b[4]) == 1);  // version LE low byte
  CHECK(static_cast<uint8_t>(b[5]) == 0);
  CHECK(static_cast<uint8_t>(b[8]) == 2);  // rank
  CHECK(static_cast<uint8_t>(b[9]) == 2);  // dim0 LE
  CHECK(static_cast<uint8_t>(b[17]) == 3); // dim1 LE
  // first payload float is 1.0f = 0x3f800000 little endian
  CHECK(static_cast<uint8_t>(b[25]) == 0x00);
  CHECK(static_cast<uint8_t>(b[26]) == 0x00);
  CHECK(static_cast<uint8_t>(b[27]) == 0x80);
  CHECK(static_cast<uint8_t>(b[28]) == 0x3f);
}

TEST_CASE("tensor save/load round trip preserves bits") {
  Rng rng(61);
  Tensor t = testsup::random_tensor({3, 4, 5}, rng, DType::f32, -10, 10);
  auto path = temp_path("roundtrip");
  save_tensor(path, t);
  Tensor u = load_tensor(path);
  CHECK(u.shape() == t.shape());
  CHECK(testsup::bit_equal(t, u));
  // saving again yields byte-identical files
  auto path2 = temp_path("roundtrip2");
  save_tensor(path2, t);
  CHECK(file_bytes(path) == file_bytes(path2));
  std::remove(path.c_str());
  std::remove(path2.c_str());
}

TEST_CASE("f64 tensors are cast to f32 payloads") {
  Tensor t = Tensor::from_values({2}, {1.5, -2.25}, DType::f64);
  auto path = temp_path("cast");
  save_tensor(path, t);
  Tensor u = load_tensor(path);
  CHECK(u.dtype() == DType::f32);
  CHECK(u.scalar_at(0) == 1.5);
  CHECK(u.scalar_at(1) == -2.25);
  std::remove(path.c_str());
}

TEST_CASE("bad magic and truncation raise IoError") {
  auto path = temp_path("bad");
  {
    std::ofstream f(path, std::ios::binary);
    f << "NOPE";
  }
  CHECK_THROWS_AS(load_tensor(path), IoError);
  {
    Tensor t = Tensor::zeros({4, 4});
    save_tensor(path, t);
    // chop the payload
    std::string b = file_bytes(path);
    std::ofstream f(path, std::ios::binary);
    f.write(b.data(), b.size() - 7);
  }
  CHECK_THROWS_AS(load_tensor(path), IoError);
  CHECK_THROWS_AS(load_tensor("does_not_exist.tnsr"), IoError);
  std::remove(path.c_str());
}

TEST_CASE("little endian primitives") {
  std::ostringstream os(std::ios::binary);
  io::write_u16(os, 0x1234);
  io::write_u32(os, 0xdeadbeef);
  io::write_u64(os, 0x0102030405060708ULL);
  std::string b = os.str();
  CHECK(static_cast<uint8_t>(b[0]) == 0x34);
  CHECK(static_cast<uint8_t>(b[1]) == 0x12);
  CHECK(static_cast<uint8_t>(b[2]) == 0xef);
  CHECK(static_cast<uint8_t>(b[5]) == 0xde);
  CHECK(static_cast<uint8_t>(b[6]) == 0x08);
  CHECK(static_cast<uint8_t>(b[13]) == 0x01);
  std::istringstream is(b, std::ios::binary);
  CHECK(io::read_u16(is) == 0x1234);
  CHECK(io::read_u32(is) == 0xdeadbeef);
  CHECK(io::read_u64(is) == 0x0102030405060708ULL);
}

TEST_SUITE_END();
