#pragma once

#include <iosfwd>
#include <string>

#include "conformer/tensor.hpp"

namespace conformer {

// Byte-level little-endian primitives used by every binary format in the
// project. Packing is explicit so files are identical regardless of host
// endianness.
namespace io {

void write_u8(std::ostream& s, uint8_t v);
void write_u16(std::ostream& s, uint16_t v);
void write_u32(std::ostream& s, uint32_t v);
void write_u64(std::ostream& s, uint64_t v);
void write_f32(std::ostream& s, float v);
void write_bytes(std::ostream& s, const void* data, size_t n);

uint8_t read_u8(std::istream& s);
uint16_t read_u16(std::istream& s);
uint32_t read_u32(std::istream& s);
uint64_t read_u64(std::istream& s);
float read_f32(std::istream& s);
void read_bytes(std::istream& s, void* data, size_t n);

}  // namespace io

// TNSR tensor dump: magic "TNSR", u32 version (1), u8 rank, rank u64 dims,
// then the f32 payload in row-major order. f64 tensors are cast down on save.
void save_tensor(const std::string& path, const Tensor& t);
void write_tensor(std::ostream& s, const Tensor& t);
Tensor load_tensor(const std::string& path);
Tensor read_tensor(std::istream& s);

}  // namespace conformer
