/*
 * Copyright 2026 The srwm Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *    http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#include "srwm/fwtn.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <limits>

namespace srwm {

namespace {

constexpr char kMagic[4] = {'F', 'W', 'T', 'N'};

std::size_t dtype_width(DType d) {
  switch (d) {
    case DType::kF32: return 4;
    case DType::kF64: return 8;
    case DType::kU8: return 1;
  }
  return 0;
}

const char* dtype_name(DType d) {
  switch (d) {
    case DType::kF32: return "f32";
    case DType::kF64: return "f64";
    case DType::kU8: return "u8";
  }
  return "?";
}

void write_header(ByteWriter& out, DType dtype, const Shape& shape) {
  if (shape.size() > std::numeric_limits<std::uint8_t>::max()) throw FormatError("FWTN: rank too large");
  out.bytes(kMagic, 4);
  out.u8(kFwtnVersion);
  out.u8(static_cast<std::uint8_t>(dtype));
  out.u8(static_cast<std::uint8_t>(shape.size()));
  for (auto d : shape) {
    if (d > std::numeric_limits<std::uint32_t>::max()) throw FormatError("FWTN: dimension exceeds u32");
    out.u32(static_cast<std::uint32_t>(d));
  }
}

}  // namespace

void ByteWriter::bytes(const void* data, std::size_t n) {
  const auto* p = static_cast<const std::uint8_t*>(data);
  buf_.insert(buf_.end(), p, p + n);
}

void ByteWriter::u32(std::uint32_t v) {
  for (int i = 0; i < 4; ++i) buf_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void ByteWriter::u64(std::uint64_t v) {
  for (int i = 0; i < 8; ++i) buf_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void ByteWriter::f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
void ByteWriter::f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }

void ByteReader::fail(const std::string& what) const {
  throw FormatError(source_ + ": " + what + " at offset " + std::to_string(pos_));
}

void ByteReader::need(std::size_t n) const {
  if (data_.size() - pos_ < n) {
    fail("truncated input (need " + std::to_string(n) + " bytes, " + std::to_string(data_.size() - pos_) +
         " left)");
  }
}

std::uint8_t ByteReader::u8() {
  need(1);
  return data_[pos_++];
}

std::uint32_t ByteReader::u32() {
  need(4);
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(data_[pos_ + i]) << (8 * i);
  pos_ += 4;
  return v;
}

std::uint64_t ByteReader::u64() {
  need(8);
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(data_[pos_ + i]) << (8 * i);
  pos_ += 8;
  return v;
}

float ByteReader::f32() { return std::bit_cast<float>(u32()); }
double ByteReader::f64() { return std::bit_cast<double>(u64()); }

void ByteReader::bytes(void* out, std::size_t n) {
  need(n);
  std::memcpy(out, data_.data() + pos_, n);
  pos_ += n;
}

template <class T>
void write_fwtn(ByteWriter& out, const Tensor<T>& t) {
  write_header(out, dtype_of<T>(), t.shape());
  for (T v : t.data()) {
    if constexpr (std::is_same_v<T, float>) {
      out.f32(v);
    } else {
      out.f64(v);
    }
  }
}

void write_fwtn_u8(ByteWriter& out, const Shape& shape, std::span<const std::uint8_t> values) {
  if (shape_size(shape) != values.size()) throw ShapeError("write_fwtn_u8: shape/value count mismatch");
  write_header(out, DType::kU8, shape);
  out.bytes(values.data(), values.size());
}

RawTensor read_fwtn(ByteReader& in) {
  const std::size_t start = in.offset();
  char magic[4];
  in.bytes(magic, 4);
  if (std::memcmp(magic, kMagic, 4) != 0) {
    throw FormatError(in.source() + ": bad FWTN magic at offset " + std::to_string(start));
  }
  const std::uint8_t version = in.u8();
  if (version != kFwtnVersion) in.fail("unsupported FWTN version " + std::to_string(version));
  const std::uint8_t code = in.u8();
  if (code > 2) in.fail("unknown FWTN dtype " + std::to_string(code));
  RawTensor raw;
  raw.dtype = static_cast<DType>(code);
  const std::uint8_t rank = in.u8();
  std::size_t count = 1;
  for (std::uint8_t i = 0; i < rank; ++i) {
    const std::uint32_t d = in.u32();
    if (d == 0) in.fail("zero FWTN dimension");
    raw.shape.push_back(d);
    count *= d;
  }
  raw.payload.resize(count * dtype_width(raw.dtype));
  in.bytes(raw.payload.data(), raw.payload.size());
  return raw;
}

template <class T>
Tensor<T> decode_exact(const RawTensor& raw, const std::string& source) {
  if (raw.dtype != dtype_of<T>()) {
    throw FormatError(source + ": expected dtype " + dtype_name(dtype_of<T>()) + ", found " + dtype_name(raw.dtype));
  }
  ByteReader r(raw.payload, source);
  std::vector<T> data(shape_size(raw.shape));
  for (auto& v : data) {
    if constexpr (std::is_same_v<T, float>) {
      v = r.f32();
    } else {
      v = r.f64();
    }
  }
  return Tensor<T>(raw.shape, std::move(data));
}

Tensor<double> decode_normalized(const RawTensor& raw) {
  switch (raw.dtype) {
    case DType::kF32: return decode_exact<float>(raw, "tensor").cast<double>();
    case DType::kF64: return decode_exact<double>(raw, "tensor");
    case DType::kU8: {
      std::vector<double> data(raw.payload.size());
      for (std::size_t i = 0; i < data.size(); ++i) data[i] = raw.payload[i] / 255.0;
      return Tensor<double>(raw.shape, std::move(data));
    }
  }
  throw FormatError("unknown dtype");
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return bytes;
}

void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed for " + path.string());
}

template <class T>
void save_tensor(const std::filesystem::path& path, const Tensor<T>& t) {
  ByteWriter w;
  write_fwtn(w, t);
  write_file(path, w.buffer());
}

Tensor<double> load_tensor_normalized(const std::filesystem::path& path) {
  const auto bytes = read_file(path);
  ByteReader r(bytes, path.string());
  RawTensor raw = read_fwtn(r);
  if (!r.at_end()) r.fail("trailing bytes after tensor payload");
  return decode_normalized(raw);
}

template void write_fwtn(ByteWriter&, const Tensor<float>&);
template void write_fwtn(ByteWriter&, const Tensor<double>&);
template Tensor<float> decode_exact(const RawTensor&, const std::string&);
template Tensor<double> decode_exact(const RawTensor&, const std::string&);
template void save_tensor(const std::filesystem::path&, const Tensor<float>&);
template void save_tensor(const std::filesystem::path&, const Tensor<double>&);

}  // namespace srwm
