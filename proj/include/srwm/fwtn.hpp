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

// FWTN tensor files.
//
//   offset 0  "FWTN"            magic
//          4  u8 version        = 1
//          5  u8 dtype          0 = f32, 1 = f64, 2 = u8
//          6  u8 rank
//          7  u32 dims[rank]    little-endian
//          .. payload           little-endian, row-major

#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "srwm/tensor.hpp"

namespace srwm {

class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A file could not be opened, read or written.
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class DType : std::uint8_t { kF32 = 0, kF64 = 1, kU8 = 2 };

inline constexpr std::uint8_t kFwtnVersion = 1;

template <class T>
constexpr DType dtype_of();
template <>
constexpr DType dtype_of<float>() { return DType::kF32; }
template <>
constexpr DType dtype_of<double>() { return DType::kF64; }

/// Appends little-endian values to a byte buffer.
class ByteWriter {
 public:
  void bytes(const void* data, std::size_t n);
  void u8(std::uint8_t v) { buf_.push_back(v); }
  void u32(std::uint32_t v);
  void u64(std::uint64_t v);
  void f32(float v);
  void f64(double v);
  const std::vector<std::uint8_t>& buffer() const { return buf_; }
  std::vector<std::uint8_t> take() { return std::move(buf_); }

 private:
  std::vector<std::uint8_t> buf_;
};

/// Bounds-checked little-endian reader; errors name the source and offset.
class ByteReader {
 public:
  ByteReader(std::span<const std::uint8_t> data, std::string source) : data_(data), source_(std::move(source)) {}

  std::uint8_t u8();
  std::uint32_t u32();
  std::uint64_t u64();
  float f32();
  double f64();
  void bytes(void* out, std::size_t n);

  std::size_t offset() const { return pos_; }
  bool at_end() const { return pos_ == data_.size(); }
  const std::string& source() const { return source_; }
  [[noreturn]] void fail(const std::string& what) const;

 private:
  void need(std::size_t n) const;

  std::span<const std::uint8_t> data_;
  std::string source_;
  std::size_t pos_ = 0;
};

struct RawTensor {
  DType dtype = DType::kF64;
  Shape shape;
  std::vector<std::uint8_t> payload;
};

template <class T>
void write_fwtn(ByteWriter& out, const Tensor<T>& t);
void write_fwtn_u8(ByteWriter& out, const Shape& shape, std::span<const std::uint8_t> values);

RawTensor read_fwtn(ByteReader& in);

/// Decodes a tensor whose stored dtype must be exactly T.
template <class T>
Tensor<T> decode_exact(const RawTensor& raw, const std::string& source);

/// Decodes any dtype to double; u8 payloads are scaled into [0, 1].
Tensor<double> decode_normalized(const RawTensor& raw);

std::vector<std::uint8_t> read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

template <class T>
void save_tensor(const std::filesystem::path& path, const Tensor<T>& t);
Tensor<double> load_tensor_normalized(const std::filesystem::path& path);

}  // namespace srwm
