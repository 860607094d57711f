/*
 * Copyright 2026 The lmpcast Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

// Endianness-fixed binary streams for model files. Every scalar is written
// little-endian as 8 bytes; doubles by their IEEE-754 bit pattern.
#pragma once

#include "lmp/types.hpp"

#include <bit>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace lmp::bin {

class Writer {
 public:
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) bytes_.push_back(static_cast<char>((v >> (8 * i)) & 0xffU));
  }
  void i64(std::int64_t v) { u64(static_cast<std::uint64_t>(v)); }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void str(const std::string& s) {
    u64(s.size());
    bytes_.insert(bytes_.end(), s.begin(), s.end());
  }
  void vec(const VectorXd& v) {
    u64(static_cast<std::uint64_t>(v.size()));
    for (Index i = 0; i < v.size(); ++i) f64(v(i));
  }
  void mat(const MatrixXd& m) {
    u64(static_cast<std::uint64_t>(m.rows()));
    u64(static_cast<std::uint64_t>(m.cols()));
    for (Index j = 0; j < m.cols(); ++j)
      for (Index i = 0; i < m.rows(); ++i) f64(m(i, j));
  }
  void ints(const std::vector<int>& v) {
    u64(v.size());
    for (int x : v) i64(x);
  }
  void strs(const std::vector<std::string>& v) {
    u64(v.size());
    for (const auto& s : v) str(s);
  }

  const std::vector<char>& bytes() const { return bytes_; }
  /// Writes the buffer and returns its FNV-1a hash.
  std::uint64_t save(const std::filesystem::path& path) const;

 private:
  std::vector<char> bytes_;
};

class Reader {
 public:
  /// Throws ValidationError when the file is missing or its hash differs
  /// from `expected_hash` (0 skips the check).
  explicit Reader(const std::filesystem::path& path, std::uint64_t expected_hash = 0);

  std::uint64_t u64();
  std::int64_t i64() { return static_cast<std::int64_t>(u64()); }
  double f64() { return std::bit_cast<double>(u64()); }
  std::string str();
  VectorXd vec();
  MatrixXd mat();
  std::vector<int> ints();
  std::vector<std::string> strs();
  bool done() const { return pos_ == bytes_.size(); }

 private:
  std::size_t count(std::size_t elem_size);
  std::string source_;
  std::vector<char> bytes_;
  std::size_t pos_ = 0;
};

std::uint64_t hash_bytes(const std::vector<char>& b);

}  // namespace lmp::bin
