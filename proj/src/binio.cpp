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

#include "lmp/binio.hpp"

#include "lmp/rng.hpp"

#include <fstream>
#include <iterator>
#include <string_view>

namespace lmp::bin {

std::uint64_t hash_bytes(const std::vector<char>& b) {
  return fnv1a64(std::string_view(b.data(), b.size()));
}

std::uint64_t Writer::save(const std::filesystem::path& path) const {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw ConfigError("cannot write " + path.string());
  f.write(bytes_.data(), static_cast<std::streamsize>(bytes_.size()));
  if (!f) throw ConfigError("write failed: " + path.string());
  return hash_bytes(bytes_);
}

Reader::Reader(const std::filesystem::path& path, std::uint64_t expected_hash) : source_(path.string()) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw ConfigError("cannot read " + source_);
  bytes_.assign(std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>());
  if (expected_hash != 0 && hash_bytes(bytes_) != expected_hash)
    throw ValidationError(source_ + ": content hash does not match the manifest");
}

std::uint64_t Reader::u64() {
  if (bytes_.size() - pos_ < 8) throw ValidationError(source_ + ": truncated model file");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i)
    v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes_[pos_ + static_cast<std::size_t>(i)])) << (8 * i);
  pos_ += 8;
  return v;
}

std::size_t Reader::count(std::size_t elem_size) {
  const std::uint64_t n = u64();
  if (elem_size && n > (bytes_.size() - pos_) / elem_size) throw ValidationError(source_ + ": corrupt length field");
  return static_cast<std::size_t>(n);
}

std::string Reader::str() {
  const std::size_t n = count(1);
  std::string s(bytes_.data() + pos_, n);
  pos_ += n;
  return s;
}

VectorXd Reader::vec() {
  const std::size_t n = count(8);
  VectorXd v(static_cast<Index>(n));
  for (std::size_t i = 0; i < n; ++i) v(static_cast<Index>(i)) = f64();
  return v;
}

MatrixXd Reader::mat() {
  const std::uint64_t r = u64();
  const std::size_t c = count(0);
  if (r != 0 && c > (bytes_.size() - pos_) / 8 / r) throw ValidationError(source_ + ": corrupt matrix shape");
  MatrixXd m(static_cast<Index>(r), static_cast<Index>(c));
  for (Index j = 0; j < m.cols(); ++j)
    for (Index i = 0; i < m.rows(); ++i) m(i, j) = f64();
  return m;
}

std::vector<int> Reader::ints() {
  const std::size_t n = count(8);
  std::vector<int> v(n);
  for (auto& x : v) x = static_cast<int>(i64());
  return v;
}

std::vector<std::string> Reader::strs() {
  const std::size_t n = count(8);
  std::vector<std::string> v(n);
  for (auto& s : v) s = str();
  return v;
}

}  // namespace lmp::bin
