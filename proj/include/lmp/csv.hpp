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

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace lmp::csv {

/// A header-keyed table of string cells. No quoting: the schemas used by this
/// project never contain commas inside fields.
class Table {
 public:
  Table() = default;
  explicit Table(std::vector<std::string> header) : header_(std::move(header)) {}

  const std::vector<std::string>& header() const { return header_; }
  std::size_t rows() const { return cells_.size(); }

  /// Column index by name; throws ValidationError naming the file when absent.
  std::size_t column(std::string_view name) const;

  const std::string& at(std::size_t row, std::size_t col) const { return cells_[row][col]; }
  double number(std::size_t row, std::size_t col) const;
  long long integer(std::size_t row, std::size_t col) const;

  void add_row(std::vector<std::string> row);

  std::string source;  // path, for diagnostics

 private:
  std::vector<std::string> header_;
  std::vector<std::vector<std::string>> cells_;
};

/// Reads a UTF-8 CSV with a mandatory header row. Throws ConfigError when the
/// file is missing, ValidationError on ragged rows or missing columns.
Table read(const std::filesystem::path& path, const std::vector<std::string>& required = {});

/// Shortest round-trip decimal representation of a double.
std::string format_number(double v);

class Writer {
 public:
  Writer(const std::filesystem::path& path, const std::vector<std::string>& header);
  ~Writer();
  Writer(const Writer&) = delete;
  Writer& operator=(const Writer&) = delete;

  Writer& operator<<(const std::string& cell);
  Writer& operator<<(const char* cell) { return *this << std::string(cell); }
  Writer& operator<<(double v) { return *this << format_number(v); }
  Writer& operator<<(int v) { return *this << std::to_string(v); }
  Writer& operator<<(long v) { return *this << std::to_string(v); }
  Writer& operator<<(long long v) { return *this << std::to_string(v); }
  Writer& operator<<(unsigned long v) { return *this << std::to_string(v); }
  Writer& operator<<(unsigned long long v) { return *this << std::to_string(v); }
  void end_row();

 private:
  struct Impl;
  Impl* impl_;
};

}  // namespace lmp::csv
