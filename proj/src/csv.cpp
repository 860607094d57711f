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

#include "lmp/csv.hpp"

#include "lmp/types.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

namespace lmp::csv {

namespace {

std::string trim(std::string_view s) {
  std::size_t b = 0, e = s.size();
  while (b < e && (s[b] == ' ' || s[b] == '\t' || s[b] == '\r')) ++b;
  while (e > b && (s[e - 1] == ' ' || s[e - 1] == '\t' || s[e - 1] == '\r')) --e;
  return std::string(s.substr(b, e - b));
}

std::vector<std::string> split(const std::string& line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  for (;;) {
    const auto pos = line.find(',', start);
    if (pos == std::string::npos) {
      out.push_back(trim(std::string_view(line).substr(start)));
      break;
    }
    out.push_back(trim(std::string_view(line).substr(start, pos - start)));
    start = pos + 1;
  }
  return out;
}

}  // namespace

std::size_t Table::column(std::string_view name) const {
  for (std::size_t i = 0; i < header_.size(); ++i)
    if (header_[i] == name) return i;
  throw ValidationError(source + ": missing column '" + std::string(name) + "'");
}

double Table::number(std::size_t row, std::size_t col) const {
  const std::string& s = cells_[row][col];
  double v = 0.0;
  const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size())
    throw ValidationError(source + ": row " + std::to_string(row + 2) + ": '" + s +
                          "' is not a number");
  return v;
}

long long Table::integer(std::size_t row, std::size_t col) const {
  const std::string& s = cells_[row][col];
  long long v = 0;
  const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size())
    throw ValidationError(source + ": row " + std::to_string(row + 2) + ": '" + s +
                          "' is not an integer");
  return v;
}

void Table::add_row(std::vector<std::string> row) {
  if (row.size() != header_.size())
    throw ValidationError(source + ": row " + std::to_string(cells_.size() + 2) + " has " +
                          std::to_string(row.size()) + " fields, expected " +
                          std::to_string(header_.size()));
  cells_.push_back(std::move(row));
}

Table read(const std::filesystem::path& path, const std::vector<std::string>& required) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open file: " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw ValidationError(path.string() + ": empty file, header required");
  if (line.size() >= 3 && line.compare(0, 3, "\xEF\xBB\xBF") == 0) line.erase(0, 3);
  Table t(split(line));
  t.source = path.string();
  while (std::getline(in, line)) {
    if (trim(line).empty()) continue;
    t.add_row(split(line));
  }
  for (const auto& r : required) (void)t.column(r);
  return t;
}

std::string format_number(double v) {
  char buf[64];
  const auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, p);
}

struct Writer::Impl {
  std::ofstream out;
  bool first = true;
  std::string path;
};

Writer::Writer(const std::filesystem::path& path, const std::vector<std::string>& header)
    : impl_(new Impl) {
  impl_->path = path.string();
  impl_->out.open(path, std::ios::binary);
  if (!impl_->out) {
    delete impl_;
    throw ConfigError("cannot write file: " + path.string());
  }
  for (std::size_t i = 0; i < header.size(); ++i) impl_->out << (i ? "," : "") << header[i];
  impl_->out << '\n';
}

Writer::~Writer() { delete impl_; }

Writer& Writer::operator<<(const std::string& cell) {
  if (!impl_->first) impl_->out << ',';
  impl_->out << cell;
  impl_->first = false;
  return *this;
}

void Writer::end_row() {
  impl_->out << '\n';
  impl_->first = true;
}

}  // namespace lmp::csv
