// Copyright 2026 The Brane Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace brane {

// FNV-1a, 64 bit. Used for content checksums in every file format.
class Fnv1a {
 public:
  void update(std::string_view bytes);
  void update(const void* data, std::size_t size);
  std::uint64_t digest() const { return state_; }
  std::string hex() const;

 private:
  std::uint64_t state_ = 0xcbf29ce484222325ULL;
};

std::string to_hex(std::uint64_t value);

// splitmix64 finalizer; derives independent stream seeds from a base seed.
std::uint64_t mix_seed(std::uint64_t base, std::uint64_t salt);

// Shortest decimal that parses back to the same binary64.
std::string format_double(double value);
double parse_double(std::string_view text);
long long parse_int(std::string_view text);

std::vector<std::string_view> split(std::string_view text, char sep);

// Writes to `path.tmp` then renames, so readers never see a partial file.
void write_file_atomic(const std::filesystem::path& path, std::string_view contents);
std::string read_file(const std::filesystem::path& path);

}  // namespace brane
