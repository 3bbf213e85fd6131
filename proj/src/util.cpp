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

#include "brane/util.hpp"

#include <charconv>
#include <fstream>
#include <sstream>
#include <system_error>

#include "brane/error.hpp"

namespace brane {

std::string_view errc_name(Errc code) {
  switch (code) {
    case Errc::kInvalidArgument: return "InvalidArgument";
    case Errc::kMissingSource: return "MissingSource";
    case Errc::kNotADag: return "NotADAG";
    case Errc::kGraphMismatch: return "GraphMismatch";
    case Errc::kParse: return "ParseError";
    case Errc::kChecksum: return "ChecksumMismatch";
    case Errc::kTraceMismatch: return "TraceMismatch";
    case Errc::kShapeMismatch: return "ShapeMismatch";
    case Errc::kBadLayerIndex: return "BadLayerIndex";
    case Errc::kBadPartition: return "BadPartition";
    case Errc::kLeafSplit: return "LeafSplit";
    case Errc::kUnknownTask: return "UnknownTask";
    case Errc::kEmptyTaskSet: return "EmptyTaskSet";
    case Errc::kDimension: return "DimensionError";
    case Errc::kNonConvergence: return "NonConvergence";
    case Errc::kUncoveredPair: return "UncoveredPair";
    case Errc::kEmptyGrid: return "EmptyGrid";
    case Errc::kTargetUnreached: return "TargetUnreached";
    case Errc::kIo: return "IoError";
  }
  return "Unknown";
}

void Fnv1a::update(std::string_view bytes) { update(bytes.data(), bytes.size()); }

void Fnv1a::update(const void* data, std::size_t size) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < size; ++i) {
    state_ ^= p[i];
    state_ *= 0x100000001b3ULL;
  }
}

std::string Fnv1a::hex() const { return to_hex(state_); }

std::string to_hex(std::uint64_t value) {
  static constexpr char kDigits[] = "0123456789abcdef";
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i) {
    out[static_cast<std::size_t>(i)] = kDigits[value & 0xF];
    value >>= 4;
  }
  return out;
}

std::uint64_t mix_seed(std::uint64_t base, std::uint64_t salt) {
  std::uint64_t z = base + 0x9e3779b97f4a7c15ULL * (salt + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

std::string format_double(double value) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), value);
  if (ec != std::errc()) fail(Errc::kInvalidArgument, "cannot format double");
  return std::string(buf, end);
}

double parse_double(std::string_view text) {
  double value = 0.0;
  auto [end, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  if (ec != std::errc() || end != text.data() + text.size()) {
    fail(Errc::kParse, "bad real '" + std::string(text) + "'");
  }
  return value;
}

long long parse_int(std::string_view text) {
  long long value = 0;
  auto [end, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  if (ec != std::errc() || end != text.data() + text.size()) {
    fail(Errc::kParse, "bad integer '" + std::string(text) + "'");
  }
  return value;
}

std::vector<std::string_view> split(std::string_view text, char sep) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    std::size_t pos = text.find(sep, start);
    if (pos == std::string_view::npos) {
      out.push_back(text.substr(start));
      return out;
    }
    out.push_back(text.substr(start, pos - start));
    start = pos + 1;
  }
}

void write_file_atomic(const std::filesystem::path& path, std::string_view contents) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) fail(Errc::kIo, "cannot open " + tmp.string());
    out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
    if (!out) fail(Errc::kIo, "write failed: " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(Errc::kIo, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace brane
