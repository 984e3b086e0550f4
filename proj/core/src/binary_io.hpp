#pragma once

// Little-endian fixed-width encoding shared by the dataset and checkpoint formats.

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <string>
#include <string_view>

#include <fmt/format.h>

#include "bicro/error.hpp"

namespace bicro::detail {

static_assert(std::endian::native == std::endian::little,
              "binary formats assume a little-endian host");

template <typename T>
void write_le(std::ostream& out, T value) {
  std::array<char, sizeof(T)> bytes;
  std::memcpy(bytes.data(), &value, sizeof(T));
  out.write(bytes.data(), bytes.size());
}

// Reads fixed-width values and reports the byte offset of any short read.
class LeReader {
 public:
  LeReader(std::istream& in, std::string source) : in_(in), source_(std::move(source)) {}

  template <typename T>
  T read(std::string_view what) {
    std::array<char, sizeof(T)> bytes;
    in_.read(bytes.data(), bytes.size());
    if (in_.gcount() != static_cast<std::streamsize>(bytes.size())) {
      throw Error(ErrorKind::kFormat,
                  fmt::format("{}: truncated at byte offset {} while reading {}", source_,
                              offset_ + static_cast<std::uint64_t>(in_.gcount()), what));
    }
    offset_ += sizeof(T);
    T value;
    std::memcpy(&value, bytes.data(), sizeof(T));
    return value;
  }

  void expect_magic(std::string_view magic) {
    std::string got(magic.size(), '\0');
    in_.read(got.data(), static_cast<std::streamsize>(got.size()));
    if (in_.gcount() != static_cast<std::streamsize>(magic.size()) || got != magic) {
      throw Error(ErrorKind::kFormat,
                  fmt::format("{}: bad magic at byte offset 0, expected \"{}\"", source_, magic));
    }
    offset_ += magic.size();
  }

  void expect_end() {
    if (in_.peek() != std::char_traits<char>::eof()) {
      throw Error(ErrorKind::kFormat,
                  fmt::format("{}: trailing bytes at byte offset {}", source_, offset_));
    }
  }

  std::uint64_t offset() const { return offset_; }
  const std::string& source() const { return source_; }

 private:
  std::istream& in_;
  std::string source_;
  std::uint64_t offset_ = 0;
};

}  // namespace bicro::detail
