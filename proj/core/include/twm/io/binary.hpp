#pragma once

#include <algorithm>
#include <bit>
#include <cstring>
#include <istream>
#include <ostream>
#include <string>

#include "twm/errors.hpp"

namespace twm::io {

/// Little-endian scalar write.
template <typename V>
void put(std::ostream& out, V v) {
  unsigned char buf[sizeof(V)];
  std::memcpy(buf, &v, sizeof(V));
  if constexpr (std::endian::native == std::endian::big) std::reverse(buf, buf + sizeof(V));
  out.write(reinterpret_cast<const char*>(buf), sizeof(V));
}

/// Little-endian scalar read; throws DataError on a short read.
template <typename V>
V get(std::istream& in, const char* what = "file") {
  unsigned char buf[sizeof(V)];
  if (!in.read(reinterpret_cast<char*>(buf), sizeof(V))) throw DataError(std::string(what) + " is truncated");
  if constexpr (std::endian::native == std::endian::big) std::reverse(buf, buf + sizeof(V));
  V v;
  std::memcpy(&v, buf, sizeof(V));
  return v;
}

inline void put_string(std::ostream& out, const std::string& s) {
  put<std::uint64_t>(out, s.size());
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline std::string get_string(std::istream& in, const char* what = "file", std::uint64_t limit = 1ull << 30) {
  const auto n = get<std::uint64_t>(in, what);
  if (n > limit) throw DataError(std::string(what) + ": implausible string length");
  std::string s(n, '\0');
  if (!in.read(s.data(), static_cast<std::streamsize>(n))) throw DataError(std::string(what) + " is truncated");
  return s;
}

}  // namespace twm::io
