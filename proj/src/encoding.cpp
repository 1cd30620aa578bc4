#include "graphreason/encoding.hpp"

#include <bit>
#include <charconv>

#include "graphreason/errors.hpp"

namespace graphreason {

std::string encode_double(double v) { return hex64(std::bit_cast<std::uint64_t>(v)); }

double decode_double(std::string_view hex) {
  std::uint64_t bits = 0;
  auto [ptr, ec] = std::from_chars(hex.data(), hex.data() + hex.size(), bits, 16);
  if (hex.size() != 16 || ec != std::errc() || ptr != hex.data() + hex.size()) {
    throw LoadError("malformed 64-bit hex value '" + std::string(hex) + "'");
  }
  return std::bit_cast<double>(bits);
}

std::string hex64(std::uint64_t v) {
  static constexpr char kDigits[] = "0123456789abcdef";
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i) {
    out[static_cast<std::size_t>(i)] = kDigits[v & 0xf];
    v >>= 4;
  }
  return out;
}

void Fnv1a::update(std::string_view bytes) {
  for (unsigned char b : bytes) {
    state_ ^= b;
    state_ *= 0x100000001b3ULL;
  }
}

std::uint64_t fnv1a64(std::string_view bytes) {
  Fnv1a h;
  h.update(bytes);
  return h.value();
}

std::uint64_t splitmix64(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

}  // namespace graphreason
