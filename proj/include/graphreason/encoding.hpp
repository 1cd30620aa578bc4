#pragma once

#include <cstdint>
#include <string>
#include <string_view>

namespace graphreason {

// 16 lowercase hex digits of the IEEE-754 bit pattern; round-trips exactly.
std::string encode_double(double v);
// LoadError on anything but exactly 16 hex digits.
double decode_double(std::string_view hex);

std::string hex64(std::uint64_t v);

// 64-bit FNV-1a.
class Fnv1a {
 public:
  void update(std::string_view bytes);
  std::uint64_t value() const { return state_; }

 private:
  std::uint64_t state_ = 0xcbf29ce484222325ULL;
};

std::uint64_t fnv1a64(std::string_view bytes);

// Next value of a splitmix64 stream; advances `state`.
std::uint64_t splitmix64(std::uint64_t& state);

}  // namespace graphreason
