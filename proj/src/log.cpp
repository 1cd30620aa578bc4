#include "graphreason/log.hpp"

#include <iostream>
#include <utility>

namespace graphreason {

namespace {

WarningHandler& handler() {
  static WarningHandler h = [](std::string_view msg) { std::cerr << "warning: " << msg << '\n'; };
  return h;
}

}  // namespace

WarningHandler set_warning_handler(WarningHandler h) { return std::exchange(handler(), std::move(h)); }

void warn(std::string_view message) {
  if (handler()) handler()(message);
}

}  // namespace graphreason
