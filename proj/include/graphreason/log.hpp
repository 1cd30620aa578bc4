#pragma once

#include <functional>
#include <string_view>

namespace graphreason {

using WarningHandler = std::function<void(std::string_view)>;

// Installs a warning sink and returns the previous one. The default writes
// to stderr.
WarningHandler set_warning_handler(WarningHandler handler);
void warn(std::string_view message);

}  // namespace graphreason
