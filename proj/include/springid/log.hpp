#pragma once

#include <string_view>

namespace springid::log {

/// Prints "warning: <msg>" to stderr once per distinct message.
void warn(std::string_view message);
void info(std::string_view message);

/// Silences info and warning output (warnings are still counted).
void set_quiet(bool quiet);
/// Number of warn() calls, including repeats and suppressed ones.
unsigned long warning_count();

}  // namespace springid::log
