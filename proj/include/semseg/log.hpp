#pragma once

#include <string>

namespace semseg {

// Verbosity from SEMSEG_LOG={error|info|debug}; default info.
enum class LogLevel { error = 0, info = 1, debug = 2 };

LogLevel log_level();
void log_error(const std::string& msg);
void log_info(const std::string& msg);
void log_debug(const std::string& msg);

}  // namespace semseg
