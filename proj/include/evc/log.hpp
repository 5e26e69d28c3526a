#pragma once

#include <string>

namespace evc {

enum class LogLevel { Error = 0, Warn = 1, Info = 2, Debug = 3 };

// Level comes from EVC_LOG_LEVEL (error|warn|info|debug); defaults to warn.
LogLevel log_level();
void set_log_level(LogLevel level);

void log_error(const std::string& msg);
void log_warn(const std::string& msg);
void log_info(const std::string& msg);
void log_debug(const std::string& msg);

}  // namespace evc
