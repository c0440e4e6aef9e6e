#include "semseg/log.hpp"

#include <cstdio>
#include <cstdlib>
#include <cstring>

namespace semseg {

LogLevel log_level() {
    static LogLevel level = [] {
        const char* env = std::getenv("SEMSEG_LOG");
        if (env == nullptr) return LogLevel::info;
        if (std::strcmp(env, "error") == 0) return LogLevel::error;
        if (std::strcmp(env, "debug") == 0) return LogLevel::debug;
        return LogLevel::info;
    }();
    return level;
}

void log_error(const std::string& msg) { std::fprintf(stderr, "[error] %s\n", msg.c_str()); }

void log_info(const std::string& msg) {
    if (log_level() >= LogLevel::info) std::fprintf(stderr, "[info] %s\n", msg.c_str());
}

void log_debug(const std::string& msg) {
    if (log_level() >= LogLevel::debug) std::fprintf(stderr, "[debug] %s\n", msg.c_str());
}

}  // namespace semseg
