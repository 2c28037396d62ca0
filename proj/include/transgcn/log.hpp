#pragma once

#include <cstdlib>
#include <iostream>
#include <sstream>
#include <string_view>

namespace transgcn::log {

enum class Level { error = 0, info = 1, debug = 2 };

/// Verbosity from TRANSGCN_LOG (error|info|debug); defaults to info.
inline Level threshold() {
  static const Level level = [] {
    const char* env = std::getenv("TRANSGCN_LOG");
    if (env == nullptr) return Level::info;
    std::string_view v(env);
    if (v == "error") return Level::error;
    if (v == "debug") return Level::debug;
    return Level::info;
  }();
  return level;
}

template <typename... Args>
void write(Level level, std::string_view tag, const Args&... args) {
  if (static_cast<int>(level) > static_cast<int>(threshold())) return;
  std::ostringstream line;
  line << "[" << tag << "] ";
  (line << ... << args);
  line << '\n';
  std::cerr << line.str();
}

template <typename... Args>
void error(const Args&... args) { write(Level::error, "error", args...); }

// Warnings share the info level; there is no separate warn verbosity.
template <typename... Args>
void warn(const Args&... args) { write(Level::info, "warn", args...); }

template <typename... Args>
void info(const Args&... args) { write(Level::info, "info", args...); }

template <typename... Args>
void debug(const Args&... args) { write(Level::debug, "debug", args...); }

}  // namespace transgcn::log
