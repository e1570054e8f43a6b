#include "ctxalign/logging.hpp"

#include <atomic>
#include <iostream>
#include <mutex>

namespace ctxalign {

namespace {
std::atomic<int> g_level{static_cast<int>(LogLevel::info)};
std::mutex g_mutex;

const char* label(LogLevel level) {
  switch (level) {
    case LogLevel::debug: return "debug";
    case LogLevel::info: return "info";
    case LogLevel::warn: return "warn";
    case LogLevel::error: return "error";
    default: return "";
  }
}
}  // namespace

void set_log_level(LogLevel level) { g_level = static_cast<int>(level); }
LogLevel log_level() { return static_cast<LogLevel>(g_level.load()); }

void log(LogLevel level, const std::string& message) {
  if (static_cast<int>(level) < g_level.load() || level == LogLevel::quiet) return;
  std::lock_guard lock(g_mutex);
  std::cerr << '[' << label(level) << "] " << message << '\n';
}

}  // namespace ctxalign
