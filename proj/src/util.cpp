#include "coast/util.hpp"

#include <cstdio>
#include <cstdlib>
#include <iostream>
#include <mutex>

namespace coast {

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

namespace {

LogLevel threshold() {
  static const LogLevel level = [] {
    const char* env = std::getenv("COAST_LOG");
    if (env == nullptr) return LogLevel::kWarn;
    const std::string_view v(env);
    if (v == "debug") return LogLevel::kDebug;
    if (v == "info") return LogLevel::kInfo;
    if (v == "error") return LogLevel::kError;
    return LogLevel::kWarn;
  }();
  return level;
}

}  // namespace

void log(LogLevel level, std::string_view message) {
  if (level < threshold()) return;
  static std::mutex mu;
  static constexpr const char* kNames[] = {"debug", "info", "warn", "error"};
  std::lock_guard lock(mu);
  std::cerr << "[coast " << kNames[static_cast<int>(level)] << "] " << message << '\n';
}

}  // namespace coast
