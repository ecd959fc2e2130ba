#pragma once

#include <cstdlib>
#include <memory>
#include <mutex>
#include <string>

#include <spdlog/sinks/stdout_sinks.h>
#include <spdlog/spdlog.h>

namespace mfgp {

/// Shared "mfgp" logger writing to stderr. The level comes from the
/// MFGP_LOG environment variable (trace, debug, info, warn, error, off);
/// warn when unset.
inline std::shared_ptr<spdlog::logger> logger() {
  static std::once_flag once;
  static std::shared_ptr<spdlog::logger> instance;
  std::call_once(once, [] {
    instance = spdlog::get("mfgp");
    if (!instance) {
      instance = spdlog::stderr_logger_mt("mfgp");
    }
    instance->set_pattern("[%l] %v");
    auto level = spdlog::level::warn;
    if (const char *env = std::getenv("MFGP_LOG")) {
      level = spdlog::level::from_str(env);
    }
    instance->set_level(level);
  });
  return instance;
}

} // namespace mfgp
