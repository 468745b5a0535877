#include "pivotal/log.hpp"

#include <cstdlib>
#include <memory>

#include <spdlog/sinks/stdout_color_sinks.h>

namespace pivotal {

spdlog::logger& logger() {
  static std::shared_ptr<spdlog::logger> instance = [] {
    auto log = spdlog::stderr_color_mt("pivotal");
    log->set_level(spdlog::level::warn);
    if (const char* level = std::getenv("PIVOTAL_LOG_LEVEL")) {
      log->set_level(spdlog::level::from_str(level));
    }
    return log;
  }();
  return *instance;
}

}  // namespace pivotal
