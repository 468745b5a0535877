#pragma once

#include <spdlog/spdlog.h>

namespace pivotal {

/// Shared library logger (stderr). Level follows PIVOTAL_LOG_LEVEL, default warn.
spdlog::logger& logger();

}  // namespace pivotal
