#pragma once

#include <memory>
#include <string_view>

#include <spdlog/spdlog.h>

namespace dtfixup {

// Shared stderr logger. Level comes from DTFIXUP_LOG (error | info | debug),
// defaulting to info; unknown values fall back to info with a warning.
std::shared_ptr<spdlog::logger> logger();

// Re-read DTFIXUP_LOG. Returns false when the value was not recognised.
bool configure_logging_from_env();
bool set_log_level(std::string_view level);

} // namespace dtfixup
