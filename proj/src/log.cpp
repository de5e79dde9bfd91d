#include "dtfixup/log.hpp"

#include <cstdlib>
#include <mutex>
#include <string>

#include <spdlog/sinks/stdout_color_sinks.h>

namespace dtfixup {

namespace {

std::shared_ptr<spdlog::logger> make_logger() {
    auto log = spdlog::stderr_color_mt("dtfixup");
    log->set_pattern("[%H:%M:%S.%e] [%^%l%$] %v");
    return log;
}

} // namespace

bool set_log_level(std::string_view level) {
    auto log = logger();
    if (level == "error")
        log->set_level(spdlog::level::err);
    else if (level == "info")
        log->set_level(spdlog::level::info);
    else if (level == "debug")
        log->set_level(spdlog::level::debug);
    else
        return false;
    return true;
}

bool configure_logging_from_env() {
    const char* env = std::getenv("DTFIXUP_LOG");
    if (env == nullptr || *env == '\0') return set_log_level("info");
    if (set_log_level(env)) return true;
    set_log_level("info");
    logger()->warn("DTFIXUP_LOG={} not recognised (expected error, info or debug); using info", env);
    return false;
}

std::shared_ptr<spdlog::logger> logger() {
    static std::once_flag once;
    static std::shared_ptr<spdlog::logger> log;
    std::call_once(once, [] {
        log = make_logger();
        const char* env = std::getenv("DTFIXUP_LOG");
        const std::string level = env ? env : "info";
        if (level == "error")
            log->set_level(spdlog::level::err);
        else if (level == "debug")
            log->set_level(spdlog::level::debug);
        else
            log->set_level(spdlog::level::info);
    });
    return log;
}

} // namespace dtfixup
