#include "exsr/log.hpp"

#include <spdlog/spdlog.h>

#include "exsr/errors.hpp"

namespace exsr::log {

void set_level(Level level) {
  switch (level) {
    case Level::kDebug:
      spdlog::set_level(spdlog::level::debug);
      break;
    case Level::kInfo:
      spdlog::set_level(spdlog::level::info);
      break;
    case Level::kWarn:
      spdlog::set_level(spdlog::level::warn);
      break;
    case Level::kError:
      spdlog::set_level(spdlog::level::err);
      break;
    case Level::kOff:
      spdlog::set_level(spdlog::level::off);
      break;
  }
}

Level level_from_string(const std::string& s) {
  if (s == "debug") return Level::kDebug;
  if (s == "info") return Level::kInfo;
  if (s == "warn") return Level::kWarn;
  if (s == "error") return Level::kError;
  if (s == "off") return Level::kOff;
  throw ConfigError("unknown log level '" + s + "'");
}

void debug(std::string_view msg) { spdlog::debug("{}", msg); }
void info(std::string_view msg) { spdlog::info("{}", msg); }
void warn(std::string_view msg) { spdlog::warn("{}", msg); }
void error(std::string_view msg) { spdlog::error("{}", msg); }

}  // namespace exsr::log
