#pragma once

#include <string>
#include <string_view>

// Thin front end over spdlog. Kept free of spdlog headers because libtorch
// bundles an fmt release the system spdlog cannot compile against.
namespace exsr::log {

enum class Level { kDebug, kInfo, kWarn, kError, kOff };

void set_level(Level level);
Level level_from_string(const std::string& s);

void debug(std::string_view msg);
void info(std::string_view msg);
void warn(std::string_view msg);
void error(std::string_view msg);

}  // namespace exsr::log
