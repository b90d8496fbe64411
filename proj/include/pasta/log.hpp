#pragma once

#include <iostream>
#include <sstream>
#include <string_view>

namespace pasta::log {

enum class Level { debug = 0, info = 1, warn = 2, error = 3, off = 4 };

Level level();
void set_level(Level lvl);

void write(Level lvl, std::string_view msg);

template <typename... Args>
void info(Args&&... args) {
    if (level() > Level::info) return;
    std::ostringstream os;
    (os << ... << args);
    write(Level::info, os.str());
}

template <typename... Args>
void warn(Args&&... args) {
    if (level() > Level::warn) return;
    std::ostringstream os;
    (os << ... << args);
    write(Level::warn, os.str());
}

template <typename... Args>
void debug(Args&&... args) {
    if (level() > Level::debug) return;
    std::ostringstream os;
    (os << ... << args);
    write(Level::debug, os.str());
}

}  // namespace pasta::log
