#include "pasta/log.hpp"

#include <atomic>
#include <mutex>

namespace pasta::log {

namespace {
std::atomic<Level> g_level{Level::info};
std::mutex g_mutex;

const char* tag(Level lvl) {
    switch (lvl) {
        case Level::debug: return "debug";
        case Level::info: return "info";
        case Level::warn: return "warn";
        case Level::error: return "error";
        default: return "";
    }
}
}  // namespace

Level level() { return g_level.load(std::memory_order_relaxed); }
void set_level(Level lvl) { g_level.store(lvl, std::memory_order_relaxed); }

void write(Level lvl, std::string_view msg) {
    std::lock_guard<std::mutex> lock(g_mutex);
    std::cerr << "[" << tag(lvl) << "] " << msg << '\n';
}

}  // namespace pasta::log
