#include "springid/log.hpp"

#include <atomic>
#include <iostream>
#include <mutex>
#include <set>
#include <string>

namespace springid::log {

namespace {

std::atomic<bool> g_quiet{false};
std::atomic<unsigned long> g_warnings{0};
std::mutex g_mutex;
std::set<std::string, std::less<>> g_seen;

}  // namespace

void warn(std::string_view message) {
    g_warnings.fetch_add(1, std::memory_order_relaxed);
    std::lock_guard lock(g_mutex);
    if (g_seen.find(message) != g_seen.end()) return;
    g_seen.emplace(message);
    if (!g_quiet.load()) std::cerr << "warning: " << message << '\n';
}

void info(std::string_view message) {
    if (g_quiet.load()) return;
    std::lock_guard lock(g_mutex);
    std::cerr << message << '\n';
}

void set_quiet(bool quiet) { g_quiet.store(quiet); }

unsigned long warning_count() { return g_warnings.load(std::memory_order_relaxed); }

}  // namespace springid::log
