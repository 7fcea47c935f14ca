#pragma once

#include <cstdio>
#include <cstdlib>
#include <cstring>

namespace gridfall::log {

enum Level { kError = 0, kInfo = 1, kDebug = 2 };

inline Level threshold() {
    static const Level lvl = [] {
        const char* env = std::getenv("GRIDFALL_LOG");
        if (!env) return kInfo;
        if (std::strcmp(env, "error") == 0) return kError;
        if (std::strcmp(env, "debug") == 0) return kDebug;
        return kInfo;
    }();
    return lvl;
}

template <typename... Args>
void emit(Level lvl, const char* tag, const char* fmt, Args... args) {
    if (lvl > threshold()) return;
    std::fprintf(stderr, "[%s] ", tag);
    if constexpr (sizeof...(Args) == 0)
        std::fputs(fmt, stderr);
    else
        std::fprintf(stderr, fmt, args...);
    std::fputc('\n', stderr);
}

template <typename... Args>
void error(const char* fmt, Args... args) { emit(kError, "error", fmt, args...); }
template <typename... Args>
void info(const char* fmt, Args... args) { emit(kInfo, "info", fmt, args...); }
template <typename... Args>
void debug(const char* fmt, Args... args) { emit(kDebug, "debug", fmt, args...); }

}  // namespace gridfall::log
