#include "mome/common.hpp"

#include <cstdlib>

namespace mome {

std::string hex_u64(std::uint64_t v) {
    static const char* digits = "0123456789abcdef";
    std::string out(16, '0');
    for (int i = 15; i >= 0; --i) {
        out[static_cast<std::size_t>(i)] = digits[v & 0xf];
        v >>= 4;
    }
    return out;
}

LogLevel log_level() {
    static LogLevel lvl = [] {
        const char* e = std::getenv("MOME_LOG");
        if (e == nullptr) return LogLevel::Info;
        std::string s(e);
        if (s == "quiet") return LogLevel::Quiet;
        if (s == "debug") return LogLevel::Debug;
        return LogLevel::Info;
    }();
    return lvl;
}

void log_info(const std::string& msg) {
    if (log_level() >= LogLevel::Info) std::fprintf(stderr, "[mome] %s\n", msg.c_str());
}

void log_debug(const std::string& msg) {
    if (log_level() >= LogLevel::Debug) std::fprintf(stderr, "[mome:debug] %s\n", msg.c_str());
}

}  // namespace mome
