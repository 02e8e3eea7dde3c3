#include "psilvm/util.hpp"

#include <cstdio>

namespace psilvm {

const char* const kVersion = "0.1.0";

std::string to_hex(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
    return std::string(buf);
}

void log_warn(const std::string& msg) {
    std::fprintf(stderr, "warning: %s\n", msg.c_str());
}

std::string format_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return std::string(buf);
}

}  // namespace psilvm
