#pragma once

#include <cstdint>
#include <cstdio>
#include <cmath>
#include <string>
#include <vector>

namespace psilvm {

// splitmix64: stateless 64-bit mixer. Used as the building block of the
// counter-based random streams so that draws depend only on (seed, counter),
// never on call order.
inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ull;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
    return x ^ (x >> 31);
}

inline std::uint64_t hash_combine(std::uint64_t a, std::uint64_t b) {
    return splitmix64(a ^ splitmix64(b + 0x9E3779B97F4A7C15ull));
}

// Uniform in (0, 1]; never returns 0 so it is safe inside log().
inline double counter_uniform(std::uint64_t seed, std::uint64_t counter) {
    std::uint64_t bits = splitmix64(splitmix64(seed) ^ splitmix64(counter));
    return (static_cast<double>(bits >> 11) + 1.0) * 0x1.0p-53;
}

// Standard normal keyed by (seed, counter) via Box-Muller.
inline double counter_normal(std::uint64_t seed, std::uint64_t counter) {
    double u1 = counter_uniform(seed, 2 * counter);
    double u2 = counter_uniform(seed, 2 * counter + 1);
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
}

// Deterministic Fisher-Yates shuffle (std::shuffle is implementation-defined,
// which would break cross-platform reproducibility of fold assignments).
template <typename T>
void deterministic_shuffle(std::vector<T>& v, std::uint64_t seed) {
    for (std::size_t i = v.size(); i > 1; --i) {
        std::uint64_t j = splitmix64(splitmix64(seed) ^ (i - 1)) % i;
        std::swap(v[i - 1], v[j]);
    }
}

// FNV-1a over bytes; stable content fingerprint for datasets and manifests.
inline std::uint64_t fnv1a(const void* data, std::size_t n, std::uint64_t h = 0xCBF29CE484222325ull) {
    const unsigned char* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 0x100000001B3ull;
    }
    return h;
}

inline std::uint64_t fnv1a(const std::string& s, std::uint64_t h = 0xCBF29CE484222325ull) {
    return fnv1a(s.data(), s.size(), h);
}

std::string to_hex(std::uint64_t v);

// Diagnostics go to stderr; data files stay clean.
void log_warn(const std::string& msg);

// 17 significant digits: enough for exact double round-trips in CSV output.
std::string format_double(double v);

extern const char* const kVersion;

}  // namespace psilvm
