#pragma once

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>

namespace bare {

// Error taxonomy. Shape/config/value errors are validation failures (CLI exit 1),
// numeric errors are runtime failures (CLI exit 2).
struct ShapeError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct ValueError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct VocabError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct IoError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

// Order-independent derived seeds: each (seed, stream...) pair gets its own
// engine so parallel generation stays reproducible under any schedule.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0) {
    return splitmix64(splitmix64(seed ^ splitmix64(a)) ^ splitmix64(b ^ 0x5bf03635d0c8372bULL));
}

inline std::uint64_t fnv1a64(const std::string& s) {
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

inline std::mt19937_64 make_rng(std::uint64_t seed) {
    return std::mt19937_64(seed);
}

}  // namespace bare
