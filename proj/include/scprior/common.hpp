#pragma once

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>

namespace scprior {

// Base error for everything raised by the library. The CLI maps
// validation_error to exit code 2 and every other error to exit code 1.
struct error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Bad user input: malformed config, dimension mismatch, out-of-range value.
struct validation_error : error {
    using error::error;
};

// Malformed file contents; message carries the byte offset where parsing failed.
struct parse_error : error {
    using error::error;
};

inline void require(bool cond, const std::string& msg) {
    if (!cond) throw validation_error(msg);
}

// --- seeding -----------------------------------------------------------

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

// Per-task seed derivation: independent streams for parallel jobs.
inline std::uint64_t derive_seed(std::uint64_t global_seed, std::uint64_t task_index) {
    return splitmix64(global_seed ^ splitmix64(task_index + 0x51ed270b4d2cull));
}

// --- rng ----------------------------------------------------------------
//
// Gaussian draws go through an explicit Box-Muller transform instead of
// std::normal_distribution, whose output sequence is implementation-defined.
// Every artifact in the toolkit must be reproducible from its seed alone.
class Rng {
public:
    explicit Rng(std::uint64_t seed = 0) : gen_(seed) {}

    // uniform in [0, 1)
    double uniform() {
        return static_cast<double>(gen_() >> 11) * 0x1.0p-53;
    }

    // uniform in (0, 1]
    double uniform_pos() {
        return static_cast<double>((gen_() >> 11) + 1) * 0x1.0p-53;
    }

    // standard normal via Box-Muller; the sine partner is discarded so the
    // stream has no hidden state beyond the engine itself
    double normal() {
        const double u1 = uniform_pos();
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925286766559 * u2);
    }

    // uniform integer in [0, n)
    std::uint64_t uniform_int(std::uint64_t n) {
        // rejection sampling keeps the draw exactly uniform
        const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
        std::uint64_t x;
        do {
            x = gen_();
        } while (x >= limit);
        return x % n;
    }

    std::uint64_t raw() { return gen_(); }

private:
    std::mt19937_64 gen_;
};

// --- content hashing ------------------------------------------------------

inline std::uint64_t fnv1a64(const void* data, std::size_t n, std::uint64_t h = 0xcbf29ce484222325ull) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ull;
    }
    return h;
}

inline std::string hash_hex(std::uint64_t h) {
    static const char* digits = "0123456789abcdef";
    std::string s(16, '0');
    for (int i = 15; i >= 0; --i) {
        s[static_cast<std::size_t>(i)] = digits[h & 0xf];
        h >>= 4;
    }
    return s;
}

}  // namespace scprior
