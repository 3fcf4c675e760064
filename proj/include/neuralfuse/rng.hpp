#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <string_view>

namespace nf {

// splitmix64 step. Used both as a seed expander and as the final mixer for
// stream-key derivation.
inline uint64_t splitmix64(uint64_t& state) {
    uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

// xoshiro256++ seeded through splitmix64. One instance per logical stream;
// instances are cheap and never shared between threads.
class Rng {
public:
    explicit Rng(uint64_t seed) {
        uint64_t s = seed;
        for (auto& word : state_) word = splitmix64(s);
    }

    uint64_t next() {
        const uint64_t result = rotl(state_[0] + state_[3], 23) + state_[0];
        const uint64_t t = state_[1] << 17;
        state_[2] ^= state_[0];
        state_[3] ^= state_[1];
        state_[1] ^= state_[2];
        state_[0] ^= state_[3];
        state_[2] ^= t;
        state_[3] = rotl(state_[3], 45);
        return result;
    }

    // Uniform double in [0, 1), 53 mantissa bits.
    double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

    // Uniform integer in [lo, hi] inclusive, rejection-sampled so the
    // distribution is exact and the stream stays reproducible.
    uint64_t uniform_int(uint64_t lo, uint64_t hi) {
        const uint64_t range = hi - lo + 1;
        if (range == 0) return next();  // full 64-bit range
        const uint64_t limit = UINT64_MAX - UINT64_MAX % range;
        uint64_t draw;
        do {
            draw = next();
        } while (draw >= limit);
        return lo + draw % range;
    }

    // Standard normal via Box-Muller; the spare value is cached so each
    // draw consumes a deterministic amount of the underlying stream.
    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = uniform();
        double u2 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        const double mag = std::sqrt(-2.0 * std::log(u1));
        const double ang = 6.283185307179586476925286766559 * u2;
        spare_ = mag * std::sin(ang);
        has_spare_ = true;
        return mag * std::cos(ang);
    }

private:
    static uint64_t rotl(uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

    std::array<uint64_t, 4> state_{};
    double spare_ = 0.0;
    bool has_spare_ = false;
};

// ---------------------------------------------------------------------------
// Stream-key derivation.
//
// Every random decision in the library draws from a stream addressed by a
// root seed plus a path of labels and indices, hashed as
//
//     key = splitmix64( fnv1a64( seed || part_0 || 0x1f || part_1 || ... ) )
//
// where string parts contribute their bytes and integer parts contribute
// eight little-endian bytes. Distinct label paths ("train" vs "eval" fault
// masks, per-layer masks, per-parameter init) therefore yield independent,
// reproducible streams.
// ---------------------------------------------------------------------------

class StreamKey {
public:
    explicit StreamKey(uint64_t seed) { feed_u64(seed); }

    // Derivation is value-semantic: the parent key is never modified, so a
    // key may branch into any number of child streams.
    StreamKey operator/(std::string_view label) const {
        StreamKey child = *this;
        child.hash_ ^= 0x1f;
        child.hash_ *= kPrime;
        for (unsigned char c : label) {
            child.hash_ ^= c;
            child.hash_ *= kPrime;
        }
        return child;
    }

    StreamKey operator/(uint64_t index) const {
        StreamKey child = *this;
        child.hash_ ^= 0x1f;
        child.hash_ *= kPrime;
        child.feed_u64(index);
        return child;
    }

    uint64_t value() const {
        uint64_t s = hash_;
        return splitmix64(s);
    }

    Rng rng() const { return Rng(value()); }

private:
    static constexpr uint64_t kPrime = 0x100000001b3ULL;

    void feed_u64(uint64_t v) {
        for (int i = 0; i < 8; ++i) {
            hash_ ^= (v >> (8 * i)) & 0xff;
            hash_ *= kPrime;
        }
    }

    uint64_t hash_ = 0xcbf29ce484222325ULL;  // FNV-1a offset basis
};

}  // namespace nf
