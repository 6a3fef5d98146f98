// Seeded, stream-splittable random number generation.
//
// RngStream wraps a PCG64 generator addressed by (seed, stream_id): the same
// pair reproduces the same draws bit-for-bit on one platform, and derive()
// hashes a child index into a fresh stream so parallel Monte Carlo workers
// never share state.  Standard normals come from a 256-layer ziggurat.

#pragma once

#include <cmath>
#include <cstdint>
#include <cstddef>

namespace attnpca {

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

namespace detail {

class Pcg64 {
public:
    using u128 = unsigned __int128;

    Pcg64(std::uint64_t seed, std::uint64_t stream) {
        const u128 initstate =
            (static_cast<u128>(splitmix64(seed)) << 64) |
            splitmix64(seed ^ 0xda3e39cb94b95bdbULL);
        const u128 initseq =
            (static_cast<u128>(splitmix64(stream)) << 64) |
            splitmix64(stream ^ 0xd6e8feb86659fd93ULL);
        inc_ = (initseq << 1) | 1;
        state_ = 0;
        next();
        state_ += initstate;
        next();
    }

    std::uint64_t next() {
        state_ = state_ * multiplier() + inc_;
        const std::uint64_t hi = static_cast<std::uint64_t>(state_ >> 64);
        const std::uint64_t lo = static_cast<std::uint64_t>(state_);
        const std::uint64_t xored = hi ^ lo;
        const unsigned rot = static_cast<unsigned>(state_ >> 122);
        return (xored >> rot) | (xored << ((64u - rot) & 63u));
    }

private:
    static constexpr u128 multiplier() {
        return (static_cast<u128>(0x2360ed051fc65da4ULL) << 64) |
               0x4385df649fccf645ULL;
    }

    u128 state_{0};
    u128 inc_{1};
};

// Marsaglia-Tsang ziggurat tables for the standard normal, 256 layers.
// Magnitudes use 55 random bits, so the common path keeps full double
// precision.
struct ZigguratTables {
    static constexpr double kTailR = 3.6541528853610088;
    static constexpr double kArea = 0.00492867323399;
    static constexpr double kScale = 36028797018963968.0;  // 2^55

    std::uint64_t threshold[256];
    double weight[256];
    double density[256];

    ZigguratTables() {
        double dn = kTailR;
        double tn = kTailR;
        const double q = kArea / std::exp(-0.5 * dn * dn);

        threshold[0] = static_cast<std::uint64_t>((dn / q) * kScale);
        threshold[1] = 0;
        weight[0] = q / kScale;
        weight[255] = dn / kScale;
        density[0] = 1.0;
        density[255] = std::exp(-0.5 * dn * dn);

        for (int i = 254; i >= 1; --i) {
            dn = std::sqrt(-2.0 * std::log(kArea / dn + std::exp(-0.5 * dn * dn)));
            threshold[i + 1] = static_cast<std::uint64_t>((dn / tn) * kScale);
            tn = dn;
            density[i] = std::exp(-0.5 * dn * dn);
            weight[i] = dn / kScale;
        }
    }
};

inline const ZigguratTables& ziggurat_tables() {
    static const ZigguratTables tables;
    return tables;
}

}  // namespace detail

// A reproducible random stream addressed by (seed, stream_id).
class RngStream {
public:
    RngStream(std::uint64_t seed, std::uint64_t stream_id)
        : seed_(seed), stream_id_(stream_id), gen_(seed, stream_id) {}

    std::uint64_t seed() const { return seed_; }
    std::uint64_t stream_id() const { return stream_id_; }

    // Independent child stream; deterministic in (stream_id, child).
    RngStream derive(std::uint64_t child) const {
        return RngStream(seed_, splitmix64(stream_id_ ^ splitmix64(child ^ 0x6a09e667f3bcc909ULL)));
    }

    std::uint64_t next_u64() { return gen_.next(); }

    // Uniform on [0, 1) with 53 bits.
    double uniform01() { return static_cast<double>(gen_.next() >> 11) * 0x1.0p-53; }

    // Uniform on (0, 1]; safe under log().
    double uniform_open() {
        return (static_cast<double>(gen_.next() >> 11) + 1.0) * 0x1.0p-53;
    }

    // Standard normal draw (ziggurat; exact tail via Marsaglia's method).
    double normal() {
        const auto& t = detail::ziggurat_tables();
        for (;;) {
            const std::uint64_t r = gen_.next();
            const int idx = static_cast<int>(r & 0xff);
            const std::uint64_t sign = (r >> 8) & 1;
            const std::uint64_t rabs = r >> 9;  // 55 bits
            const double x = static_cast<double>(rabs) * t.weight[idx];
            if (rabs < t.threshold[idx]) {
                return sign ? -x : x;
            }
            if (idx == 0) {
                // Tail beyond kTailR.
                double xx, yy;
                do {
                    xx = -std::log(uniform_open()) / detail::ZigguratTables::kTailR;
                    yy = -std::log(uniform_open());
                } while (yy + yy < xx * xx);
                const double v = detail::ZigguratTables::kTailR + xx;
                return sign ? -v : v;
            }
            if (t.density[idx] + uniform01() * (t.density[idx - 1] - t.density[idx]) <
                std::exp(-0.5 * x * x)) {
                return sign ? -x : x;
            }
        }
    }

    void fill_normal(double* out, std::size_t n) {
        for (std::size_t i = 0; i < n; ++i) out[i] = normal();
    }

private:
    std::uint64_t seed_;
    std::uint64_t stream_id_;
    detail::Pcg64 gen_;
};

}  // namespace attnpca
