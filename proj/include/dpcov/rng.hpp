#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

#include "dpcov/signal.hpp"

namespace dpcov {

// Deterministic Gaussian stream. std::normal_distribution is
// implementation-defined, so Box-Muller is hand-rolled on top of
// mt19937_64 to keep trajectories reproducible across toolchains.
class GaussianStream {
public:
    explicit GaussianStream(uint64_t seed) : engine_(seed) {}

    double normal() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        // u1 in (0,1], u2 in [0,1)
        double u1 = (static_cast<double>(engine_() >> 11) + 1.0) * 0x1.0p-53;
        double u2 = static_cast<double>(engine_() >> 11) * 0x1.0p-53;
        double r = std::sqrt(-2.0 * std::log(u1));
        double a = 6.283185307179586476925286766559 * u2;
        spare_ = r * std::sin(a);
        have_spare_ = true;
        return r * std::cos(a);
    }

    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    void fill_normal(Signal& x) {
        for (double& v : x.data) v = normal();
    }

    Signal normal_signal(Shape shape) {
        Signal x(shape);
        fill_normal(x);
        return x;
    }

private:
    std::mt19937_64 engine_;
    double spare_ = 0.0;
    bool have_spare_ = false;
};

// One named stream per purpose (init, churn, ancestral, ...), split from the
// run seed so toggling one consumer does not perturb the draws of another.
inline uint64_t substream_seed(uint64_t seed, std::string_view purpose) {
    // FNV-1a over the label, mixed with the seed by splitmix64.
    uint64_t h = 1469598103934665603ull;
    for (char ch : purpose) {
        h ^= static_cast<unsigned char>(ch);
        h *= 1099511628211ull;
    }
    uint64_t z = seed + 0x9e3779b97f4a7c15ull + h;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

inline GaussianStream named_stream(uint64_t seed, std::string_view purpose) {
    return GaussianStream(substream_seed(seed, purpose));
}

} // namespace dpcov
