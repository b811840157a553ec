#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "hytrec/error.hpp"

namespace hytrec {

// Deterministic RNG. std::mt19937_64 has a standard-mandated output
// sequence, and we do our own value mapping so that results do not depend
// on the standard library's distribution implementations.
class Rng {
public:
    explicit Rng(uint64_t seed) : engine_(seed) {}

    // Uniform in [0, 1) with 53-bit resolution.
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Uniform integer in [0, n).
    int64_t uniform_int(int64_t n) {
        HYT_CHECK(Error, n > 0, "uniform_int requires n > 0, got ", n);
        return static_cast<int64_t>(engine_() % static_cast<uint64_t>(n));
    }

    uint64_t next_u64() { return engine_(); }

    // Fisher-Yates with our own index mapping; std::shuffle is
    // implementation-defined.
    template <typename T>
    void shuffle(std::vector<T>& items) {
        for (int64_t i = static_cast<int64_t>(items.size()) - 1; i > 0; --i) {
            int64_t j = uniform_int(i + 1);
            std::swap(items[static_cast<size_t>(i)], items[static_cast<size_t>(j)]);
        }
    }

    std::string save_state() const;
    void load_state(const std::string& text);

private:
    std::mt19937_64 engine_;
};

}  // namespace hytrec
