#pragma once

#include <cstdint>
#include <span>

namespace diffsos {

/// Counter-based random stream: value k of stream (seed, stream) is a pure
/// function of (seed, stream, k), so streams can be split across workers and
/// resumed from a stored counter without replaying history.
class RandomStream {
public:
    RandomStream() = default;
    RandomStream(std::uint64_t seed, std::uint64_t stream, std::uint64_t counter = 0)
        : seed_(seed), stream_(stream), counter_(counter) {}

    /// Raw 64 random bits at counter position k (stateless).
    static std::uint64_t bits(std::uint64_t seed, std::uint64_t stream, std::uint64_t k);

    std::uint64_t next_bits() { return bits(seed_, stream_, counter_++); }
    /// Uniform in [0, 1).
    double uniform();
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
    /// Standard normal (Box-Muller, consumes two counter positions).
    double normal();
    /// Uniform integer in [0, n).
    std::uint64_t below(std::uint64_t n);

    void fill_normal(std::span<double> out);

    std::uint64_t seed() const { return seed_; }
    std::uint64_t stream() const { return stream_; }
    std::uint64_t counter() const { return counter_; }

private:
    std::uint64_t seed_ = 0;
    std::uint64_t stream_ = 0;
    std::uint64_t counter_ = 0;
};

/// Stable mixing of several integers into one stream id.
std::uint64_t mix_ids(std::uint64_t a, std::uint64_t b, std::uint64_t c = 0);

} // namespace diffsos
