#include "diffsos/rng.hpp"

#include <cmath>
#include <numbers>

namespace diffsos {

namespace {

constexpr std::uint64_t splitmix(std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

} // namespace

std::uint64_t RandomStream::bits(std::uint64_t seed, std::uint64_t stream, std::uint64_t k) {
    return splitmix(splitmix(splitmix(seed) ^ stream) ^ (k * 0xd1342543de82ef95ULL + 0x2545f4914f6cdd1dULL));
}

double RandomStream::uniform() {
    // 53 random mantissa bits.
    return static_cast<double>(next_bits() >> 11) * 0x1.0p-53;
}

double RandomStream::normal() {
    double u1 = uniform();
    const double u2 = uniform();
    if (u1 <= 0.0) u1 = 0x1.0p-54;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

std::uint64_t RandomStream::below(std::uint64_t n) {
    // Bias is < 2^-40 for the small n used here.
    return n == 0 ? 0 : next_bits() % n;
}

void RandomStream::fill_normal(std::span<double> out) {
    for (double& v : out) v = normal();
}

std::uint64_t mix_ids(std::uint64_t a, std::uint64_t b, std::uint64_t c) {
    return splitmix(splitmix(splitmix(a) + b) + c);
}

} // namespace diffsos
