#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "diffsos/denoiser.hpp"
#include "diffsos/rng.hpp"
#include "diffsos/tensor.hpp"

namespace diffsos::testing {

inline Tensor random_tensor(Shape shape, RandomStream& rng, double lo = -1.0, double hi = 1.0, bool grad = false) {
    std::vector<double> v(shape_numel(shape));
    for (double& x : v) x = rng.uniform(lo, hi);
    return Tensor::from(std::move(shape), std::move(v), grad);
}

inline Tensor random_normal(Shape shape, RandomStream& rng, bool grad = false) {
    std::vector<double> v(shape_numel(shape));
    rng.fill_normal(v);
    return Tensor::from(std::move(shape), std::move(v), grad);
}

// Values bounded away from zero, for kinks at 0 (abs) and poles (sqrt).
inline Tensor random_away_from_zero(Shape shape, RandomStream& rng, double lo, double hi, bool grad = true) {
    std::vector<double> v(shape_numel(shape));
    for (double& x : v) x = (rng.uniform() < 0.5 ? -1.0 : 1.0) * rng.uniform(lo, hi);
    return Tensor::from(std::move(shape), std::move(v), grad);
}

struct GradCheck {
    double rel_error = 0.0;
    std::size_t evaluations = 0;
};

// Compares d/dx of sum(f(xs) * r), r a fixed random projection, against central
// differences. Error is ||g_a - g_n|| / max(||g_a||, ||g_n||, 1e-12) over all inputs.
inline GradCheck grad_check(const std::function<Tensor(const std::vector<Tensor>&)>& f, std::vector<Tensor> inputs,
                            std::uint64_t seed, double h = 1e-5) {
    const Tensor probe = f(inputs);
    RandomStream rng(seed, 0xabcdef);
    std::vector<double> r(probe.numel());
    for (double& x : r) x = rng.uniform(0.5, 1.5) * (rng.uniform() < 0.5 ? -1.0 : 1.0);
    const Tensor proj = Tensor::from(probe.shape(), r);
    auto scalar = [&](const std::vector<Tensor>& xs) { return sum(mul(f(xs), proj)); };

    for (auto& x : inputs) {
        if (x.requires_grad()) x.zero_grad();
    }
    backward(scalar(inputs));

    double diff2 = 0.0, a2 = 0.0, n2 = 0.0;
    GradCheck out;
    NoGradGuard no_grad;
    for (auto& x : inputs) {
        if (!x.requires_grad()) continue;
        const std::vector<double> analytic(x.grad().begin(), x.grad().end());
        auto data = x.mutable_data();
        for (std::size_t i = 0; i < data.size(); ++i) {
            const double keep = data[i];
            data[i] = keep + h;
            const double up = scalar(inputs).item();
            data[i] = keep - h;
            const double dn = scalar(inputs).item();
            data[i] = keep;
            const double numeric = (up - dn) / (2.0 * h);
            diff2 += (analytic[i] - numeric) * (analytic[i] - numeric);
            a2 += analytic[i] * analytic[i];
            n2 += numeric * numeric;
            out.evaluations += 2;
        }
    }
    out.rel_error = std::sqrt(diff2) / std::max({std::sqrt(a2), std::sqrt(n2), 1e-12});
    return out;
}

struct PrimitiveCase {
    std::string name;
    // Builds inputs for case k and returns the function under test.
    std::function<std::vector<Tensor>(RandomStream&, std::size_t)> make_inputs;
    std::function<Tensor(const std::vector<Tensor>&)> fn;
};

std::vector<PrimitiveCase> primitive_cases();

// Small enough to train for a few dozen steps inside a unit test.
inline DenoiserConfig tiny_denoiser(Conditioning c = Conditioning::controlnet) {
    DenoiserConfig cfg;
    cfg.base_channels = 8;
    cfg.channel_multipliers = {1, 2};
    cfg.res_blocks = 1;
    cfg.time_embed_dim = 16;
    cfg.groups = 4;
    cfg.waveform_channels = 3;
    cfg.waveform_time = 40;
    cfg.waveform_receivers = 6;
    cfg.map_height = 8;
    cfg.map_width = 8;
    cfg.conditioning = c;
    return cfg;
}

} // namespace diffsos::testing
