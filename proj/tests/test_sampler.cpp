#include <gtest/gtest.h>

#include <cmath>

#include "diffsos/sampler.hpp"
#include "support.hpp"

using namespace diffsos;
using namespace diffsos::testing;

TEST(Sampler, DeterministicSigmaIsZero) {
    const NoiseSchedule s = make_linear_schedule(1000, 1e-4, 0.02);
    for (std::size_t t = 1; t <= 1000; ++t) {
        EXPECT_EQ(ddim_sigma(t, t - 1, 0.0, s), 0.0);
        EXPECT_EQ(ddim_sigma(t, t / 2, 0.0, s), 0.0);
    }
}

TEST(Sampler, AdjacentStepSigmaIsPosteriorVariance) {
    const NoiseSchedule s = make_linear_schedule(1000, 1e-4, 0.02);
    double worst = 0.0;
    for (std::size_t t = 1; t <= 1000; ++t) {
        const double posterior = (1 - s.alpha_bar_at(t - 1)) / (1 - s.alpha_bar_at(t)) * s.beta_at(t);
        const double sig = ddim_sigma(t, t - 1, 1.0, s);
        const double rel = std::fabs(sig * sig - posterior) / std::max(posterior, 1e-300);
        if (posterior == 0.0) {
            EXPECT_EQ(sig, 0.0);
        } else {
            worst = std::max(worst, rel);
        }
    }
    EXPECT_LT(worst, 1e-10);
}

TEST(Sampler, Timesteps) {
    EXPECT_EQ(ddim_timesteps(1000, 4), (std::vector<std::size_t>{1000, 750, 500, 250, 0}));
    EXPECT_EQ(ddim_timesteps(10, 10), (std::vector<std::size_t>{10, 9, 8, 7, 6, 5, 4, 3, 2, 1, 0}));
    const auto ts = ddim_timesteps(1000, 7);
    EXPECT_EQ(ts.front(), 1000u);
    for (std::size_t i = 0; i + 1 < ts.size(); ++i) EXPECT_GT(ts[i], ts[i + 1]);
    EXPECT_THROW(ddim_timesteps(10, 11), ConfigError);
    EXPECT_THROW(ddim_timesteps(10, 0), ConfigError);
}

TEST(Sampler, StochasticStepMatchesClosedForm) {
    const NoiseSchedule s = make_linear_schedule(1000, 1e-4, 0.02);
    const std::size_t n = 10000, t = 600, tp = 500;
    SamplerConfig cfg;
    cfg.eta = 1.0;
    cfg.clamp_x0 = false;
    const Tensor xt = Tensor::full({1, 1, 100, 100}, 0.3);
    const Tensor eh = Tensor::full({1, 1, 100, 100}, -0.2);
    RandomStream rng(12, 34);
    const Tensor x = ddim_step(xt, t, tp, eh, cfg, s, rng);

    const double ab = s.alpha_bar_at(t), abp = s.alpha_bar_at(tp);
    const double sig = ddim_sigma(t, tp, 1.0, s);
    const double x0 = (0.3 - std::sqrt(1 - ab) * -0.2) / std::sqrt(ab);
    const double mu = std::sqrt(abp) * x0 + std::sqrt(1 - abp - sig * sig) * -0.2;
    double m = 0, v = 0;
    for (double a : x.data()) m += a;
    m /= n;
    for (double a : x.data()) v += (a - m) * (a - m);
    const double sd = std::sqrt(v / (n - 1));
    EXPECT_LT(std::fabs(m - mu), 3 * sig / std::sqrt(double(n)));
    // Standard error of a sample std is about sigma / sqrt(2n).
    EXPECT_LT(std::fabs(sd - sig), 3 * sig / std::sqrt(2.0 * n));
}

TEST(Sampler, DeterministicStepDrawsNoNoise) {
    const NoiseSchedule s = make_linear_schedule(1000, 1e-4, 0.02);
    SamplerConfig cfg;
    cfg.eta = 0.0;
    RandomStream rng(1, 1);
    const Tensor xt = random_normal({2, 1, 4, 4}, rng), eh = random_normal({2, 1, 4, 4}, rng);
    RandomStream a(5, 5), b(6, 6);
    const Tensor xa = ddim_step(xt, 800, 400, eh, cfg, s, a), xb = ddim_step(xt, 800, 400, eh, cfg, s, b);
    for (std::size_t i = 0; i < xa.numel(); ++i) EXPECT_EQ(xa[i], xb[i]);
    EXPECT_EQ(a.counter(), 0u);
}

TEST(Sampler, FinalStepReturnsClampedEstimate) {
    const NoiseSchedule s = make_linear_schedule(1000, 1e-4, 0.02);
    SamplerConfig cfg;
    RandomStream rng(1, 1);
    const Tensor xt = Tensor::from({1, 1, 1, 3}, {5.0, -5.0, 0.1});
    const Tensor x = ddim_step(xt, 1, 0, Tensor::zeros({1, 1, 1, 3}), cfg, s, rng);
    EXPECT_EQ(x[0], 1.0);
    EXPECT_EQ(x[1], -1.0);
    EXPECT_DOUBLE_EQ(x[2], 0.1 / std::sqrt(s.alpha_bar_at(1)));
}

TEST(Sampler, UncertaintyOfTwoMembers) {
    const std::vector<Image> m{Image(2, 2, 0.0), Image(2, 2, 2.0)};
    const UncertaintyMap u = uncertainty_from_members(m);
    EXPECT_EQ(u.ensemble_size, 2u);
    for (double v : u.variance.pixels) EXPECT_DOUBLE_EQ(v, 1.0);
    for (double v : u.ensemble_mean.pixels) EXPECT_DOUBLE_EQ(v, 1.0);
}

TEST(Sampler, FullTrajectoryProperties) {
    const Denoiser d(tiny_denoiser());
    const DenoiserParams p = d.init_params(3);
    const NoiseSchedule s = make_linear_schedule(1000, 1e-4, 0.02);
    RandomStream rng(2, 2);
    const Tensor y = random_normal({1, 3, 40, 6}, rng);
    SamplerConfig cfg;
    cfg.num_steps = 5;
    cfg.seed = 9;

    cfg.eta = 0.0;
    const EnsembleResult det = sample_ensemble(y, d, p.weights, cfg, s, 4, 17);
    ASSERT_EQ(det.members.size(), 4u);
    for (double v : det.uncertainty.variance.pixels) EXPECT_EQ(v, 0.0);

    cfg.eta = 1.0;
    const EnsembleResult a = sample_ensemble(y, d, p.weights, cfg, s, 3, 17);
    const EnsembleResult b = sample_ensemble(y, d, p.weights, cfg, s, 3, 17);
    double var = 0;
    for (std::size_t k = 0; k < 3; ++k) {
        for (std::size_t i = 0; i < 64; ++i) ASSERT_EQ(a.members[k].pixels[i], b.members[k].pixels[i]);
    }
    for (double v : a.uncertainty.variance.pixels) var += v;
    EXPECT_GT(var, 0.0);

    SampleTrace trace;
    const std::vector<std::uint64_t> ids{17};
    const Tensor x = sample(y, d, p.weights, cfg, s, ids, &trace);
    ASSERT_EQ(trace.max_abs_x0_hat.size(), 5u);
    for (double m : trace.max_abs_x0_hat) EXPECT_LE(m, 1.0);
    for (double v : x.data()) {
        EXPECT_TRUE(std::isfinite(v));
        EXPECT_LE(std::fabs(v), 1.0);
    }
}
