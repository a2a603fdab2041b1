#include <gtest/gtest.h>

#include <cmath>

#include "diffsos/schedule.hpp"
#include "support.hpp"

using namespace diffsos;
using namespace diffsos::testing;

TEST(Schedule, TwoStepHandProduct) {
    const NoiseSchedule s = make_linear_schedule(2, 0.1, 0.2);
    EXPECT_DOUBLE_EQ(s.alpha_bar_at(1), 0.9);
    EXPECT_NEAR(s.alpha_bar_at(2), 0.72, 1e-15);
    EXPECT_EQ(s.alpha_bar_at(0), 1.0);
}

TEST(Schedule, SingleStep) {
    const NoiseSchedule s = make_linear_schedule(1, 0.3, 0.3);
    EXPECT_DOUBLE_EQ(s.alpha_bar_at(1), 0.7);
}

TEST(Schedule, DefaultEndsNearPureNoise) {
    const NoiseSchedule s = make_linear_schedule(1000, 1e-4, 0.02);
    double prod = 1.0;
    for (int t = 0; t < 1000; ++t) prod *= 1.0 - (1e-4 + (0.02 - 1e-4) * t / 999.0);
    EXPECT_NEAR(s.alpha_bar_at(1000), prod, 1e-15);
    EXPECT_LT(s.alpha_bar_at(1000), 1e-4);
}

TEST(Schedule, InvariantsForLinearAndCosine) {
    for (const NoiseSchedule& s : {make_linear_schedule(1000, 1e-4, 0.02), make_cosine_schedule(500)}) {
        for (std::size_t t = 1; t <= s.steps(); ++t) {
            EXPECT_GT(s.beta_at(t), 0.0);
            EXPECT_LT(s.beta_at(t), 1.0);
            EXPECT_LT(s.alpha_bar_at(t), s.alpha_bar_at(t - 1));
            EXPECT_EQ(s.alpha_bar_at(t), s.alpha_bar_at(t - 1) * s.alpha_at(t));
        }
    }
}

TEST(Schedule, RejectsBadBounds) {
    EXPECT_THROW(make_linear_schedule(0, 1e-4, 0.02), ConfigError);
    EXPECT_THROW(make_linear_schedule(10, 0.0, 0.02), ConfigError);
    EXPECT_THROW(make_linear_schedule(10, 0.03, 0.02), ConfigError);
    EXPECT_THROW(make_linear_schedule(10, 1e-4, 1.0), ConfigError);
    const NoiseSchedule s = make_linear_schedule(10, 1e-4, 0.02);
    EXPECT_THROW(s.alpha_bar_at(11), ConfigError);
    EXPECT_THROW(s.beta_at(0), ConfigError);
}

TEST(QSample, BoundaryCases) {
    const NoiseSchedule s = make_linear_schedule(1000, 1e-4, 0.02);
    RandomStream rng(1, 2);
    const Tensor x0 = random_tensor({1, 1, 4, 4}, rng), eps = random_normal({1, 1, 4, 4}, rng);
    const Tensor at0 = q_sample(x0, 0, eps, s);
    for (std::size_t i = 0; i < 16; ++i) EXPECT_EQ(at0[i], x0[i]);
    const Tensor zero = q_sample(Tensor::zeros({1, 1, 4, 4}), 300, eps, s);
    for (std::size_t i = 0; i < 16; ++i) EXPECT_DOUBLE_EQ(zero[i], std::sqrt(1 - s.alpha_bar_at(300)) * eps[i]);
    const Tensor noiseless = q_sample(x0, 300, Tensor::zeros({1, 1, 4, 4}), s);
    for (std::size_t i = 0; i < 16; ++i) EXPECT_EQ(noiseless[i], std::sqrt(s.alpha_bar_at(300)) * x0[i]);
    EXPECT_THROW(q_sample(x0, 1001, eps, s), ConfigError);
    EXPECT_THROW(q_sample(x0, 5, Tensor::zeros({1, 1, 4, 3}), s), ShapeError);
}

TEST(QSample, VariancePreservation) {
    const NoiseSchedule s = make_linear_schedule(1000, 1e-4, 0.02);
    RandomStream rng(4, 4);
    const std::size_t n = 20000;
    const std::size_t t = 250;
    const Tensor x0 = random_normal({n}, rng), eps = random_normal({n}, rng);
    const Tensor xt = q_sample(x0, t, eps, s);
    double m = 0, v = 0;
    for (double x : xt.data()) m += x;
    m /= n;
    for (double x : xt.data()) v += (x - m) * (x - m);
    v /= n;
    // Var(x_t) = ab Var(x0) + (1 - ab) = 1; std error of a unit-variance sample variance ~ sqrt(2/n).
    EXPECT_NEAR(v, 1.0, 3.0 * std::sqrt(2.0 / n) * 1.5);
}

TEST(QSample, BatchedMatchesSingle) {
    const NoiseSchedule s = make_linear_schedule(100, 1e-4, 0.02);
    RandomStream rng(1, 9);
    const Tensor x0 = random_tensor({3, 1, 2, 2}, rng), eps = random_normal({3, 1, 2, 2}, rng);
    const std::vector<std::size_t> ts{1, 50, 100};
    const Tensor b = q_sample(x0, ts, eps, s);
    for (std::size_t i = 0; i < 3; ++i) {
        for (std::size_t k = 0; k < 4; ++k) {
            const double expect = std::sqrt(s.alpha_bar_at(ts[i])) * x0[i * 4 + k] +
                                  std::sqrt(1 - s.alpha_bar_at(ts[i])) * eps[i * 4 + k];
            EXPECT_DOUBLE_EQ(b[i * 4 + k], expect);
        }
    }
}

TEST(Embedding, ZeroStepAndBounds) {
    const TimestepEmbedding e0 = embed_timestep(0, 256);
    for (std::size_t i = 0; i < 128; ++i) EXPECT_EQ(e0.values[i], 0.0);
    for (std::size_t i = 128; i < 256; ++i) EXPECT_EQ(e0.values[i], 1.0);
    for (int t = 1; t <= 1000; ++t) {
        for (double v : embed_timestep(t, 256).values) {
            ASSERT_LE(std::fabs(v), 1.0);
        }
    }
    EXPECT_THROW(embed_timestep(3, 255), ConfigError);
}

TEST(Embedding, DistinctSteps) {
    std::vector<std::vector<double>> all;
    for (int t = 1; t <= 1000; ++t) all.push_back(embed_timestep(t, 256).values);
    double min_d = 1e300;
    for (std::size_t a = 0; a < all.size(); ++a) {
        for (std::size_t b = a + 1; b < all.size(); ++b) {
            double d = 0;
            for (std::size_t i = 0; i < 256; ++i) d += (all[a][i] - all[b][i]) * (all[a][i] - all[b][i]);
            min_d = std::min(min_d, d);
        }
    }
    EXPECT_GT(min_d, 0.0);
}

TEST(Embedding, FrequencyLayout) {
    const TimestepEmbedding e = embed_timestep(7, 8);
    for (std::size_t i = 0; i < 4; ++i) {
        const double w = std::pow(10000.0, -2.0 * double(i) / 8.0);
        EXPECT_DOUBLE_EQ(e.values[i], std::sin(7 * w));
        EXPECT_DOUBLE_EQ(e.values[i + 4], std::cos(7 * w));
    }
}
