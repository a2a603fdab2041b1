#include <gtest/gtest.h>

#include "diffsos/denoiser.hpp"
#include "diffsos/loss.hpp"
#include "diffsos/trainer.hpp"
#include "support.hpp"

using namespace diffsos;
using namespace diffsos::testing;

namespace {

DenoiserConfig tiny(Conditioning c = Conditioning::controlnet) { return tiny_denoiser(c); }

} // namespace

TEST(Denoiser, DefaultConfigStaysUnderTwoMillionParameters) {
    const Denoiser d(DenoiserConfig{});
    EXPECT_LT(d.parameter_count(), 2'000'000u);
    EXPECT_GT(d.parameter_count(), 100'000u);
}

TEST(Denoiser, CouplersStartAtZero) {
    const Denoiser d(tiny());
    const DenoiserParams p = d.init_params(3);
    std::size_t couplers = 0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        if (p.groups[i] != ParamGroup::coupler) continue;
        ++couplers;
        for (double v : p.weights[i].data()) ASSERT_EQ(v, 0.0) << p.names[i];
    }
    EXPECT_EQ(couplers, 2 * tiny().num_scales());
    for (std::size_t i = 0; i < p.size(); ++i) {
        for (std::size_t k = 0; k < p.weights[i].numel(); ++k) ASSERT_EQ(p.weights[i][k], p.ema_shadow[i][k]);
    }
}

TEST(Denoiser, FreshModelIgnoresConditionBitwise) {
    const Denoiser d(tiny());
    const DenoiserParams p = d.init_params(11);
    RandomStream rng(2, 2);
    const Tensor x = random_normal({2, 1, 8, 8}, rng);
    const Tensor y1 = random_normal({2, 3, 40, 6}, rng), y2 = random_normal({2, 3, 40, 6}, rng);
    const std::vector<std::size_t> t{10, 700};
    NoGradGuard ng;
    const Tensor a = d.forward(x, t, y1, p.weights), b = d.forward(x, t, y2, p.weights);
    const Tensor z = d.forward(x, t, Tensor::zeros({2, 3, 40, 6}), p.weights);
    for (std::size_t i = 0; i < a.numel(); ++i) {
        ASSERT_EQ(a[i], b[i]);
        ASSERT_EQ(a[i], z[i]);
    }
}

TEST(Denoiser, ConcatVariantSeesConditionAtInit) {
    const Denoiser d(tiny(Conditioning::concat));
    const DenoiserParams p = d.init_params(11);
    RandomStream rng(2, 3);
    const Tensor x = random_normal({1, 1, 8, 8}, rng);
    const std::vector<std::size_t> t{10};
    NoGradGuard ng;
    const Tensor a = d.forward(x, t, random_normal({1, 3, 40, 6}, rng), p.weights);
    const Tensor b = d.forward(x, t, random_normal({1, 3, 40, 6}, rng), p.weights);
    double diff = 0;
    for (std::size_t i = 0; i < a.numel(); ++i) diff = std::max(diff, std::fabs(a[i] - b[i]));
    EXPECT_GT(diff, 1e-9);
}

TEST(Denoiser, OutputShapeMatchesInput) {
    for (std::size_t scales = 1; scales <= 3; ++scales) {
        DenoiserConfig c = tiny();
        c.channel_multipliers.assign(scales, 1);
        for (std::size_t i = 0; i < scales; ++i) c.channel_multipliers[i] = i + 1;
        c.map_height = 8;
        c.map_width = 12 - 12 % (1 << (scales - 1));
        const Denoiser d(c);
        const DenoiserParams p = d.init_params(1);
        RandomStream rng(scales, 0);
        const Tensor x = random_normal({2, 1, c.map_height, c.map_width}, rng);
        const std::vector<std::size_t> t{1, 2};
        NoGradGuard ng;
        EXPECT_EQ(d.forward(x, t, random_normal({2, 3, 40, 6}, rng), p.weights).shape(), x.shape());
    }
}

TEST(Denoiser, WaveformFeaturesMatchEncoderScales) {
    const DenoiserConfig c = tiny();
    const Denoiser d(c);
    const DenoiserParams p = d.init_params(1);
    RandomStream rng(1, 1);
    const std::vector<std::size_t> t{5};
    NoGradGuard ng;
    const auto feats = d.encode_waveform(random_normal({1, 3, 40, 6}, rng), d.time_features(t, p.weights), p.weights);
    ASSERT_EQ(feats.size(), c.num_scales());
    for (std::size_t i = 0; i < feats.size(); ++i) {
        EXPECT_EQ(feats[i].shape(), (Shape{1, c.channels(i), c.map_height >> i, c.map_width >> i}));
    }
}

TEST(Denoiser, RejectsMismatchedGeometry) {
    const Denoiser d(tiny());
    const DenoiserParams p = d.init_params(1);
    const std::vector<std::size_t> t{5};
    EXPECT_THROW(d.forward(Tensor::zeros({1, 1, 8, 8}), t, Tensor::zeros({1, 4, 40, 6}), p.weights), ShapeError);
    EXPECT_THROW(d.forward(Tensor::zeros({1, 1, 8, 4}), t, Tensor::zeros({1, 3, 40, 6}), p.weights), ShapeError);
    DenoiserConfig bad = tiny();
    bad.map_height = 7;
    EXPECT_THROW(Denoiser{bad}, ConfigError);
}

TEST(Denoiser, CouplerGradientsAreNonZeroAfterOneBackward) {
    const Denoiser d(tiny());
    DenoiserParams p = d.init_params(5);
    const NoiseSchedule s = make_linear_schedule(1000, 1e-4, 0.02);
    RandomStream rng(5, 5);
    LossBatch b{random_tensor({2, 1, 8, 8}, rng), random_normal({2, 3, 40, 6}, rng), {100, 600},
                random_normal({2, 1, 8, 8}, rng)};
    backward(loss_total(b, d, p.weights, s, LossWeights{}).total);
    for (std::size_t i = 0; i < p.size(); ++i) {
        if (p.groups[i] != ParamGroup::coupler || p.names[i].find("weight") == std::string::npos) continue;
        double m = 0;
        for (double g : p.weights[i].grad()) m = std::max(m, std::fabs(g));
        EXPECT_GT(m, 0.0) << p.names[i];
    }
}

TEST(Denoiser, TrainingMakesOutputDependOnCondition) {
    const Denoiser d(tiny());
    TrainConfig tc;
    tc.lr_max = 1e-3;
    TrainState st = init_train_state(d, tc);
    const NoiseSchedule s = make_linear_schedule(1000, 1e-4, 0.02);
    RandomStream rng(8, 8);
    const Tensor y1 = random_normal({1, 3, 40, 6}, rng), y2 = random_normal({1, 3, 40, 6}, rng);
    for (int step = 0; step < 100; ++step) {
        LossBatch b{random_tensor({2, 1, 8, 8}, rng), random_normal({2, 3, 40, 6}, rng),
                    {1 + rng.below(1000), 1 + rng.below(1000)}, random_normal({2, 1, 8, 8}, rng)};
        st.params.zero_grad();
        backward(loss_total(b, d, st.params.weights, s, LossWeights{}).total);
        adam_step(st.params.weights, st.opt, 1e-3);
    }
    const Tensor x = random_normal({1, 1, 8, 8}, rng);
    const std::vector<std::size_t> t{300};
    NoGradGuard ng;
    const Tensor a = d.forward(x, t, y1, st.params.weights), b = d.forward(x, t, y2, st.params.weights);
    double diff = 0;
    for (std::size_t i = 0; i < a.numel(); ++i) diff = std::max(diff, std::fabs(a[i] - b[i]));
    EXPECT_GT(diff, 1e-6);
}

TEST(Denoiser, InitIsDeterministicInSeed) {
    const Denoiser d(tiny());
    const DenoiserParams a = d.init_params(4), b = d.init_params(4), c = d.init_params(5);
    bool any_diff = false;
    for (std::size_t i = 0; i < a.size(); ++i) {
        for (std::size_t k = 0; k < a.weights[i].numel(); ++k) {
            ASSERT_EQ(a.weights[i][k], b.weights[i][k]);
            any_diff |= a.weights[i][k] != c.weights[i][k];
        }
    }
    EXPECT_TRUE(any_diff);
}
