#include <gtest/gtest.h>

#include <cmath>
#include <complex>
#include <numbers>

#include "diffsos/loss.hpp"
#include "support.hpp"

using namespace diffsos;
using namespace diffsos::testing;

namespace {

// Direct O(n^4) DFT amplitude, independent of the library implementation.
std::vector<double> naive_dft_modulus(std::span<const double> x, std::size_t h, std::size_t w) {
    std::vector<double> out(h * w);
    for (std::size_t u = 0; u < h; ++u) {
        for (std::size_t v = 0; v < w; ++v) {
            std::complex<double> acc = 0.0;
            for (std::size_t r = 0; r < h; ++r) {
                for (std::size_t c = 0; c < w; ++c) {
                    const double ang = -2.0 * std::numbers::pi * (double(u * r) / h + double(v * c) / w);
                    acc += x[r * w + c] * std::polar(1.0, ang);
                }
            }
            out[u * w + v] = std::abs(acc);
        }
    }
    return out;
}

Tensor shifted(const Tensor& x, std::size_t dr, std::size_t dc) {
    const std::size_t n = x.dim(0), h = x.dim(2), w = x.dim(3);
    std::vector<double> v(x.numel());
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t r = 0; r < h; ++r) {
            for (std::size_t c = 0; c < w; ++c) v[(i * h + (r + dr) % h) * w + (c + dc) % w] = x[(i * h + r) * w + c];
        }
    }
    return Tensor::from(x.shape(), v);
}

} // namespace

TEST(Loss, HandCases) {
    EXPECT_DOUBLE_EQ(loss_noise(Tensor::zeros({2}), Tensor::full({2}, 1.0)).item(), 1.0);
    EXPECT_DOUBLE_EQ(loss_rec(Tensor::from({2}, {1, -1}), Tensor::zeros({2})).item(), 1.0);
    for (auto [h, w] : {std::pair{4, 4}, std::pair{3, 5}, std::pair{8, 2}}) {
        std::vector<double> delta(h * w, 0.0);
        delta[0] = 1.0;
        EXPECT_NEAR(loss_freq(Tensor::from({std::size_t(h), std::size_t(w)}, delta), Tensor::zeros({std::size_t(h), std::size_t(w)})).item(), 1.0, 1e-12);
    }
    EXPECT_THROW(loss_noise(Tensor::zeros({2}), Tensor::zeros({3})), ShapeError);
    EXPECT_THROW(loss_freq(Tensor::zeros({2, 2}), Tensor::zeros({2, 3})), ShapeError);
}

TEST(Loss, MatchesNaiveRecomputation) {
    RandomStream rng(3, 3);
    const Tensor a = random_normal({2, 1, 5, 4}, rng), b = random_normal({2, 1, 5, 4}, rng);
    double mse = 0, l1 = 0, fr = 0;
    for (std::size_t i = 0; i < a.numel(); ++i) {
        mse += (a[i] - b[i]) * (a[i] - b[i]);
        l1 += std::fabs(a[i] - b[i]);
    }
    for (std::size_t n = 0; n < 2; ++n) {
        const auto fa = naive_dft_modulus(a.data().subspan(n * 20, 20), 5, 4);
        const auto fb = naive_dft_modulus(b.data().subspan(n * 20, 20), 5, 4);
        for (std::size_t k = 0; k < 20; ++k) fr += std::fabs(fa[k] - fb[k]);
    }
    EXPECT_NEAR(loss_noise(a, b).item(), mse / 40, 1e-12);
    EXPECT_NEAR(loss_rec(a, b).item(), l1 / 40, 1e-12);
    EXPECT_NEAR(loss_freq(a, b).item(), fr / 40, 1e-12);
}

TEST(Loss, PerfectPredictionZeroesAllTerms) {
    const NoiseSchedule s = make_linear_schedule(1000, 1e-4, 0.02);
    RandomStream rng(1, 1);
    const Tensor x0 = random_tensor({3, 1, 6, 6}, rng), eps = random_normal({3, 1, 6, 6}, rng);
    const std::vector<std::size_t> t{1, 500, 1000};
    const Tensor xt = q_sample(x0, t, eps, s);
    const LossResult r = hybrid_loss(x0, xt, t, eps, eps, s, LossWeights{});
    EXPECT_EQ(r.report.noise_term, 0.0);
    EXPECT_NEAR(r.report.rec_term, 0.0, 1e-12);
    EXPECT_EQ(r.report.freq_term, 0.0);
    EXPECT_NEAR(r.report.total, 0.0, 1e-12);
}

TEST(Loss, FrequencyTermIgnoresCircularShifts) {
    RandomStream rng(2, 2);
    const Tensor e = random_normal({2, 1, 6, 5}, rng), f = random_normal({2, 1, 6, 5}, rng);
    EXPECT_NEAR(loss_freq(e, shifted(e, 2, 3)).item(), 0.0, 1e-12);
    EXPECT_NEAR(loss_freq(e, f).item(), loss_freq(shifted(e, 1, 4), shifted(f, 5, 2)).item(), 1e-12);
}

TEST(Loss, PredictX0InvertsQSample) {
    const NoiseSchedule s = make_linear_schedule(1000, 1e-4, 0.02);
    RandomStream rng(6, 6);
    for (int k = 0; k < 20; ++k) {
        const std::size_t t = 1 + rng.below(1000);
        const Tensor x0 = random_tensor({1, 1, 4, 4}, rng), eps = random_normal({1, 1, 4, 4}, rng);
        const Tensor back = predict_x0(q_sample(x0, t, eps, s), t, eps, s);
        for (std::size_t i = 0; i < 16; ++i) EXPECT_NEAR(back[i], x0[i], 1e-10);
    }
    const Tensor xt = Tensor::full({2}, 0.5);
    const Tensor plain = predict_x0(xt, 1000, Tensor::zeros({2}), s);
    EXPECT_DOUBLE_EQ(plain[0], 0.5 / std::sqrt(s.alpha_bar_at(1000)));
    EXPECT_NEAR(1.0 / std::sqrt(s.alpha_bar_at(1000)), 157.41, 0.01);
    EXPECT_THROW(predict_x0(xt, 1001, Tensor::zeros({2}), s), ConfigError);
}

TEST(Loss, CompositionAndWeights) {
    const NoiseSchedule s = make_linear_schedule(1000, 1e-4, 0.02);
    RandomStream rng(4, 4);
    const Tensor x0 = random_tensor({2, 1, 4, 4}, rng), eps = random_normal({2, 1, 4, 4}, rng);
    const Tensor eh = random_normal({2, 1, 4, 4}, rng);
    const std::vector<std::size_t> t{30, 200};
    const Tensor xt = q_sample(x0, t, eps, s);
    const LossResult r = hybrid_loss(x0, xt, t, eps, eh, s, LossWeights{});
    const double n = loss_noise(eps, eh).item();
    const double rc = loss_rec(x0, predict_x0(xt, t, eh, s)).item();
    const double f = loss_freq(eps, eh).item();
    EXPECT_EQ(r.report.noise_term, n);
    EXPECT_EQ(r.report.rec_term, rc);
    EXPECT_EQ(r.report.freq_term, f);
    EXPECT_NEAR(r.report.total, n + 0.1 * rc + 0.01 * f, 1e-14 * std::fabs(r.report.total));
    EXPECT_TRUE(r.report.composition_holds());
    const LossResult plain = hybrid_loss(x0, xt, t, eps, eh, s, LossWeights{0.0, 0.0});
    EXPECT_EQ(plain.report.total, n);
    EXPECT_THROW((LossWeights{-0.1, 0.0}.validate()), ConfigError);
}

TEST(Loss, ModelGradientMatchesFiniteDifferences) {
    DenoiserConfig c;
    c.base_channels = 4;
    c.channel_multipliers = {1, 2};
    c.res_blocks = 1;
    c.time_embed_dim = 8;
    c.groups = 2;
    c.waveform_channels = 2;
    c.waveform_time = 12;
    c.waveform_receivers = 4;
    c.map_height = 4;
    c.map_width = 4;
    const Denoiser d(c);
    DenoiserParams p = d.init_params(2);
    // Wake the control path so its parameters matter.
    for (std::size_t i = 0; i < p.size(); ++i) {
        if (p.groups[i] == ParamGroup::coupler) {
            for (double& v : p.weights[i].mutable_data()) v = 0.1;
        }
    }
    const NoiseSchedule s = make_linear_schedule(1000, 1e-4, 0.02);
    RandomStream rng(9, 9);
    const LossBatch b{random_tensor({2, 1, 4, 4}, rng), random_normal({2, 2, 12, 4}, rng), {40, 300},
                      random_normal({2, 1, 4, 4}, rng)};
    p.zero_grad();
    backward(loss_total(b, d, p.weights, s, LossWeights{}).total);

    // Probe two scalars: one in the control stem, one in the U-Net stem.
    std::vector<std::pair<std::size_t, std::size_t>> probes;
    for (std::size_t i = 0; i < p.size(); ++i) {
        if (p.names[i] == "ctrl.stem0.weight" || p.names[i] == "unet.stem.weight") probes.push_back({i, 1});
    }
    ASSERT_EQ(probes.size(), 2u);
    NoGradGuard ng;
    for (auto [i, k] : probes) {
        const double g = p.weights[i].grad()[k];
        auto w = p.weights[i].mutable_data();
        const double keep = w[k], h = 1e-5;
        w[k] = keep + h;
        const double up = loss_total(b, d, p.weights, s, LossWeights{}).report.total;
        w[k] = keep - h;
        const double dn = loss_total(b, d, p.weights, s, LossWeights{}).report.total;
        w[k] = keep;
        const double fd = (up - dn) / (2 * h);
        EXPECT_LT(std::fabs(g - fd) / std::max(std::fabs(fd), 1e-8), 1e-3) << p.names[i];
    }
}
