#include <gtest/gtest.h>

#include <cmath>

#include "diffsos/trainer.hpp"
#include "support.hpp"

using namespace diffsos;
using namespace diffsos::testing;

namespace {

TrainingSet toy_set(std::size_t n, std::uint64_t seed) {
    RandomStream rng(seed, 0);
    TrainingSet s;
    for (std::size_t i = 0; i < n; ++i) s.ids.push_back("s" + std::to_string(i));
    s.maps = random_tensor({n, 1, 8, 8}, rng);
    s.waves = random_normal({n, 3, 40, 6}, rng);
    return s;
}

TrainConfig toy_config() {
    TrainConfig c;
    c.epochs = 4;
    c.batch_size = 3;
    c.lr_max = 1e-3;
    c.warmup_epochs = 1;
    c.seed = 21;
    c.val_every = 2;
    c.val_limit = 2;
    c.val_sampler.num_steps = 2;
    c.val_ms_ssim_scales = 1;
    return c;
}

} // namespace

TEST(Trainer, LearningRateSchedule) {
    TrainConfig c;
    c.epochs = 100;
    c.warmup_epochs = 10;
    c.lr_max = 2e-4;
    EXPECT_EQ(lr_at(0, c), 0.0);
    EXPECT_DOUBLE_EQ(lr_at(5, c), 1e-4);
    EXPECT_DOUBLE_EQ(lr_at(10, c), 2e-4);
    EXPECT_NEAR(lr_at(55, c), 1e-4, 1e-18);
    EXPECT_NEAR(lr_at(100, c), 0.0, 1e-20);
    for (std::size_t e = 11; e < 100; ++e) EXPECT_LT(lr_at(e, c), lr_at(e - 1, c));
    c.warmup_epochs = 100;
    EXPECT_THROW(c.validate(), ConfigError);
}

TEST(Trainer, AdamFirstStepMovesByLearningRate) {
    std::vector<Tensor> p{Tensor::from({3}, {1.0, -2.0, 0.5}, true)};
    OptimizerState st = OptimizerState::for_params(p);
    auto g = p[0].mutable_grad();
    g[0] = 3.0;
    g[1] = -0.01;
    g[2] = 0.0;
    adam_step(p, st, 0.1);
    EXPECT_NEAR(p[0][0], 0.9, 1e-8);
    EXPECT_NEAR(p[0][1], -1.9, 1e-5);
    EXPECT_EQ(p[0][2], 0.5);
    EXPECT_EQ(st.step, 1u);
}

TEST(Trainer, AdamRequiresGrads) {
    std::vector<Tensor> p{Tensor::from({1}, {1.0})};
    OptimizerState st = OptimizerState::for_params(p);
    EXPECT_THROW(adam_step(p, st, 0.1), ConfigError);
}

TEST(Trainer, AdamDescendsQuadraticBowl) {
    std::vector<Tensor> p{Tensor::from({2}, {3.0, -4.0}, true)};
    OptimizerState st = OptimizerState::for_params(p);
    const Tensor target = Tensor::from({2}, {0.5, 0.25});
    for (int i = 0; i < 2000; ++i) {
        p[0].zero_grad();
        backward(sum(square(sub(p[0], target))));
        adam_step(p, st, 0.01);
    }
    EXPECT_NEAR(p[0][0], 0.5, 1e-3);
    EXPECT_NEAR(p[0][1], 0.25, 1e-3);
}

TEST(Trainer, EmaClosedForm) {
    std::vector<Tensor> shadow{Tensor::from({2}, {0.0, 10.0})};
    const std::vector<Tensor> params{Tensor::from({2}, {1.0, 2.0})};
    for (int k = 0; k < 7; ++k) ema_update(shadow, params, 0.9);
    const double f = std::pow(0.9, 7);
    EXPECT_NEAR(shadow[0][0], 1.0 + f * (0.0 - 1.0), 1e-14);
    EXPECT_NEAR(shadow[0][1], 2.0 + f * (10.0 - 2.0), 1e-14);
    std::vector<Tensor> frozen{Tensor::from({1}, {4.0})};
    ema_update(frozen, std::vector<Tensor>{Tensor::from({1}, {-1.0})}, 1.0);
    EXPECT_EQ(frozen[0][0], 4.0);
}

TEST(Trainer, ClipGradNorm) {
    std::vector<Tensor> p{Tensor::from({2}, {0.0, 0.0}, true)};
    p[0].mutable_grad()[0] = 3.0;
    p[0].mutable_grad()[1] = 4.0;
    EXPECT_DOUBLE_EQ(clip_grad_norm(p, 1.0), 5.0);
    EXPECT_NEAR(p[0].grad()[0], 0.6, 1e-15);
    EXPECT_NEAR(p[0].grad()[1], 0.8, 1e-15);
}

TEST(Trainer, LoggedStepsComposeAndValidationCadence) {
    const Denoiser d(tiny_denoiser());
    TrainConfig c = toy_config();
    c.epochs = 5;
    const NoiseSchedule s = make_linear_schedule(100, 1e-4, 0.02);
    const TrainingSet tr = toy_set(7, 1), va = toy_set(2, 2);
    TrainState st = init_train_state(d, c);
    std::size_t steps = 0, vals = 0, ckpts = 0;
    TrainHooks h;
    h.on_log = [&](const LogRow& r) {
        if (r.loss) {
            ++steps;
            EXPECT_TRUE(r.loss->composition_holds()) << "step " << r.step;
            EXPECT_DOUBLE_EQ(r.lr, lr_at(r.epoch, c));
        }
        if (r.val_msssim) ++vals;
    };
    h.on_checkpoint = [&](const TrainState&) { ++ckpts; };
    train(d, c, s, tr, va, st, h);
    EXPECT_EQ(steps, 5u * 3u);
    EXPECT_EQ(vals, 3u);  // ceil(5 / 2)
    EXPECT_EQ(st.global_step, 15u);
    EXPECT_EQ(st.next_epoch, 5u);
    EXPECT_FALSE(st.best_ema.empty());
    EXPECT_GE(ckpts, 1u);
}

TEST(Trainer, ZeroWeightsReduceToNoiseLoss) {
    const Denoiser d(tiny_denoiser());
    TrainConfig c = toy_config();
    c.epochs = 1;
    c.warmup_epochs = 0;
    c.loss = LossWeights{0.0, 0.0};
    const NoiseSchedule s = make_linear_schedule(100, 1e-4, 0.02);
    TrainState st = init_train_state(d, c);
    TrainHooks h;
    h.on_log = [&](const LogRow& r) {
        if (r.loss) EXPECT_EQ(r.loss->total, r.loss->noise_term);
    };
    train(d, c, s, toy_set(6, 1), toy_set(2, 2), st, h);
}

TEST(Trainer, ResumeIsBitwiseIdentical) {
    const Denoiser d(tiny_denoiser());
    const TrainConfig c = toy_config();
    const NoiseSchedule s = make_linear_schedule(100, 1e-4, 0.02);
    const TrainingSet tr = toy_set(7, 1), va = toy_set(2, 2);

    TrainState full = init_train_state(d, c);
    train(d, c, s, tr, va, full);

    TrainState part = init_train_state(d, c);
    train(d, c, s, tr, va, part, {}, 2);
    EXPECT_EQ(part.next_epoch, 2u);
    TrainState copy = part;  // what a checkpoint round trip restores
    for (auto& w : copy.params.weights) w = w.clone(true);
    for (auto& w : copy.params.ema_shadow) w = w.clone();
    for (auto& w : copy.best_ema) w = w.clone();
    train(d, c, s, tr, va, copy);

    ASSERT_EQ(full.global_step, copy.global_step);
    for (std::size_t i = 0; i < full.params.size(); ++i) {
        for (std::size_t k = 0; k < full.params.weights[i].numel(); ++k) {
            ASSERT_EQ(full.params.weights[i][k], copy.params.weights[i][k]) << full.params.names[i];
            ASSERT_EQ(full.params.ema_shadow[i][k], copy.params.ema_shadow[i][k]);
        }
    }
    EXPECT_EQ(full.best_val, copy.best_val);
}

TEST(Trainer, GatherPicksRows) {
    const TrainingSet s = toy_set(4, 3);
    const std::vector<std::size_t> idx{2, 0};
    const auto [m, w] = s.gather(idx);
    EXPECT_EQ(m.shape(), (Shape{2, 1, 8, 8}));
    EXPECT_EQ(w.shape(), (Shape{2, 3, 40, 6}));
    EXPECT_EQ(m[0], s.maps[2 * 64]);
    EXPECT_EQ(w[0], s.waves[2 * 720]);
    EXPECT_EQ(w[720], s.waves[0]);
}
