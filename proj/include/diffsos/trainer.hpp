#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "diffsos/denoiser.hpp"
#include "diffsos/loss.hpp"
#include "diffsos/sampler.hpp"
#include "diffsos/schedule.hpp"
#include "diffsos/tensor.hpp"

namespace diffsos {

struct TrainConfig {
    std::size_t epochs = 300;
    std::size_t batch_size = 16;
    double lr_max = 8e-5;
    std::size_t warmup_epochs = 20;
    double ema_decay = 0.995;
    std::uint64_t seed = 0;
    LossWeights loss;
    double grad_clip = 0.0;            // global-norm clip, 0 disables
    std::size_t val_every = 10;        // epochs between validations
    std::size_t val_limit = 0;         // validation samples used, 0 = all
    std::size_t checkpoint_every = 10; // epochs between checkpoint hooks
    SamplerConfig val_sampler;         // EMA-weight reconstructions for model selection
    std::size_t val_ms_ssim_scales = 3;

    void validate() const;
};

/// Linear warmup 0 -> lr_max over warmup_epochs, then cosine decay to 0 at
/// epoch == epochs: lr_max * 0.5 * (1 + cos(pi * (e - W) / (E - W))).
double lr_at(std::size_t epoch, const TrainConfig& cfg);

struct OptimizerState {
    std::vector<std::vector<double>> m;
    std::vector<std::vector<double>> v;
    std::uint64_t step = 0;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;

    static OptimizerState for_params(std::span<const Tensor> params);
};

/// Bias-corrected Adam on every parameter's accumulated grad.
/// Throws ConfigError if a parameter carries no grad.
void adam_step(std::span<Tensor> params, OptimizerState& state, double lr);

/// shadow <- decay * shadow + (1 - decay) * params.
void ema_update(std::span<Tensor> shadow, std::span<const Tensor> params, double decay);

/// Rescales all grads so their joint L2 norm is at most max_norm. Returns the norm before clipping.
double clip_grad_norm(std::span<Tensor> params, double max_norm);

/// Paired samples in normalized units.
struct TrainingSet {
    std::vector<std::string> ids;
    Tensor maps;   // [N,1,H,W]
    Tensor waves;  // [N,S,T_time,R]

    std::size_t size() const { return ids.size(); }
    /// Rows `idx` of both tensors.
    std::pair<Tensor, Tensor> gather(std::span<const std::size_t> idx) const;
};

struct LogRow {
    std::size_t epoch = 0;
    std::uint64_t step = 0;
    double lr = 0.0;
    std::optional<LossReport> loss;     // set on optimization rows
    std::optional<double> val_msssim;   // set on validation rows
};

struct TrainState {
    DenoiserParams params;
    OptimizerState opt;
    std::size_t next_epoch = 0;
    std::uint64_t global_step = 0;
    double best_val = -std::numeric_limits<double>::infinity();
    std::size_t best_epoch = 0;
    std::vector<Tensor> best_ema;  // EMA weights at the best validation, empty before the first one
};

TrainState init_train_state(const Denoiser& model, const TrainConfig& cfg);

struct TrainHooks {
    std::function<void(const LogRow&)> on_log;
    std::function<void(const TrainState&)> on_checkpoint;
};

/// Mean MS-SSIM of EMA-weight reconstructions on `val` (first `limit` samples, 0 = all).
double validate_msssim(const Denoiser& model, std::span<const Tensor> weights, const TrainingSet& val,
                       const SamplerConfig& sampler, const NoiseSchedule& sched, std::size_t limit = 0,
                       std::size_t ms_ssim_scales = 3);

/// Runs epochs [state.next_epoch, min(stop_epoch, cfg.epochs)). Per step: batch
/// from a per-epoch seeded shuffle, uniform t in [1, T] and eps drawn from
/// streams keyed by (seed, global step, batch position), hybrid loss, Adam, EMA.
/// All randomness is a function of the seed and the counters in `state`, so a
/// restored state continues bitwise identically.
void train(const Denoiser& model, const TrainConfig& cfg, const NoiseSchedule& sched, const TrainingSet& train_set,
           const TrainingSet& val_set, TrainState& state, const TrainHooks& hooks = {},
           std::size_t stop_epoch = std::numeric_limits<std::size_t>::max());

} // namespace diffsos
