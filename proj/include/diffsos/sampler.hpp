#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "diffsos/denoiser.hpp"
#include "diffsos/image.hpp"
#include "diffsos/rng.hpp"
#include "diffsos/schedule.hpp"
#include "diffsos/tensor.hpp"

namespace diffsos {

struct SamplerConfig {
    std::size_t num_steps = 10;
    double eta = 1.0;
    bool clamp_x0 = true;
    std::uint64_t seed = 0;

    void validate(std::size_t schedule_steps) const;
};

/// sigma = eta * sqrt((1 - ab_prev) / (1 - ab_t)) * sqrt(1 - ab_t / ab_prev),
/// with ab_prev = alpha_bar(t_prev) standing in for alpha_bar(t - 1).
double ddim_sigma(std::size_t t, std::size_t t_prev, double eta, const NoiseSchedule& sched);

/// Decreasing timesteps: num_steps values uniformly strided over [1, T] starting at T,
/// followed by a final 0.
std::vector<std::size_t> ddim_timesteps(std::size_t schedule_steps, std::size_t num_steps);

/// One update x_t -> x_{t_prev}:
///   x_prev = sqrt(ab_prev) x0_hat + sqrt(1 - ab_prev - sigma^2) eps_hat + sigma eps_t
/// x0_hat is clamped to [-1, 1] when cfg.clamp_x0. Fresh noise is drawn only when
/// sigma > 0; `streams` holds one stream per batch item (or a single shared one).
/// If `x0_used` is given it receives the (clamped) x0_hat that entered the update.
Tensor ddim_step(const Tensor& x_t, std::size_t t, std::size_t t_prev, const Tensor& eps_hat,
                 const SamplerConfig& cfg, const NoiseSchedule& sched, std::span<RandomStream> streams,
                 Tensor* x0_used = nullptr);
Tensor ddim_step(const Tensor& x_t, std::size_t t, std::size_t t_prev, const Tensor& eps_hat,
                 const SamplerConfig& cfg, const NoiseSchedule& sched, RandomStream& rng);

/// Optional per-step observations of a sampling run.
struct SampleTrace {
    std::vector<double> max_abs_x0_hat;
};

/// Full reverse trajectory for a batch of conditions y [N,S,T_time,R], in
/// normalized units [N,1,H,W]. Item i draws its noise from stream
/// (cfg.seed, stream_ids[i]): x_T first, unless `start` supplies it, then the
/// per-step noise.
Tensor sample(const Tensor& y, const Denoiser& model, std::span<const Tensor> weights, const SamplerConfig& cfg,
              const NoiseSchedule& sched, std::span<const std::uint64_t> stream_ids, SampleTrace* trace = nullptr,
              const Tensor* start = nullptr);

struct UncertaintyMap {
    Image variance;       // population variance per pixel
    Image ensemble_mean;
    std::size_t ensemble_size = 0;
};

/// Per-pixel mean and population variance of the members.
UncertaintyMap uncertainty_from_members(std::span<const Image> members);

struct EnsembleResult {
    std::vector<Image> members;  // normalized units
    UncertaintyMap uncertainty;
};

/// N trajectories for one condition y [1,S,T_time,R]. All members start from the
/// same x_T, drawn from stream (cfg.seed, stream_id); member k takes its per-step
/// noise from stream mix_ids(stream_id, k). With eta = 0 the members coincide.
/// Members are split across worker threads.
EnsembleResult sample_ensemble(const Tensor& y, const Denoiser& model, std::span<const Tensor> weights,
                               const SamplerConfig& cfg, const NoiseSchedule& sched, std::size_t members,
                               std::uint64_t stream_id = 0);

/// Splits a [N,1,H,W] tensor into images.
std::vector<Image> to_images(const Tensor& x);

} // namespace diffsos
