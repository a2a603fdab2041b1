#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "diffsos/tensor.hpp"

namespace diffsos {

enum class ScheduleKind { linear, cosine };

/// Variance schedule beta_1..beta_T with derived alpha and cumulative alpha_bar.
/// Timesteps are 1-indexed; alpha_bar(0) := 1.
struct NoiseSchedule {
    std::vector<double> beta;       // beta[t-1] = beta_t
    std::vector<double> alpha;      // 1 - beta_t
    std::vector<double> alpha_bar;  // running product of alpha

    std::size_t steps() const { return beta.size(); }
    double beta_at(std::size_t t) const;
    double alpha_at(std::size_t t) const;
    /// Valid for t in [0, T].
    double alpha_bar_at(std::size_t t) const;
};

NoiseSchedule make_linear_schedule(std::size_t steps, double beta_start, double beta_end);
/// Squared-cosine alpha_bar with offset s, betas capped at 0.999.
NoiseSchedule make_cosine_schedule(std::size_t steps, double offset = 0.008);
NoiseSchedule make_schedule(ScheduleKind kind, std::size_t steps, double beta_start, double beta_end);

/// x_t = sqrt(alpha_bar_t) x0 + sqrt(1 - alpha_bar_t) eps, for t in [0, T].
Tensor q_sample(const Tensor& x0, std::size_t t, const Tensor& eps, const NoiseSchedule& sched);
/// Batched form: x0/eps are [N,...] and t holds one step per sample.
Tensor q_sample(const Tensor& x0, std::span<const std::size_t> t, const Tensor& eps, const NoiseSchedule& sched);

struct TimestepEmbedding {
    std::size_t dim = 0;
    std::vector<double> values;
};

/// Sinusoidal embedding: sin(t w_i) for i < dim/2, cos(t w_i) after, w_i = 10000^(-2i/dim).
TimestepEmbedding embed_timestep(double t, std::size_t dim);

/// Stacks embeddings for a batch of steps into [N, dim].
Tensor embed_timesteps(std::span<const std::size_t> t, std::size_t dim);

} // namespace diffsos
