#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "diffsos/denoiser.hpp"
#include "diffsos/schedule.hpp"
#include "diffsos/tensor.hpp"

namespace diffsos {

struct LossWeights {
    double lambda_rec = 0.1;
    double lambda_freq = 0.01;

    void validate() const;
};

/// Itemized hybrid loss; terms are the unweighted component values.
struct LossReport {
    double total = 0.0;
    double noise_term = 0.0;
    double rec_term = 0.0;
    double freq_term = 0.0;
    double lambda_rec = 0.0;
    double lambda_freq = 0.0;

    /// |total - (noise + l_rec rec + l_freq freq)| within a few ulps of total.
    bool composition_holds() const;
};

/// Mean squared error between true and predicted noise.
Tensor loss_noise(const Tensor& eps, const Tensor& eps_hat);
/// Mean absolute error between clean map and its estimate.
Tensor loss_rec(const Tensor& x0, const Tensor& x0_hat);
/// Mean absolute difference of the 2D DFT amplitude spectra (per image, then averaged).
Tensor loss_freq(const Tensor& eps, const Tensor& eps_hat);

/// x0_hat = (x_t - sqrt(1 - alpha_bar_t) eps_hat) / sqrt(alpha_bar_t). Differentiable in eps_hat.
Tensor predict_x0(const Tensor& x_t, std::size_t t, const Tensor& eps_hat, const NoiseSchedule& sched);
Tensor predict_x0(const Tensor& x_t, std::span<const std::size_t> t, const Tensor& eps_hat, const NoiseSchedule& sched);

struct LossResult {
    Tensor total;
    Tensor eps_hat;
    LossReport report;
};

/// Composes the three terms from an already computed prediction.
LossResult hybrid_loss(const Tensor& x0, const Tensor& x_t, std::span<const std::size_t> t, const Tensor& eps,
                       const Tensor& eps_hat, const NoiseSchedule& sched, const LossWeights& weights);

struct LossBatch {
    Tensor x0;                  // [N,1,H,W] normalized maps
    Tensor y;                   // [N,S,T_time,R] normalized waveforms
    std::vector<std::size_t> t; // one step per sample, in [1,T]
    Tensor eps;                 // [N,1,H,W]
};

/// Forms x_t, runs the denoiser and evaluates the hybrid loss.
LossResult loss_total(const LossBatch& batch, const Denoiser& model, std::span<const Tensor> weights,
                      const NoiseSchedule& sched, const LossWeights& lw);

} // namespace diffsos
