#include "diffsos/loss.hpp"

#include <cmath>
#include <limits>
#include <string>

namespace diffsos {

namespace {

void same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (!a.defined() || !b.defined() || a.shape() != b.shape()) {
        throw ShapeError(std::string(op) + ": shape mismatch " + (a.defined() ? shape_str(a.shape()) : "<none>") +
                         " vs " + (b.defined() ? shape_str(b.shape()) : "<none>"));
    }
}

} // namespace

void LossWeights::validate() const {
    if (!(lambda_rec >= 0.0)) throw ConfigError("train.lambda_rec: must be >= 0");
    if (!(lambda_freq >= 0.0)) throw ConfigError("train.lambda_freq: must be >= 0");
}

bool LossReport::composition_holds() const {
    const double composed = noise_term + lambda_rec * rec_term + lambda_freq * freq_term;
    const double scale = std::max({std::fabs(total), std::fabs(noise_term), 1e-300});
    return std::fabs(total - composed) <= 8.0 * std::numeric_limits<double>::epsilon() * scale;
}

Tensor loss_noise(const Tensor& eps, const Tensor& eps_hat) {
    same_shape(eps, eps_hat, "loss_noise");
    return mean(square(sub(eps, eps_hat)));
}

Tensor loss_rec(const Tensor& x0, const Tensor& x0_hat) {
    same_shape(x0, x0_hat, "loss_rec");
    return mean(abs(sub(x0, x0_hat)));
}

Tensor loss_freq(const Tensor& eps, const Tensor& eps_hat) {
    same_shape(eps, eps_hat, "loss_freq");
    return mean(abs(sub(dft2_modulus(eps), dft2_modulus(eps_hat))));
}

Tensor predict_x0(const Tensor& x_t, std::size_t t, const Tensor& eps_hat, const NoiseSchedule& sched) {
    same_shape(x_t, eps_hat, "predict_x0");
    const double ab = sched.alpha_bar_at(t);
    if (!(ab > 0.0)) throw ConfigError("predict_x0: alpha_bar is zero at t=" + std::to_string(t));
    return mul(sub(x_t, mul(eps_hat, std::sqrt(1.0 - ab))), 1.0 / std::sqrt(ab));
}

Tensor predict_x0(const Tensor& x_t, std::span<const std::size_t> t, const Tensor& eps_hat, const NoiseSchedule& sched) {
    same_shape(x_t, eps_hat, "predict_x0");
    if (x_t.rank() == 0 || x_t.dim(0) != t.size()) {
        throw ShapeError("predict_x0: " + std::to_string(t.size()) + " timesteps for batch " + shape_str(x_t.shape()));
    }
    const std::size_t per = x_t.numel() / t.size();
    std::vector<double> inv(x_t.numel()), noise(x_t.numel());
    for (std::size_t s = 0; s < t.size(); ++s) {
        const double ab = sched.alpha_bar_at(t[s]);
        if (!(ab > 0.0)) throw ConfigError("predict_x0: alpha_bar is zero at t=" + std::to_string(t[s]));
        for (std::size_t i = 0; i < per; ++i) {
            inv[s * per + i] = 1.0 / std::sqrt(ab);
            noise[s * per + i] = std::sqrt(1.0 - ab);
        }
    }
    const Tensor scaled_noise = mul(eps_hat, Tensor::from(x_t.shape(), std::move(noise)));
    return mul(sub(x_t, scaled_noise), Tensor::from(x_t.shape(), std::move(inv)));
}

LossResult hybrid_loss(const Tensor& x0, const Tensor& x_t, std::span<const std::size_t> t, const Tensor& eps,
                       const Tensor& eps_hat, const NoiseSchedule& sched, const LossWeights& lw) {
    lw.validate();
    const Tensor ln = loss_noise(eps, eps_hat);
    const Tensor lr = loss_rec(x0, predict_x0(x_t, t, eps_hat, sched));
    const Tensor lf = loss_freq(eps, eps_hat);
    const Tensor total = add(add(ln, mul(lr, lw.lambda_rec)), mul(lf, lw.lambda_freq));

    LossResult r;
    r.total = total;
    r.eps_hat = eps_hat;
    r.report = {total.item(), ln.item(), lr.item(), lf.item(), lw.lambda_rec, lw.lambda_freq};
    return r;
}

LossResult loss_total(const LossBatch& batch, const Denoiser& model, std::span<const Tensor> weights,
                      const NoiseSchedule& sched, const LossWeights& lw) {
    const Tensor x_t = q_sample(batch.x0, batch.t, batch.eps, sched);
    const Tensor eps_hat = model.forward(x_t, batch.t, batch.y, weights);
    return hybrid_loss(batch.x0, x_t, batch.t, batch.eps, eps_hat, sched, lw);
}

} // namespace diffsos
