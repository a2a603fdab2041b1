#include "diffsos/schedule.hpp"

#include <cmath>
#include <numbers>
#include <string>

namespace diffsos {

namespace {

void finish(NoiseSchedule& s) {
    s.alpha.resize(s.beta.size());
    s.alpha_bar.resize(s.beta.size());
    double prod = 1.0;
    for (std::size_t i = 0; i < s.beta.size(); ++i) {
        s.alpha[i] = 1.0 - s.beta[i];
        prod *= s.alpha[i];
        s.alpha_bar[i] = prod;
    }
}

void check_step(const NoiseSchedule& s, std::size_t t, bool allow_zero, const char* what) {
    if (t > s.steps() || (!allow_zero && t == 0)) {
        throw ConfigError(std::string(what) + ": timestep " + std::to_string(t) + " outside [" +
                          (allow_zero ? "0" : "1") + ", " + std::to_string(s.steps()) + "]");
    }
}

} // namespace

double NoiseSchedule::beta_at(std::size_t t) const {
    check_step(*this, t, false, "beta_at");
    return beta[t - 1];
}

double NoiseSchedule::alpha_at(std::size_t t) const {
    check_step(*this, t, false, "alpha_at");
    return alpha[t - 1];
}

double NoiseSchedule::alpha_bar_at(std::size_t t) const {
    check_step(*this, t, true, "alpha_bar_at");
    return t == 0 ? 1.0 : alpha_bar[t - 1];
}

NoiseSchedule make_linear_schedule(std::size_t steps, double beta_start, double beta_end) {
    if (steps < 1) throw ConfigError("schedule.T must be >= 1");
    if (!(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0)) {
        throw ConfigError("schedule: require 0 < beta_start <= beta_end < 1, got beta_start=" +
                          std::to_string(beta_start) + " beta_end=" + std::to_string(beta_end));
    }
    NoiseSchedule s;
    s.beta.resize(steps);
    for (std::size_t i = 0; i < steps; ++i) {
        const double f = steps == 1 ? 0.0 : static_cast<double>(i) / static_cast<double>(steps - 1);
        s.beta[i] = beta_start + f * (beta_end - beta_start);
    }
    finish(s);
    return s;
}

NoiseSchedule make_cosine_schedule(std::size_t steps, double offset) {
    if (steps < 1) throw ConfigError("schedule.T must be >= 1");
    auto f = [&](double t) {
        const double c = std::cos((t / static_cast<double>(steps) + offset) / (1.0 + offset) * std::numbers::pi / 2.0);
        return c * c;
    };
    NoiseSchedule s;
    s.beta.resize(steps);
    const double f0 = f(0.0);
    for (std::size_t t = 1; t <= steps; ++t) {
        const double ab = f(static_cast<double>(t)) / f0;
        const double ab_prev = f(static_cast<double>(t - 1)) / f0;
        s.beta[t - 1] = std::min(1.0 - ab / ab_prev, 0.999);
    }
    finish(s);
    return s;
}

NoiseSchedule make_schedule(ScheduleKind kind, std::size_t steps, double beta_start, double beta_end) {
    return kind == ScheduleKind::cosine ? make_cosine_schedule(steps) : make_linear_schedule(steps, beta_start, beta_end);
}

Tensor q_sample(const Tensor& x0, std::size_t t, const Tensor& eps, const NoiseSchedule& sched) {
    if (x0.shape() != eps.shape()) {
        throw ShapeError("q_sample: shape mismatch " + shape_str(x0.shape()) + " vs " + shape_str(eps.shape()));
    }
    check_step(sched, t, true, "q_sample");
    const double ab = sched.alpha_bar_at(t);
    return add(mul(x0, std::sqrt(ab)), mul(eps, std::sqrt(1.0 - ab)));
}

Tensor q_sample(const Tensor& x0, std::span<const std::size_t> t, const Tensor& eps, const NoiseSchedule& sched) {
    if (x0.shape() != eps.shape()) {
        throw ShapeError("q_sample: shape mismatch " + shape_str(x0.shape()) + " vs " + shape_str(eps.shape()));
    }
    if (x0.rank() == 0 || x0.dim(0) != t.size()) {
        throw ShapeError("q_sample: " + std::to_string(t.size()) + " timesteps for batch " + shape_str(x0.shape()));
    }
    const std::size_t per = x0.numel() / t.size();
    std::vector<double> a(x0.numel()), b(x0.numel());
    for (std::size_t s = 0; s < t.size(); ++s) {
        check_step(sched, t[s], true, "q_sample");
        const double ab = sched.alpha_bar_at(t[s]);
        for (std::size_t i = 0; i < per; ++i) {
            a[s * per + i] = std::sqrt(ab);
            b[s * per + i] = std::sqrt(1.0 - ab);
        }
    }
    return add(mul(x0, Tensor::from(x0.shape(), std::move(a))), mul(eps, Tensor::from(x0.shape(), std::move(b))));
}

TimestepEmbedding embed_timestep(double t, std::size_t dim) {
    if (dim == 0 || dim % 2 != 0) throw ConfigError("embed_timestep: dim must be even and positive, got " + std::to_string(dim));
    TimestepEmbedding e{dim, std::vector<double>(dim)};
    const std::size_t half = dim / 2;
    for (std::size_t i = 0; i < half; ++i) {
        const double omega = std::pow(10000.0, -2.0 * static_cast<double>(i) / static_cast<double>(dim));
        e.values[i] = std::sin(t * omega);
        e.values[half + i] = std::cos(t * omega);
    }
    return e;
}

Tensor embed_timesteps(std::span<const std::size_t> t, std::size_t dim) {
    std::vector<double> v;
    v.reserve(t.size() * dim);
    for (std::size_t step : t) {
        const auto e = embed_timestep(static_cast<double>(step), dim);
        v.insert(v.end(), e.values.begin(), e.values.end());
    }
    return Tensor::from({t.size(), dim}, std::move(v));
}

} // namespace diffsos
