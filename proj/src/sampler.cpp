#include "diffsos/sampler.hpp"

#include <algorithm>
#include <cmath>
#include <mutex>
#include <sstream>
#include <string>

#include "diffsos/loss.hpp"
#include "diffsos/parallel.hpp"

namespace diffsos {

void SamplerConfig::validate(std::size_t schedule_steps) const {
    if (num_steps == 0 || num_steps > schedule_steps) {
        throw ConfigError("sampler.steps: must be in [1, " + std::to_string(schedule_steps) + "], got " +
                          std::to_string(num_steps));
    }
    if (!(eta >= 0.0) || !std::isfinite(eta)) throw ConfigError("sampler.eta: must be >= 0");
}

double ddim_sigma(std::size_t t, std::size_t t_prev, double eta, const NoiseSchedule& sched) {
    if (t_prev >= t) {
        throw ConfigError("ddim_sigma: t_prev=" + std::to_string(t_prev) + " must be < t=" + std::to_string(t));
    }
    const double ab = sched.alpha_bar_at(t);
    const double ab_prev = sched.alpha_bar_at(t_prev);
    if (ab_prev < ab) {
        throw ConfigError("ddim_sigma: schedule violation, alpha_bar(" + std::to_string(t_prev) +
                          ") < alpha_bar(" + std::to_string(t) + ")");
    }
    if (ab_prev == ab) return 0.0;
    return eta * std::sqrt((1.0 - ab_prev) / (1.0 - ab)) * std::sqrt(1.0 - ab / ab_prev);
}

std::vector<std::size_t> ddim_timesteps(std::size_t schedule_steps, std::size_t num_steps) {
    if (num_steps == 0 || num_steps > schedule_steps) {
        throw ConfigError("ddim_timesteps: num_steps must be in [1, " + std::to_string(schedule_steps) + "]");
    }
    std::vector<std::size_t> ts;
    for (std::size_t j = num_steps; j >= 1; --j) ts.push_back((schedule_steps * j + num_steps / 2) / num_steps);
    ts.push_back(0);
    return ts;
}

Tensor ddim_step(const Tensor& x_t, std::size_t t, std::size_t t_prev, const Tensor& eps_hat,
                 const SamplerConfig& cfg, const NoiseSchedule& sched, std::span<RandomStream> streams,
                 Tensor* x0_used) {
    if (x_t.shape() != eps_hat.shape()) {
        throw ShapeError("ddim_step: shape mismatch " + shape_str(x_t.shape()) + " vs " + shape_str(eps_hat.shape()));
    }
    const std::size_t batch = x_t.rank() == 0 ? 1 : x_t.dim(0);
    if (streams.size() != 1 && streams.size() != batch) {
        throw ShapeError("ddim_step: " + std::to_string(streams.size()) + " noise streams for batch of " +
                         std::to_string(batch));
    }
    const double sigma = ddim_sigma(t, t_prev, cfg.eta, sched);
    const double ab_prev = sched.alpha_bar_at(t_prev);
    double radicand = 1.0 - ab_prev - sigma * sigma;
    if (radicand < 0.0) {
        if (radicand > -1e-12) {
            radicand = 0.0;
        } else {
            std::ostringstream os;
            os << "ddim_step: negative direction variance " << radicand << " at t=" << t << " (eta=" << cfg.eta << ")";
            throw NumericError(os.str());
        }
    }

    NoGradGuard no_grad;
    Tensor x0_hat = predict_x0(x_t, t, eps_hat, sched);
    std::vector<double> out(x0_hat.data().begin(), x0_hat.data().end());
    if (cfg.clamp_x0) {
        for (double& v : out) v = std::clamp(v, -1.0, 1.0);
    }
    if (x0_used != nullptr) *x0_used = Tensor::from(x_t.shape(), out);
    const double a = std::sqrt(ab_prev), b = std::sqrt(radicand);
    const auto e = eps_hat.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a * out[i] + b * e[i];
    if (sigma > 0.0) {
        const std::size_t per = out.size() / batch;
        for (std::size_t i = 0; i < out.size(); ++i) {
            RandomStream& rng = streams.size() == 1 ? streams[0] : streams[i / per];
            out[i] += sigma * rng.normal();
        }
    }
    return Tensor::from(x_t.shape(), std::move(out));
}

Tensor ddim_step(const Tensor& x_t, std::size_t t, std::size_t t_prev, const Tensor& eps_hat,
                 const SamplerConfig& cfg, const NoiseSchedule& sched, RandomStream& rng) {
    return ddim_step(x_t, t, t_prev, eps_hat, cfg, sched, std::span<RandomStream>(&rng, 1));
}

Tensor sample(const Tensor& y, const Denoiser& model, std::span<const Tensor> weights, const SamplerConfig& cfg,
              const NoiseSchedule& sched, std::span<const std::uint64_t> stream_ids, SampleTrace* trace,
              const Tensor* start) {
    cfg.validate(sched.steps());
    model.check_waveform(y);
    const std::size_t n = y.dim(0);
    if (stream_ids.size() != n) {
        throw ShapeError("sample: " + std::to_string(stream_ids.size()) + " stream ids for batch of " + std::to_string(n));
    }
    const auto& mc = model.config();
    const std::size_t plane = mc.map_height * mc.map_width;

    NoGradGuard no_grad;
    std::vector<RandomStream> streams;
    std::vector<double> init(n * plane);
    for (std::size_t i = 0; i < n; ++i) {
        streams.emplace_back(cfg.seed, stream_ids[i]);
        if (start == nullptr) streams.back().fill_normal(std::span<double>(init).subspan(i * plane, plane));
    }
    Tensor x = Tensor::from({n, 1, mc.map_height, mc.map_width}, std::move(init));
    if (start != nullptr) {
        if (start->shape() != x.shape()) {
            throw ShapeError("sample: start noise " + shape_str(start->shape()) + ", expected " + shape_str(x.shape()));
        }
        x = start->detach();
    }
    const auto ts = ddim_timesteps(sched.steps(), cfg.num_steps);
    for (std::size_t k = 0; k + 1 < ts.size(); ++k) {
        const std::vector<std::size_t> tb(n, ts[k]);
        const Tensor eps_hat = model.forward(x, tb, y, weights);
        Tensor x0_hat;
        x = ddim_step(x, ts[k], ts[k + 1], eps_hat, cfg, sched, streams, trace != nullptr ? &x0_hat : nullptr);
        if (trace != nullptr) {
            double m = 0.0;
            for (double v : x0_hat.data()) m = std::max(m, std::fabs(v));
            trace->max_abs_x0_hat.push_back(m);
        }
    }
    if (cfg.clamp_x0) {
        std::vector<double> v(x.data().begin(), x.data().end());
        for (double& p : v) p = std::clamp(p, -1.0, 1.0);
        x = Tensor::from(x.shape(), std::move(v));
    }
    return x;
}

std::vector<Image> to_images(const Tensor& x) {
    if (x.rank() != 4 || x.dim(1) != 1) throw ShapeError("to_images: expected [N,1,H,W], got " + shape_str(x.shape()));
    std::vector<Image> out;
    const std::size_t h = x.dim(2), w = x.dim(3);
    for (std::size_t i = 0; i < x.dim(0); ++i) {
        Image img(h, w);
        std::copy_n(x.data().begin() + static_cast<std::ptrdiff_t>(i * h * w), h * w, img.pixels.begin());
        out.push_back(std::move(img));
    }
    return out;
}

UncertaintyMap uncertainty_from_members(std::span<const Image> members) {
    if (members.empty()) throw ConfigError("uncertainty: ensemble must have at least one member");
    const Image& first = members.front();
    for (const auto& m : members) {
        if (!m.same_extent(first)) throw ShapeError("uncertainty: ensemble members differ in extent");
    }
    UncertaintyMap u;
    u.ensemble_size = members.size();
    u.ensemble_mean = Image(first.height, first.width);
    u.variance = Image(first.height, first.width);
    // Welford updates: identical members give exactly their value and zero variance,
    // which a sum-then-divide mean does not guarantee.
    for (std::size_t i = 0; i < first.size(); ++i) {
        double mu = 0.0, m2 = 0.0;
        std::size_t k = 0;
        for (const auto& m : members) {
            const double x = m.pixels[i], d = x - mu;
            mu += d / static_cast<double>(++k);
            m2 += d * (x - mu);
        }
        u.ensemble_mean.pixels[i] = mu;
        u.variance.pixels[i] = m2 / static_cast<double>(k);
    }
    return u;
}

EnsembleResult sample_ensemble(const Tensor& y, const Denoiser& model, std::span<const Tensor> weights,
                               const SamplerConfig& cfg, const NoiseSchedule& sched, std::size_t members,
                               std::uint64_t stream_id) {
    if (members == 0) throw ConfigError("sample_ensemble: ensemble size must be >= 1");
    model.check_waveform(y);
    if (y.dim(0) != 1) throw ShapeError("sample_ensemble: expected a single condition, got " + shape_str(y.shape()));

    // One x_T per condition, shared by all members; members differ only in the per-step noise.
    const auto& mc = model.config();
    std::vector<double> x_T(mc.map_height * mc.map_width);
    RandomStream(cfg.seed, stream_id).fill_normal(x_T);

    const std::size_t chunks = std::min(worker_count(), members);
    EnsembleResult result;
    result.members.resize(members);
    parallel_for(chunks, [&](std::size_t c) {
        const std::size_t begin = members * c / chunks, end = members * (c + 1) / chunks;
        const std::size_t count = end - begin;
        std::vector<double> yv;
        yv.reserve(count * y.numel());
        for (std::size_t k = 0; k < count; ++k) yv.insert(yv.end(), y.data().begin(), y.data().end());
        Shape ys = y.shape();
        ys[0] = count;
        std::vector<std::uint64_t> ids;
        std::vector<double> xv;
        for (std::size_t k = begin; k < end; ++k) {
            ids.push_back(mix_ids(stream_id, k));
            xv.insert(xv.end(), x_T.begin(), x_T.end());
        }
        const Tensor start = Tensor::from({count, 1, mc.map_height, mc.map_width}, std::move(xv));
        const auto imgs =
            to_images(sample(Tensor::from(ys, std::move(yv)), model, weights, cfg, sched, ids, nullptr, &start));
        for (std::size_t k = 0; k < count; ++k) result.members[begin + k] = imgs[k];
    });
    result.uncertainty = uncertainty_from_members(result.members);
    return result;
}

} // namespace diffsos
