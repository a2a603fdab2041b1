#include "diffsos/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <sstream>

#include "diffsos/metrics.hpp"
#include "diffsos/rng.hpp"

namespace diffsos {

namespace {

constexpr std::uint64_t kShuffleTag = 0x5348554646ULL;
constexpr std::uint64_t kDrawTag = 0x44524157ULL;

std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, std::size_t epoch) {
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    RandomStream rng(seed, mix_ids(kShuffleTag, epoch));
    for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
    return order;
}

Tensor rows_of(const Tensor& t, std::span<const std::size_t> idx) {
    const std::size_t per = t.numel() / t.dim(0);
    std::vector<double> out;
    out.reserve(idx.size() * per);
    for (std::size_t i : idx) {
        if (i >= t.dim(0)) throw ShapeError("gather: index " + std::to_string(i) + " out of range");
        const auto src = t.data().subspan(i * per, per);
        out.insert(out.end(), src.begin(), src.end());
    }
    Shape s = t.shape();
    s[0] = idx.size();
    return Tensor::from(std::move(s), std::move(out));
}

} // namespace

void TrainConfig::validate() const {
    if (epochs == 0) throw ConfigError("train.epochs: must be >= 1");
    if (warmup_epochs >= epochs) {
        throw ConfigError("train.warmup_epochs: must be < train.epochs (" + std::to_string(warmup_epochs) +
                          " >= " + std::to_string(epochs) + ")");
    }
    if (batch_size == 0) throw ConfigError("train.batch_size: must be >= 1");
    if (!(lr_max > 0.0) || !std::isfinite(lr_max)) throw ConfigError("train.lr_max: must be positive");
    if (!(ema_decay >= 0.0 && ema_decay < 1.0)) throw ConfigError("train.ema_decay: must be in [0, 1)");
    if (!(grad_clip >= 0.0)) throw ConfigError("train.grad_clip: must be >= 0");
    if (val_every == 0) throw ConfigError("train.val_every: must be >= 1");
    if (checkpoint_every == 0) throw ConfigError("train.checkpoint_every: must be >= 1");
    loss.validate();
}

double lr_at(std::size_t epoch, const TrainConfig& cfg) {
    const double e = static_cast<double>(epoch);
    const double w = static_cast<double>(cfg.warmup_epochs);
    if (epoch < cfg.warmup_epochs) return cfg.lr_max * e / w;
    const double span = static_cast<double>(cfg.epochs) - w;
    const double progress = std::min(1.0, (e - w) / span);
    return cfg.lr_max * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

OptimizerState OptimizerState::for_params(std::span<const Tensor> params) {
    OptimizerState s;
    for (const auto& p : params) {
        s.m.emplace_back(p.numel(), 0.0);
        s.v.emplace_back(p.numel(), 0.0);
    }
    return s;
}

void adam_step(std::span<Tensor> params, OptimizerState& state, double lr) {
    if (state.m.size() != params.size() || state.v.size() != params.size()) {
        throw ShapeError("adam_step: optimizer state holds " + std::to_string(state.m.size()) + " slots for " +
                         std::to_string(params.size()) + " parameters");
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (params[i].grad().size() != params[i].numel()) {
            throw ConfigError("adam_step: parameter " + std::to_string(i) + " has no gradient");
        }
    }
    ++state.step;
    const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto w = params[i].mutable_data();
        const auto g = params[i].grad();
        auto& m = state.m[i];
        auto& v = state.v[i];
        for (std::size_t k = 0; k < w.size(); ++k) {
            m[k] = state.beta1 * m[k] + (1.0 - state.beta1) * g[k];
            v[k] = state.beta2 * v[k] + (1.0 - state.beta2) * g[k] * g[k];
            w[k] -= lr * (m[k] / bc1) / (std::sqrt(v[k] / bc2) + state.eps);
        }
    }
}

void ema_update(std::span<Tensor> shadow, std::span<const Tensor> params, double decay) {
    if (shadow.size() != params.size()) throw ShapeError("ema_update: shadow and params differ in count");
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (shadow[i].numel() != params[i].numel()) {
            throw ShapeError("ema_update: shape mismatch at parameter " + std::to_string(i));
        }
        auto s = shadow[i].mutable_data();
        const auto p = params[i].data();
        for (std::size_t k = 0; k < s.size(); ++k) s[k] = decay * s[k] + (1.0 - decay) * p[k];
    }
}

double clip_grad_norm(std::span<Tensor> params, double max_norm) {
    double sq = 0.0;
    for (const auto& p : params) {
        for (double g : p.grad()) sq += g * g;
    }
    const double norm = std::sqrt(sq);
    if (max_norm > 0.0 && norm > max_norm) {
        const double scale = max_norm / norm;
        for (auto& p : params) {
            for (double& g : p.mutable_grad()) g *= scale;
        }
    }
    return norm;
}

std::pair<Tensor, Tensor> TrainingSet::gather(std::span<const std::size_t> idx) const {
    return {rows_of(maps, idx), rows_of(waves, idx)};
}

TrainState init_train_state(const Denoiser& model, const TrainConfig& cfg) {
    TrainState s;
    s.params = model.init_params(cfg.seed);
    s.opt = OptimizerState::for_params(s.params.weights);
    return s;
}

double validate_msssim(const Denoiser& model, std::span<const Tensor> weights, const TrainingSet& val,
                       const SamplerConfig& sampler, const NoiseSchedule& sched, std::size_t limit,
                       std::size_t ms_ssim_scales) {
    const std::size_t n = limit == 0 ? val.size() : std::min(limit, val.size());
    if (n == 0) throw ConfigError("validation split is empty");
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    const auto [maps, waves] = val.gather(idx);
    std::vector<std::uint64_t> streams(idx.begin(), idx.end());
    const auto pred = to_images(sample(waves, model, weights, sampler, sched, streams));
    const auto truth = to_images(maps);
    const std::vector<std::string> ids(val.ids.begin(), val.ids.begin() + static_cast<std::ptrdiff_t>(n));
    EvalOptions eo;
    eo.ms_ssim_scales = ms_ssim_scales;
    return evaluate_set(ids, pred, truth, eo).mean.ms_ssim;
}

void train(const Denoiser& model, const TrainConfig& cfg, const NoiseSchedule& sched, const TrainingSet& train_set,
           const TrainingSet& val_set, TrainState& state, const TrainHooks& hooks, std::size_t stop_epoch) {
    cfg.validate();
    if (train_set.size() == 0) throw ConfigError("train: training split is empty");
    if (val_set.size() == 0) throw ConfigError("train: validation split is empty");
    if (state.params.size() != model.param_names().size()) {
        throw CheckpointError("train: state holds " + std::to_string(state.params.size()) + " parameters, model has " +
                              std::to_string(model.param_names().size()));
    }

    const std::size_t n = train_set.size();
    const std::size_t plane = train_set.maps.numel() / n;
    const std::size_t end = std::min(stop_epoch, cfg.epochs);
    auto& weights = state.params.weights;

    for (std::size_t epoch = state.next_epoch; epoch < end; ++epoch) {
        const double lr = lr_at(epoch, cfg);
        const auto order = epoch_order(n, cfg.seed, epoch);
        for (std::size_t start = 0; start < n; start += cfg.batch_size) {
            const std::size_t b = std::min(cfg.batch_size, n - start);
            const std::span<const std::size_t> idx(order.data() + start, b);
            auto [x0, y] = train_set.gather(idx);

            LossBatch batch{x0, y, std::vector<std::size_t>(b), Tensor()};
            std::vector<double> eps(b * plane);
            for (std::size_t i = 0; i < b; ++i) {
                RandomStream rng(cfg.seed, mix_ids(kDrawTag, state.global_step, i));
                batch.t[i] = 1 + static_cast<std::size_t>(rng.below(sched.steps()));
                rng.fill_normal(std::span<double>(eps).subspan(i * plane, plane));
            }
            batch.eps = Tensor::from(x0.shape(), std::move(eps));

            state.params.zero_grad();
            const LossResult res = loss_total(batch, model, weights, sched, cfg.loss);
            if (!std::isfinite(res.report.total)) {
                std::ostringstream os;
                os << "train: non-finite loss " << res.report.total << " at step " << state.global_step << " (epoch "
                   << epoch << ")";
                throw NumericError(os.str());
            }
            backward(res.total);
            if (cfg.grad_clip > 0.0) clip_grad_norm(weights, cfg.grad_clip);
            adam_step(weights, state.opt, lr);
            ema_update(state.params.ema_shadow, weights, cfg.ema_decay);

            if (hooks.on_log) hooks.on_log(LogRow{epoch, state.global_step, lr, res.report, std::nullopt});
            ++state.global_step;
        }

        const bool validate_now = epoch % cfg.val_every == cfg.val_every - 1 || epoch + 1 == cfg.epochs;
        if (validate_now) {
            const double v =
                validate_msssim(model, state.params.ema_shadow, val_set, cfg.val_sampler, sched, cfg.val_limit,
                                cfg.val_ms_ssim_scales);
            if (v > state.best_val || state.best_ema.empty()) {
                state.best_val = v;
                state.best_epoch = epoch;
                state.best_ema.clear();
                for (const auto& w : state.params.ema_shadow) state.best_ema.push_back(w.clone());
            }
            if (hooks.on_log) hooks.on_log(LogRow{epoch, state.global_step, lr, std::nullopt, v});
        }

        state.next_epoch = epoch + 1;
        const bool checkpoint_now = (epoch + 1) % cfg.checkpoint_every == 0 || epoch + 1 == end;
        if (checkpoint_now && hooks.on_checkpoint) hooks.on_checkpoint(state);
    }
}

} // namespace diffsos
