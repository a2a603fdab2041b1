#include "diffsos/denoiser.hpp"

#include <cmath>
#include <numeric>

#include "diffsos/rng.hpp"
#include "diffsos/schedule.hpp"

namespace diffsos {

namespace {

std::size_t clamp_groups(std::size_t requested, std::size_t channels) {
    std::size_t g = std::min(requested, channels);
    while (g > 1 && channels % g != 0) --g;
    return std::max<std::size_t>(g, 1);
}

} // namespace

void DenoiserConfig::validate() const {
    auto fail = [](const std::string& field, const std::string& why) { throw ConfigError("model." + field + ": " + why); };
    if (base_channels == 0) fail("base_channels", "must be >= 1");
    if (channel_multipliers.empty()) fail("channel_multipliers", "must list at least one scale");
    for (std::size_t m : channel_multipliers) {
        if (m == 0) fail("channel_multipliers", "entries must be >= 1");
    }
    if (res_blocks == 0) fail("res_blocks", "must be >= 1");
    if (time_embed_dim == 0 || time_embed_dim % 2 != 0) fail("time_embed_dim", "must be even and positive");
    if (groups == 0) fail("groups", "must be >= 1");
    if (waveform_channels == 0 || waveform_time == 0 || waveform_receivers == 0) {
        fail("waveform", "source, time and receiver counts must be positive");
    }
    const std::size_t div = std::size_t{1} << (num_scales() - 1);
    if (map_height == 0 || map_width == 0 || map_height % div != 0 || map_width % div != 0) {
        fail("map_height/map_width", "extents " + std::to_string(map_height) + "x" + std::to_string(map_width) +
                                         " must be divisible by " + std::to_string(div));
    }
}

std::size_t DenoiserParams::parameter_count() const {
    std::size_t n = 0;
    for (const auto& w : weights) n += w.numel();
    return n;
}

void DenoiserParams::zero_grad() {
    for (auto& w : weights) w.zero_grad();
}

std::size_t Denoiser::add_param(std::string name, Shape shape, Init init, ParamGroup group, std::size_t fan_in) {
    names_.push_back(std::move(name));
    shapes_.push_back(std::move(shape));
    inits_.push_back(init);
    groups_.push_back(group);
    fan_in_.push_back(fan_in);
    return names_.size() - 1;
}

Denoiser::Conv Denoiser::make_conv(const std::string& name, std::size_t cin, std::size_t cout, std::size_t k,
                                   Conv2dOptions opt, ParamGroup group, bool zero) {
    const std::size_t fan = cin * k * k;
    const Init init = zero ? Init::zeros : Init::uniform_fan_in;
    Conv c{};
    c.w = add_param(name + ".weight", {cout, cin, k, k}, init, group, fan);
    c.b = add_param(name + ".bias", {cout}, init, group, fan);
    c.opt = opt;
    return c;
}

Denoiser::Norm Denoiser::make_norm(const std::string& name, std::size_t ch, ParamGroup group) {
    Norm n{};
    n.gamma = add_param(name + ".gamma", {ch}, Init::ones, group, 1);
    n.beta = add_param(name + ".beta", {ch}, Init::zeros, group, 1);
    n.groups = clamp_groups(cfg_.groups, ch);
    return n;
}

Denoiser::Dense Denoiser::make_dense(const std::string& name, std::size_t in, std::size_t out, ParamGroup group) {
    Dense d{};
    d.w = add_param(name + ".weight", {out, in}, Init::uniform_fan_in, group, in);
    d.b = add_param(name + ".bias", {out}, Init::uniform_fan_in, group, in);
    return d;
}

Denoiser::ResBlock Denoiser::make_res(const std::string& name, std::size_t cin, std::size_t cout, ParamGroup group) {
    const Conv2dOptions same{1, 1, 1, 1};
    ResBlock r{};
    r.n1 = make_norm(name + ".norm1", cin, group);
    r.c1 = make_conv(name + ".conv1", cin, cout, 3, same, group);
    r.temb = make_dense(name + ".temb", embed_width_, cout, group);
    r.n2 = make_norm(name + ".norm2", cout, group);
    r.c2 = make_conv(name + ".conv2", cout, cout, 3, same, group);
    if (cin != cout) r.skip = make_conv(name + ".skip", cin, cout, 1, {}, group);
    return r;
}

Denoiser::Denoiser(DenoiserConfig cfg) : cfg_(std::move(cfg)) {
    cfg_.validate();
    const std::size_t scales = cfg_.num_scales();
    const Conv2dOptions same{1, 1, 1, 1};
    const Conv2dOptions down{2, 2, 1, 1};
    embed_width_ = 4 * cfg_.base_channels;
    const auto U = ParamGroup::unet;
    const auto C = ParamGroup::ctrl;

    time1_ = make_dense("unet.time.fc1", cfg_.time_embed_dim, embed_width_, U);
    time2_ = make_dense("unet.time.fc2", embed_width_, embed_width_, U);

    const std::size_t in_ch = cfg_.conditioning == Conditioning::concat ? 1 + cfg_.waveform_channels : 1;
    stem_ = make_conv("unet.stem", in_ch, cfg_.channels(0), 3, same, U);
    enc_down_.resize(scales);
    enc_blocks_.resize(scales);
    for (std::size_t i = 0; i < scales; ++i) {
        const std::string p = "unet.enc" + std::to_string(i);
        const std::size_t cin = i > 0 ? cfg_.channels(i - 1) : cfg_.channels(0);
        if (i > 0) enc_down_[i] = make_conv(p + ".down", cin, cin, 3, down, U);
        for (std::size_t b = 0; b < cfg_.res_blocks; ++b) {
            enc_blocks_[i].push_back(make_res(p + ".res" + std::to_string(b), b == 0 ? cin : cfg_.channels(i),
                                              cfg_.channels(i), U));
        }
    }
    mid_ = make_res("unet.mid", cfg_.channels(scales - 1), cfg_.channels(scales - 1), U);
    dec_fuse_.resize(scales);
    dec_blocks_.resize(scales);
    dec_up_.resize(scales);
    for (std::size_t i = scales; i-- > 0;) {
        const std::string p = "unet.dec" + std::to_string(i);
        dec_fuse_[i] = make_conv(p + ".fuse", 2 * cfg_.channels(i), cfg_.channels(i), 1, {}, U);
        dec_blocks_[i] = make_res(p + ".res", cfg_.channels(i), cfg_.channels(i), U);
        if (i > 0) dec_up_[i] = make_conv(p + ".up", cfg_.channels(i), cfg_.channels(i - 1), 3, same, U);
    }
    out_norm_ = make_norm("unet.out.norm", cfg_.channels(0), U);
    out_conv_ = make_conv("unet.out.conv", cfg_.channels(0), 1, 3, same, U);

    if (cfg_.conditioning == Conditioning::controlnet) {
        // Halve the time axis until it is within 2x of the map height, then pool.
        std::size_t t_ext = cfg_.waveform_time;
        std::size_t cin = cfg_.waveform_channels;
        do {
            const bool stride = t_ext > 2 * cfg_.map_height;
            ctrl_stem_.push_back(make_conv("ctrl.stem" + std::to_string(ctrl_stem_.size()), cin, cfg_.channels(0), 3,
                                           {stride ? 2u : 1u, 1, 1, 1}, C));
            if (stride) t_ext = (t_ext + 1) / 2;
            cin = cfg_.channels(0);
        } while (t_ext > 2 * cfg_.map_height);
        for (std::size_t i = 0; i < scales; ++i) {
            const std::string p = "ctrl.enc" + std::to_string(i);
            const std::size_t cin = i > 0 ? cfg_.channels(i - 1) : cfg_.channels(0);
            CtrlStage st{};
            st.conv = make_conv(p + ".conv", cin, cfg_.channels(i), 3, i > 0 ? down : same, C);
            st.temb = make_dense(p + ".temb", embed_width_, cfg_.channels(i), C);
            st.norm = make_norm(p + ".norm", cfg_.channels(i), C);
            ctrl_stages_.push_back(st);
        }
        for (std::size_t i = 0; i < scales; ++i) {
            couplers_.push_back(make_conv("coupler" + std::to_string(i), cfg_.channels(i), cfg_.channels(i), 1, {},
                                          ParamGroup::coupler, true));
        }
    }
}

DenoiserParams Denoiser::init_params(std::uint64_t seed) const {
    DenoiserParams p;
    p.names = names_;
    p.groups = groups_;
    for (std::size_t i = 0; i < names_.size(); ++i) {
        const std::size_t n = shape_numel(shapes_[i]);
        std::vector<double> v(n, 0.0);
        if (inits_[i] == Init::ones) {
            std::fill(v.begin(), v.end(), 1.0);
        } else if (inits_[i] == Init::uniform_fan_in) {
            RandomStream rng(seed, i);
            const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in_[i]));
            for (double& x : v) x = rng.uniform(-bound, bound);
        }
        p.weights.push_back(Tensor::from(shapes_[i], v, true));
        p.ema_shadow.push_back(Tensor::from(shapes_[i], std::move(v), false));
    }
    return p;
}

std::size_t Denoiser::parameter_count() const {
    std::size_t n = 0;
    for (const auto& s : shapes_) n += shape_numel(s);
    return n;
}

Tensor Denoiser::apply(const Conv& c, const Tensor& x, std::span<const Tensor> w) const {
    return conv2d(x, w[c.w], w[c.b], c.opt);
}

Tensor Denoiser::apply(const Norm& n, const Tensor& x, std::span<const Tensor> w) const {
    return group_norm(x, n.groups, w[n.gamma], w[n.beta]);
}

Tensor Denoiser::apply(const Dense& d, const Tensor& x, std::span<const Tensor> w) const {
    return linear(x, w[d.w], w[d.b]);
}

Tensor Denoiser::apply(const ResBlock& r, const Tensor& x, const Tensor& temb, std::span<const Tensor> w) const {
    Tensor h = apply(r.c1, silu(apply(r.n1, x, w)), w);
    h = add_channelwise(h, apply(r.temb, silu(temb), w));
    h = apply(r.c2, silu(apply(r.n2, h, w)), w);
    return add(h, r.skip ? apply(*r.skip, x, w) : x);
}

void Denoiser::check_waveform(const Tensor& y) const {
    if (!y.defined() || y.rank() != 4 || y.dim(1) != cfg_.waveform_channels || y.dim(2) != cfg_.waveform_time ||
        y.dim(3) != cfg_.waveform_receivers) {
        throw ShapeError("denoiser: waveform shape " + (y.defined() ? shape_str(y.shape()) : std::string("<none>")) +
                         " does not match geometry [N," + std::to_string(cfg_.waveform_channels) + "," +
                         std::to_string(cfg_.waveform_time) + "," + std::to_string(cfg_.waveform_receivers) + "]");
    }
}

Tensor Denoiser::time_features(std::span<const std::size_t> t, std::span<const Tensor> w) const {
    const Tensor emb = embed_timesteps(t, cfg_.time_embed_dim);
    return apply(time2_, silu(apply(time1_, emb, w)), w);
}

std::vector<Tensor> Denoiser::encode_waveform(const Tensor& y, const Tensor& temb, std::span<const Tensor> w) const {
    if (cfg_.conditioning != Conditioning::controlnet) throw ConfigError("encode_waveform: model has no control branch");
    check_waveform(y);
    Tensor h = y;
    for (const Conv& c : ctrl_stem_) h = silu(apply(c, h, w));
    h = adaptive_avg_pool2d(h, cfg_.map_height, cfg_.map_width);
    std::vector<Tensor> feats;
    for (std::size_t i = 0; i < cfg_.num_scales(); ++i) {
        const CtrlStage& st = ctrl_stages_[i];
        h = add_channelwise(apply(st.conv, h, w), apply(st.temb, silu(temb), w));
        h = silu(apply(st.norm, h, w));
        feats.push_back(h);
    }
    return feats;
}

Tensor Denoiser::couple(std::size_t scale, const Tensor& feature, std::span<const Tensor> w) const {
    return apply(couplers_.at(scale), feature, w);
}

Tensor Denoiser::forward(const Tensor& x_t, std::span<const std::size_t> t, const Tensor& y,
                         std::span<const Tensor> w) const {
    if (w.size() != names_.size()) {
        throw ShapeError("denoiser: expected " + std::to_string(names_.size()) + " weight tensors, got " +
                         std::to_string(w.size()));
    }
    if (!x_t.defined() || x_t.rank() != 4 || x_t.dim(1) != 1 || x_t.dim(2) != cfg_.map_height ||
        x_t.dim(3) != cfg_.map_width) {
        throw ShapeError("denoiser: x_t shape " + (x_t.defined() ? shape_str(x_t.shape()) : std::string("<none>")) +
                         " does not match [N,1," + std::to_string(cfg_.map_height) + "," +
                         std::to_string(cfg_.map_width) + "]");
    }
    if (t.size() != x_t.dim(0)) {
        throw ShapeError("denoiser: " + std::to_string(t.size()) + " timesteps for batch of " +
                         std::to_string(x_t.dim(0)));
    }
    check_waveform(y);
    if (y.dim(0) != x_t.dim(0)) throw ShapeError("denoiser: batch mismatch " + shape_str(x_t.shape()) + " vs " + shape_str(y.shape()));

    const Tensor temb = time_features(t, w);
    Tensor h;
    std::vector<Tensor> ctrl;
    if (cfg_.conditioning == Conditioning::concat) {
        h = apply(stem_, concat_channels(x_t, adaptive_avg_pool2d(y, cfg_.map_height, cfg_.map_width)), w);
    } else {
        h = apply(stem_, x_t, w);
        ctrl = encode_waveform(y, temb, w);
    }

    std::vector<Tensor> skips;
    for (std::size_t i = 0; i < cfg_.num_scales(); ++i) {
        if (enc_down_[i]) h = apply(*enc_down_[i], h, w);
        for (const auto& block : enc_blocks_[i]) h = apply(block, h, temb, w);
        if (!ctrl.empty()) h = add(h, couple(i, ctrl[i], w));
        skips.push_back(h);
    }
    h = apply(mid_, h, temb, w);
    for (std::size_t i = cfg_.num_scales(); i-- > 0;) {
        h = apply(dec_blocks_[i], apply(dec_fuse_[i], concat_channels(h, skips[i]), w), temb, w);
        if (dec_up_[i]) h = apply(*dec_up_[i], upsample_nearest2x(h), w);
    }
    return apply(out_conv_, silu(apply(out_norm_, h, w)), w);
}

} // namespace diffsos
