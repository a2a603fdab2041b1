#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "diffsos/tensor.hpp"

namespace diffsos {

/// How the waveform condition reaches the U-Net.
enum class Conditioning {
    controlnet,  // parallel branch + zero-initialized 1x1 couplers on encoder scales
    concat,      // waveform pooled to map size and stacked with x_t at the input (ablation)
};

struct DenoiserConfig {
    std::size_t base_channels = 32;
    std::vector<std::size_t> channel_multipliers{1, 2, 4};
    std::size_t res_blocks = 2;  // encoder residual blocks per scale
    std::size_t time_embed_dim = 256;
    std::size_t groups = 8;
    std::size_t waveform_channels = 8;   // sources S
    std::size_t waveform_time = 256;     // time samples
    std::size_t waveform_receivers = 32; // receivers R
    std::size_t map_height = 32;
    std::size_t map_width = 32;
    Conditioning conditioning = Conditioning::controlnet;

    std::size_t num_scales() const { return channel_multipliers.size(); }
    std::size_t channels(std::size_t scale) const { return base_channels * channel_multipliers.at(scale); }
    /// Throws ConfigError naming the offending field.
    void validate() const;
};

enum class ParamGroup { unet, ctrl, coupler };

/// All learnable weights plus the EMA shadow, in registration order.
struct DenoiserParams {
    std::vector<std::string> names;
    std::vector<ParamGroup> groups;
    std::vector<Tensor> weights;     // requires_grad leaves
    std::vector<Tensor> ema_shadow;  // same shapes, no grad

    std::size_t size() const { return weights.size(); }
    std::size_t parameter_count() const;
    void zero_grad();
};

/// Noise predictor eps_hat = f(x_t, t, y): small U-Net whose encoder scale i is
/// h_i = enc_i(x_t, t) + Z_i(ctrl_i(y, t)), Z_i a zero-initialized 1x1 conv.
class Denoiser {
public:
    explicit Denoiser(DenoiserConfig cfg);

    const DenoiserConfig& config() const { return cfg_; }

    /// Fresh parameters; couplers are exactly zero, EMA shadow equals weights.
    DenoiserParams init_params(std::uint64_t seed) const;

    /// x_t [N,1,H,W], t (N steps), y [N,S,T_time,R] -> eps_hat [N,1,H,W].
    /// `weights` is either DenoiserParams::weights or ::ema_shadow.
    Tensor forward(const Tensor& x_t, std::span<const std::size_t> t, const Tensor& y,
                   std::span<const Tensor> weights) const;

    /// Timestep MLP output [N, E] shared by the U-Net and control branch.
    Tensor time_features(std::span<const std::size_t> t, std::span<const Tensor> weights) const;

    /// Control branch features, one per encoder scale (before couplers).
    /// Requires controlnet conditioning.
    std::vector<Tensor> encode_waveform(const Tensor& y, const Tensor& time_features,
                                        std::span<const Tensor> weights) const;

    /// Z_i(feature) for scale i.
    Tensor couple(std::size_t scale, const Tensor& feature, std::span<const Tensor> weights) const;

    /// Throws ShapeError if `y` does not match the configured waveform geometry.
    void check_waveform(const Tensor& y) const;

    std::size_t parameter_count() const;
    const std::vector<std::string>& param_names() const { return names_; }
    const std::vector<Shape>& param_shapes() const { return shapes_; }

private:
    enum class Init { uniform_fan_in, zeros, ones };
    struct Conv {
        std::size_t w, b;
        Conv2dOptions opt;
    };
    struct Norm {
        std::size_t gamma, beta, groups;
    };
    struct Dense {
        std::size_t w, b;
    };
    struct ResBlock {
        Norm n1;
        Conv c1;
        Dense temb;
        Norm n2;
        Conv c2;
        std::optional<Conv> skip;
    };
    // Control-branch stage: conv, timestep bias, norm, SiLU.
    struct CtrlStage {
        Conv conv;
        Dense temb;
        Norm norm;
    };

    std::size_t add_param(std::string name, Shape shape, Init init, ParamGroup group, std::size_t fan_in);
    Conv make_conv(const std::string& name, std::size_t cin, std::size_t cout, std::size_t k, Conv2dOptions opt,
                   ParamGroup group, bool zero = false);
    Norm make_norm(const std::string& name, std::size_t ch, ParamGroup group);
    Dense make_dense(const std::string& name, std::size_t in, std::size_t out, ParamGroup group);
    ResBlock make_res(const std::string& name, std::size_t cin, std::size_t cout, ParamGroup group);

    Tensor apply(const Conv& c, const Tensor& x, std::span<const Tensor> w) const;
    Tensor apply(const Norm& n, const Tensor& x, std::span<const Tensor> w) const;
    Tensor apply(const Dense& d, const Tensor& x, std::span<const Tensor> w) const;
    Tensor apply(const ResBlock& r, const Tensor& x, const Tensor& temb, std::span<const Tensor> w) const;

    DenoiserConfig cfg_;
    std::size_t embed_width_ = 0;

    std::vector<std::string> names_;
    std::vector<Shape> shapes_;
    std::vector<Init> inits_;
    std::vector<ParamGroup> groups_;
    std::vector<std::size_t> fan_in_;

    Dense time1_{}, time2_{};
    Conv stem_{};
    std::vector<std::optional<Conv>> enc_down_;
    std::vector<std::vector<ResBlock>> enc_blocks_;
    ResBlock mid_{};
    std::vector<Conv> dec_fuse_;
    std::vector<ResBlock> dec_blocks_;
    std::vector<std::optional<Conv>> dec_up_;
    Norm out_norm_{};
    Conv out_conv_{};

    std::vector<Conv> ctrl_stem_;
    std::vector<CtrlStage> ctrl_stages_;
    std::vector<Conv> couplers_;
};

} // namespace diffsos
