#include "diffsos/wavesim.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "diffsos/error.hpp"
#include "diffsos/parallel.hpp"

namespace diffsos {

namespace {

// Positions spread over [0, extent) and mirror-symmetric about the center.
std::vector<std::size_t> symmetric_positions(std::size_t count, std::size_t extent) {
    std::vector<std::size_t> pos(count);
    for (std::size_t i = 0; i < (count + 1) / 2; ++i) {
        const double x = (static_cast<double>(i) + 0.5) * static_cast<double>(extent) / static_cast<double>(count);
        pos[i] = std::min(extent - 1, static_cast<std::size_t>(std::floor(x)));
        pos[count - 1 - i] = extent - 1 - pos[i];
    }
    return pos;
}

double ricker_frequency(double spacing, double c_min) { return c_min / (6.0 * spacing); }

void check_inside(const std::vector<GridPoint>& pts, const Image& g, const char* what) {
    for (const auto& p : pts) {
        if (p.row >= g.height || p.col >= g.width) {
            throw ConfigError(std::string("simulate: ") + what + " position (" + std::to_string(p.row) + "," +
                              std::to_string(p.col) + ") outside the " + std::to_string(g.height) + "x" +
                              std::to_string(g.width) + " grid");
        }
    }
}

Image gaussian_blur(const Image& in, double sigma) {
    const int radius = static_cast<int>(std::ceil(3.0 * sigma));
    std::vector<double> k(2 * radius + 1);
    double ks = 0.0;
    for (int i = -radius; i <= radius; ++i) {
        k[i + radius] = std::exp(-0.5 * i * i / (sigma * sigma));
        ks += k[i + radius];
    }
    for (double& v : k) v /= ks;
    const int h = static_cast<int>(in.height), w = static_cast<int>(in.width);
    Image tmp(in.height, in.width), out(in.height, in.width);
    for (int r = 0; r < h; ++r) {
        for (int c = 0; c < w; ++c) {
            double s = 0.0;
            for (int i = -radius; i <= radius; ++i) s += k[i + radius] * in.at(r, std::clamp(c + i, 0, w - 1));
            tmp.at(r, c) = s;
        }
    }
    for (int r = 0; r < h; ++r) {
        for (int c = 0; c < w; ++c) {
            double s = 0.0;
            for (int i = -radius; i <= radius; ++i) s += k[i + radius] * tmp.at(std::clamp(r + i, 0, h - 1), c);
            out.at(r, c) = s;
        }
    }
    return out;
}

struct Inclusion {
    double cy, cx, extent;
    double speed;
    InclusionShape shape;
    double a, b, angle;               // ellipse
    std::vector<double> vx, vy;       // polygon vertices (absolute)
};

bool inside(const Inclusion& inc, double y, double x) {
    if (inc.shape == InclusionShape::ellipse) {
        const double dy = y - inc.cy, dx = x - inc.cx;
        const double u = (dx * std::cos(inc.angle) + dy * std::sin(inc.angle)) / inc.a;
        const double v = (-dx * std::sin(inc.angle) + dy * std::cos(inc.angle)) / inc.b;
        return u * u + v * v <= 1.0;
    }
    bool in = false;
    const std::size_t n = inc.vx.size();
    for (std::size_t i = 0, j = n - 1; i < n; j = i++) {
        if ((inc.vy[i] > y) != (inc.vy[j] > y) &&
            x < (inc.vx[j] - inc.vx[i]) * (y - inc.vy[i]) / (inc.vy[j] - inc.vy[i]) + inc.vx[i]) {
            in = !in;
        }
    }
    return in;
}

} // namespace

ArrayGeometry make_opposed_geometry(std::size_t height, std::size_t width, std::size_t sources, std::size_t receivers,
                                    std::size_t time_samples, double spacing, double c_min, double c_max, double cfl) {
    if (height < 2 || width < 1 || sources == 0 || receivers == 0 || sources > width || receivers > width) {
        throw ConfigError("geometry: opposed arrays need height >= 2 and 1 <= sources, receivers <= width");
    }
    ArrayGeometry g;
    for (std::size_t c : symmetric_positions(sources, width)) g.sources.push_back({0, c});
    for (std::size_t c : symmetric_positions(receivers, width)) g.receivers.push_back({height - 1, c});
    g.center_frequency = ricker_frequency(spacing, c_min);
    g.time_samples = time_samples;
    g.dt = cfl * spacing / c_max;
    g.tag = "opposed-" + std::to_string(sources) + "x" + std::to_string(receivers);
    return g;
}

ArrayGeometry make_ring_geometry(std::size_t height, std::size_t width, std::size_t sources, std::size_t receivers,
                                 std::size_t time_samples, double spacing, double c_min, double c_max, double cfl) {
    if (height < 3 || width < 3 || sources == 0 || receivers == 0) {
        throw ConfigError("geometry: ring array needs a grid of at least 3x3 and positive element counts");
    }
    const double cy = (static_cast<double>(height) - 1.0) / 2.0, cx = (static_cast<double>(width) - 1.0) / 2.0;
    const double radius = std::min(cy, cx);
    auto place = [&](std::size_t count, double phase) {
        std::vector<GridPoint> pts;
        for (std::size_t i = 0; i < count; ++i) {
            const double a = phase + 2.0 * std::numbers::pi * static_cast<double>(i) / static_cast<double>(count);
            const auto r = static_cast<std::size_t>(std::lround(cy - radius * std::cos(a)));
            const auto c = static_cast<std::size_t>(std::lround(cx + radius * std::sin(a)));
            pts.push_back({std::min(r, height - 1), std::min(c, width - 1)});
        }
        return pts;
    };
    ArrayGeometry g;
    g.sources = place(sources, 0.0);
    g.receivers = place(receivers, std::numbers::pi / static_cast<double>(receivers));
    g.center_frequency = ricker_frequency(spacing, c_min);
    g.time_samples = time_samples;
    g.dt = cfl * spacing / c_max;
    g.tag = "ring-" + std::to_string(sources) + "x" + std::to_string(receivers);
    return g;
}

void PhantomSpec::validate() const {
    auto fail = [](const std::string& field, const std::string& why) { throw ConfigError("dataset." + field + ": " + why); };
    if (height == 0 || width == 0) fail("map_height/map_width", "must be positive");
    if (!(spacing > 0.0)) fail("spacing", "must be > 0");
    if (!(c_min > 0.0 && c_min < c_max)) fail("c_min/c_max", "require 0 < c_min < c_max");
    if (!(background > c_min && background < c_max)) fail("background", "must lie in (c_min, c_max)");
    if (min_inclusions > max_inclusions) fail("min_inclusions", "exceeds max_inclusions");
    if (!(speed_min > c_min && speed_max < c_max && speed_min <= speed_max)) {
        fail("inclusion_speed_min/max", "must satisfy c_min < min <= max < c_max");
    }
    if (!(radius_min > 0.0 && radius_min <= radius_max)) fail("radius_min/max", "require 0 < min <= max");
    if (smoothing < 0.0) fail("smoothing", "must be >= 0");
}

double PhantomSpec::lowest_speed() const { return max_inclusions == 0 ? background : std::min(background, speed_min); }
double PhantomSpec::highest_speed() const { return max_inclusions == 0 ? background : std::max(background, speed_max); }

SosMap generate_phantom(const PhantomSpec& spec, RandomStream& rng) {
    spec.validate();
    SosMap m;
    m.grid = Image(spec.height, spec.width, spec.background);
    m.spacing = spec.spacing;
    m.c_min = spec.c_min;
    m.c_max = spec.c_max;

    const std::size_t count = spec.min_inclusions + rng.below(spec.max_inclusions - spec.min_inclusions + 1);
    constexpr int kMaxAttempts = 200;
    std::vector<Inclusion> placed;
    for (std::size_t k = 0; k < count; ++k) {
        bool ok = false;
        for (int attempt = 0; attempt < kMaxAttempts && !ok; ++attempt) {
            Inclusion inc{};
            inc.shape = spec.shape;
            inc.speed = rng.uniform(spec.speed_min, spec.speed_max);
            if (spec.shape == InclusionShape::ellipse) {
                inc.a = rng.uniform(spec.radius_min, spec.radius_max);
                inc.b = rng.uniform(spec.radius_min, spec.radius_max);
                inc.angle = rng.uniform(0.0, std::numbers::pi);
                inc.extent = std::max(inc.a, inc.b);
            } else {
                const std::size_t verts = 5 + rng.below(4);
                inc.extent = spec.radius_max;
                std::vector<double> radii(verts);
                for (double& r : radii) r = rng.uniform(spec.radius_min, spec.radius_max);
                inc.extent = *std::max_element(radii.begin(), radii.end());
                inc.vx.resize(verts);
                inc.vy.resize(verts);
                const double phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
                for (std::size_t v = 0; v < verts; ++v) {
                    const double a = phase + 2.0 * std::numbers::pi * static_cast<double>(v) / static_cast<double>(verts);
                    inc.vx[v] = radii[v] * std::cos(a);
                    inc.vy[v] = radii[v] * std::sin(a);
                }
            }
            const double lo = inc.extent + 1.0;
            const double hi_y = static_cast<double>(spec.height) - 2.0 - inc.extent;
            const double hi_x = static_cast<double>(spec.width) - 2.0 - inc.extent;
            if (hi_y < lo || hi_x < lo) continue;
            inc.cy = rng.uniform(lo, hi_y);
            inc.cx = rng.uniform(lo, hi_x);
            bool clear = true;
            for (const auto& other : placed) {
                const double d = std::hypot(inc.cy - other.cy, inc.cx - other.cx);
                if (d <= inc.extent + other.extent + 1.0) clear = false;
            }
            if (!clear) continue;
            for (std::size_t v = 0; v < inc.vx.size(); ++v) {
                inc.vx[v] += inc.cx;
                inc.vy[v] += inc.cy;
            }
            placed.push_back(std::move(inc));
            ok = true;
        }
        if (!ok && k >= spec.min_inclusions) break;
        if (!ok) {
            throw ConfigError("generate_phantom: could not place inclusion " + std::to_string(k + 1) + " of " +
                              std::to_string(count) + " after " + std::to_string(kMaxAttempts) +
                              " attempts; reduce radius_max or max_inclusions");
        }
    }
    for (std::size_t r = 0; r < spec.height; ++r) {
        for (std::size_t c = 0; c < spec.width; ++c) {
            for (const auto& inc : placed) {
                if (inside(inc, static_cast<double>(r), static_cast<double>(c))) m.grid.at(r, c) = inc.speed;
            }
        }
    }
    if (spec.smoothing > 0.0 && !placed.empty()) m.grid = gaussian_blur(m.grid, spec.smoothing);
    const double lo = spec.lowest_speed(), hi = spec.highest_speed();
    for (double& v : m.grid.pixels) v = std::clamp(v, lo, hi);
    return m;
}

double ricker_source(double t, double f0) {
    const double delay = 1.5 / f0;
    if (t < 0.0 || t > 2.0 * delay) return 0.0;
    const double a = std::numbers::pi * f0 * (t - delay);
    return (1.0 - 2.0 * a * a) * std::exp(-a * a);
}

double max_stable_dt(const SosMap& map) {
    const double cmax = *std::max_element(map.grid.pixels.begin(), map.grid.pixels.end());
    return map.spacing / (cmax * std::sqrt(2.0));
}

Waveforms simulate(const SosMap& map, const ArrayGeometry& geom, const SimOptions& opt, SimDiagnostics* diag) {
    const Image& g = map.grid;
    if (g.size() == 0) throw ConfigError("simulate: empty map");
    if (!(map.spacing > 0.0)) throw ConfigError("simulate: spacing must be > 0");
    if (!(geom.dt > 0.0) || geom.time_samples == 0 || !(geom.center_frequency > 0.0)) {
        throw ConfigError("simulate: geometry needs dt > 0, time_samples > 0 and a positive center frequency");
    }
    const double dt_max = max_stable_dt(map);
    if (geom.dt > dt_max) {
        throw ConfigError("simulate: dt=" + std::to_string(geom.dt) + " violates the CFL bound; admissible dt <= " +
                          std::to_string(dt_max));
    }
    check_inside(geom.sources, g, "source");
    check_inside(geom.receivers, g, "receiver");

    const std::size_t L = opt.absorbing_cells;
    const std::size_t H = g.height + 2 * L, W = g.width + 2 * L;
    // Padded medium with edge-replicated speeds; coefficient (c dt / h)^2.
    std::vector<double> courant2(H * W), inv_c2(H * W), damp(H * W, 0.0);
    double cmax = 0.0;
    for (std::size_t r = 0; r < H; ++r) {
        for (std::size_t c = 0; c < W; ++c) {
            const std::size_t mr = std::clamp<long>(static_cast<long>(r) - static_cast<long>(L), 0, static_cast<long>(g.height) - 1);
            const std::size_t mc = std::clamp<long>(static_cast<long>(c) - static_cast<long>(L), 0, static_cast<long>(g.width) - 1);
            const double v = g.at(mr, mc);
            cmax = std::max(cmax, v);
            const double k = v * geom.dt / map.spacing;
            courant2[r * W + c] = k * k;
            inv_c2[r * W + c] = 1.0 / (v * v);
        }
    }
    if (L > 0) {
        const double width_m = static_cast<double>(L) * map.spacing;
        const double sigma_max = 3.0 * cmax * std::log(1.0 / opt.reflection) / (2.0 * width_m);
        for (std::size_t r = 0; r < H; ++r) {
            for (std::size_t c = 0; c < W; ++c) {
                const auto depth = [&](std::size_t i, std::size_t n) -> double {
                    if (i < L) return static_cast<double>(L - i);
                    if (i >= n - L) return static_cast<double>(i - (n - L) + 1);
                    return 0.0;
                };
                const double d = std::max(depth(r, H), depth(c, W)) / static_cast<double>(L);
                // Half-step damping coefficient sigma * dt / 2.
                damp[r * W + c] = 0.5 * geom.dt * sigma_max * d * d;
            }
        }
    }

    const std::size_t S = geom.sources.size(), R = geom.receivers.size(), T = geom.time_samples;
    Waveforms out{S, T, R, std::vector<double>(S * T * R, 0.0)};
    const double f0 = geom.center_frequency;
    const auto cutoff = static_cast<std::size_t>(std::ceil(3.0 / f0 / geom.dt)) + 1;
    if (diag != nullptr) {
        diag->energy.clear();
        diag->source_cutoff_step = cutoff;
    }

    auto shot = [&](std::size_t s) {
        std::vector<double> prev(H * W, 0.0), cur(H * W, 0.0), next(H * W, 0.0);
        const std::size_t src = (geom.sources[s].row + L) * W + geom.sources[s].col + L;
        const double dt2 = geom.dt * geom.dt;
        for (std::size_t n = 0; n < T; ++n) {
            for (std::size_t r = 0; r < H; ++r) {
                for (std::size_t c = 0; c < W; ++c) {
                    const std::size_t i = r * W + c;
                    const double up = r > 0 ? cur[i - W] : 0.0;
                    const double dn = r + 1 < H ? cur[i + W] : 0.0;
                    const double lf = c > 0 ? cur[i - 1] : 0.0;
                    const double rt = c + 1 < W ? cur[i + 1] : 0.0;
                    const double lap = up + dn + lf + rt - 4.0 * cur[i];
                    next[i] = (2.0 * cur[i] - (1.0 - damp[i]) * prev[i] + courant2[i] * lap) / (1.0 + damp[i]);
                }
            }
            next[src] += dt2 * geom.source_amplitude * ricker_source(static_cast<double>(n) * geom.dt, f0) /
                         (1.0 + damp[src]);
            for (std::size_t k = 0; k < R; ++k) {
                const auto& p = geom.receivers[k];
                out.data[(s * T + n) * R + k] = next[(p.row + L) * W + p.col + L];
            }
            if (!std::isfinite(next[src])) {
                throw NumericError("simulate: non-finite field at step " + std::to_string(n) + " of source " +
                                   std::to_string(s));
            }
            if (diag != nullptr && opt.record_energy && s == 0) {
                // E^{n+1/2} = |p^{n+1} - p^n|^2_{1/c^2} - (dt/h)^2 <p^{n+1}, Lap p^n>
                double kinetic = 0.0, potential = 0.0;
                for (std::size_t r = 0; r < H; ++r) {
                    for (std::size_t c = 0; c < W; ++c) {
                        const std::size_t i = r * W + c;
                        const double dv = next[i] - cur[i];
                        kinetic += inv_c2[i] * dv * dv;
                        const double up = r > 0 ? cur[i - W] : 0.0;
                        const double dn = r + 1 < H ? cur[i + W] : 0.0;
                        const double lf = c > 0 ? cur[i - 1] : 0.0;
                        const double rt = c + 1 < W ? cur[i + 1] : 0.0;
                        potential -= next[i] * (up + dn + lf + rt - 4.0 * cur[i]);
                    }
                }
                const double scale = dt2 / (map.spacing * map.spacing);
                diag->energy.push_back(kinetic + scale * potential);
            }
            std::swap(prev, cur);
            std::swap(cur, next);
        }
        for (double v : cur) {
            if (!std::isfinite(v)) throw NumericError("simulate: non-finite field after final step of source " + std::to_string(s));
        }
    };
    parallel_for(S, shot);
    return out;
}

} // namespace diffsos
