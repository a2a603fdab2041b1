#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "diffsos/image.hpp"
#include "diffsos/rng.hpp"

namespace diffsos {

/// Speed-of-sound field in m/s on a square-cell grid.
struct SosMap {
    Image grid;
    double spacing = 5e-4;  // meters per cell
    double c_min = 1400.0;
    double c_max = 1700.0;
};

struct GridPoint {
    std::size_t row = 0;
    std::size_t col = 0;
    bool operator==(const GridPoint&) const = default;
};

enum class ArrayLayout { opposed, ring };

struct ArrayGeometry {
    std::vector<GridPoint> sources;
    std::vector<GridPoint> receivers;
    double center_frequency = 0.0;  // Ricker peak frequency, Hz
    double source_amplitude = 1.0;
    std::size_t time_samples = 256;
    double dt = 0.0;                // seconds
    std::string tag = "custom";
};

/// Sources along the top row and receivers along the bottom row, each set
/// mirror-symmetric about the vertical center line. The Ricker frequency gives
/// about six cells per wavelength at c_min; dt = cfl * spacing / c_max.
ArrayGeometry make_opposed_geometry(std::size_t height, std::size_t width, std::size_t sources, std::size_t receivers,
                                    std::size_t time_samples, double spacing, double c_min, double c_max,
                                    double cfl = 0.5);
/// Sources and receivers evenly spaced on an inscribed circle.
ArrayGeometry make_ring_geometry(std::size_t height, std::size_t width, std::size_t sources, std::size_t receivers,
                                 std::size_t time_samples, double spacing, double c_min, double c_max,
                                 double cfl = 0.5);

enum class InclusionShape { ellipse, polygon };

struct PhantomSpec {
    std::size_t height = 32;
    std::size_t width = 32;
    double spacing = 5e-4;
    double c_min = 1400.0;
    double c_max = 1700.0;
    double background = 1500.0;
    std::size_t min_inclusions = 1;
    std::size_t max_inclusions = 3;
    InclusionShape shape = InclusionShape::ellipse;
    double speed_min = 1420.0;
    double speed_max = 1650.0;
    double radius_min = 3.0;  // cells
    double radius_max = 6.0;
    double smoothing = 1.0;   // Gaussian sigma in cells, 0 disables
    std::uint64_t seed = 0;

    void validate() const;
    double lowest_speed() const;
    double highest_speed() const;
};

/// Background plus k non-overlapping smoothed inclusions. Inclusions beyond
/// min_inclusions that cannot be placed are dropped. Deterministic in rng.
SosMap generate_phantom(const PhantomSpec& spec, RandomStream& rng);

/// Recorded pressure, row-major [source][time][receiver].
struct Waveforms {
    std::size_t sources = 0;
    std::size_t time_samples = 0;
    std::size_t receivers = 0;
    std::vector<double> data;

    double at(std::size_t s, std::size_t t, std::size_t r) const {
        return data[(s * time_samples + t) * receivers + r];
    }
};

struct SimOptions {
    std::size_t absorbing_cells = 10;
    double reflection = 1e-3;  // target reflection of the damping layer
    /// Fill SimDiagnostics::energy with the discrete energy after each step (shot 0).
    bool record_energy = false;
};

struct SimDiagnostics {
    std::vector<double> energy;
    std::size_t source_cutoff_step = 0;  // first step with no further injection
};

/// Ricker wavelet at time t with peak frequency f0 and delay 1.5 / f0; zero after 3 / f0.
double ricker_source(double t, double f0);

/// Largest stable time step for the map: spacing / (max speed * sqrt(2)).
double max_stable_dt(const SosMap& map);

/// Constant-density 2D acoustic FDTD, one shot per source, second-order in
/// space and time, damping-layer absorbing boundary. Shots run in parallel.
Waveforms simulate(const SosMap& map, const ArrayGeometry& geom, const SimOptions& opt = {},
                   SimDiagnostics* diag = nullptr);

} // namespace diffsos
