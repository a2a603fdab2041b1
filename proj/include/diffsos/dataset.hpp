#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "diffsos/image.hpp"
#include "diffsos/trainer.hpp"
#include "diffsos/wavesim.hpp"

namespace diffsos {

namespace fs = std::filesystem;

struct DatasetConfig {
    std::size_t count = 200;
    std::uint64_t seed = 0;
    PhantomSpec phantom;
    ArrayLayout layout = ArrayLayout::opposed;
    std::size_t sources = 8;
    std::size_t receivers = 32;
    std::size_t time_samples = 256;
    double cfl = 0.5;
    SimOptions sim;

    void validate() const;
    ArrayGeometry geometry() const;
};

/// SoS maps go affinely to [-1, 1] over [sos_min, sos_max]; waveforms are standardized.
struct NormStats {
    double sos_min = 0.0;
    double sos_max = 1.0;
    double wave_mean = 0.0;
    double wave_std = 1.0;

    double normalize_sos(double v) const { return 2.0 * (v - sos_min) / (sos_max - sos_min) - 1.0; }
    double denormalize_sos(double v) const { return sos_min + 0.5 * (v + 1.0) * (sos_max - sos_min); }
    double normalize_wave(double v) const { return (v - wave_mean) / wave_std; }
};

struct DatasetSplits {
    std::vector<std::string> train;
    std::vector<std::string> val;
    std::vector<std::string> test;

    const std::vector<std::string>& get(const std::string& name) const;
};

/// Zero-padded sample id, e.g. "000042".
std::string sample_id(std::size_t index);

/// Seeded shuffle, then floor(8n/10) train, floor(n/10) val, remainder test.
DatasetSplits split_ids(const std::vector<std::string>& ids, std::uint64_t seed);

/// Writes DIR/config.ini, DIR/stats.txt, DIR/splits/{train,val,test}.txt and
/// DIR/samples/<id>.sos.dsos ([H,W], m/s) and <id>.wave.dsos ([S,T,R], raw pressure).
/// Deterministic in cfg.seed. `config_text` is echoed into config.ini.
void build_dataset(const DatasetConfig& cfg, const fs::path& out, const std::string& config_text);

struct DatasetInfo {
    fs::path root;
    NormStats stats;
    DatasetSplits splits;
    std::size_t map_height = 0, map_width = 0;
    std::size_t sources = 0, time_samples = 0, receivers = 0;
};

/// Reads stats and split manifests; throws IoError naming the missing path.
DatasetInfo open_dataset(const fs::path& root);

std::string format_stats(const DatasetInfo& info);
/// Parses stats.txt text; throws IoError naming `origin` on missing keys.
DatasetInfo parse_stats(const std::string& text, const std::string& origin);

/// Loads and normalizes the given ids.
TrainingSet load_samples(const DatasetInfo& info, const std::vector<std::string>& ids);

/// Physical SoS map of one sample.
Image load_sos(const DatasetInfo& info, const std::string& id);

} // namespace diffsos
