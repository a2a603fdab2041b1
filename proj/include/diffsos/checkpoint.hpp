#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "diffsos/denoiser.hpp"
#include "diffsos/trainer.hpp"

namespace diffsos {

inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Everything needed to resume training or run inference without the original config file.
struct Checkpoint {
    std::string config_text;  // fully resolved run config
    std::vector<std::string> names;
    std::vector<Shape> shapes;
    TrainState state;
};

/// Binary layout: "DSCK", u32 version, config text, parameter table, raw weights,
/// EMA weights, Adam moments and step, progress counters, best-EMA weights, and a
/// trailing FNV-1a 64 checksum of everything before it. Reals are f64 little-endian.
/// Written through a temporary file and rename.
void save_checkpoint(const std::filesystem::path& path, const std::string& config_text, const Denoiser& model,
                     const TrainState& state);

/// Throws CheckpointError on bad magic, version, checksum or truncation, and
/// IoError if the file cannot be read.
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Throws CheckpointError unless the checkpoint's parameter table matches `model`.
void check_compatible(const Checkpoint& ckpt, const Denoiser& model);

} // namespace diffsos
