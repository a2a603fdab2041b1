#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "diffsos/image.hpp"
#include "diffsos/tensor.hpp"

namespace diffsos {

namespace fs = std::filesystem;

/// Tensor file: "DSOS", u32 version, u32 rank, u64 extents, float32 payload, all little-endian.
inline constexpr std::uint32_t kTensorFileVersion = 1;

void write_tensor_file(const fs::path& path, const Shape& shape, std::span<const double> values);
void write_tensor_file(const fs::path& path, const Tensor& t);
void write_tensor_file(const fs::path& path, const Image& img);
/// Throws IoError naming the path on open failure, bad magic, unknown version or truncation.
Tensor read_tensor_file(const fs::path& path);
Image read_image_file(const fs::path& path);

/// 8-bit binary PGM scaled by the image min/max, plus `<path>.txt` recording the range.
void write_pgm_render(const fs::path& path, const Image& img);

/// Writes via a temporary sibling and rename, so readers never see a partial file.
void write_file_atomic(const fs::path& path, const std::string& bytes);
std::string read_file(const fs::path& path);

/// Creates `dir` (and nothing above it). Throws IoError if the parent is missing.
void ensure_output_dir(const fs::path& dir);

} // namespace diffsos
