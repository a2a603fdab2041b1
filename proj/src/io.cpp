#include "diffsos/io.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>

namespace diffsos {

namespace {

static_assert(std::endian::native == std::endian::little, "on-disk formats assume a little-endian host");

template <typename T>
void put(std::string& out, T v) {
    char buf[sizeof(T)];
    std::memcpy(buf, &v, sizeof(T));
    out.append(buf, sizeof(T));
}

template <typename T>
T take(const std::string& in, std::size_t& pos, const fs::path& path) {
    if (pos + sizeof(T) > in.size()) throw IoError(path.string() + ": truncated tensor file");
    T v;
    std::memcpy(&v, in.data() + pos, sizeof(T));
    pos += sizeof(T);
    return v;
}

} // namespace

void write_file_atomic(const fs::path& path, const std::string& bytes) {
    const fs::path tmp = path.string() + ".tmp";
    {
        std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
        if (!os) throw IoError(path.string() + ": cannot open for writing");
        os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        if (!os) throw IoError(path.string() + ": write failed");
    }
    std::error_code ec;
    fs::rename(tmp, path, ec);
    if (ec) throw IoError(path.string() + ": rename failed: " + ec.message());
}

std::string read_file(const fs::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError(path.string() + ": cannot open for reading");
    std::ostringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

void ensure_output_dir(const fs::path& dir) {
    std::error_code ec;
    if (fs::is_directory(dir, ec)) return;
    const fs::path parent = fs::absolute(dir).parent_path();
    if (!fs::is_directory(parent, ec)) throw IoError(parent.string() + ": parent directory does not exist");
    if (!fs::create_directory(dir, ec) && !fs::is_directory(dir)) {
        throw IoError(dir.string() + ": cannot create directory: " + ec.message());
    }
}

void write_tensor_file(const fs::path& path, const Shape& shape, std::span<const double> values) {
    if (shape_numel(shape) != values.size()) {
        throw ShapeError("write_tensor_file: " + shape_str(shape) + " does not hold " + std::to_string(values.size()) +
                         " values");
    }
    std::string out;
    out.reserve(16 + 8 * shape.size() + 4 * values.size());
    out.append("DSOS", 4);
    put<std::uint32_t>(out, kTensorFileVersion);
    put<std::uint32_t>(out, static_cast<std::uint32_t>(shape.size()));
    for (std::size_t e : shape) put<std::uint64_t>(out, e);
    for (double v : values) put<float>(out, static_cast<float>(v));
    write_file_atomic(path, out);
}

void write_tensor_file(const fs::path& path, const Tensor& t) { write_tensor_file(path, t.shape(), t.data()); }

void write_tensor_file(const fs::path& path, const Image& img) {
    write_tensor_file(path, Shape{img.height, img.width}, img.pixels);
}

Tensor read_tensor_file(const fs::path& path) {
    const std::string in = read_file(path);
    if (in.size() < 12 || in.compare(0, 4, "DSOS") != 0) throw IoError(path.string() + ": not a tensor file (bad magic)");
    std::size_t pos = 4;
    const auto version = take<std::uint32_t>(in, pos, path);
    if (version != kTensorFileVersion) {
        throw IoError(path.string() + ": unsupported tensor file version " + std::to_string(version));
    }
    const auto rank = take<std::uint32_t>(in, pos, path);
    if (rank > 8) throw IoError(path.string() + ": implausible rank " + std::to_string(rank));
    Shape shape(rank);
    for (auto& e : shape) e = static_cast<std::size_t>(take<std::uint64_t>(in, pos, path));
    const std::size_t n = shape_numel(shape);
    if (in.size() - pos != 4 * n) {
        throw IoError(path.string() + ": payload is " + std::to_string(in.size() - pos) + " bytes, expected " +
                      std::to_string(4 * n));
    }
    std::vector<double> values(n);
    for (auto& v : values) v = static_cast<double>(take<float>(in, pos, path));
    return Tensor::from(std::move(shape), std::move(values));
}

Image read_image_file(const fs::path& path) {
    const Tensor t = read_tensor_file(path);
    if (t.rank() != 2) throw IoError(path.string() + ": expected a rank-2 map, got " + shape_str(t.shape()));
    Image img(t.dim(0), t.dim(1));
    std::copy(t.data().begin(), t.data().end(), img.pixels.begin());
    return img;
}

void write_pgm_render(const fs::path& path, const Image& img) {
    const auto [lo_it, hi_it] = std::minmax_element(img.pixels.begin(), img.pixels.end());
    const double lo = img.pixels.empty() ? 0.0 : *lo_it, hi = img.pixels.empty() ? 0.0 : *hi_it;
    std::string out = "P5\n" + std::to_string(img.width) + " " + std::to_string(img.height) + "\n255\n";
    for (double v : img.pixels) {
        const double u = hi > lo ? (v - lo) / (hi - lo) : 0.0;
        out.push_back(static_cast<char>(static_cast<unsigned char>(std::lround(255.0 * u))));
    }
    write_file_atomic(path, out);
    std::ostringstream side;
    side.precision(17);
    side << "min = " << lo << "\nmax = " << hi << "\n";
    write_file_atomic(path.string() + ".txt", side.str());
}

} // namespace diffsos
