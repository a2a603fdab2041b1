#include "diffsos/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <map>
#include <numeric>
#include <sstream>

#include "diffsos/io.hpp"
#include "diffsos/parallel.hpp"

namespace diffsos {

namespace {

constexpr std::uint64_t kPhantomTag = 0x5048414eULL;
constexpr std::uint64_t kSplitTag = 0x53504c54ULL;

std::vector<std::string> read_id_list(const fs::path& path) {
    std::istringstream is(read_file(path));
    std::vector<std::string> ids;
    for (std::string line; std::getline(is, line);) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (!line.empty()) ids.push_back(line);
    }
    return ids;
}

std::string join_lines(const std::vector<std::string>& ids) {
    std::string out;
    for (const auto& id : ids) out += id + "\n";
    return out;
}

} // namespace

void DatasetConfig::validate() const {
    phantom.validate();
    if (count < 10) throw ConfigError("dataset.count: need at least 10 samples for an 8:1:1 split");
    if (sources == 0) throw ConfigError("dataset.sources: must be >= 1");
    if (receivers == 0) throw ConfigError("dataset.receivers: must be >= 1");
    if (time_samples == 0) throw ConfigError("dataset.time_samples: must be >= 1");
    if (layout == ArrayLayout::opposed && (sources > phantom.width || receivers > phantom.width)) {
        throw ConfigError("dataset.sources/receivers: opposed arrays hold at most map_width elements");
    }
    if (!(cfl > 0.0 && cfl <= 1.0 / std::sqrt(2.0))) {
        throw ConfigError("dataset.cfl: must be in (0, 1/sqrt(2)] for a stable 2D leapfrog");
    }
    if (!(sim.reflection > 0.0 && sim.reflection < 1.0)) throw ConfigError("dataset.reflection: must be in (0, 1)");
}

ArrayGeometry DatasetConfig::geometry() const {
    const auto& p = phantom;
    if (layout == ArrayLayout::ring) {
        return make_ring_geometry(p.height, p.width, sources, receivers, time_samples, p.spacing, p.c_min, p.c_max, cfl);
    }
    return make_opposed_geometry(p.height, p.width, sources, receivers, time_samples, p.spacing, p.c_min, p.c_max, cfl);
}

const std::vector<std::string>& DatasetSplits::get(const std::string& name) const {
    if (name == "train") return train;
    if (name == "val") return val;
    if (name == "test") return test;
    throw ConfigError("split: unknown split '" + name + "' (expected train, val or test)");
}

std::string sample_id(std::size_t index) {
    std::ostringstream os;
    os << std::setw(6) << std::setfill('0') << index;
    return os.str();
}

DatasetSplits split_ids(const std::vector<std::string>& ids, std::uint64_t seed) {
    std::vector<std::string> order = ids;
    RandomStream rng(seed, kSplitTag);
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
    const std::size_t n = order.size();
    const std::size_t n_train = n * 8 / 10, n_val = n / 10;
    DatasetSplits s;
    s.train.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_train));
    s.val.assign(order.begin() + static_cast<std::ptrdiff_t>(n_train),
                 order.begin() + static_cast<std::ptrdiff_t>(n_train + n_val));
    s.test.assign(order.begin() + static_cast<std::ptrdiff_t>(n_train + n_val), order.end());
    for (auto* v : {&s.train, &s.val, &s.test}) std::sort(v->begin(), v->end());
    return s;
}

void build_dataset(const DatasetConfig& cfg, const fs::path& out, const std::string& config_text) {
    cfg.validate();
    const ArrayGeometry geom = cfg.geometry();
    ensure_output_dir(out);
    ensure_output_dir(out / "samples");
    ensure_output_dir(out / "splits");

    const std::size_t n = cfg.count;
    std::vector<Image> maps(n);
    std::vector<Waveforms> waves(n);
    // Shots inside simulate() already fan out; samples run one after another.
    for (std::size_t i = 0; i < n; ++i) {
        RandomStream rng(cfg.seed, mix_ids(kPhantomTag, i));
        const SosMap m = generate_phantom(cfg.phantom, rng);
        waves[i] = simulate(m, geom, cfg.sim);
        maps[i] = m.grid;
    }

    DatasetInfo info;
    info.root = out;
    info.map_height = cfg.phantom.height;
    info.map_width = cfg.phantom.width;
    info.sources = geom.sources.size();
    info.time_samples = geom.time_samples;
    info.receivers = geom.receivers.size();
    double lo = maps[0].pixels[0], hi = lo, sum = 0.0, sq = 0.0, count = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        for (double v : maps[i].pixels) {
            lo = std::min(lo, v);
            hi = std::max(hi, v);
        }
        for (double v : waves[i].data) {
            sum += v;
            sq += v * v;
            count += 1.0;
        }
    }
    if (!(hi > lo)) {
        lo = cfg.phantom.c_min;
        hi = cfg.phantom.c_max;
    }
    const double mean = sum / count;
    const double var = std::max(0.0, sq / count - mean * mean);
    info.stats = {lo, hi, mean, var > 0.0 ? std::sqrt(var) : 1.0};

    std::vector<std::string> ids(n);
    for (std::size_t i = 0; i < n; ++i) ids[i] = sample_id(i);
    info.splits = split_ids(ids, cfg.seed);

    for (std::size_t i = 0; i < n; ++i) {
        write_tensor_file(out / "samples" / (ids[i] + ".sos.dsos"), maps[i]);
        const Waveforms& w = waves[i];
        write_tensor_file(out / "samples" / (ids[i] + ".wave.dsos"), Shape{w.sources, w.time_samples, w.receivers},
                          w.data);
    }
    write_file_atomic(out / "splits" / "train.txt", join_lines(info.splits.train));
    write_file_atomic(out / "splits" / "val.txt", join_lines(info.splits.val));
    write_file_atomic(out / "splits" / "test.txt", join_lines(info.splits.test));
    write_file_atomic(out / "stats.txt", format_stats(info));
    write_file_atomic(out / "config.ini", config_text);
}

std::string format_stats(const DatasetInfo& info) {
    std::ostringstream os;
    os << std::setprecision(17);
    os << "sos_min = " << info.stats.sos_min << "\n"
       << "sos_max = " << info.stats.sos_max << "\n"
       << "wave_mean = " << info.stats.wave_mean << "\n"
       << "wave_std = " << info.stats.wave_std << "\n"
       << "map_height = " << info.map_height << "\n"
       << "map_width = " << info.map_width << "\n"
       << "sources = " << info.sources << "\n"
       << "time_samples = " << info.time_samples << "\n"
       << "receivers = " << info.receivers << "\n";
    return os.str();
}

DatasetInfo parse_stats(const std::string& text, const std::string& origin) {
    std::map<std::string, std::string> kv;
    std::istringstream is(text);
    for (std::string line; std::getline(is, line);) {
        const auto eq = line.find('=');
        if (eq == std::string::npos) continue;
        auto trim = [](std::string s) {
            const auto b = s.find_first_not_of(" \t\r");
            const auto e = s.find_last_not_of(" \t\r");
            return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
        };
        kv[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
    }
    auto get = [&](const std::string& key) -> const std::string& {
        const auto it = kv.find(key);
        if (it == kv.end()) throw IoError(origin + ": missing key '" + key + "'");
        return it->second;
    };
    auto num = [&](const std::string& key) {
        try {
            return std::stod(get(key));
        } catch (const std::logic_error&) {
            throw IoError(origin + ": key '" + key + "' is not a number");
        }
    };
    auto count = [&](const std::string& key) { return static_cast<std::size_t>(num(key)); };
    DatasetInfo info;
    info.stats = {num("sos_min"), num("sos_max"), num("wave_mean"), num("wave_std")};
    if (!(info.stats.sos_max > info.stats.sos_min) || !(info.stats.wave_std > 0.0)) {
        throw IoError(origin + ": degenerate normalization statistics");
    }
    info.map_height = count("map_height");
    info.map_width = count("map_width");
    info.sources = count("sources");
    info.time_samples = count("time_samples");
    info.receivers = count("receivers");
    return info;
}

DatasetInfo open_dataset(const fs::path& root) {
    if (!fs::is_directory(root)) throw IoError(root.string() + ": dataset directory does not exist");
    const fs::path stats = root / "stats.txt";
    DatasetInfo info = parse_stats(read_file(stats), stats.string());
    info.root = root;
    info.splits.train = read_id_list(root / "splits" / "train.txt");
    info.splits.val = read_id_list(root / "splits" / "val.txt");
    info.splits.test = read_id_list(root / "splits" / "test.txt");
    return info;
}

Image load_sos(const DatasetInfo& info, const std::string& id) {
    const fs::path p = info.root / "samples" / (id + ".sos.dsos");
    Image img = read_image_file(p);
    if (img.height != info.map_height || img.width != info.map_width) {
        throw IoError(p.string() + ": map extent does not match stats.txt");
    }
    return img;
}

TrainingSet load_samples(const DatasetInfo& info, const std::vector<std::string>& ids) {
    const std::size_t n = ids.size();
    const std::size_t plane = info.map_height * info.map_width;
    const std::size_t wsize = info.sources * info.time_samples * info.receivers;
    std::vector<double> maps(n * plane), waves(n * wsize);
    for (std::size_t i = 0; i < n; ++i) {
        const Image m = load_sos(info, ids[i]);
        for (std::size_t k = 0; k < plane; ++k) maps[i * plane + k] = info.stats.normalize_sos(m.pixels[k]);
        const fs::path wp = info.root / "samples" / (ids[i] + ".wave.dsos");
        const Tensor w = read_tensor_file(wp);
        if (w.shape() != Shape{info.sources, info.time_samples, info.receivers}) {
            throw IoError(wp.string() + ": waveform shape " + shape_str(w.shape()) + " does not match stats.txt");
        }
        for (std::size_t k = 0; k < wsize; ++k) waves[i * wsize + k] = info.stats.normalize_wave(w.data()[k]);
    }
    TrainingSet s;
    s.ids = ids;
    s.maps = Tensor::from({n, 1, info.map_height, info.map_width}, std::move(maps));
    s.waves = Tensor::from({n, info.sources, info.time_samples, info.receivers}, std::move(waves));
    return s;
}

} // namespace diffsos
