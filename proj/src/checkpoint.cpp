#include "diffsos/checkpoint.hpp"

#include <cstring>

#include "diffsos/io.hpp"

namespace diffsos {

namespace {

std::uint64_t fnv1a(const char* data, std::size_t n) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (std::size_t i = 0; i < n; ++i) {
        h ^= static_cast<unsigned char>(data[i]);
        h *= 0x100000001b3ULL;
    }
    return h;
}

class Writer {
public:
    template <typename T>
    void pod(T v) {
        char buf[sizeof(T)];
        std::memcpy(buf, &v, sizeof(T));
        out.append(buf, sizeof(T));
    }
    void str(const std::string& s) {
        pod<std::uint64_t>(s.size());
        out += s;
    }
    void reals(std::span<const double> v) {
        pod<std::uint64_t>(v.size());
        const auto* p = reinterpret_cast<const char*>(v.data());
        out.append(p, v.size() * sizeof(double));
    }
    std::string out;
};

class Reader {
public:
    Reader(const std::string& in, std::size_t end, std::string origin) : in_(in), end_(end), origin_(std::move(origin)) {}

    template <typename T>
    T pod() {
        need(sizeof(T));
        T v;
        std::memcpy(&v, in_.data() + pos_, sizeof(T));
        pos_ += sizeof(T);
        return v;
    }
    std::string str() {
        const auto n = pod<std::uint64_t>();
        need(n);
        std::string s = in_.substr(pos_, n);
        pos_ += n;
        return s;
    }
    std::vector<double> reals(std::size_t expected) {
        const auto n = pod<std::uint64_t>();
        if (n != expected) {
            throw CheckpointError(origin_ + ": block holds " + std::to_string(n) + " values, expected " +
                                  std::to_string(expected));
        }
        need(n * sizeof(double));
        std::vector<double> v(n);
        std::memcpy(v.data(), in_.data() + pos_, n * sizeof(double));
        pos_ += n * sizeof(double);
        return v;
    }
    std::size_t pos() const { return pos_; }

private:
    void need(std::size_t n) const {
        if (n > end_ - pos_) throw CheckpointError(origin_ + ": truncated checkpoint");
    }
    const std::string& in_;
    std::size_t end_;
    std::size_t pos_ = 0;
    std::string origin_;
};

} // namespace

void save_checkpoint(const std::filesystem::path& path, const std::string& config_text, const Denoiser& model,
                     const TrainState& state) {
    const auto& names = model.param_names();
    const auto& shapes = model.param_shapes();
    const TrainState& s = state;
    if (s.params.size() != names.size()) throw CheckpointError("save_checkpoint: parameter count does not match model");

    Writer w;
    w.out.append("DSCK", 4);
    w.pod<std::uint32_t>(kCheckpointVersion);
    w.str(config_text);
    w.pod<std::uint64_t>(names.size());
    for (std::size_t i = 0; i < names.size(); ++i) {
        w.str(names[i]);
        w.pod<std::uint32_t>(static_cast<std::uint32_t>(shapes[i].size()));
        for (std::size_t e : shapes[i]) w.pod<std::uint64_t>(e);
    }
    for (const auto& t : s.params.weights) w.reals(t.data());
    for (const auto& t : s.params.ema_shadow) w.reals(t.data());
    w.pod<std::uint64_t>(s.opt.step);
    w.pod<double>(s.opt.beta1);
    w.pod<double>(s.opt.beta2);
    w.pod<double>(s.opt.eps);
    for (const auto& m : s.opt.m) w.reals(m);
    for (const auto& v : s.opt.v) w.reals(v);
    w.pod<std::uint64_t>(s.next_epoch);
    w.pod<std::uint64_t>(s.global_step);
    w.pod<double>(s.best_val);
    w.pod<std::uint64_t>(s.best_epoch);
    w.pod<std::uint8_t>(s.best_ema.empty() ? 0 : 1);
    for (const auto& t : s.best_ema) w.reals(t.data());
    w.pod<std::uint64_t>(fnv1a(w.out.data(), w.out.size()));
    write_file_atomic(path, w.out);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    const std::string origin = path.string();
    const std::string in = read_file(path);
    if (in.size() < 16 || in.compare(0, 4, "DSCK") != 0) throw CheckpointError(origin + ": not a checkpoint (bad magic)");
    const std::size_t body = in.size() - sizeof(std::uint64_t);
    std::uint64_t stored = 0;
    std::memcpy(&stored, in.data() + body, sizeof(stored));
    if (stored != fnv1a(in.data(), body)) throw CheckpointError(origin + ": checksum mismatch (file is corrupt)");

    Reader r(in, body, origin);
    r.pod<std::uint32_t>();  // magic
    const auto version = r.pod<std::uint32_t>();
    if (version != kCheckpointVersion) {
        throw CheckpointError(origin + ": unsupported checkpoint version " + std::to_string(version) + " (expected " +
                              std::to_string(kCheckpointVersion) + ")");
    }
    Checkpoint c;
    c.config_text = r.str();
    const auto n = r.pod<std::uint64_t>();
    if (n > 100000) throw CheckpointError(origin + ": implausible parameter count");
    for (std::uint64_t i = 0; i < n; ++i) {
        c.names.push_back(r.str());
        Shape s(r.pod<std::uint32_t>());
        for (auto& e : s) e = r.pod<std::uint64_t>();
        c.shapes.push_back(std::move(s));
    }
    TrainState& st = c.state;
    for (std::size_t i = 0; i < n; ++i) {
        st.params.names.push_back(c.names[i]);
        st.params.groups.push_back(ParamGroup::unet);
        st.params.weights.push_back(Tensor::from(c.shapes[i], r.reals(shape_numel(c.shapes[i])), true));
    }
    for (std::size_t i = 0; i < n; ++i) {
        st.params.ema_shadow.push_back(Tensor::from(c.shapes[i], r.reals(shape_numel(c.shapes[i]))));
    }
    st.opt.step = r.pod<std::uint64_t>();
    st.opt.beta1 = r.pod<double>();
    st.opt.beta2 = r.pod<double>();
    st.opt.eps = r.pod<double>();
    for (std::size_t i = 0; i < n; ++i) st.opt.m.push_back(r.reals(shape_numel(c.shapes[i])));
    for (std::size_t i = 0; i < n; ++i) st.opt.v.push_back(r.reals(shape_numel(c.shapes[i])));
    st.next_epoch = r.pod<std::uint64_t>();
    st.global_step = r.pod<std::uint64_t>();
    st.best_val = r.pod<double>();
    st.best_epoch = r.pod<std::uint64_t>();
    if (r.pod<std::uint8_t>() != 0) {
        for (std::size_t i = 0; i < n; ++i) {
            st.best_ema.push_back(Tensor::from(c.shapes[i], r.reals(shape_numel(c.shapes[i]))));
        }
    }
    if (r.pos() != body) throw CheckpointError(origin + ": trailing bytes after checkpoint payload");
    return c;
}

void check_compatible(const Checkpoint& ckpt, const Denoiser& model) {
    const auto& names = model.param_names();
    const auto& shapes = model.param_shapes();
    if (ckpt.names.size() != names.size()) {
        throw CheckpointError("checkpoint holds " + std::to_string(ckpt.names.size()) + " parameters, model expects " +
                              std::to_string(names.size()));
    }
    for (std::size_t i = 0; i < names.size(); ++i) {
        if (ckpt.names[i] != names[i] || ckpt.shapes[i] != shapes[i]) {
            throw CheckpointError("checkpoint parameter " + std::to_string(i) + " is " + ckpt.names[i] + " " +
                                  shape_str(ckpt.shapes[i]) + ", model expects " + names[i] + " " + shape_str(shapes[i]));
        }
    }
}

} // namespace diffsos
