#include "diffsos/config.hpp"

#include <charconv>
#include <cmath>
#include <functional>
#include <sstream>

#include "diffsos/io.hpp"

namespace diffsos {

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

std::string fmt_real(double v) {
    std::ostringstream os;
    os.precision(17);
    os << v;
    return os.str();
}

struct Field {
    std::string section;
    std::string key;
    std::function<void(RunConfig&, const std::string&)> set;
    std::function<std::string(const RunConfig&)> get;
};

[[noreturn]] void bad(const std::string& field, const std::string& value, const std::string& expect) {
    throw ConfigError(field + ": cannot parse '" + value + "' as " + expect);
}

std::uint64_t parse_u64(const std::string& field, const std::string& v) {
    std::uint64_t out = 0;
    const auto* end = v.data() + v.size();
    const auto [p, ec] = std::from_chars(v.data(), end, out);
    if (ec != std::errc() || p != end) bad(field, v, "a non-negative integer");
    return out;
}

double parse_real(const std::string& field, const std::string& v) {
    double out = 0.0;
    const auto* end = v.data() + v.size();
    const auto [p, ec] = std::from_chars(v.data(), end, out);
    if (ec != std::errc() || p != end || !std::isfinite(out)) bad(field, v, "a finite number");
    return out;
}

bool parse_bool(const std::string& field, const std::string& v) {
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    bad(field, v, "a boolean");
}

std::vector<std::size_t> parse_list(const std::string& field, const std::string& v) {
    std::vector<std::size_t> out;
    std::istringstream is(v);
    for (std::string item; std::getline(is, item, ',');) out.push_back(parse_u64(field, trim(item)));
    if (out.empty()) bad(field, v, "a comma-separated list");
    return out;
}

std::string join(const std::vector<std::size_t>& v) {
    std::string s;
    for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
    return s;
}

template <typename Member>
Field size_field(std::string sec, std::string key, Member m) {
    const std::string name = sec + "." + key;
    return {sec, key, [m, name](RunConfig& c, const std::string& v) { m(c) = parse_u64(name, v); },
            [m](const RunConfig& c) { return std::to_string(m(const_cast<RunConfig&>(c))); }};
}

template <typename Member>
Field real_field(std::string sec, std::string key, Member m) {
    const std::string name = sec + "." + key;
    return {sec, key, [m, name](RunConfig& c, const std::string& v) { m(c) = parse_real(name, v); },
            [m](const RunConfig& c) { return fmt_real(m(const_cast<RunConfig&>(c))); }};
}

#define REF(expr) [](RunConfig& c) -> auto& { return expr; }

const std::vector<Field>& fields() {
    static const std::vector<Field> table = [] {
        std::vector<Field> f;
        // dataset
        f.push_back(size_field("dataset", "count", REF(c.dataset.count)));
        f.push_back(size_field("dataset", "seed", REF(c.dataset.seed)));
        f.push_back(size_field("dataset", "map_height", REF(c.dataset.phantom.height)));
        f.push_back(size_field("dataset", "map_width", REF(c.dataset.phantom.width)));
        f.push_back(real_field("dataset", "spacing", REF(c.dataset.phantom.spacing)));
        f.push_back(real_field("dataset", "c_min", REF(c.dataset.phantom.c_min)));
        f.push_back(real_field("dataset", "c_max", REF(c.dataset.phantom.c_max)));
        f.push_back(real_field("dataset", "background", REF(c.dataset.phantom.background)));
        f.push_back(size_field("dataset", "min_inclusions", REF(c.dataset.phantom.min_inclusions)));
        f.push_back(size_field("dataset", "max_inclusions", REF(c.dataset.phantom.max_inclusions)));
        f.push_back({"dataset", "inclusion_shape",
                     [](RunConfig& c, const std::string& v) {
                         if (v == "ellipse") c.dataset.phantom.shape = InclusionShape::ellipse;
                         else if (v == "polygon") c.dataset.phantom.shape = InclusionShape::polygon;
                         else bad("dataset.inclusion_shape", v, "ellipse or polygon");
                     },
                     [](const RunConfig& c) {
                         return std::string(c.dataset.phantom.shape == InclusionShape::ellipse ? "ellipse" : "polygon");
                     }});
        f.push_back(real_field("dataset", "inclusion_speed_min", REF(c.dataset.phantom.speed_min)));
        f.push_back(real_field("dataset", "inclusion_speed_max", REF(c.dataset.phantom.speed_max)));
        f.push_back(real_field("dataset", "radius_min", REF(c.dataset.phantom.radius_min)));
        f.push_back(real_field("dataset", "radius_max", REF(c.dataset.phantom.radius_max)));
        f.push_back(real_field("dataset", "smoothing", REF(c.dataset.phantom.smoothing)));
        f.push_back({"dataset", "layout",
                     [](RunConfig& c, const std::string& v) {
                         if (v == "opposed") c.dataset.layout = ArrayLayout::opposed;
                         else if (v == "ring") c.dataset.layout = ArrayLayout::ring;
                         else bad("dataset.layout", v, "opposed or ring");
                     },
                     [](const RunConfig& c) {
                         return std::string(c.dataset.layout == ArrayLayout::opposed ? "opposed" : "ring");
                     }});
        f.push_back(size_field("dataset", "sources", REF(c.dataset.sources)));
        f.push_back(size_field("dataset", "receivers", REF(c.dataset.receivers)));
        f.push_back(size_field("dataset", "time_samples", REF(c.dataset.time_samples)));
        f.push_back(real_field("dataset", "cfl", REF(c.dataset.cfl)));
        f.push_back(size_field("dataset", "absorbing_cells", REF(c.dataset.sim.absorbing_cells)));
        f.push_back(real_field("dataset", "reflection", REF(c.dataset.sim.reflection)));
        // model
        f.push_back(size_field("model", "base_channels", REF(c.model.base_channels)));
        f.push_back({"model", "channel_multipliers",
                     [](RunConfig& c, const std::string& v) {
                         c.model.channel_multipliers = parse_list("model.channel_multipliers", v);
                     },
                     [](const RunConfig& c) { return join(c.model.channel_multipliers); }});
        f.push_back(size_field("model", "res_blocks", REF(c.model.res_blocks)));
        f.push_back(size_field("model", "time_embed_dim", REF(c.model.time_embed_dim)));
        f.push_back(size_field("model", "groups", REF(c.model.groups)));
        f.push_back({"model", "conditioning",
                     [](RunConfig& c, const std::string& v) {
                         if (v == "controlnet") c.model.conditioning = Conditioning::controlnet;
                         else if (v == "concat") c.model.conditioning = Conditioning::concat;
                         else bad("model.conditioning", v, "controlnet or concat");
                     },
                     [](const RunConfig& c) {
                         return std::string(c.model.conditioning == Conditioning::controlnet ? "controlnet" : "concat");
                     }});
        // schedule
        f.push_back({"schedule", "kind",
                     [](RunConfig& c, const std::string& v) {
                         if (v == "linear") c.schedule.kind = ScheduleKind::linear;
                         else if (v == "cosine") c.schedule.kind = ScheduleKind::cosine;
                         else bad("schedule.kind", v, "linear or cosine");
                     },
                     [](const RunConfig& c) {
                         return std::string(c.schedule.kind == ScheduleKind::linear ? "linear" : "cosine");
                     }});
        f.push_back(size_field("schedule", "steps", REF(c.schedule.steps)));
        f.push_back(real_field("schedule", "beta_start", REF(c.schedule.beta_start)));
        f.push_back(real_field("schedule", "beta_end", REF(c.schedule.beta_end)));
        // train
        f.push_back(size_field("train", "epochs", REF(c.train.epochs)));
        f.push_back(size_field("train", "batch_size", REF(c.train.batch_size)));
        f.push_back(real_field("train", "lr_max", REF(c.train.lr_max)));
        f.push_back(size_field("train", "warmup_epochs", REF(c.train.warmup_epochs)));
        f.push_back(real_field("train", "ema_decay", REF(c.train.ema_decay)));
        f.push_back(size_field("train", "seed", REF(c.train.seed)));
        f.push_back(real_field("train", "lambda_rec", REF(c.train.loss.lambda_rec)));
        f.push_back(real_field("train", "lambda_freq", REF(c.train.loss.lambda_freq)));
        f.push_back(real_field("train", "grad_clip", REF(c.train.grad_clip)));
        f.push_back(size_field("train", "val_every", REF(c.train.val_every)));
        f.push_back(size_field("train", "val_limit", REF(c.train.val_limit)));
        f.push_back(size_field("train", "checkpoint_every", REF(c.train.checkpoint_every)));
        // sampler
        f.push_back(size_field("sampler", "steps", REF(c.sampler.num_steps)));
        f.push_back(real_field("sampler", "eta", REF(c.sampler.eta)));
        f.push_back(size_field("sampler", "ensemble", REF(c.ensemble)));
        f.push_back(size_field("sampler", "seed", REF(c.sampler.seed)));
        f.push_back({"sampler", "clamp_x0",
                     [](RunConfig& c, const std::string& v) { c.sampler.clamp_x0 = parse_bool("sampler.clamp_x0", v); },
                     [](const RunConfig& c) { return std::string(c.sampler.clamp_x0 ? "true" : "false"); }});
        // eval
        f.push_back(size_field("eval", "ms_ssim_scales", REF(c.eval.ms_ssim_scales)));
        f.push_back(real_field("eval", "fom_alpha", REF(c.eval.fom_alpha)));
        f.push_back({"eval", "split", [](RunConfig& c, const std::string& v) { c.eval_split = v; },
                     [](const RunConfig& c) { return c.eval_split; }});
        return f;
    }();
    return table;
}

#undef REF

} // namespace

IniDocument IniDocument::parse(const std::string& text, const std::string& origin) {
    IniDocument doc;
    std::istringstream is(text);
    std::string section;
    std::size_t lineno = 0;
    for (std::string raw; std::getline(is, raw);) {
        ++lineno;
        std::string line = raw;
        const auto hash = line.find_first_of("#;");
        if (hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        if (line.front() == '[') {
            if (line.back() != ']') {
                throw ConfigError(origin + ":" + std::to_string(lineno) + ": unterminated section header");
            }
            section = trim(line.substr(1, line.size() - 2));
            doc.sections_[section];
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw ConfigError(origin + ":" + std::to_string(lineno) + ": expected 'key = value'");
        }
        if (section.empty()) {
            throw ConfigError(origin + ":" + std::to_string(lineno) + ": key outside of a [section]");
        }
        doc.set(section, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    }
    return doc;
}

void IniDocument::set_override(const std::string& assignment) {
    const auto eq = assignment.find('=');
    const auto dot = assignment.find('.');
    if (eq == std::string::npos || dot == std::string::npos || dot > eq) {
        throw ConfigError("--set '" + assignment + "': expected section.key=value");
    }
    set(trim(assignment.substr(0, dot)), trim(assignment.substr(dot + 1, eq - dot - 1)),
        trim(assignment.substr(eq + 1)));
}

void IniDocument::set(const std::string& section, const std::string& key, const std::string& value) {
    sections_[section][key] = value;
}

bool IniDocument::has(const std::string& section, const std::string& key) const {
    return find(section, key) != nullptr;
}

const std::string* IniDocument::find(const std::string& section, const std::string& key) const {
    const auto s = sections_.find(section);
    if (s == sections_.end()) return nullptr;
    const auto k = s->second.find(key);
    return k == s->second.end() ? nullptr : &k->second;
}

void ScheduleConfig::validate() const {
    if (steps == 0) throw ConfigError("schedule.steps: must be >= 1");
    if (kind == ScheduleKind::linear &&
        !(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0)) {
        throw ConfigError("schedule.beta_start/beta_end: require 0 < beta_start <= beta_end < 1");
    }
}

NoiseSchedule ScheduleConfig::build() const {
    validate();
    return make_schedule(kind, steps, beta_start, beta_end);
}

void RunConfig::sync_model_to_dataset() {
    model.map_height = dataset.phantom.height;
    model.map_width = dataset.phantom.width;
    model.waveform_channels = dataset.sources;
    model.waveform_time = dataset.time_samples;
    model.waveform_receivers = dataset.receivers;
    train.val_sampler = sampler;
    train.val_ms_ssim_scales = eval.ms_ssim_scales;
}

void RunConfig::validate() const {
    dataset.validate();
    model.validate();
    schedule.validate();
    train.validate();
    sampler.validate(schedule.steps);
    if (ensemble == 0) throw ConfigError("sampler.ensemble: must be >= 1");
    ms_ssim_weights(eval.ms_ssim_scales);
    const std::size_t need = ms_ssim_min_extent(eval.ms_ssim_scales);
    if (dataset.phantom.height < need || dataset.phantom.width < need) {
        throw ConfigError("eval.ms_ssim_scales: " + std::to_string(eval.ms_ssim_scales) + " scales need maps of at least " +
                          std::to_string(need) + "x" + std::to_string(need));
    }
    if (!(eval.fom_alpha > 0.0)) throw ConfigError("eval.fom_alpha: must be > 0");
    if (eval_split != "train" && eval_split != "val" && eval_split != "test") {
        throw ConfigError("eval.split: must be train, val or test");
    }
}

RunConfig run_config_from(const IniDocument& doc) {
    RunConfig cfg;
    for (const auto& [section, keys] : doc.sections()) {
        for (const auto& [key, value] : keys) {
            bool known = false;
            for (const auto& f : fields()) {
                if (f.section == section && f.key == key) {
                    f.set(cfg, value);
                    known = true;
                    break;
                }
            }
            if (!known) throw ConfigError(section + "." + key + ": unknown configuration key");
        }
    }
    cfg.sync_model_to_dataset();
    return cfg;
}

std::string to_ini(const RunConfig& cfg) {
    std::string out, section;
    for (const auto& f : fields()) {
        if (f.section != section) {
            out += (section.empty() ? "[" : "\n[") + f.section + "]\n";
            section = f.section;
        }
        out += f.key + " = " + f.get(cfg) + "\n";
    }
    return out;
}

RunConfig load_run_config(const std::string& path, const std::vector<std::string>& overrides) {
    IniDocument doc = path.empty() ? IniDocument{} : IniDocument::parse(read_file(path), path);
    for (const auto& o : overrides) doc.set_override(o);
    RunConfig cfg = run_config_from(doc);
    cfg.validate();
    return cfg;
}

} // namespace diffsos
