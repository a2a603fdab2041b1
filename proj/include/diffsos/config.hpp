#pragma once

#include <cstddef>
#include <map>
#include <string>
#include <vector>

#include "diffsos/dataset.hpp"
#include "diffsos/denoiser.hpp"
#include "diffsos/metrics.hpp"
#include "diffsos/sampler.hpp"
#include "diffsos/schedule.hpp"
#include "diffsos/trainer.hpp"

namespace diffsos {

/// Line-based `key = value` text with `[section]` headers; `#` and `;` start comments.
class IniDocument {
public:
    static IniDocument parse(const std::string& text, const std::string& origin = "config");

    /// Applies "section.key=value".
    void set_override(const std::string& assignment);
    void set(const std::string& section, const std::string& key, const std::string& value);

    bool has(const std::string& section, const std::string& key) const;
    const std::string* find(const std::string& section, const std::string& key) const;
    const std::map<std::string, std::map<std::string, std::string>>& sections() const { return sections_; }

private:
    std::map<std::string, std::map<std::string, std::string>> sections_;
};

struct ScheduleConfig {
    ScheduleKind kind = ScheduleKind::linear;
    std::size_t steps = 1000;
    double beta_start = 1e-4;
    double beta_end = 0.02;

    void validate() const;
    NoiseSchedule build() const;
};

struct RunConfig {
    DatasetConfig dataset;
    DenoiserConfig model;
    ScheduleConfig schedule;
    TrainConfig train;
    SamplerConfig sampler;
    std::size_t ensemble = 10;
    EvalOptions eval;
    std::string eval_split = "test";

    /// Validates every section; the first violation throws ConfigError naming section.key.
    void validate() const;
    /// Waveform and map extents of the model follow the dataset section.
    void sync_model_to_dataset();
};

/// Defaults, then the document's values. Unknown sections or keys are ConfigErrors.
RunConfig run_config_from(const IniDocument& doc);
/// Fully resolved configuration in the same text format.
std::string to_ini(const RunConfig& cfg);

/// Reads `path` (empty = defaults only), applies overrides, validates.
RunConfig load_run_config(const std::string& path, const std::vector<std::string>& overrides);

} // namespace diffsos
