#include "diffsos/cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <set>
#include <sstream>

#include "diffsos/checkpoint.hpp"
#include "diffsos/config.hpp"
#include "diffsos/dataset.hpp"
#include "diffsos/io.hpp"
#include "diffsos/metrics.hpp"
#include "diffsos/sampler.hpp"

namespace diffsos {

namespace {

using Clock = std::chrono::steady_clock;

struct CommonOpts {
    std::string config;
    std::vector<std::string> overrides;
};

void add_common(CLI::App* app, CommonOpts& o) {
    app->add_option("--config", o.config, "Config file ([section] key = value)");
    app->add_option("--set", o.overrides, "Override, section.key=value (repeatable)");
}

std::uint64_t stream_for_id(const std::string& id) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : id) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::string fmt(double v) {
    std::ostringstream os;
    os << std::setprecision(17) << v;
    return os.str();
}

// Model extents follow the dataset on disk rather than the config's dataset section.
void adopt_dataset_extents(RunConfig& cfg, const DatasetInfo& info) {
    cfg.dataset.phantom.height = info.map_height;
    cfg.dataset.phantom.width = info.map_width;
    cfg.dataset.sources = info.sources;
    cfg.dataset.time_samples = info.time_samples;
    cfg.dataset.receivers = info.receivers;
    cfg.sync_model_to_dataset();
}

void check_model_matches_dataset(const DenoiserConfig& m, const DatasetInfo& info) {
    if (m.map_height != info.map_height || m.map_width != info.map_width || m.waveform_channels != info.sources ||
        m.waveform_time != info.time_samples || m.waveform_receivers != info.receivers) {
        std::ostringstream os;
        os << "checkpoint model expects maps " << m.map_height << "x" << m.map_width << " and waveforms "
           << m.waveform_channels << "x" << m.waveform_time << "x" << m.waveform_receivers << ", dataset "
           << info.root.string() << " has " << info.map_height << "x" << info.map_width << " and "
           << info.sources << "x" << info.time_samples << "x" << info.receivers;
        throw CheckpointError(os.str());
    }
}

// ---- simulate ---------------------------------------------------------------

struct SimulateOpts {
    CommonOpts common;
    std::string out;
    std::optional<std::size_t> n;
    std::optional<std::uint64_t> seed;
};

int cmd_simulate(const SimulateOpts& o) {
    auto overrides = o.common.overrides;
    if (o.n) overrides.push_back("dataset.count=" + std::to_string(*o.n));
    if (o.seed) overrides.push_back("dataset.seed=" + std::to_string(*o.seed));
    const RunConfig cfg = load_run_config(o.common.config, overrides);
    const auto t0 = Clock::now();
    build_dataset(cfg.dataset, o.out, to_ini(cfg));
    std::cerr << "simulate: wrote " << cfg.dataset.count << " samples to " << o.out << " in "
              << std::chrono::duration<double>(Clock::now() - t0).count() << " s\n";
    return kExitOk;
}

// ---- train ------------------------------------------------------------------

struct TrainOpts {
    CommonOpts common;
    std::string data;
    std::string out;
    bool resume = false;
    std::optional<std::size_t> until_epoch;
};

const char* kLogHeader = "epoch,step,lr,loss_total,loss_noise,loss_rec,loss_freq,val_msssim";

std::string log_line(const LogRow& r) {
    std::ostringstream os;
    os << std::setprecision(17) << r.epoch << ',' << r.step << ',' << r.lr << ',';
    if (r.loss) {
        os << r.loss->total << ',' << r.loss->noise_term << ',' << r.loss->rec_term << ',' << r.loss->freq_term << ',';
    } else {
        os << ",,,,";
    }
    if (r.val_msssim) os << *r.val_msssim;
    return os.str();
}

// Keeps the header and rows of epochs before `next_epoch` (rows past the last checkpoint are replayed).
void truncate_log(const fs::path& path, std::size_t next_epoch) {
    std::istringstream is(read_file(path));
    std::string out, line;
    if (!std::getline(is, line) || line != kLogHeader) throw IoError(path.string() + ": not a training log");
    out = line + "\n";
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        if (std::stoull(line.substr(0, line.find(','))) < next_epoch) out += line + "\n";
    }
    write_file_atomic(path, out);
}

int cmd_train(const TrainOpts& o) {
    RunConfig cfg = load_run_config(o.common.config, o.common.overrides);
    const DatasetInfo info = open_dataset(o.data);
    adopt_dataset_extents(cfg, info);
    cfg.validate();
    const std::string resolved = to_ini(cfg);

    const Denoiser model(cfg.model);
    const NoiseSchedule sched = cfg.schedule.build();
    const TrainingSet train_set = load_samples(info, info.splits.train);
    const TrainingSet val_set = load_samples(info, info.splits.val);

    ensure_output_dir(o.out);
    const fs::path out(o.out);
    const fs::path ckpt_path = out / "model.ckpt";
    const fs::path log_path = out / "train_log.csv";

    TrainState state;
    if (o.resume) {
        Checkpoint ck = load_checkpoint(ckpt_path);
        check_compatible(ck, model);
        if (ck.config_text != resolved) {
            throw CheckpointError(ckpt_path.string() + ": resolved config differs from the one the checkpoint was trained with");
        }
        state = std::move(ck.state);
        state.params.groups = model.init_params(0).groups;
        truncate_log(log_path, state.next_epoch);
        std::cerr << "train: resuming at epoch " << state.next_epoch << ", step " << state.global_step << "\n";
    } else {
        state = init_train_state(model, cfg.train);
        write_file_atomic(log_path, std::string(kLogHeader) + "\n");
    }
    write_file_atomic(out / "config.ini", resolved);
    std::cerr << "train: " << model.parameter_count() << " parameters, " << train_set.size() << " train / "
              << val_set.size() << " val samples\n";

    std::ofstream log(log_path, std::ios::app);
    if (!log) throw IoError(log_path.string() + ": cannot open for appending");
    TrainHooks hooks;
    hooks.on_log = [&](const LogRow& r) {
        log << log_line(r) << '\n';
        if (r.val_msssim) {
            std::cerr << "train: epoch " << r.epoch << " step " << r.step << " val_msssim " << *r.val_msssim << "\n";
        }
    };
    hooks.on_checkpoint = [&](const TrainState& s) {
        log.flush();
        save_checkpoint(ckpt_path, resolved, model, s);
    };
    const auto t0 = Clock::now();
    train(model, cfg.train, sched, train_set, val_set, state, hooks,
          o.until_epoch.value_or(std::numeric_limits<std::size_t>::max()));
    log.flush();
    std::cerr << "train: done in " << std::chrono::duration<double>(Clock::now() - t0).count()
              << " s; best val_msssim " << state.best_val << " at epoch " << state.best_epoch << "\n";
    return kExitOk;
}

// ---- sample -----------------------------------------------------------------

struct Reconstruction {
    Image recon;  // normalized units
    Image mean;
    Image variance;
    double seconds = 0.0;
};

Reconstruction reconstruct(const Denoiser& model, std::span<const Tensor> weights, const SamplerConfig& sc,
                           const NoiseSchedule& sched, const Tensor& y, std::size_t ensemble, std::uint64_t stream) {
    Reconstruction r;
    const auto t0 = Clock::now();
    if (ensemble == 1) {
        const std::vector<std::uint64_t> ids{stream};
        r.recon = to_images(sample(y, model, weights, sc, sched, ids)).front();
        r.mean = r.recon;
        r.variance = Image(r.recon.height, r.recon.width);
    } else {
        EnsembleResult e = sample_ensemble(y, model, weights, sc, sched, ensemble, stream);
        r.recon = e.members.front();
        r.mean = std::move(e.uncertainty.ensemble_mean);
        r.variance = std::move(e.uncertainty.variance);
    }
    r.seconds = std::chrono::duration<double>(Clock::now() - t0).count();
    return r;
}

struct LoadedModel {
    RunConfig cfg;
    std::unique_ptr<Denoiser> model;
    Checkpoint ckpt;
    std::vector<Tensor> weights;
};

LoadedModel load_model(const std::string& path, const std::vector<std::string>& overrides, const std::string& which) {
    LoadedModel lm;
    lm.ckpt = load_checkpoint(path);
    IniDocument doc;
    try {
        doc = IniDocument::parse(lm.ckpt.config_text, path);
    } catch (const ConfigError& e) {
        throw CheckpointError(path + ": embedded config is unreadable: " + e.what());
    }
    for (const auto& s : overrides) doc.set_override(s);
    lm.cfg = run_config_from(doc);
    lm.cfg.validate();
    lm.model = std::make_unique<Denoiser>(lm.cfg.model);
    check_compatible(lm.ckpt, *lm.model);
    const TrainState& st = lm.ckpt.state;
    if (which == "raw") {
        lm.weights = st.params.weights;
    } else if (which == "ema" || (which == "best" && st.best_ema.empty())) {
        lm.weights = st.params.ema_shadow;
    } else if (which == "best") {
        lm.weights = st.best_ema;
    } else {
        throw ConfigError("--weights: expected best, ema or raw, got '" + which + "'");
    }
    return lm;
}

struct SampleOpts {
    std::string checkpoint;
    std::string data;
    std::string out;
    std::string split = "test";
    std::string weights = "best";
    std::optional<std::size_t> steps;
    std::optional<double> eta;
    std::optional<std::size_t> ensemble;
    std::optional<std::uint64_t> seed;
    std::size_t limit = 0;
    std::vector<std::string> overrides;
};

int cmd_sample(const SampleOpts& o) {
    auto overrides = o.overrides;
    if (o.steps) overrides.push_back("sampler.steps=" + std::to_string(*o.steps));
    if (o.eta) overrides.push_back("sampler.eta=" + fmt(*o.eta));
    if (o.ensemble) overrides.push_back("sampler.ensemble=" + std::to_string(*o.ensemble));
    if (o.seed) overrides.push_back("sampler.seed=" + std::to_string(*o.seed));
    const LoadedModel lm = load_model(o.checkpoint, overrides, o.weights);
    const RunConfig& cfg = lm.cfg;
    const DatasetInfo info = open_dataset(o.data);
    check_model_matches_dataset(cfg.model, info);
    const NoiseSchedule sched = cfg.schedule.build();

    std::vector<std::string> ids = info.splits.get(o.split);
    if (o.limit > 0 && ids.size() > o.limit) ids.resize(o.limit);
    ensure_output_dir(o.out);
    const fs::path out(o.out);
    write_file_atomic(out / "config.ini", to_ini(cfg));
    write_file_atomic(out / "stats.txt", format_stats(info));

    const double half_range = 0.5 * (info.stats.sos_max - info.stats.sos_min);
    auto physical = [&](const Image& img) {
        Image p = img;
        for (double& v : p.pixels) v = info.stats.denormalize_sos(v);
        return p;
    };
    std::string timing = "id,steps,ensemble,seconds\n";
    for (const auto& id : ids) {
        const TrainingSet s = load_samples(info, {id});
        const Reconstruction r =
            reconstruct(*lm.model, lm.weights, cfg.sampler, sched, s.waves, cfg.ensemble, stream_for_id(id));
        const Image recon = physical(r.recon);
        write_tensor_file(out / (id + "_recon.dsos"), recon);
        write_pgm_render(out / (id + "_recon.pgm"), recon);
        if (cfg.ensemble > 1) {
            const Image mean = physical(r.mean);
            Image var = r.variance;
            for (double& v : var.pixels) v *= half_range * half_range;
            write_tensor_file(out / (id + "_mean.dsos"), mean);
            write_pgm_render(out / (id + "_mean.pgm"), mean);
            write_tensor_file(out / (id + "_var.dsos"), var);
            write_pgm_render(out / (id + "_var.pgm"), var);
        }
        timing += id + "," + std::to_string(cfg.sampler.num_steps) + "," + std::to_string(cfg.ensemble) + "," +
                  fmt(r.seconds) + "\n";
        std::cerr << "sample: " << id << " in " << r.seconds << " s\n";
    }
    write_file_atomic(out / "timing.csv", timing);
    return kExitOk;
}

// ---- evaluate ---------------------------------------------------------------

struct EvaluateOpts {
    CommonOpts common;
    std::string pred;
    std::string truth;
    std::string out = "metrics.csv";
    std::optional<std::string> split;
    std::string kind = "recon";
    // sweep mode
    bool sweep = false;
    std::string checkpoint;
    std::string data;
    std::vector<std::size_t> steps_list;
    std::vector<std::size_t> ensemble_list{1};
    std::string weights = "best";
    std::size_t limit = 0;
};

// Ids of files named <id>_<kind>.dsos in `dir`.
std::vector<std::string> scan_ids(const fs::path& dir, const std::string& kind) {
    if (!fs::is_directory(dir)) throw IoError(dir.string() + ": directory does not exist");
    const std::string suffix = "_" + kind + ".dsos";
    std::vector<std::string> ids;
    for (const auto& e : fs::directory_iterator(dir)) {
        const std::string name = e.path().filename().string();
        if (name.size() > suffix.size() && name.ends_with(suffix)) ids.push_back(name.substr(0, name.size() - suffix.size()));
    }
    std::sort(ids.begin(), ids.end());
    return ids;
}

std::string physical_csv(const std::vector<std::string>& ids, const std::vector<double>& mae_mps) {
    std::ostringstream os;
    os << std::setprecision(10) << "id,mae_mps\n";
    double s = 0.0;
    for (std::size_t i = 0; i < ids.size(); ++i) {
        os << ids[i] << ',' << mae_mps[i] << '\n';
        s += mae_mps[i];
    }
    const double n = static_cast<double>(std::max<std::size_t>(ids.size(), 1));
    const double mu = s / n;
    double v = 0.0;
    for (double m : mae_mps) v += (m - mu) * (m - mu);
    os << "mean," << mu << "\nstd," << std::sqrt(v / n) << '\n';
    return os.str();
}

int cmd_evaluate_sets(const EvaluateOpts& o) {
    const RunConfig cfg = load_run_config(o.common.config, o.common.overrides);
    const fs::path truth(o.truth), pred(o.pred);
    const bool truth_is_dataset = fs::is_directory(truth / "splits");
    const DatasetInfo info =
        truth_is_dataset ? open_dataset(truth) : parse_stats(read_file(truth / "stats.txt"), (truth / "stats.txt").string());
    const std::vector<std::string> truth_ids =
        truth_is_dataset ? info.splits.get(o.split.value_or(cfg.eval_split)) : scan_ids(truth, o.kind);
    const std::vector<std::string> pred_ids = scan_ids(pred, o.kind);

    std::vector<std::string> missing, extra;
    std::set_difference(truth_ids.begin(), truth_ids.end(), pred_ids.begin(), pred_ids.end(), std::back_inserter(missing));
    std::set_difference(pred_ids.begin(), pred_ids.end(), truth_ids.begin(), truth_ids.end(), std::back_inserter(extra));
    if (!missing.empty() || !extra.empty() || truth_ids.empty()) {
        std::string msg = "evaluate: ids do not match between " + pred.string() + " and " + truth.string();
        auto list = [](const std::vector<std::string>& v) {
            std::string s;
            for (const auto& id : v) s += " " + id;
            return s;
        };
        if (!missing.empty()) msg += "; missing predictions:" + list(missing);
        if (!extra.empty()) msg += "; unmatched predictions:" + list(extra);
        if (truth_ids.empty()) msg += "; no ground-truth ids";
        throw ConfigError(msg);
    }

    std::vector<Image> p_norm, t_norm;
    std::vector<double> mae_mps;
    for (const auto& id : truth_ids) {
        const Image t = truth_is_dataset ? load_sos(info, id) : read_image_file(truth / (id + "_" + o.kind + ".dsos"));
        const Image p = read_image_file(pred / (id + "_" + o.kind + ".dsos"));
        if (!p.same_extent(t)) throw ConfigError("evaluate: " + id + " prediction and ground truth differ in extent");
        mae_mps.push_back(mae(p, t));
        Image pn = p, tn = t;
        for (double& v : pn.pixels) v = info.stats.normalize_sos(v);
        for (double& v : tn.pixels) v = info.stats.normalize_sos(v);
        p_norm.push_back(std::move(pn));
        t_norm.push_back(std::move(tn));
    }
    const MetricReport rep = evaluate_set(truth_ids, p_norm, t_norm, cfg.eval);
    std::ostringstream os;
    write_metrics_csv(os, rep);
    const fs::path out(o.out);
    write_file_atomic(out, os.str());
    fs::path phys = out;
    phys.replace_filename(out.stem().string() + "_physical" + out.extension().string());
    write_file_atomic(phys, physical_csv(truth_ids, mae_mps));
    std::cerr << "evaluate: " << truth_ids.size() << " images, ms_ssim " << rep.mean.ms_ssim << " +- " << rep.std.ms_ssim
              << ", psnr " << rep.mean.psnr_db << " dB, mae " << rep.mean.mae << ", fom " << rep.mean.fom << "\n";
    return kExitOk;
}

int cmd_evaluate_sweep(const EvaluateOpts& o) {
    if (o.checkpoint.empty() || o.data.empty()) throw ConfigError("evaluate --sweep: needs --checkpoint and --data");
    if (o.steps_list.empty() || o.ensemble_list.empty()) {
        throw ConfigError("evaluate --sweep: --steps-list and --ensemble-list must be non-empty");
    }
    const LoadedModel lm = load_model(o.checkpoint, o.common.overrides, o.weights);
    const DatasetInfo info = open_dataset(o.data);
    check_model_matches_dataset(lm.cfg.model, info);
    const NoiseSchedule sched = lm.cfg.schedule.build();
    std::vector<std::string> ids = info.splits.get(o.split.value_or(lm.cfg.eval_split));
    if (o.limit > 0 && ids.size() > o.limit) ids.resize(o.limit);
    const TrainingSet set = load_samples(info, ids);
    const auto truth = to_images(set.maps);

    std::ostringstream os;
    os << std::setprecision(10) << "steps,ensemble,ms_ssim,psnr_db,mae,fom,seconds_per_image\n";
    for (std::size_t steps : o.steps_list) {
        for (std::size_t ens : o.ensemble_list) {
            SamplerConfig sc = lm.cfg.sampler;
            sc.num_steps = steps;
            sc.validate(sched.steps());
            if (ens == 0) throw ConfigError("evaluate --ensemble-list: sizes must be >= 1");
            std::vector<Image> preds;
            double seconds = 0.0;
            for (std::size_t i = 0; i < ids.size(); ++i) {
                const std::vector<std::size_t> one{i};
                const auto [m, y] = set.gather(one);
                const Reconstruction r = reconstruct(*lm.model, lm.weights, sc, sched, y, ens, stream_for_id(ids[i]));
                preds.push_back(r.mean);
                seconds += r.seconds;
            }
            const MetricReport rep = evaluate_set(ids, preds, truth, lm.cfg.eval);
            os << steps << ',' << ens << ',' << rep.mean.ms_ssim << ',' << rep.mean.psnr_db << ',' << rep.mean.mae << ','
               << rep.mean.fom << ',' << seconds / static_cast<double>(ids.size()) << '\n';
            std::cerr << "sweep: steps " << steps << " ensemble " << ens << " ms_ssim " << rep.mean.ms_ssim << "\n";
        }
    }
    write_file_atomic(o.out, os.str());
    return kExitOk;
}

int dispatch(const std::vector<std::string>& args) {
    CLI::App app{"Conditional diffusion speed-of-sound reconstruction"};
    app.require_subcommand(1);

    SimulateOpts sim;
    auto* s = app.add_subcommand("simulate", "Generate phantoms, waveforms, statistics and splits");
    add_common(s, sim.common);
    s->add_option("--out", sim.out, "Output dataset directory")->required();
    s->add_option("--n", sim.n, "Number of samples");
    s->add_option("--seed", sim.seed, "Dataset seed");

    TrainOpts tr;
    auto* t = app.add_subcommand("train", "Train the denoiser");
    add_common(t, tr.common);
    t->add_option("--data", tr.data, "Dataset directory")->required();
    t->add_option("--out", tr.out, "Run directory (checkpoint, log, config)")->required();
    t->add_flag("--resume", tr.resume, "Continue from <out>/model.ckpt");
    t->add_option("--until-epoch", tr.until_epoch, "Stop after this many epochs (for staged runs)");

    SampleOpts sa;
    auto* p = app.add_subcommand("sample", "Reconstruct maps from waveforms");
    p->add_option("--checkpoint", sa.checkpoint, "Checkpoint file")->required();
    p->add_option("--data", sa.data, "Dataset directory")->required();
    p->add_option("--out", sa.out, "Output directory")->required();
    p->add_option("--split", sa.split, "Split to reconstruct (train, val, test)");
    p->add_option("--weights", sa.weights, "best, ema or raw");
    p->add_option("--steps", sa.steps, "DDIM steps");
    p->add_option("--eta", sa.eta, "DDIM eta");
    p->add_option("--ensemble", sa.ensemble, "Trajectories per input");
    p->add_option("--seed", sa.seed, "Sampler seed");
    p->add_option("--limit", sa.limit, "Only the first N ids of the split");
    p->add_option("--set", sa.overrides, "Override, section.key=value (repeatable)");

    EvaluateOpts ev;
    auto* e = app.add_subcommand("evaluate", "Score reconstructions, or sweep steps/ensemble sizes");
    add_common(e, ev.common);
    e->add_option("--pred", ev.pred, "Directory of <id>_<kind>.dsos predictions");
    e->add_option("--truth", ev.truth, "Dataset directory, or a directory of <id>_<kind>.dsos maps with stats.txt");
    e->add_option("--out", ev.out, "Output CSV");
    e->add_option("--split", ev.split, "Ground-truth split");
    e->add_option("--kind", ev.kind, "Prediction file kind: recon or mean");
    e->add_flag("--sweep", ev.sweep, "Sample and score a grid of step counts and ensemble sizes");
    e->add_option("--checkpoint", ev.checkpoint, "Checkpoint for sweep mode");
    e->add_option("--data", ev.data, "Dataset for sweep mode");
    e->add_option("--steps-list", ev.steps_list, "Step counts for sweep mode")->delimiter(',');
    e->add_option("--ensemble-list", ev.ensemble_list, "Ensemble sizes for sweep mode")->delimiter(',');
    e->add_option("--weights", ev.weights, "best, ema or raw");
    e->add_option("--limit", ev.limit, "Only the first N ids of the split");

    std::vector<std::string> rev(args.rbegin(), args.rend() - 1);
    try {
        app.parse(rev);
    } catch (const CLI::CallForHelp&) {
        std::cout << app.help();
        return kExitOk;
    } catch (const CLI::CallForAllHelp&) {
        std::cout << app.help("", CLI::AppFormatMode::All);
        return kExitOk;
    } catch (const CLI::ParseError& err) {
        std::cerr << "error: " << err.what() << "\n";
        return kExitConfig;
    }

    if (s->parsed()) return cmd_simulate(sim);
    if (t->parsed()) return cmd_train(tr);
    if (p->parsed()) return cmd_sample(sa);
    if (ev.sweep) return cmd_evaluate_sweep(ev);
    if (ev.pred.empty() || ev.truth.empty()) throw ConfigError("evaluate: --pred and --truth are required");
    return cmd_evaluate_sets(ev);
}

} // namespace

int run_cli(const std::vector<std::string>& args) {
    try {
        return dispatch(args);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const ShapeError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const IoError& e) {
        std::cerr << "I/O error: " << e.what() << "\n";
        return kExitIo;
    } catch (const CheckpointError& e) {
        std::cerr << "checkpoint error: " << e.what() << "\n";
        return kExitCheckpoint;
    } catch (const fs::filesystem_error& e) {
        std::cerr << "I/O error: " << e.what() << "\n";
        return kExitIo;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitFailure;
    }
}

} // namespace diffsos
