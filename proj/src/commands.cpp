#include "uspine/commands.hpp"

#include <filesystem>
#include <fstream>
#include <iostream>

#include "json.hpp"
#include "uspine/dataset.hpp"
#include "uspine/enhance.hpp"
#include "uspine/manifest.hpp"
#include "uspine/metrics.hpp"
#include "uspine/reliability.hpp"
#include "uspine/sha256.hpp"
#include "uspine/trainer.hpp"
#include "uspine/version.hpp"

namespace uspine {
namespace cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

void require_exists(const std::string& path, const char* what) {
    if (path.empty()) throw UsageError(std::string(what) + " not given");
    if (!fs::exists(path)) throw MissingFileError(std::string(what) + " not found: " + path);
}

struct LoadedModels {
    ModelParams diffusion;
    ModelParams extractor;
    TunerModel tuner;
    NoiseSchedule sched;
    SkipMode skip_mode = SkipMode::kPaper;
    std::map<std::string, std::string> hashes;
};

LoadedModels load_models(const std::string& diffusion_path, const std::string& extractor_path,
                         const std::string& tuner_path) {
    require_exists(diffusion_path, "--ckpt-diffusion");
    require_exists(extractor_path, "--ckpt-extractor");
    require_exists(tuner_path, "--ckpt-tuner");
    LoadedModels m;
    try {
        Checkpoint dc = load_checkpoint(diffusion_path);
        if (dc.role != "diffusion") throw CheckpointError(diffusion_path + " is not a diffusion checkpoint");
        m.diffusion.role = ModelRole::kDiffusion;
        m.diffusion.config = BackboneConfig::from_json(dc.config_json);
        m.diffusion.store = std::move(dc.params);
        int T = std::stoi(dc.notes.at("schedule_T"));
        double s = std::stod(dc.notes.at("schedule_s"));
        m.sched = make_cosine_schedule(T, s);

        Checkpoint ec = load_checkpoint(extractor_path);
        if (ec.role != "extractor") throw CheckpointError(extractor_path + " is not an extractor checkpoint");
        m.extractor.role = ModelRole::kExtractor;
        m.extractor.config = BackboneConfig::from_json(ec.config_json);
        m.extractor.store = std::move(ec.params);

        Checkpoint tc = load_checkpoint(tuner_path);
        if (tc.role != "tuner") throw CheckpointError(tuner_path + " is not a tuner checkpoint");
        m.tuner.config = TunerConfig::from_json(tc.config_json);
        m.tuner.store = std::move(tc.params);
        if (tc.notes.count("skip_mode")) m.skip_mode = skip_mode_from_name(tc.notes.at("skip_mode"));
    } catch (const CheckpointError&) {
        throw;
    } catch (const std::exception& ex) {
        throw CheckpointError(ex.what());
    }
    if (m.diffusion.config.image_size != m.extractor.config.image_size)
        throw CheckpointError("diffusion and extractor checkpoints disagree on image size");
    TunerConfig expect = TunerConfig::for_backbone(m.diffusion.config, m.tuner.config.reduction);
    if (expect.channels != m.tuner.config.channels)
        throw CheckpointError("tuner checkpoint channel layout does not match the diffusion backbone");
    m.hashes["diffusion"] = sha256_file_hex(diffusion_path);
    m.hashes["extractor"] = sha256_file_hex(extractor_path);
    m.hashes["tuner"] = sha256_file_hex(tuner_path);
    return m;
}

std::vector<BatchCase> test_cases_from_split(const DatasetSplit& split) {
    std::vector<BatchCase> cases;
    for (const auto& t : split.test_groups) {
        BatchCase c;
        c.id = t.id;
        c.stack = t.stack;
        c.mask = t.mask;
        c.reference = t.clean;
        c.optimal_index = t.optimal_index;
        cases.push_back(std::move(c));
    }
    return cases;
}

DatasetSplit load_dataset_or_throw(const std::string& dir) {
    require_exists(dir, "--data");
    try {
        return read_dataset(dir);
    } catch (const std::exception& ex) {
        throw DataError(ex.what());
    }
}

}  // namespace

int run_gen_data(const GenDataOptions& opt) {
    if (opt.out.empty()) throw UsageError("--out not given");
    if (opt.n_cases < 0) throw UsageError("--n-cases must be >= 0");
    RunManifest man;
    man.command = "gen-data";
    man.started_at = iso8601_utc_now();
    man.seeds["global"] = opt.seed;

    GenConfig gc;
    gc.n_cases = opt.n_cases;
    gc.seed = opt.seed;
    gc.difficulty = opt.difficulty;
    gc.size = opt.size;
    gc.test_fraction = opt.test_fraction;
    auto cases = plan_dataset(gc);

    json cfg;
    cfg["n_cases"] = opt.n_cases;
    cfg["seed"] = opt.seed;
    cfg["difficulty"] = opt.difficulty;
    cfg["size"] = opt.size;
    cfg["test_fraction"] = opt.test_fraction;
    man.config_json = cfg.dump();
    man.finished_at = iso8601_utc_now();

    // gen-data embeds the run manifest inside the dataset manifest so each
    // command writes exactly one manifest
    json extra;
    extra["command"] = man.command;
    extra["config"] = cfg;
    extra["seeds"] = man.seeds;
    extra["tool_version"] = kVersion;
    extra["timestamps"] = {{"started", man.started_at}, {"finished", man.finished_at}};
    write_dataset(cases, gc.size, opt.out, extra.dump());
    std::cout << "wrote " << cases.size() << " cases under " << opt.out << "\n";
    return kOk;
}

int run_train(const TrainOptions& opt) {
    if (opt.out.empty()) throw UsageError("--out not given");
    DatasetSplit split = load_dataset_or_throw(opt.data);

    TrainConfig cfg;
    if (opt.preset == "desk") {
        cfg = TrainConfig::desk(opt.stage);
    } else if (opt.preset == "paper") {
        cfg.stage = opt.stage;
    } else {
        throw UsageError("unknown preset '" + opt.preset + "' (expected paper or desk)");
    }
    if (opt.epochs >= 0) cfg.epochs = opt.epochs;
    if (opt.lr >= 0) cfg.lr = opt.lr;
    if (opt.batch_size > 0) cfg.batch_size = opt.batch_size;
    if (opt.image_size > 0) cfg.image_size = opt.image_size;
    if (opt.base_channels > 0) cfg.base_channels = opt.base_channels;
    if (opt.timesteps > 0) cfg.T = opt.timesteps;
    if (opt.schedule_s > 0) cfg.s = opt.schedule_s;
    if (!opt.skip_mode.empty()) cfg.skip_mode = skip_mode_from_name(opt.skip_mode);
    cfg.seed = opt.no_seed ? std::nullopt : std::make_optional<std::uint64_t>(opt.seed);
    cfg.n_threads = opt.threads;
    cfg.resume = opt.resume;
    if (cfg.image_size != split.image_size)
        throw DataError("dataset images are " + std::to_string(split.image_size) + " px but the run wants " +
                        std::to_string(cfg.image_size) + " px; regenerate or pass --image-size");

    if (opt.stage == 3) {
        cfg.diffusion_ckpt = opt.ckpt_diffusion;
        cfg.extractor_ckpt = opt.ckpt_extractor;
        require_exists(cfg.diffusion_ckpt, "--ckpt-diffusion");
        require_exists(cfg.extractor_ckpt, "--ckpt-extractor");
    }

    RunManifest man;
    man.command = "train";
    man.started_at = iso8601_utc_now();
    if (cfg.seed) man.seeds["global"] = *cfg.seed;
    cfg.apply_stage_defaults();

    json cj;
    cj["stage"] = cfg.stage;
    cj["preset"] = opt.preset;
    cj["epochs"] = cfg.epochs;
    cj["lr"] = cfg.lr;
    cj["batch_size"] = cfg.batch_size;
    cj["ema_decay"] = cfg.ema_decay;
    cj["grad_clip_norm"] = cfg.grad_clip_norm;
    cj["T"] = cfg.T;
    cj["s"] = cfg.s;
    cj["image_size"] = cfg.image_size;
    cj["base_channels"] = cfg.base_channels;
    cj["skip_mode"] = skip_mode_name(cfg.skip_mode);
    cj["data"] = opt.data;
    man.config_json = cj.dump();

    TrainResult res = train_stage(cfg, split, opt.out);
    for (const auto& [tag, path] : res.checkpoint_paths) man.checkpoint_hashes[tag] = sha256_file_hex(path);
    man.finished_at = iso8601_utc_now();
    write_run_manifest(opt.out, man);
    std::cout << "stage " << cfg.stage << " done; final loss "
              << (res.epoch_losses.empty() ? 0.0 : res.epoch_losses.back()) << "; checkpoints under "
              << opt.out << "\n";
    return kOk;
}

int run_enhance(const EnhanceOptions& opt) {
    if (opt.out.empty()) throw UsageError("--out not given");
    if (opt.data.empty() == opt.stack.empty())
        throw UsageError("give exactly one of --data or --stack");
    LoadedModels m = load_models(opt.ckpt_diffusion, opt.ckpt_extractor, opt.ckpt_tuner);

    std::vector<BatchCase> cases;
    if (!opt.data.empty()) {
        cases = test_cases_from_split(load_dataset_or_throw(opt.data));
    } else {
        require_exists(opt.stack, "--stack");
        BatchCase c;
        c.id = fs::path(opt.stack).filename().string();
        for (int d = 1; d <= kDepthCount; ++d) {
            fs::path p = fs::path(opt.stack) / ("depth_" + std::to_string(d) + ".png");
            if (!fs::exists(p)) throw MissingFileError("stack image not found: " + p.string());
            c.stack.push_back(read_png_gray(p.string()));
        }
        fs::path mask = fs::path(opt.stack) / "mask.png";
        if (fs::exists(mask)) c.mask = read_png_mask(mask.string());
        fs::path clean = fs::path(opt.stack) / "clean.png";
        if (fs::exists(clean)) c.reference = read_png_gray(clean.string());
        cases.push_back(std::move(c));
    }

    EnhanceConfig cfg;
    cfg.n_steps = opt.steps;
    cfg.seed = opt.seed;
    cfg.skip_mode = m.skip_mode;
    cfg.n_threads = opt.threads > 0 ? opt.threads : 2;
    if (opt.condition == "none") cfg.condition_mode = ConditionMode::kNone;
    else if (opt.condition == "optimal_depth") cfg.condition_mode = ConditionMode::kOptimalDepth;
    else if (opt.condition == "multi_depth") cfg.condition_mode = ConditionMode::kMultiDepth;
    else throw UsageError("unknown condition mode '" + opt.condition + "'");

    RunManifest man;
    man.command = "enhance";
    man.started_at = iso8601_utc_now();
    man.seeds["global"] = opt.seed;
    man.checkpoint_hashes = m.hashes;
    json cj;
    cj["steps"] = opt.steps;
    cj["condition"] = opt.condition;
    cj["cases"] = cases.size();
    man.config_json = cj.dump();

    BatchOutput out = enhance_batch(cases, m.diffusion, m.extractor, m.tuner, m.sched, cfg, opt.out, m.hashes);
    std::ofstream rj(fs::path(opt.out) / "quality_report.json");
    rj << out.report.to_json() << "\n";
    std::ofstream rt(fs::path(opt.out) / "quality_report.tsv");
    rt << out.report.to_tsv();
    man.finished_at = iso8601_utc_now();
    write_run_manifest(opt.out, man);

    int failed = 0;
    for (const auto& c : out.cases)
        if (!c.ok) ++failed;
    std::cout << "enhanced " << (out.cases.size() - failed) << "/" << out.cases.size() << " cases into "
              << opt.out << "\n";
    return kOk;
}

namespace {

Image find_reference(const std::string& root, const std::string& id, const char* leaf) {
    fs::path flat = fs::path(root) / (id + ".png");
    if (fs::exists(flat)) return read_png_gray(flat.string());
    fs::path nested = fs::path(root) / id / leaf;
    if (fs::exists(nested)) return read_png_gray(nested.string());
    throw MissingFileError("no reference for case '" + id + "' under " + root);
}

SegMask find_mask(const std::string& root, const std::string& id) {
    fs::path flat = fs::path(root) / (id + ".png");
    if (fs::exists(flat)) return read_png_mask(flat.string());
    fs::path nested = fs::path(root) / id / "mask.png";
    if (fs::exists(nested)) return read_png_mask(nested.string());
    throw MissingFileError("no mask for case '" + id + "' under " + root);
}

}  // namespace

int run_eval(const EvalOptions& opt) {
    require_exists(opt.enhanced, "--enhanced");
    require_exists(opt.reference, "--reference");
    require_exists(opt.masks, "--masks");
    if (opt.out.empty()) throw UsageError("--out not given");

    metrics::QualityReport report;
    std::vector<fs::path> pngs;
    for (const auto& e : fs::directory_iterator(opt.enhanced))
        if (e.path().extension() == ".png") pngs.push_back(e.path());
    std::sort(pngs.begin(), pngs.end());
    if (pngs.empty()) throw DataError("no .png images under " + opt.enhanced);

    for (const auto& p : pngs) {
        std::string id = p.stem().string();
        metrics::CaseMetrics cm;
        cm.id = id;
        try {
            Image img = read_png_gray(p.string());
            Image ref = find_reference(opt.reference, id, "clean.png");
            SegMask mask = find_mask(opt.masks, id);
            cm.psnr = metrics::psnr_db(img, ref);
            auto ms = metrics::ms_ssim(img, ref);
            cm.ms_ssim = ms.value;
            cm.ms_ssim_scales = ms.scales_used;
            cm.snr = metrics::snr_db(img, mask);
            cm.cnr = metrics::cnr_db(img, mask);
        } catch (const std::exception& ex) {
            cm.error = ex.what();
        }
        report.cases.push_back(cm);
    }

    fs::path out(opt.out);
    fs::create_directories(out.parent_path().empty() ? "." : out.parent_path().string());
    std::ofstream rj(out.string() + ".json");
    rj << report.to_json() << "\n";
    std::ofstream rt(out.string() + ".tsv");
    rt << report.to_tsv();

    RunManifest man;
    man.command = "eval";
    man.started_at = man.finished_at = iso8601_utc_now();
    json cj;
    cj["enhanced"] = opt.enhanced;
    cj["reference"] = opt.reference;
    cj["masks"] = opt.masks;
    man.config_json = cj.dump();
    write_run_manifest(out.parent_path().empty() ? "." : out.parent_path().string(), man);
    std::cout << "evaluated " << report.cases.size() << " cases -> " << opt.out << ".json\n";
    return kOk;
}

int run_reliability(const ReliabilityOptions& opt) {
    require_exists(opt.ratings, "--ratings");
    if (opt.out.empty()) throw UsageError("--out not given");
    metrics::RatingsTable table;
    try {
        table = metrics::read_ratings_csv(opt.ratings);
    } catch (const std::exception& ex) {
        throw DataError(ex.what());
    }
    metrics::IccModel model = metrics::icc_model_from_name(opt.model);
    metrics::IccResult icc = metrics::icc_absolute(table, model);
    double sd = metrics::pooled_sd(table);
    double mad_v = metrics::mad_over_pairs(table);
    double sem_v = metrics::sem(sd, std::clamp(icc.icc, 0.0, 1.0));

    json j;
    j["n_subjects"] = table.n();
    j["n_raters"] = table.k();
    j["model"] = metrics::icc_model_name(model);
    j["icc"] = icc.icc;
    j["ci95"] = {icc.ci_lo, icc.ci_hi};
    j["mad"] = mad_v;
    j["sem"] = sem_v;
    j["sd_pooled"] = sd;

    fs::path out(opt.out);
    std::ofstream rj(out.string() + ".json");
    rj << j.dump(2) << "\n";
    std::ofstream rt(out.string() + ".tsv");
    rt << "model\ticc\tci_lo\tci_hi\tmad\tsem\n";
    char buf[256];
    std::snprintf(buf, sizeof(buf), "%s\t%.6f\t%.6f\t%.6f\t%.6f\t%.6f\n",
                  metrics::icc_model_name(model).c_str(), icc.icc, icc.ci_lo, icc.ci_hi, mad_v, sem_v);
    rt << buf;

    RunManifest man;
    man.command = "reliability";
    man.started_at = man.finished_at = iso8601_utc_now();
    json cj;
    cj["ratings"] = opt.ratings;
    cj["model"] = opt.model;
    man.config_json = cj.dump();
    std::string mdir = out.parent_path().empty() ? "." : out.parent_path().string();
    write_run_manifest(mdir, man);
    std::cout << "icc=" << icc.icc << " ci95=[" << icc.ci_lo << "," << icc.ci_hi << "] mad=" << mad_v
              << " sem=" << sem_v << "\n";
    return kOk;
}

int run_ablate(const AblateOptions& opt) {
    if (opt.out.empty()) throw UsageError("--out not given");
    DatasetSplit split = load_dataset_or_throw(opt.data);
    LoadedModels m = load_models(opt.ckpt_diffusion, opt.ckpt_extractor, opt.ckpt_tuner);
    auto cases = test_cases_from_split(split);
    if (opt.max_cases > 0 && static_cast<int>(cases.size()) > opt.max_cases)
        cases.resize(static_cast<size_t>(opt.max_cases));
    if (cases.empty()) throw DataError("dataset has no test cases to ablate on");

    RunManifest man;
    man.command = "ablate";
    man.started_at = iso8601_utc_now();
    man.seeds["global"] = opt.seed;
    man.checkpoint_hashes = m.hashes;

    const ConditionMode modes[3] = {ConditionMode::kNone, ConditionMode::kOptimalDepth,
                                    ConditionMode::kMultiDepth};
    json conditions = json::array();
    for (ConditionMode mode : modes) {
        EnhanceConfig cfg;
        cfg.n_steps = opt.steps;
        cfg.seed = opt.seed;
        cfg.skip_mode = m.skip_mode;
        cfg.condition_mode = mode;
        cfg.n_threads = opt.threads > 0 ? opt.threads : 2;
        std::string sub = (fs::path(opt.out) / condition_mode_name(mode)).string();
        BatchOutput out = enhance_batch(cases, m.diffusion, m.extractor, m.tuner, m.sched, cfg, sub, m.hashes);
        std::vector<double> snrs, cnrs;
        for (const auto& c : out.report.cases) {
            if (c.snr && std::isfinite(*c.snr)) snrs.push_back(*c.snr);
            if (c.cnr && std::isfinite(*c.cnr)) cnrs.push_back(*c.cnr);
        }
        auto [snr_mean, snr_std] = metrics::QualityReport::aggregate(snrs);
        auto [cnr_mean, cnr_std] = metrics::QualityReport::aggregate(cnrs);
        conditions.push_back({{"condition", condition_mode_name(mode)},
                              {"snr_db", {{"mean", snr_mean}, {"std", snr_std}}},
                              {"cnr_db", {{"mean", cnr_mean}, {"std", cnr_std}}},
                              {"n_cases", snrs.size()}});
        std::cout << condition_mode_name(mode) << ": mean SNR " << snr_mean << " dB, mean CNR " << cnr_mean
                  << " dB over " << snrs.size() << " cases\n";
    }
    json report;
    report["conditions"] = conditions;
    std::ofstream rj(fs::path(opt.out) / "ablation_report.json");
    rj << report.dump(2) << "\n";
    man.finished_at = iso8601_utc_now();
    write_run_manifest(opt.out, man);
    return kOk;
}

}  // namespace cli
}  // namespace uspine
