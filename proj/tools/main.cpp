#include <iostream>

#include "CLI11.hpp"
#include "uspine/commands.hpp"
#include "uspine/version.hpp"

namespace cli = uspine::cli;

int main(int argc, char** argv) {
    CLI::App app{"uspine: multi-depth ultrasound spine image enhancement (diffusion prior + "
                 "morphology-conditioned deterministic sampling)"};
    app.set_version_flag("--version", uspine::kVersion);
    app.require_subcommand(1);
    app.footer(
        "Exit codes:\n"
        "  0  success\n"
        "  1  internal error\n"
        "  2  usage error (unknown flag / bad value)\n"
        "  3  missing input file\n"
        "  4  incompatible or corrupt checkpoint\n"
        "  5  invalid data or config\n"
        "Errors print one machine-parsable line to stderr:\n"
        "  uspine: error: code=<n> message=\"...\"");

    cli::GenDataOptions gen;
    auto* cmd_gen = app.add_subcommand("gen-data", "Generate a synthetic spine-phantom dataset");
    cmd_gen->add_option("--out", gen.out, "Output dataset directory")->required();
    cmd_gen->add_option("--n-cases", gen.n_cases, "Number of cases to generate");
    cmd_gen->add_option("--seed", gen.seed, "Global generation seed");
    cmd_gen->add_option("--difficulty", gen.difficulty, "easy, hard or mixed")
        ->check(CLI::IsMember({"easy", "hard", "mixed"}));
    cmd_gen->add_option("--size", gen.size, "Image size in pixels (divisible by 8)");
    cmd_gen->add_option("--test-fraction", gen.test_fraction, "Held-out fraction of cases");

    cli::TrainOptions tr;
    auto* cmd_train = app.add_subcommand("train", "Run one training stage (1: diffusion prior, "
                                                  "2: feature extractor, 3: tuner fine-tuning)");
    cmd_train->add_option("--stage", tr.stage, "Training stage")->required()->check(CLI::Range(1, 3));
    cmd_train->add_option("--config", "Config file (key = value, flags win)")
        ->check(CLI::ExistingFile);
    cmd_train->set_config("--config");
    cmd_train->add_option("--data", tr.data, "Dataset directory")->required();
    cmd_train->add_option("--out", tr.out, "Output directory for checkpoints and logs")->required();
    cmd_train->add_option("--preset", tr.preset, "paper (full-scale defaults) or desk (small/fast)")
        ->check(CLI::IsMember({"paper", "desk"}));
    cmd_train->add_option("--resume", tr.resume, "Checkpoint to resume weights from");
    cmd_train->add_option("--ckpt-diffusion", tr.ckpt_diffusion, "Stage-1 checkpoint (stage 3 only)");
    cmd_train->add_option("--ckpt-extractor", tr.ckpt_extractor, "Stage-2 checkpoint (stage 3 only)");
    cmd_train->add_option("--epochs", tr.epochs, "Override epoch count");
    cmd_train->add_option("--lr", tr.lr, "Override learning rate");
    cmd_train->add_option("--batch-size", tr.batch_size, "Override batch size");
    cmd_train->add_option("--seed", tr.seed, "Training seed");
    cmd_train->add_flag("--no-seed", tr.no_seed, "Use a time-based seed (non-reproducible)");
    cmd_train->add_option("--image-size", tr.image_size, "Override image size");
    cmd_train->add_option("--base-channels", tr.base_channels, "Override base channel width");
    cmd_train->add_option("--timesteps", tr.timesteps, "Override diffusion timestep count T");
    cmd_train->add_option("--schedule-s", tr.schedule_s, "Override cosine schedule offset s");
    cmd_train->add_option("--skip-mode", tr.skip_mode, "Conditioned skip form: paper or residual")
        ->check(CLI::IsMember({"paper", "residual"}));
    cmd_train->add_option("--threads", tr.threads, "Worker threads (0 = hardware)");

    cli::EnhanceOptions en;
    auto* cmd_enh = app.add_subcommand("enhance", "Enhance depth stacks with trained checkpoints");
    cmd_enh->add_option("--data", en.data, "Dataset directory (enhances the test split)");
    cmd_enh->add_option("--stack", en.stack, "Single case directory with depth_{1..5}.png");
    cmd_enh->add_option("--ckpt-diffusion", en.ckpt_diffusion, "Diffusion checkpoint")->required();
    cmd_enh->add_option("--ckpt-extractor", en.ckpt_extractor, "Extractor checkpoint")->required();
    cmd_enh->add_option("--ckpt-tuner", en.ckpt_tuner, "Tuner checkpoint")->required();
    cmd_enh->add_option("--steps", en.steps, "DDIM steps");
    cmd_enh->add_option("--seed", en.seed, "Sampling seed (per-case seeds derive from it)");
    cmd_enh->add_option("--out", en.out, "Output directory")->required();
    cmd_enh->add_option("--condition", en.condition, "none, optimal_depth or multi_depth")
        ->check(CLI::IsMember({"none", "optimal_depth", "multi_depth"}));
    cmd_enh->add_option("--threads", en.threads, "Concurrent cases (0 = 2)");

    cli::EvalOptions ev;
    auto* cmd_eval = app.add_subcommand("eval", "Compute MS-SSIM/PSNR/SNR/CNR quality reports");
    cmd_eval->add_option("--enhanced", ev.enhanced, "Directory of enhanced <id>.png images")->required();
    cmd_eval->add_option("--reference", ev.reference, "Reference images (<id>.png or dataset root)")->required();
    cmd_eval->add_option("--masks", ev.masks, "Segmentation masks (<id>.png or dataset root)")->required();
    cmd_eval->add_option("--out", ev.out, "Report path prefix (writes .json and .tsv)")->required();

    cli::ReliabilityOptions re;
    auto* cmd_rel = app.add_subcommand("reliability", "ICC/MAD/SEM rater-reliability statistics");
    cmd_rel->add_option("--ratings", re.ratings, "CSV: subject_id, then one column per rater")->required();
    cmd_rel->add_option("--model", re.model, "ICC model: mixed or random")
        ->check(CLI::IsMember({"mixed", "random"}));
    cmd_rel->add_option("--out", re.out, "Report path prefix (writes .json and .tsv)")->required();

    cli::AblateOptions ab;
    auto* cmd_abl = app.add_subcommand("ablate", "Three-condition comparison: no conditioning, "
                                                 "optimal-depth features, multi-depth fusion");
    cmd_abl->add_option("--data", ab.data, "Dataset directory (uses the test split)")->required();
    cmd_abl->add_option("--out", ab.out, "Output directory")->required();
    cmd_abl->add_option("--ckpt-diffusion", ab.ckpt_diffusion, "Diffusion checkpoint")->required();
    cmd_abl->add_option("--ckpt-extractor", ab.ckpt_extractor, "Extractor checkpoint")->required();
    cmd_abl->add_option("--ckpt-tuner", ab.ckpt_tuner, "Tuner checkpoint")->required();
    cmd_abl->add_option("--steps", ab.steps, "DDIM steps");
    cmd_abl->add_option("--seed", ab.seed, "Sampling seed");
    cmd_abl->add_option("--max-cases", ab.max_cases, "Limit test cases (0 = all)");
    cmd_abl->add_option("--threads", ab.threads, "Concurrent cases (0 = 2)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return app.exit(e);  // --help / --version
        std::cerr << "uspine: error: code=" << cli::kUsage << " message=\"" << e.what() << "\"\n";
        return cli::kUsage;
    }

    try {
        if (cmd_gen->parsed()) return cli::run_gen_data(gen);
        if (cmd_train->parsed()) return cli::run_train(tr);
        if (cmd_enh->parsed()) return cli::run_enhance(en);
        if (cmd_eval->parsed()) return cli::run_eval(ev);
        if (cmd_rel->parsed()) return cli::run_reliability(re);
        if (cmd_abl->parsed()) return cli::run_ablate(ab);
    } catch (const cli::UsageError& e) {
        std::cerr << "uspine: error: code=" << cli::kUsage << " message=\"" << e.what() << "\"\n";
        return cli::kUsage;
    } catch (const cli::MissingFileError& e) {
        std::cerr << "uspine: error: code=" << cli::kMissingFile << " message=\"" << e.what() << "\"\n";
        return cli::kMissingFile;
    } catch (const cli::CheckpointError& e) {
        std::cerr << "uspine: error: code=" << cli::kBadCheckpoint << " message=\"" << e.what() << "\"\n";
        return cli::kBadCheckpoint;
    } catch (const cli::DataError& e) {
        std::cerr << "uspine: error: code=" << cli::kBadData << " message=\"" << e.what() << "\"\n";
        return cli::kBadData;
    } catch (const std::exception& e) {
        std::cerr << "uspine: error: code=" << cli::kInternal << " message=\"" << e.what() << "\"\n";
        return cli::kInternal;
    }
    return cli::kUsage;
}
