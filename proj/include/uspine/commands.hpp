#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace uspine {
namespace cli {

/// Documented exit codes (also listed in --help).
enum ExitCode : int {
    kOk = 0,
    kInternal = 1,
    kUsage = 2,
    kMissingFile = 3,
    kBadCheckpoint = 4,
    kBadData = 5,
};

struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct MissingFileError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct CheckpointError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct DataError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct GenDataOptions {
    std::string out;
    int n_cases = 100;
    std::uint64_t seed = 0;
    std::string difficulty = "mixed";
    int size = 64;
    double test_fraction = 0.3;
};
int run_gen_data(const GenDataOptions& opt);

struct TrainOptions {
    int stage = 1;
    std::string data;
    std::string out;
    std::string preset = "paper";  // paper | desk
    std::string resume;
    std::string ckpt_diffusion;
    std::string ckpt_extractor;
    // overridable hyperparameters; <0 / empty means preset default
    int epochs = -1;
    double lr = -1.0;
    int batch_size = -1;
    std::int64_t seed = 0;
    bool no_seed = false;
    int image_size = -1;
    int base_channels = -1;
    int timesteps = -1;
    double schedule_s = -1.0;
    std::string skip_mode;  // paper | residual
    int threads = 0;
};
int run_train(const TrainOptions& opt);

struct EnhanceOptions {
    std::string data;   // dataset root (uses the test split)
    std::string stack;  // single case directory
    std::string ckpt_diffusion;
    std::string ckpt_extractor;
    std::string ckpt_tuner;
    int steps = 50;
    std::uint64_t seed = 0;
    std::string out;
    std::string condition = "multi_depth";  // none | optimal_depth | multi_depth
    int threads = 0;
};
int run_enhance(const EnhanceOptions& opt);

struct EvalOptions {
    std::string enhanced;
    std::string reference;
    std::string masks;
    std::string out;
};
int run_eval(const EvalOptions& opt);

struct ReliabilityOptions {
    std::string ratings;
    std::string model = "mixed";  // mixed | random
    std::string out;
};
int run_reliability(const ReliabilityOptions& opt);

struct AblateOptions {
    std::string data;
    std::string out;
    std::string ckpt_diffusion;
    std::string ckpt_extractor;
    std::string ckpt_tuner;
    int steps = 50;
    std::uint64_t seed = 0;
    int max_cases = 0;  // 0 = all test cases
    int threads = 0;
};
int run_ablate(const AblateOptions& opt);

}  // namespace cli
}  // namespace uspine
