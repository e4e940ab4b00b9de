#pragma once

#include <optional>
#include <string>
#include <vector>

#include "uspine/image.hpp"
#include "uspine/phantom.hpp"

namespace uspine {

/// Stage-I/II training item: an artifact-free optimal image with labels.
struct ArtifactFreeItem {
    std::string id;
    Image image;
    SegMask mask;
};

/// Stage-III training item: full depth stack, expert-optimal index, labels.
struct GroupItem {
    std::string id;
    DepthStack stack;
    int optimal_index = 0;
    SegMask mask;
};

/// Held-out case with its clean reference for evaluation.
struct TestItem {
    std::string id;
    DepthStack stack;
    int optimal_index = 0;
    Image clean;
    SegMask mask;
};

struct DatasetSplit {
    std::vector<ArtifactFreeItem> artifact_free;
    std::vector<GroupItem> high_quality_groups;
    std::vector<TestItem> test_groups;
    int image_size = 0;
};

struct GenConfig {
    int n_cases = 100;
    std::uint64_t seed = 0;
    std::string difficulty = "mixed";  // easy | hard | mixed
    int size = 64;
    double test_fraction = 0.3;
};

struct DatasetCase {
    std::string id;
    phantom::PhantomSpec spec;
    std::string split;  // train | test
};

/// Samples specs and split assignments for a generation config. With
/// "mixed" difficulty cases alternate easy/hard; the last test_fraction of
/// cases form the test split.
std::vector<DatasetCase> plan_dataset(const GenConfig& cfg);

/// Writes the on-disk layout:
///   <root>/<case_id>/depth_{1..5}.png, clean.png, mask.png, spec.json
///   <root>/manifest.json
/// `manifest_extra` is merged into the manifest (run metadata).
void write_dataset(const std::vector<DatasetCase>& cases, int size, const std::string& root,
                   const std::string& manifest_extra_json);

DatasetSplit read_dataset(const std::string& root);

}  // namespace uspine
