#include "uspine/dataset.hpp"

#include <filesystem>
#include <fstream>
#include <set>
#include <stdexcept>

#include "json.hpp"
#include "uspine/rng.hpp"
#include "uspine/version.hpp"

namespace uspine {

namespace fs = std::filesystem;
using nlohmann::json;

std::vector<DatasetCase> plan_dataset(const GenConfig& cfg) {
    if (cfg.n_cases < 0) throw std::invalid_argument("n_cases must be >= 0");
    if (cfg.difficulty != "easy" && cfg.difficulty != "hard" && cfg.difficulty != "mixed")
        throw std::invalid_argument("difficulty must be easy, hard or mixed");
    if (!(cfg.test_fraction >= 0.0 && cfg.test_fraction < 1.0))
        throw std::invalid_argument("test_fraction must lie in [0,1)");

    std::vector<DatasetCase> cases;
    int n_train = cfg.n_cases - static_cast<int>(cfg.n_cases * cfg.test_fraction);
    for (int i = 0; i < cfg.n_cases; ++i) {
        DatasetCase c;
        char buf[32];
        std::snprintf(buf, sizeof(buf), "case_%04d", i);
        c.id = buf;
        phantom::Difficulty d;
        if (cfg.difficulty == "easy") d = phantom::Difficulty::kEasy;
        else if (cfg.difficulty == "hard") d = phantom::Difficulty::kHard;
        else d = (i % 2 == 0) ? phantom::Difficulty::kEasy : phantom::Difficulty::kHard;
        c.spec = phantom::sample_phantom_spec(Rng::derive(cfg.seed, c.id), d);
        c.split = i < n_train ? "train" : "test";
        cases.push_back(std::move(c));
    }
    return cases;
}

void write_dataset(const std::vector<DatasetCase>& cases, int size, const std::string& root,
                   const std::string& manifest_extra_json) {
    fs::create_directories(root);
    json manifest;
    manifest["generator_version"] = kVersion;
    manifest["image_size"] = size;
    if (!manifest_extra_json.empty()) {
        json extra = json::parse(manifest_extra_json);
        for (auto& [k, v] : extra.items()) manifest[k] = v;
    }
    json case_list = json::array();
    for (const auto& c : cases) {
        fs::path dir = fs::path(root) / c.id;
        fs::create_directories(dir);
        auto clean = phantom::render_clean(c.spec, size);
        auto stack = phantom::render_depth_stack(c.spec, size);
        for (int d = 0; d < kDepthCount; ++d)
            write_png_gray((dir / ("depth_" + std::to_string(d + 1) + ".png")).string(), stack[static_cast<size_t>(d)]);
        write_png_gray((dir / "clean.png").string(), clean.image);
        write_png_mask((dir / "mask.png").string(), clean.mask);
        std::ofstream spec_out(dir / "spec.json");
        spec_out << c.spec.to_json() << "\n";
        case_list.push_back({{"id", c.id},
                             {"split", c.split},
                             {"artifact_free", c.spec.artifact_free()},
                             {"optimal_index", c.spec.optimal_index()},
                             {"difficulty", phantom::difficulty_name(c.spec.difficulty)}});
    }
    manifest["cases"] = case_list;
    std::ofstream out(fs::path(root) / "manifest.json");
    out << manifest.dump(2) << "\n";
    if (!out) throw std::runtime_error("failed to write dataset manifest under " + root);
}

namespace {

Image load_case_png(const fs::path& dir, const std::string& name, const std::string& case_id) {
    fs::path p = dir / name;
    if (!fs::exists(p))
        throw std::runtime_error("dataset case '" + case_id + "' is missing " + name);
    return read_png_gray(p.string());
}

}  // namespace

DatasetSplit read_dataset(const std::string& root) {
    fs::path mpath = fs::path(root) / "manifest.json";
    std::ifstream in(mpath);
    if (!in) throw std::runtime_error("no dataset manifest at " + mpath.string());
    json manifest = json::parse(in);

    DatasetSplit split;
    split.image_size = manifest.at("image_size").get<int>();
    std::set<std::string> seen;
    for (const auto& c : manifest.at("cases")) {
        auto id = c.at("id").get<std::string>();
        if (!seen.insert(id).second)
            throw std::runtime_error("case id '" + id + "' appears more than once in the manifest");
        auto split_tag = c.at("split").get<std::string>();
        bool artifact_free = c.at("artifact_free").get<bool>();
        int optimal_index = c.at("optimal_index").get<int>();
        fs::path dir = fs::path(root) / id;

        DepthStack stack;
        for (int d = 0; d < kDepthCount; ++d)
            stack.push_back(load_case_png(dir, "depth_" + std::to_string(d + 1) + ".png", id));
        fs::path mask_path = dir / "mask.png";
        if (!fs::exists(mask_path)) throw std::runtime_error("dataset case '" + id + "' is missing mask.png");
        SegMask mask = read_png_mask(mask_path.string());

        if (split_tag == "train") {
            if (artifact_free)
                split.artifact_free.push_back({id, stack[static_cast<size_t>(optimal_index)], mask});
            split.high_quality_groups.push_back({id, stack, optimal_index, mask});
        } else if (split_tag == "test") {
            TestItem t;
            t.id = id;
            t.stack = stack;
            t.optimal_index = optimal_index;
            t.clean = load_case_png(dir, "clean.png", id);
            t.mask = mask;
            split.test_groups.push_back(std::move(t));
        } else {
            throw std::runtime_error("case '" + id + "' has unknown split '" + split_tag + "'");
        }
    }
    return split;
}

}  // namespace uspine
