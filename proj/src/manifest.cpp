#include "uspine/manifest.hpp"

#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>

#include "json.hpp"
#include "uspine/version.hpp"

namespace uspine {

using nlohmann::json;

std::string iso8601_utc_now() {
    auto now = std::chrono::system_clock::now();
    std::time_t tt = std::chrono::system_clock::to_time_t(now);
    std::tm tm{};
    gmtime_r(&tt, &tm);
    char buf[32];
    std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

std::string RunManifest::to_json() const {
    json j;
    j["command"] = command;
    j["config"] = json::parse(config_json.empty() ? "{}" : config_json);
    j["seeds"] = seeds;
    j["checkpoint_hashes"] = checkpoint_hashes;
    j["tool_version"] = tool_version.empty() ? kVersion : tool_version;
    j["timestamps"] = {{"started", started_at}, {"finished", finished_at}};
    return j.dump(2);
}

void write_run_manifest(const std::string& dir, const RunManifest& manifest) {
    std::filesystem::create_directories(dir);
    std::ofstream out(std::filesystem::path(dir) / "run_manifest.json");
    out << manifest.to_json() << "\n";
}

}  // namespace uspine
