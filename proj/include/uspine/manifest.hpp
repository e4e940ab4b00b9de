#pragma once

#include <map>
#include <string>

namespace uspine {

/// Provenance record written next to every command's artifacts.
struct RunManifest {
    std::string command;
    std::string config_json;  // full flag/config snapshot
    std::map<std::string, std::uint64_t> seeds;
    std::map<std::string, std::string> checkpoint_hashes;
    std::string tool_version;
    std::string started_at;   // ISO-8601 UTC
    std::string finished_at;

    std::string to_json() const;
};

std::string iso8601_utc_now();
void write_run_manifest(const std::string& dir, const RunManifest& manifest);

}  // namespace uspine
