#pragma once

#include <map>
#include <string>
#include <vector>

#include "uspine/tensor.hpp"

namespace uspine {

/// Named parameter arrays with stable iteration order (insertion order).
class ParamStore {
public:
    Tensor& add(const std::string& name, Tensor t);
    bool has(const std::string& name) const;
    Tensor& get(const std::string& name);
    const Tensor& get(const std::string& name) const;

    size_t count() const { return entries_.size(); }
    std::int64_t total_elements() const;

    struct Entry {
        std::string name;
        Tensor tensor;
    };
    const std::vector<Entry>& entries() const { return entries_; }
    std::vector<Entry>& entries() { return entries_; }

    ParamStore clone() const;
    /// Serialize all values as little-endian f64 in entry order.
    std::vector<std::uint8_t> raw_bytes() const;
    std::string content_hash() const;

private:
    std::vector<Entry> entries_;
    std::map<std::string, size_t> index_;
};

struct BackboneConfig;  // backbone.hpp

enum class ModelRole { kDiffusion, kExtractor };
std::string role_name(ModelRole role);
ModelRole role_from_name(const std::string& name);

/// Checkpoint container: format header, json metadata (config, role, notes)
/// and raw little-endian f64 parameter payloads. load(save(p)) is byte-exact
/// on parameter values.
struct Checkpoint {
    int format_version = 1;
    std::string role;                         // "diffusion" | "extractor" | "tuner"
    std::map<std::string, std::string> notes; // free-form metadata (ema, activation, ...)
    std::string config_json;                  // role-specific config blob
    ParamStore params;
};

void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace uspine
