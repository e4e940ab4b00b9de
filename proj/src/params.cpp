#include "uspine/params.hpp"

#include <cstring>
#include <fstream>
#include <stdexcept>

#include "json.hpp"
#include "uspine/sha256.hpp"

namespace uspine {

using nlohmann::json;

Tensor& ParamStore::add(const std::string& name, Tensor t) {
    if (index_.count(name)) throw std::invalid_argument("duplicate parameter name: " + name);
    index_[name] = entries_.size();
    entries_.push_back({name, std::move(t)});
    return entries_.back().tensor;
}

bool ParamStore::has(const std::string& name) const { return index_.count(name) > 0; }

Tensor& ParamStore::get(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::out_of_range("no parameter named " + name);
    return entries_[it->second].tensor;
}

const Tensor& ParamStore::get(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::out_of_range("no parameter named " + name);
    return entries_[it->second].tensor;
}

std::int64_t ParamStore::total_elements() const {
    std::int64_t n = 0;
    for (const auto& e : entries_) n += e.tensor.size();
    return n;
}

ParamStore ParamStore::clone() const {
    ParamStore out;
    for (const auto& e : entries_) out.add(e.name, e.tensor.clone());
    return out;
}

std::vector<std::uint8_t> ParamStore::raw_bytes() const {
    std::vector<std::uint8_t> bytes;
    bytes.reserve(static_cast<size_t>(total_elements()) * sizeof(double));
    for (const auto& e : entries_) {
        const auto* p = reinterpret_cast<const std::uint8_t*>(e.tensor.data());
        bytes.insert(bytes.end(), p, p + e.tensor.size() * sizeof(double));
    }
    return bytes;
}

std::string ParamStore::content_hash() const { return sha256_hex(raw_bytes()); }

std::string role_name(ModelRole role) {
    return role == ModelRole::kDiffusion ? "diffusion" : "extractor";
}

ModelRole role_from_name(const std::string& name) {
    if (name == "diffusion") return ModelRole::kDiffusion;
    if (name == "extractor") return ModelRole::kExtractor;
    throw std::invalid_argument("unknown model role: " + name);
}

namespace {
constexpr char kMagic[4] = {'U', 'S', 'C', 'K'};

template <typename T>
void write_raw(std::ofstream& out, const T& v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_raw(std::ifstream& in) {
    T v{};
    in.read(reinterpret_cast<char*>(&v), sizeof(T));
    return v;
}
}  // namespace

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
    json meta;
    meta["format_version"] = ckpt.format_version;
    meta["role"] = ckpt.role;
    meta["notes"] = ckpt.notes;
    meta["config"] = json::parse(ckpt.config_json.empty() ? "{}" : ckpt.config_json);
    json plist = json::array();
    for (const auto& e : ckpt.params.entries()) {
        plist.push_back({{"name", e.name}, {"shape", e.tensor.shape()}});
    }
    meta["params"] = plist;
    std::string meta_str = meta.dump();

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write checkpoint: " + path);
    out.write(kMagic, 4);
    write_raw<std::uint32_t>(out, 1u);
    write_raw<std::uint64_t>(out, meta_str.size());
    out.write(meta_str.data(), static_cast<std::streamsize>(meta_str.size()));
    for (const auto& e : ckpt.params.entries())
        out.write(reinterpret_cast<const char*>(e.tensor.data()),
                  static_cast<std::streamsize>(e.tensor.size() * sizeof(double)));
    if (!out) throw std::runtime_error("short write on checkpoint: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open checkpoint: " + path);
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, kMagic, 4) != 0)
        throw std::runtime_error("not a checkpoint file: " + path);
    auto container_version = read_raw<std::uint32_t>(in);
    if (container_version != 1u)
        throw std::runtime_error("unsupported checkpoint container version " +
                                 std::to_string(container_version) + " in " + path);
    auto meta_len = read_raw<std::uint64_t>(in);
    std::string meta_str(meta_len, '\0');
    in.read(meta_str.data(), static_cast<std::streamsize>(meta_len));
    if (!in) throw std::runtime_error("truncated checkpoint metadata: " + path);

    json meta = json::parse(meta_str);
    Checkpoint ckpt;
    ckpt.format_version = meta.at("format_version").get<int>();
    ckpt.role = meta.at("role").get<std::string>();
    ckpt.notes = meta.value("notes", std::map<std::string, std::string>{});
    ckpt.config_json = meta.at("config").dump();
    for (const auto& p : meta.at("params")) {
        auto name = p.at("name").get<std::string>();
        auto shape = p.at("shape").get<std::vector<int>>();
        Tensor t(shape);
        in.read(reinterpret_cast<char*>(t.data()), static_cast<std::streamsize>(t.size() * sizeof(double)));
        if (!in) throw std::runtime_error("truncated checkpoint payload at '" + name + "': " + path);
        ckpt.params.add(name, std::move(t));
    }
    return ckpt;
}

}  // namespace uspine
