#include "uspine/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "json.hpp"
#include "uspine/rng.hpp"

namespace uspine {
namespace phantom {

using nlohmann::json;

namespace {

constexpr double kBgBase = 0.75;
constexpr double kBgVariation = 0.04;
constexpr double kProcessIntensity = 0.18;
constexpr double kRibIntensity = 0.22;
constexpr double kLumpIntensity = 0.20;
// vertical extents of the two spine segments, as fractions of the image
constexpr double kThoracicLo = 0.10, kThoracicHi = 0.55;
constexpr double kLumbarLo = 0.62, kLumbarHi = 0.92;

struct Structure {
    enum Kind { kProcess, kRib, kLump } kind;
    std::uint8_t label;
    double cx, cy;  // center, pixels at render size
    double a, b;    // kind-specific extents
    double intensity;
};

double midline_px(const PhantomSpec& spec, double v, int size) {
    double s = static_cast<double>(size) / spec.canvas;
    double lateral = spec.curve_amplitude * std::sin(2.0 * M_PI * spec.curve_cycles * v + spec.curve_phase) +
                     spec.curve_drift * (v - 0.5);
    return size / 2.0 + s * lateral;
}

bool in_structure(const Structure& st, double x, double y) {
    switch (st.kind) {
        case Structure::kProcess: {
            // semicircular shadow, flat edge up
            double dx = x - st.cx, dy = y - st.cy;
            return dy >= 0.0 && dx * dx + dy * dy <= st.a * st.a;
        }
        case Structure::kRib: {
            double dx = (x - st.cx) / st.a, dy = (y - st.cy) / st.b;
            return dx * dx + dy * dy <= 1.0;
        }
        case Structure::kLump: {
            return std::fabs(x - st.cx) <= st.a / 2.0 && std::fabs(y - st.cy) <= st.b / 2.0;
        }
    }
    return false;
}

void structure_bounds(const Structure& st, double* x0, double* x1, double* y0, double* y1) {
    switch (st.kind) {
        case Structure::kProcess:
            *x0 = st.cx - st.a; *x1 = st.cx + st.a; *y0 = st.cy; *y1 = st.cy + st.a;
            break;
        case Structure::kRib:
            *x0 = st.cx - st.a; *x1 = st.cx + st.a; *y0 = st.cy - st.b; *y1 = st.cy + st.b;
            break;
        case Structure::kLump:
            *x0 = st.cx - st.a / 2; *x1 = st.cx + st.a / 2; *y0 = st.cy - st.b / 2; *y1 = st.cy + st.b / 2;
            break;
    }
}

/// Builds the structure list in the documented order; throws when any
/// structure leaves the canvas.
std::vector<Structure> layout_structures(const PhantomSpec& spec, int size) {
    double s = static_cast<double>(size) / spec.canvas;
    std::vector<Structure> out;
    for (int j = 0; j < spec.n_thoracic; ++j) {
        double v = kThoracicLo + (kThoracicHi - kThoracicLo) * (j + 0.5) / spec.n_thoracic;
        double cy = v * (size - 1);
        double mx = midline_px(spec, v, size);
        double po = spec.process_offset * s;
        double pr = spec.process_radius * s;
        double rg = (spec.process_offset + spec.rib_gap) * s;
        out.push_back({Structure::kProcess, 1, mx - po, cy, pr, pr, kProcessIntensity});
        out.push_back({Structure::kProcess, 1, mx + po, cy, pr, pr, kProcessIntensity});
        out.push_back({Structure::kRib, 2, mx - rg, cy, spec.rib_rx * s, spec.rib_ry * s, kRibIntensity});
        out.push_back({Structure::kRib, 2, mx + rg, cy, spec.rib_rx * s, spec.rib_ry * s, kRibIntensity});
    }
    for (int j = 0; j < spec.n_lumbar; ++j) {
        double v = kLumbarLo + (kLumbarHi - kLumbarLo) * (j + 0.5) / spec.n_lumbar;
        double cy = v * (size - 1);
        double mx = midline_px(spec, v, size);
        out.push_back({Structure::kLump, 3, mx, cy, spec.lump_size[0] * s, spec.lump_size[1] * s,
                       kLumpIntensity});
    }
    for (const auto& st : out) {
        double x0, x1, y0, y1;
        structure_bounds(st, &x0, &x1, &y0, &y1);
        if (x0 < 1.0 || y0 < 1.0 || x1 > size - 2.0 || y1 > size - 2.0)
            throw std::invalid_argument("phantom structure exceeds image bounds at render size " +
                                        std::to_string(size));
    }
    return out;
}

Image render_background(const PhantomSpec& spec, int size) {
    Rng rng(Rng::derive(spec.seed, "background"));
    double fx = rng.uniform(0.5, 1.5), fy = rng.uniform(0.5, 1.5);
    double px = rng.uniform(0.0, 2.0 * M_PI), py = rng.uniform(0.0, 2.0 * M_PI);
    Image img({size, size});
    for (int y = 0; y < size; ++y)
        for (int x = 0; x < size; ++x) {
            double g = std::sin(2.0 * M_PI * fx * x / size + px) * std::sin(2.0 * M_PI * fy * y / size + py);
            img.at(y, x) = kBgBase + kBgVariation * g;
        }
    return img;
}

Image binomial_blur3(const Image& img) {
    static const double k[3] = {0.25, 0.5, 0.25};
    const int h = img.dim(0), w = img.dim(1);
    Image tmp({h, w}), out({h, w});
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            double acc = 0.0;
            for (int d = -1; d <= 1; ++d) {
                int xx = std::clamp(x + d, 0, w - 1);
                acc += k[d + 1] * img.at(y, xx);
            }
            tmp.at(y, x) = acc;
        }
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            double acc = 0.0;
            for (int d = -1; d <= 1; ++d) {
                int yy = std::clamp(y + d, 0, h - 1);
                acc += k[d + 1] * tmp.at(yy, x);
            }
            out.at(y, x) = acc;
        }
    return out;
}

Image paint(const Image& background, const std::vector<Structure>& structs,
            const std::vector<double>& visibility) {
    Image img = background.clone();
    const int size = img.dim(0);
    for (size_t k = 0; k < structs.size(); ++k) {
        const Structure& st = structs[k];
        double vis = visibility[k];
        if (vis <= 0.0) continue;
        double x0, x1, y0, y1;
        structure_bounds(st, &x0, &x1, &y0, &y1);
        for (int y = std::max(0, static_cast<int>(std::floor(y0)) - 1);
             y <= std::min(size - 1, static_cast<int>(std::ceil(y1)) + 1); ++y)
            for (int x = std::max(0, static_cast<int>(std::floor(x0)) - 1);
                 x <= std::min(size - 1, static_cast<int>(std::ceil(x1)) + 1); ++x)
                if (in_structure(st, x, y))
                    img.at(y, x) = (1.0 - vis) * img.at(y, x) + vis * st.intensity;
    }
    return binomial_blur3(img);
}

std::vector<ArtifactBand> scaled_bands(const PhantomSpec& spec, int size) {
    double s = static_cast<double>(size) / spec.canvas;
    std::vector<ArtifactBand> out;
    for (const auto& b : spec.artifact_bands) {
        ArtifactBand sb;
        sb.row = static_cast<int>(std::lround(b.row * s));
        sb.height = std::max(1, static_cast<int>(std::lround(b.height * s)));
        sb.attenuation = b.attenuation;
        out.push_back(sb);
    }
    return out;
}

}  // namespace

std::string difficulty_name(Difficulty d) { return d == Difficulty::kEasy ? "easy" : "hard"; }

Difficulty difficulty_from_name(const std::string& name) {
    if (name == "easy") return Difficulty::kEasy;
    if (name == "hard") return Difficulty::kHard;
    throw std::invalid_argument("unknown difficulty: " + name);
}

int PhantomSpec::optimal_index() const {
    if (depth_visibility.empty()) throw std::logic_error("phantom spec has no visibility matrix");
    int best = 0;
    double best_sum = -1.0;
    for (int d = 0; d < static_cast<int>(depth_visibility.size()); ++d) {
        double sum = 0.0;
        for (double v : depth_visibility[static_cast<size_t>(d)]) sum += v;
        if (sum > best_sum) {
            best_sum = sum;
            best = d;
        }
    }
    return best;
}

std::array<double, 2> curve_angles(const PhantomSpec& spec) {
    auto segment_spread = [&](double lo, double hi) {
        const int n = 4096;
        double amin = 1e300, amax = -1e300;
        for (int i = 0; i <= n; ++i) {
            double v = lo + (hi - lo) * i / n;
            // d(lateral)/dv of the midline polynomial/sinusoid, in px per unit v
            double dxdv = spec.curve_amplitude * 2.0 * M_PI * spec.curve_cycles *
                              std::cos(2.0 * M_PI * spec.curve_cycles * v + spec.curve_phase) +
                          spec.curve_drift;
            double ang = std::atan2(dxdv, static_cast<double>(spec.canvas)) * 180.0 / M_PI;
            amin = std::min(amin, ang);
            amax = std::max(amax, ang);
        }
        return amax - amin;
    };
    return {segment_spread(kThoracicLo, kThoracicHi), segment_spread(kLumbarLo, kLumbarHi)};
}

PhantomSpec sample_phantom_spec(std::uint64_t seed, Difficulty difficulty) {
    Rng rng(Rng::derive(seed, "spec"));
    PhantomSpec spec;
    spec.seed = seed;
    spec.difficulty = difficulty;
    spec.canvas = 64;
    bool hard = difficulty == Difficulty::kHard;

    spec.curve_amplitude = rng.uniform(0.0, hard ? 6.0 : 4.0);
    spec.curve_cycles = rng.uniform(0.5, 1.2);
    spec.curve_phase = rng.uniform(0.0, 2.0 * M_PI);
    spec.curve_drift = rng.uniform(-3.0, 3.0);
    spec.n_thoracic = 3;
    spec.n_lumbar = 2;
    spec.process_radius = rng.uniform(2.5, 3.2);
    spec.process_offset = rng.uniform(8.0, 11.0);
    spec.rib_rx = rng.uniform(1.4, 1.9);
    spec.rib_ry = rng.uniform(3.5, 5.0);
    spec.rib_gap = rng.uniform(4.0, 6.0);
    spec.lump_size = {rng.uniform(9.0, 12.0), rng.uniform(4.5, 6.0)};
    spec.speckle_strength = hard ? rng.uniform(0.12, 0.25) : rng.uniform(0.03, 0.08);

    // visibility profiles: preferred depth drawn from the reference
    // optimal-index distribution, a gaussian falloff around it
    static const double kDepthPrior[kDepthCount] = {0.109, 0.205, 0.252, 0.259, 0.174};
    spec.depth_visibility.assign(kDepthCount, std::vector<double>(static_cast<size_t>(spec.n_structures()), 0.0));
    for (int k = 0; k < spec.n_structures(); ++k) {
        double u = rng.uniform();
        int dstar = kDepthCount - 1;
        double acc = 0.0;
        for (int d = 0; d < kDepthCount; ++d) {
            acc += kDepthPrior[d] / 0.999;
            if (u <= acc) {
                dstar = d;
                break;
            }
        }
        double peak = rng.uniform(0.92, 1.0);
        double width = rng.uniform(0.7, 1.3);
        double base = rng.uniform(0.05, 0.25);
        for (int d = 0; d < kDepthCount; ++d) {
            double fall = std::exp(-0.5 * (d - dstar) * (d - dstar) / (width * width));
            spec.depth_visibility[static_cast<size_t>(d)][static_cast<size_t>(k)] =
                std::clamp(base + (peak - base) * fall, 0.0, 1.0);
        }
    }

    if (hard) {
        int n_bands = rng.uniform_int(1, 2);
        for (int i = 0; i < n_bands; ++i) {
            ArtifactBand b;
            b.height = rng.uniform_int(3, 7);
            b.row = rng.uniform_int(static_cast<int>(0.12 * spec.canvas),
                                    static_cast<int>(0.85 * spec.canvas) - b.height);
            b.attenuation = rng.uniform(0.15, 0.55);
            spec.artifact_bands.push_back(b);
        }
    }

    spec.ground_truth_angles = curve_angles(spec);
    return spec;
}

CleanRender render_clean(const PhantomSpec& spec, int size) {
    if (size < 16 || size % 8 != 0)
        throw std::invalid_argument("render size must be >= 16 and divisible by 8, got " + std::to_string(size));
    auto structs = layout_structures(spec, size);
    Image bg = render_background(spec, size);
    std::vector<double> full(structs.size(), 1.0);
    CleanRender out;
    out.image = paint(bg, structs, full);
    out.mask = SegMask(size, size);
    for (const auto& st : structs) {
        for (int y = 0; y < size; ++y)
            for (int x = 0; x < size; ++x)
                if (in_structure(st, x, y)) out.mask.at(y, x) = st.label;
    }
    return out;
}

DepthStack render_depth_stack(const PhantomSpec& spec, int size) {
    auto structs = layout_structures(spec, size);
    if (static_cast<int>(structs.size()) != spec.n_structures())
        throw std::logic_error("structure count mismatch");
    if (static_cast<int>(spec.depth_visibility.size()) != kDepthCount)
        throw std::invalid_argument("phantom spec needs a " + std::to_string(kDepthCount) + "-depth visibility matrix");
    Image bg = render_background(spec, size);
    auto bands = scaled_bands(spec, size);
    DepthStack stack;
    for (int d = 0; d < kDepthCount; ++d) {
        const auto& vis = spec.depth_visibility[static_cast<size_t>(d)];
        if (static_cast<int>(vis.size()) != spec.n_structures())
            throw std::invalid_argument("visibility row " + std::to_string(d) + " has wrong structure count");
        Image img = paint(bg, structs, vis);
        img = add_speckle(img, Rng::derive(spec.seed, "speckle" + std::to_string(d)), spec.speckle_strength);
        img = add_scan_artifact(img, bands);
        stack.push_back(std::move(img));
    }
    return stack;
}

Image add_speckle(const Image& img, std::uint64_t seed, double strength) {
    if (strength < 0.0) throw std::invalid_argument("speckle strength must be >= 0");
    if (strength == 0.0) return img.clone();
    Rng rng(seed);
    Image out(img.shape());
    for (std::int64_t i = 0; i < img.size(); ++i)
        out[i] = std::clamp(img[i] * (1.0 + strength * rng.normal()), 0.0, 1.0);
    return out;
}

Image add_scan_artifact(const Image& img, const std::vector<ArtifactBand>& bands) {
    const int h = img.dim(0);
    for (const auto& b : bands)
        if (b.row < 0 || b.height < 1 || b.row + b.height > h)
            throw std::invalid_argument("artifact band rows [" + std::to_string(b.row) + "," +
                                        std::to_string(b.row + b.height) + ") outside image height " +
                                        std::to_string(h));
    // per-row multiplier; overlapping bands merge, strongest attenuation wins
    std::vector<double> row_mul(static_cast<size_t>(h), 1.0);
    for (const auto& b : bands)
        for (int r = b.row; r < b.row + b.height; ++r)
            row_mul[static_cast<size_t>(r)] = std::min(row_mul[static_cast<size_t>(r)], b.attenuation);
    Image out = img.clone();
    const int w = img.dim(1);
    for (int y = 0; y < h; ++y)
        if (row_mul[static_cast<size_t>(y)] != 1.0)
            for (int x = 0; x < w; ++x) out.at(y, x) *= row_mul[static_cast<size_t>(y)];
    return out;
}

std::string PhantomSpec::to_json() const {
    json j;
    j["canvas"] = canvas;
    j["curve"] = {{"amplitude", curve_amplitude}, {"cycles", curve_cycles}, {"phase", curve_phase}, {"drift", curve_drift}};
    j["n_thoracic"] = n_thoracic;
    j["n_lumbar"] = n_lumbar;
    j["process_radius"] = process_radius;
    j["process_offset"] = process_offset;
    j["rib"] = {{"rx", rib_rx}, {"ry", rib_ry}, {"gap", rib_gap}};
    j["lump_size"] = lump_size;
    j["ground_truth_angles"] = ground_truth_angles;
    j["depth_visibility"] = depth_visibility;
    j["speckle_strength"] = speckle_strength;
    json bands = json::array();
    for (const auto& b : artifact_bands)
        bands.push_back({{"row", b.row}, {"height", b.height}, {"attenuation", b.attenuation}});
    j["artifact_bands"] = bands;
    j["seed"] = seed;
    j["difficulty"] = difficulty_name(difficulty);
    return j.dump(2);
}

PhantomSpec PhantomSpec::from_json(const std::string& js) {
    json j = json::parse(js);
    PhantomSpec s;
    s.canvas = j.at("canvas").get<int>();
    s.curve_amplitude = j.at("curve").at("amplitude").get<double>();
    s.curve_cycles = j.at("curve").at("cycles").get<double>();
    s.curve_phase = j.at("curve").at("phase").get<double>();
    s.curve_drift = j.at("curve").at("drift").get<double>();
    s.n_thoracic = j.at("n_thoracic").get<int>();
    s.n_lumbar = j.at("n_lumbar").get<int>();
    s.process_radius = j.at("process_radius").get<double>();
    s.process_offset = j.at("process_offset").get<double>();
    s.rib_rx = j.at("rib").at("rx").get<double>();
    s.rib_ry = j.at("rib").at("ry").get<double>();
    s.rib_gap = j.at("rib").at("gap").get<double>();
    s.lump_size = j.at("lump_size").get<std::array<double, 2>>();
    s.ground_truth_angles = j.at("ground_truth_angles").get<std::array<double, 2>>();
    s.depth_visibility = j.at("depth_visibility").get<std::vector<std::vector<double>>>();
    s.speckle_strength = j.at("speckle_strength").get<double>();
    for (const auto& b : j.at("artifact_bands"))
        s.artifact_bands.push_back({b.at("row").get<int>(), b.at("height").get<int>(), b.at("attenuation").get<double>()});
    s.seed = j.at("seed").get<std::uint64_t>();
    s.difficulty = difficulty_from_name(j.at("difficulty").get<std::string>());
    return s;
}

}  // namespace phantom
}  // namespace uspine
