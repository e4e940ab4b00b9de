#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "uspine/image.hpp"

namespace uspine {
namespace phantom {

enum class Difficulty { kEasy, kHard };
std::string difficulty_name(Difficulty d);
Difficulty difficulty_from_name(const std::string& name);

/// Horizontal dropout band: `height` rows starting at `row` are multiplied
/// by `attenuation`. Row/height are in pixels on the spec's canvas.
struct ArtifactBand {
    int row = 0;
    int height = 0;
    double attenuation = 1.0;
};

/// Parametric multi-depth spine phantom. All pixel quantities refer to the
/// canvas size; rendering at another size scales them proportionally.
/// The midline lateral deviation is
///   x(v) = amplitude * sin(2*pi*cycles*v + phase) + drift*(v - 0.5)
/// with v in [0,1] from top to bottom.
struct PhantomSpec {
    int canvas = 64;
    double curve_amplitude = 0.0;
    double curve_cycles = 1.0;
    double curve_phase = 0.0;
    double curve_drift = 0.0;
    int n_thoracic = 3;
    int n_lumbar = 2;
    double process_radius = 3.0;
    double process_offset = 9.0;  // lateral distance of a process from the midline
    double rib_rx = 1.6;
    double rib_ry = 4.2;
    double rib_gap = 5.0;  // extra lateral distance of a rib beyond the process
    std::array<double, 2> lump_size = {10.0, 5.0};  // (w, h)
    std::array<double, 2> ground_truth_angles = {0.0, 0.0};  // (thoracic deg, lumbar deg)
    // depth_visibility[d][k]: blend weight of structure k at depth d.
    std::vector<std::vector<double>> depth_visibility;
    double speckle_strength = 0.05;
    std::vector<ArtifactBand> artifact_bands;
    std::uint64_t seed = 0;
    Difficulty difficulty = Difficulty::kEasy;

    /// Structures are ordered per thoracic level (left process, right
    /// process, left rib, right rib), then the lumbar lumps.
    int n_structures() const { return 4 * n_thoracic + n_lumbar; }
    /// Depth with the highest total visibility; the "optimal image" index.
    int optimal_index() const;
    bool artifact_free() const { return artifact_bands.empty(); }

    std::string to_json() const;
    static PhantomSpec from_json(const std::string& js);
};

/// Max tangent-angle spread (degrees) of the midline over the thoracic and
/// lumbar segments, straight from the curve coefficients.
std::array<double, 2> curve_angles(const PhantomSpec& spec);

PhantomSpec sample_phantom_spec(std::uint64_t seed, Difficulty difficulty);

/// Noise-free render plus the label mask. `size` must be divisible by 8.
struct CleanRender {
    Image image;
    SegMask mask;
};
CleanRender render_clean(const PhantomSpec& spec, int size);

/// D depth images: structure k blended at depth_visibility[d][k], then
/// speckle and the artifact bands. Deterministic from the spec alone.
DepthStack render_depth_stack(const PhantomSpec& spec, int size);

/// Multiplicative speckle: img * (1 + strength*eta), clamped to [0,1].
Image add_speckle(const Image& img, std::uint64_t seed, double strength);

/// Applies dropout bands (pixel coordinates). Overlapping bands merge with
/// the strongest attenuation winning.
Image add_scan_artifact(const Image& img, const std::vector<ArtifactBand>& bands);

}  // namespace phantom
}  // namespace uspine
