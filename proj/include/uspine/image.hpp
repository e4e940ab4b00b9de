#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "uspine/tensor.hpp"

namespace uspine {

/// Grayscale image, rank-2 tensor (H,W) with values nominally in [0,1].
using Image = Tensor;

/// Per-pixel class labels: 0 background, 1 transverse process, 2 rib,
/// 3 lumbar lump.
struct SegMask {
    int h = 0;
    int w = 0;
    std::vector<std::uint8_t> labels;

    SegMask() = default;
    SegMask(int h_, int w_) : h(h_), w(w_), labels(static_cast<size_t>(h_) * w_, 0) {}
    std::uint8_t& at(int r, int c) { return labels[static_cast<size_t>(r) * w + c]; }
    std::uint8_t at(int r, int c) const { return labels[static_cast<size_t>(r) * w + c]; }
};

/// Ordered posterior-to-anterior depth images of one case.
using DepthStack = std::vector<Image>;

inline constexpr int kDepthCount = 5;
inline constexpr int kNumClasses = 4;

Image clamp01(const Image& img);

/// 8-bit grayscale PNG round trip. Writing quantizes with round(v*255);
/// reading maps back to v/255, so write(read(f)) is byte-stable.
void write_png_gray(const std::string& path, const Image& img);
Image read_png_gray(const std::string& path);

/// Masks are stored as raw label values (0..3) in an 8-bit gray PNG.
void write_png_mask(const std::string& path, const SegMask& mask);
SegMask read_png_mask(const std::string& path);

std::vector<std::uint8_t> quantize_u8(const Image& img);

}  // namespace uspine
