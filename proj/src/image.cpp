#include "uspine/image.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <stdexcept>

namespace uspine {

Image clamp01(const Image& img) {
    Image out(img.shape());
    for (std::int64_t i = 0; i < img.size(); ++i) out[i] = std::clamp(img[i], 0.0, 1.0);
    return out;
}

std::vector<std::uint8_t> quantize_u8(const Image& img) {
    std::vector<std::uint8_t> bytes(static_cast<size_t>(img.size()));
    for (std::int64_t i = 0; i < img.size(); ++i) {
        double v = std::clamp(img[i], 0.0, 1.0);
        bytes[static_cast<size_t>(i)] = static_cast<std::uint8_t>(std::lround(v * 255.0));
    }
    return bytes;
}

namespace {

void write_gray_bytes(const std::string& path, const std::uint8_t* bytes, int h, int w) {
    png_image pi;
    std::memset(&pi, 0, sizeof(pi));
    pi.version = PNG_IMAGE_VERSION;
    pi.width = static_cast<png_uint_32>(w);
    pi.height = static_cast<png_uint_32>(h);
    pi.format = PNG_FORMAT_GRAY;
    if (!png_image_write_to_file(&pi, path.c_str(), 0, bytes, 0, nullptr))
        throw std::runtime_error("png write failed: " + path + ": " + pi.message);
}

std::vector<std::uint8_t> read_gray_bytes(const std::string& path, int* h, int* w) {
    png_image pi;
    std::memset(&pi, 0, sizeof(pi));
    pi.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_file(&pi, path.c_str()))
        throw std::runtime_error("png read failed: " + path + ": " + pi.message);
    pi.format = PNG_FORMAT_GRAY;
    std::vector<std::uint8_t> bytes(PNG_IMAGE_SIZE(pi));
    if (!png_image_finish_read(&pi, nullptr, bytes.data(), 0, nullptr))
        throw std::runtime_error("png read failed: " + path + ": " + pi.message);
    *h = static_cast<int>(pi.height);
    *w = static_cast<int>(pi.width);
    return bytes;
}

}  // namespace

void write_png_gray(const std::string& path, const Image& img) {
    if (img.rank() != 2) throw std::invalid_argument("write_png_gray expects a rank-2 image");
    auto bytes = quantize_u8(img);
    write_gray_bytes(path, bytes.data(), img.dim(0), img.dim(1));
}

Image read_png_gray(const std::string& path) {
    int h = 0, w = 0;
    auto bytes = read_gray_bytes(path, &h, &w);
    Image img({h, w});
    for (std::int64_t i = 0; i < img.size(); ++i)
        img[i] = static_cast<double>(bytes[static_cast<size_t>(i)]) / 255.0;
    return img;
}

void write_png_mask(const std::string& path, const SegMask& mask) {
    write_gray_bytes(path, mask.labels.data(), mask.h, mask.w);
}

SegMask read_png_mask(const std::string& path) {
    int h = 0, w = 0;
    auto bytes = read_gray_bytes(path, &h, &w);
    SegMask m(h, w);
    for (size_t i = 0; i < bytes.size(); ++i) {
        if (bytes[i] >= kNumClasses)
            throw std::runtime_error("mask file " + path + " holds label " + std::to_string(bytes[i]) +
                                     " outside 0.." + std::to_string(kNumClasses - 1));
        m.labels[i] = bytes[i];
    }
    return m;
}

}  // namespace uspine
