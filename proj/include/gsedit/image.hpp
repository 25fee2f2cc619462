#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace gsedit {

/// Row-major, channel-interleaved floating point image.
struct Image {
    int width = 0;
    int height = 0;
    int channels = 0;
    std::vector<double> data;

    Image() = default;
    Image(int w, int h, int c, double fill = 0.0)
        : width(w), height(h), channels(c),
          data(static_cast<std::size_t>(w) * h * c, fill) {}

    std::size_t index(int x, int y, int c = 0) const {
        return (static_cast<std::size_t>(y) * width + x) * channels + c;
    }
    double& at(int x, int y, int c = 0) { return data[index(x, y, c)]; }
    double at(int x, int y, int c = 0) const { return data[index(x, y, c)]; }
    std::size_t pixel_count() const { return static_cast<std::size_t>(width) * height; }

    bool operator==(const Image&) const = default;
};

/// Row-major binary image; 0 or 1 per pixel.
struct BinaryMask {
    int width = 0;
    int height = 0;
    std::vector<std::uint8_t> data;

    BinaryMask() = default;
    BinaryMask(int w, int h, std::uint8_t fill = 0)
        : width(w), height(h), data(static_cast<std::size_t>(w) * h, fill) {}

    std::uint8_t& at(int x, int y) { return data[static_cast<std::size_t>(y) * width + x]; }
    std::uint8_t at(int x, int y) const { return data[static_cast<std::size_t>(y) * width + x]; }
    std::size_t count() const;
    bool empty() const { return count() == 0; }

    bool operator==(const BinaryMask&) const = default;
};

std::vector<std::uint8_t> read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);
void write_text_file(const std::filesystem::path& path, const std::string& text);

/// Encodes a 1- or 3-channel image with values clamped to [0, 1] as an 8- or
/// 16-bit PNG (grayscale or RGB).
std::vector<std::uint8_t> encode_png(const Image& image, int bit_depth = 8);
/// Decodes any PNG into [0, 1] values. Gray stays 1 channel, gray+alpha and
/// palette images expand to RGB, and alpha channels are dropped.
Image decode_png(std::span<const std::uint8_t> bytes);
void write_png(const std::filesystem::path& path, const Image& image, int bit_depth = 8);
Image read_png(const std::filesystem::path& path);

/// 8-bit grayscale PNG, 255 where the mask is set.
std::vector<std::uint8_t> encode_mask_png(const BinaryMask& mask);
/// Any channel nonzero marks the pixel.
BinaryMask decode_mask_png(std::span<const std::uint8_t> bytes);
BinaryMask read_mask_png(const std::filesystem::path& path);

/// Portable float map, little endian, 1 or 3 channels.
std::vector<std::uint8_t> encode_pfm(const Image& image);
Image decode_pfm(std::span<const std::uint8_t> bytes);
void write_pfm(const std::filesystem::path& path, const Image& image);
Image read_pfm(const std::filesystem::path& path);

}  // namespace gsedit
