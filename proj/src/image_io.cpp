#include "gsedit/image.hpp"

#include "gsedit/errors.hpp"

#include <png.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

namespace gsedit {

std::size_t BinaryMask::count() const {
    return static_cast<std::size_t>(std::ranges::count_if(data, [](std::uint8_t v) { return v != 0; }));
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return bytes;
}

void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + path.string() + " for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("write failed for " + path.string());
}

void write_text_file(const std::filesystem::path& path, const std::string& text) {
    write_file(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

namespace {

struct PngWriteBuffer {
    std::vector<std::uint8_t> bytes;
};

void png_write_callback(png_structp png, png_bytep data, png_size_t length) {
    auto* buffer = static_cast<PngWriteBuffer*>(png_get_io_ptr(png));
    buffer->bytes.insert(buffer->bytes.end(), data, data + length);
}

void png_flush_callback(png_structp) {}

struct PngReadCursor {
    std::span<const std::uint8_t> bytes;
    std::size_t offset = 0;
};

void png_read_callback(png_structp png, png_bytep out, png_size_t length) {
    auto* cursor = static_cast<PngReadCursor*>(png_get_io_ptr(png));
    if (cursor->offset + length > cursor->bytes.size()) png_error(png, "truncated PNG stream");
    std::memcpy(out, cursor->bytes.data() + cursor->offset, length);
    cursor->offset += length;
}

[[noreturn]] void png_error_callback(png_structp, png_const_charp message) {
    throw FormatError(std::string("PNG: ") + message);
}

void png_warning_callback(png_structp, png_const_charp) {}

}  // namespace

std::vector<std::uint8_t> encode_png(const Image& image, int bit_depth) {
    if (image.channels != 1 && image.channels != 3)
        throw ValidationError("PNG export needs 1 or 3 channels");
    if (bit_depth != 8 && bit_depth != 16) throw ValidationError("PNG bit depth must be 8 or 16");
    if (image.width <= 0 || image.height <= 0) throw ValidationError("PNG export needs a non-empty image");

    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, png_error_callback,
                                              png_warning_callback);
    png_infop info = png_create_info_struct(png);
    PngWriteBuffer buffer;
    const double max_value = bit_depth == 8 ? 255.0 : 65535.0;
    const std::size_t bytes_per_sample = bit_depth / 8;
    std::vector<std::uint8_t> row(static_cast<std::size_t>(image.width) * image.channels * bytes_per_sample);
    try {
        png_set_write_fn(png, &buffer, png_write_callback, png_flush_callback);
        png_set_IHDR(png, info, image.width, image.height, bit_depth,
                     image.channels == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
                     PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
        png_write_info(png, info);
        for (int y = 0; y < image.height; ++y) {
            for (int x = 0; x < image.width; ++x) {
                for (int c = 0; c < image.channels; ++c) {
                    const double v = std::clamp(image.at(x, y, c), 0.0, 1.0);
                    const auto q = static_cast<std::uint32_t>(std::lround(v * max_value));
                    const std::size_t o = (static_cast<std::size_t>(x) * image.channels + c) * bytes_per_sample;
                    if (bit_depth == 8) {
                        row[o] = static_cast<std::uint8_t>(q);
                    } else {
                        row[o] = static_cast<std::uint8_t>(q >> 8);  // PNG is big endian
                        row[o + 1] = static_cast<std::uint8_t>(q & 0xff);
                    }
                }
            }
            png_write_row(png, row.data());
        }
        png_write_end(png, nullptr);
    } catch (...) {
        png_destroy_write_struct(&png, &info);
        throw;
    }
    png_destroy_write_struct(&png, &info);
    return std::move(buffer.bytes);
}

Image decode_png(std::span<const std::uint8_t> bytes) {
    if (bytes.size() < 8 || png_sig_cmp(bytes.data(), 0, 8) != 0) throw FormatError("not a PNG stream");
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, png_error_callback,
                                             png_warning_callback);
    png_infop info = png_create_info_struct(png);
    PngReadCursor cursor{bytes, 0};
    Image image;
    try {
        png_set_read_fn(png, &cursor, png_read_callback);
        png_read_info(png, info);
        const int color_type = png_get_color_type(png, info);
        const int depth = png_get_bit_depth(png, info);
        if (color_type == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
        if (color_type == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
        if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
        if (color_type == PNG_COLOR_TYPE_GRAY_ALPHA) png_set_gray_to_rgb(png);
        if (depth == 16) png_set_swap(png);  // little endian samples in memory
        png_read_update_info(png, info);

        const int out_depth = png_get_bit_depth(png, info);
        const int out_channels = png_get_channels(png, info);
        const int width = static_cast<int>(png_get_image_width(png, info));
        const int height = static_cast<int>(png_get_image_height(png, info));
        const int keep = out_channels >= 3 ? 3 : 1;
        image = Image(width, height, keep);
        std::vector<std::uint8_t> row(png_get_rowbytes(png, info));
        const double max_value = out_depth == 16 ? 65535.0 : 255.0;
        for (int y = 0; y < height; ++y) {
            png_read_row(png, row.data(), nullptr);
            for (int x = 0; x < width; ++x) {
                for (int c = 0; c < keep; ++c) {
                    const std::size_t s = static_cast<std::size_t>(x) * out_channels + c;
                    double v;
                    if (out_depth == 16) {
                        v = static_cast<double>(row[2 * s] | (row[2 * s + 1] << 8));
                    } else {
                        v = row[s];
                    }
                    image.at(x, y, c) = v / max_value;
                }
            }
        }
    } catch (...) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw;
    }
    png_destroy_read_struct(&png, &info, nullptr);
    return image;
}

void write_png(const std::filesystem::path& path, const Image& image, int bit_depth) {
    write_file(path, encode_png(image, bit_depth));
}

Image read_png(const std::filesystem::path& path) { return decode_png(read_file(path)); }

std::vector<std::uint8_t> encode_mask_png(const BinaryMask& mask) {
    Image img(mask.width, mask.height, 1);
    for (std::size_t i = 0; i < mask.data.size(); ++i) img.data[i] = mask.data[i] ? 1.0 : 0.0;
    return encode_png(img, 8);
}

BinaryMask decode_mask_png(std::span<const std::uint8_t> bytes) {
    const Image img = decode_png(bytes);
    BinaryMask mask(img.width, img.height);
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x)
            for (int c = 0; c < img.channels; ++c)
                if (img.at(x, y, c) > 0.0) mask.at(x, y) = 1;
    return mask;
}

BinaryMask read_mask_png(const std::filesystem::path& path) { return decode_mask_png(read_file(path)); }

// PFM rows are stored bottom to top.
std::vector<std::uint8_t> encode_pfm(const Image& image) {
    if (image.channels != 1 && image.channels != 3) throw ValidationError("PFM needs 1 or 3 channels");
    std::ostringstream header;
    header << (image.channels == 1 ? "Pf" : "PF") << "\n" << image.width << " " << image.height << "\n-1.0\n";
    const std::string h = header.str();
    std::vector<std::uint8_t> out(h.begin(), h.end());
    out.reserve(out.size() + image.data.size() * 4);
    for (int y = image.height - 1; y >= 0; --y) {
        for (int x = 0; x < image.width; ++x) {
            for (int c = 0; c < image.channels; ++c) {
                const auto bits = std::bit_cast<std::uint32_t>(static_cast<float>(image.at(x, y, c)));
                for (int b = 0; b < 4; ++b) out.push_back(static_cast<std::uint8_t>(bits >> (8 * b)));
            }
        }
    }
    return out;
}

Image decode_pfm(std::span<const std::uint8_t> bytes) {
    std::size_t pos = 0;
    auto token = [&]() {
        while (pos < bytes.size() && std::isspace(bytes[pos])) ++pos;
        std::string t;
        while (pos < bytes.size() && !std::isspace(bytes[pos])) t.push_back(static_cast<char>(bytes[pos++]));
        return t;
    };
    const std::string magic = token();
    if (magic != "Pf" && magic != "PF") throw FormatError("PFM: bad magic '" + magic + "'");
    int width = 0, height = 0;
    double scale = 0.0;
    try {
        width = std::stoi(token());
        height = std::stoi(token());
        scale = std::stod(token());
    } catch (const std::exception&) {
        throw FormatError("PFM: malformed header");
    }
    ++pos;  // single whitespace byte before the raster
    if (width <= 0 || height <= 0 || scale == 0.0) throw FormatError("PFM: bad dimensions or scale");
    const int channels = magic == "Pf" ? 1 : 3;
    const bool little = scale < 0.0;
    const std::size_t need = static_cast<std::size_t>(width) * height * channels * 4;
    if (bytes.size() - pos < need) throw FormatError("PFM: truncated raster");
    Image image(width, height, channels);
    for (int y = height - 1; y >= 0; --y) {
        for (int x = 0; x < width; ++x) {
            for (int c = 0; c < channels; ++c) {
                std::uint32_t bits = 0;
                for (int b = 0; b < 4; ++b) {
                    const std::uint32_t byte = bytes[pos + b];
                    bits |= little ? byte << (8 * b) : byte << (8 * (3 - b));
                }
                pos += 4;
                image.at(x, y, c) = std::bit_cast<float>(bits);
            }
        }
    }
    return image;
}

void write_pfm(const std::filesystem::path& path, const Image& image) { write_file(path, encode_pfm(image)); }

Image read_pfm(const std::filesystem::path& path) { return decode_pfm(read_file(path)); }

}  // namespace gsedit
