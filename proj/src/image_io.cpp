#include "spherediff/image_io.hpp"

#include "spherediff/wire.hpp"

#include <png.h>

#include <array>
#include <cstdio>
#include <fstream>
#include <memory>
#include <sstream>
#include <vector>

namespace spherediff {

namespace {

constexpr std::array<char, 4> kRawMagic = {'S', 'D', 'R', 'F'};
constexpr std::uint32_t kRawVersion = 1;

std::filesystem::path temp_sibling(const std::filesystem::path& path) {
    auto tmp = path;
    tmp += ".tmp";
    return tmp;
}

struct FileCloser {
    void operator()(std::FILE* f) const {
        if (f) std::fclose(f);
    }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

}  // namespace

void write_file_atomic(const std::filesystem::path& path, const std::string& bytes) {
    const auto tmp = temp_sibling(path);
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw ImageIoError("cannot open " + tmp.string() + " for writing");
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        if (!out) throw ImageIoError("write to " + tmp.string() + " failed");
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) throw ImageIoError("cannot move " + tmp.string() + " into place: " + ec.message());
}

void write_png(const std::filesystem::path& path, const Raster& raster) {
    const int color_type = [&raster] {
        switch (raster.channels()) {
            case 1: return PNG_COLOR_TYPE_GRAY;
            case 3: return PNG_COLOR_TYPE_RGB;
            case 4: return PNG_COLOR_TYPE_RGBA;
            default:
                throw ImageIoError("PNG output needs 1, 3 or 4 channels, got " + std::to_string(raster.channels()));
        }
    }();
    const auto tmp = temp_sibling(path);
    {
        FilePtr fp(std::fopen(tmp.c_str(), "wb"));
        if (!fp) throw ImageIoError("cannot open " + tmp.string() + " for writing");
        png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
        png_infop info = png ? png_create_info_struct(png) : nullptr;
        if (!png || !info) {
            png_destroy_write_struct(&png, &info);
            throw ImageIoError("libpng initialization failed");
        }
        std::vector<png_byte> row(raster.width() * raster.channels());
        if (setjmp(png_jmpbuf(png))) {
            png_destroy_write_struct(&png, &info);
            throw ImageIoError("libpng failed writing " + path.string());
        }
        png_init_io(png, fp.get());
        png_set_IHDR(png, info, static_cast<png_uint_32>(raster.width()), static_cast<png_uint_32>(raster.height()), 8,
                     color_type, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
        png_write_info(png, info);
        for (std::size_t r = 0; r < raster.height(); ++r) {
            for (std::size_t c = 0; c < raster.width(); ++c) {
                for (std::size_t ch = 0; ch < raster.channels(); ++ch) {
                    row[c * raster.channels() + ch] = to_u8(raster.at(r, c, ch));
                }
            }
            png_write_row(png, row.data());
        }
        png_write_end(png, nullptr);
        png_destroy_write_struct(&png, &info);
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) throw ImageIoError("cannot move " + tmp.string() + " into place: " + ec.message());
}

Raster read_png(const std::filesystem::path& path) {
    FilePtr fp(std::fopen(path.c_str(), "rb"));
    if (!fp) throw ImageIoError("cannot open " + path.string());
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw ImageIoError("libpng initialization failed");
    }
    Raster out;
    std::vector<png_byte> row;
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw ImageIoError("cannot decode PNG " + path.string());
    }
    png_init_io(png, fp.get());
    png_read_info(png, info);
    png_set_strip_16(png);
    png_set_packing(png);
    png_set_palette_to_rgb(png);
    png_set_expand_gray_1_2_4_to_8(png);
    png_read_update_info(png, info);
    const auto width = png_get_image_width(png, info);
    const auto height = png_get_image_height(png, info);
    const auto channels = png_get_channels(png, info);
    out = Raster(height, width, channels);
    row.resize(png_get_rowbytes(png, info));
    for (std::size_t r = 0; r < height; ++r) {
        png_read_row(png, row.data(), nullptr);
        for (std::size_t i = 0; i < static_cast<std::size_t>(width) * channels; ++i) {
            out.data()[r * width * channels + i] = static_cast<float>(row[i]) / 255.0f;
        }
    }
    png_destroy_read_struct(&png, &info, nullptr);
    return out;
}

void write_raw(const std::filesystem::path& path, const Raster& raster) {
    std::string bytes(4 * 5 + 4 * raster.data().size(), '\0');
    auto* p = reinterpret_cast<std::uint8_t*>(bytes.data());
    std::copy(kRawMagic.begin(), kRawMagic.end(), bytes.begin());
    const std::array<std::uint32_t, 4> dims = {kRawVersion, static_cast<std::uint32_t>(raster.height()),
                                              static_cast<std::uint32_t>(raster.width()),
                                              static_cast<std::uint32_t>(raster.channels())};
    for (std::size_t i = 0; i < dims.size(); ++i) wire::put_u32le(dims[i], std::span<std::uint8_t, 4>(p + 4 + 4 * i, 4));
    const auto values = raster.data();
    for (std::size_t i = 0; i < values.size(); ++i) {
        wire::put_f32le(values[i], std::span<std::uint8_t, 4>(p + 20 + 4 * i, 4));
    }
    write_file_atomic(path, bytes);
}

Raster read_raw(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ImageIoError("cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    const std::string bytes = ss.str();
    if (bytes.size() < 20 || !std::equal(kRawMagic.begin(), kRawMagic.end(), bytes.begin())) {
        throw ImageIoError(path.string() + " is not a raw float raster");
    }
    const auto* p = reinterpret_cast<const std::uint8_t*>(bytes.data());
    const auto u32 = [p](std::size_t off) { return wire::get_u32le(std::span<const std::uint8_t, 4>(p + off, 4)); };
    if (u32(4) != kRawVersion) throw ImageIoError(path.string() + ": unsupported raw format version");
    const std::size_t h = u32(8);
    const std::size_t w = u32(12);
    const std::size_t c = u32(16);
    if (h == 0 || w == 0 || c == 0) throw ImageIoError(path.string() + ": zero dimension");
    if (bytes.size() != 20 + 4 * h * w * c) throw ImageIoError(path.string() + ": size does not match header");
    Raster out(h, w, c);
    for (std::size_t i = 0; i < h * w * c; ++i) {
        out.data()[i] = wire::get_f32le(std::span<const std::uint8_t, 4>(p + 20 + 4 * i, 4));
    }
    return out;
}

Raster read_raster(const std::filesystem::path& path) {
    return path.extension() == ".png" ? read_png(path) : read_raw(path);
}

void write_raster(const std::filesystem::path& path, const Raster& raster) {
    if (path.extension() == ".png") {
        write_png(path, raster);
    } else {
        write_raw(path, raster);
    }
}

}  // namespace spherediff
