#pragma once

// PNG for 8-bit display rasters; a raw float container for feature rasters.
//
// Raw float layout (all little-endian):
//   bytes 0-3   magic "SDRF"
//   u32         format version (1)
//   u32         height
//   u32         width
//   u32         channels
//   f32 × height·width·channels, row-major pixels, channels innermost

#include "spherediff/erp.hpp"

#include <filesystem>
#include <stdexcept>
#include <string>

namespace spherediff {

class ImageIoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// 1, 3 or 4 channels; values in [0, 1] are quantized to 8 bits. Written to
/// a temporary file and renamed into place.
void write_png(const std::filesystem::path& path, const Raster& raster);
/// Gray, RGB or RGBA; returns values in [0, 1].
Raster read_png(const std::filesystem::path& path);

void write_raw(const std::filesystem::path& path, const Raster& raster);
Raster read_raw(const std::filesystem::path& path);

/// Dispatches on the extension (.png, otherwise raw).
Raster read_raster(const std::filesystem::path& path);
void write_raster(const std::filesystem::path& path, const Raster& raster);

/// Writes bytes to `path` via a sibling temporary and rename.
void write_file_atomic(const std::filesystem::path& path, const std::string& bytes);

}  // namespace spherediff
