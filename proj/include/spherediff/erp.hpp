#pragma once

// Equirectangular rasters: layout, compositing of decoded views, and
// ERP → perspective rendering.
//
// Pixel (row r, col c) of an H × 2H ERP is the direction with
//   elevation = −90° + 180°·(r + 0.5)/H   (row 0 at the upward pole)
//   azimuth   = 360°·(c + 0.5)/(2H)       (θ = 0 at the left edge of col 0)

#include "spherediff/fusion.hpp"
#include "spherediff/geometry.hpp"
#include "spherediff/latents.hpp"

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

namespace spherediff {

/// height × width × channels floats, row-major pixels, channels innermost.
class Raster {
public:
    Raster() = default;
    Raster(std::size_t height, std::size_t width, std::size_t channels, float fill = 0.0f);

    std::size_t height() const { return height_; }
    std::size_t width() const { return width_; }
    std::size_t channels() const { return channels_; }
    bool empty() const { return data_.empty(); }

    float& at(std::size_t r, std::size_t c, std::size_t ch) { return data_[(r * width_ + c) * channels_ + ch]; }
    float at(std::size_t r, std::size_t c, std::size_t ch) const { return data_[(r * width_ + c) * channels_ + ch]; }
    std::span<float> pixel(std::size_t r, std::size_t c) { return {data_.data() + (r * width_ + c) * channels_, channels_}; }
    std::span<const float> pixel(std::size_t r, std::size_t c) const {
        return {data_.data() + (r * width_ + c) * channels_, channels_};
    }
    std::span<float> data() { return data_; }
    std::span<const float> data() const { return data_; }

    /// Bilinear sample at continuous pixel position (x right, y down; pixel
    /// centers at integers), clamped to the border.
    void sample_clamped(double x, double y, std::span<float> out) const;

    bool operator==(const Raster&) const = default;

private:
    std::size_t height_ = 0;
    std::size_t width_ = 0;
    std::size_t channels_ = 0;
    std::vector<float> data_;
};

/// Rounds every value to the nearest of 256 levels in [0, 1].
Raster quantize_8bit(const Raster& r);
std::uint8_t to_u8(float v);

class ERPImage {
public:
    explicit ERPImage(std::size_t height, std::size_t channels, float fill = 0.0f);
    /// Throws std::invalid_argument unless width = 2·height.
    explicit ERPImage(Raster raster);

    std::size_t height() const { return raster_.height(); }
    std::size_t width() const { return raster_.width(); }
    std::size_t channels() const { return raster_.channels(); }
    const Raster& raster() const { return raster_; }
    Raster& raster() { return raster_; }

    /// Bilinear sample with azimuthal wrap-around and pole clamping.
    void sample(const Direction& d, std::span<float> out) const;

private:
    Raster raster_;
};

Direction erp_pixel_direction(double row, double col, std::size_t height);

struct ErpPosition {
    double col;  // continuous, pixel centers at integers
    double row;
};
ErpPosition erp_position(const Direction& d, std::size_t height);

/// Per-view decoder from an arranged grid to a display raster covering the
/// view's [−1, 1]² frame.
using ViewDecoder = std::function<Raster(const PerspectiveGrid&)>;

struct CompositeResult {
    ERPImage image;
    std::size_t holes = 0;
};

/// Decodes every view's dynamic grid and blends the decoded rasters into an
/// ERP, weighting each view by its kernel at the pixel's image distance.
/// Pixels no view sees count as holes and stay zero.
CompositeResult compose_erp(const SphericalLatentSet& s, const std::vector<ViewSpec>& views,
                            const ViewDecoder& decoder, std::size_t height, unsigned threads = 1);

Raster erp_to_perspective(const ERPImage& img, const CameraModel& cam, std::size_t height, std::size_t width);

/// Azimuths {0, 90, 180, 270} × elevations {−45, 0, 45}, then both poles.
std::vector<CameraModel> evaluation_cameras(double fov_deg = 90.0);

/// First three channels mapped from [−1, 1] to [0, 1], clamped.
Raster mock_decode(const PerspectiveGrid& grid);
/// Inverse of mock_decode for a 3-channel raster: cells × 3 features.
FeatureMatrix mock_encode(const Raster& raster);

}  // namespace spherediff
