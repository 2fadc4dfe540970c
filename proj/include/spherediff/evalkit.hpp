#pragma once

// Synthetic degradations and deterministic panorama metrics.

#include "spherediff/erp.hpp"
#include "spherediff/geometry.hpp"

#include <string>
#include <vector>

namespace spherediff {

struct DegradationSpec {
    enum class Kind { discontinuity, distortion };
    Kind kind = Kind::discontinuity;
    std::size_t shift_px = 0;        // discontinuity
    double elevation_shift_deg = 0;  // distortion

    static DegradationSpec discontinuity(std::size_t shift_px) { return {Kind::discontinuity, shift_px, 0.0}; }
    static DegradationSpec distortion(double elevation_shift_deg) {
        return {Kind::distortion, 0, elevation_shift_deg};
    }
    void validate() const;
};

inline constexpr std::size_t kDiscontinuityLevelsPx[] = {5, 8, 10, 15};
inline constexpr double kDistortionLevelsDeg[] = {10.0, 15.0, 30.0, 50.0};

/// Left half (columns < width/2) moved down by shift_px, rows clamped at
/// the top edge. Throws std::invalid_argument when shift_px ≥ height.
Raster degrade_discontinuity(const Raster& raster, std::size_t shift_px);

struct DistortionRender {
    double azimuth_deg = 0.0;
    double base_elevation_deg = 0.0;
    double fov_deg = 90.0;
    std::size_t size = 256;
};

/// Perspective render of the ERP with camera elevation offset by
/// elevation_shift_deg (toward +elevation) from the base view.
Raster degrade_distortion(const ERPImage& img, double elevation_shift_deg, const DistortionRender& view = {});

struct ContinuityError {
    /// Mean |first column − last column| over rows and channels.
    double border = 0.0;
    /// Standard deviation of the first and last rows (mean over channels).
    double top_pole_std = 0.0;
    double bottom_pole_std = 0.0;

    double total() const { return border + top_pole_std + bottom_pole_std; }
};

/// Values are taken as already normalized to [0, 1]. Throws for width < 2.
ContinuityError end_continuity_error(const Raster& img);

/// Horizontal bands of `band_deg` elevation alternating 0/1, all channels.
ERPImage latitude_stripes(std::size_t height, double band_deg, std::size_t channels = 1);

/// Curvature of the horizontal edge nearest the image center: the edge is
/// traced column by column from the middle column (sub-pixel 0.5 crossings
/// of channel 0), a straight line is fitted, and the RMS residual is
/// returned as a fraction of the image height. 0 when no edge is found.
double stripe_curvature(const Raster& raster);

struct CapStatistics {
    double mean = 0.0;
    double stddev = 0.0;
    /// stddev / mean (0 when the mean is 0).
    double cov = 0.0;
    double min_max_ratio = 0.0;
    std::vector<std::size_t> counts;
};

/// Directions within cap_deg of each axis.
CapStatistics cap_statistics(const std::vector<Direction>& dirs, const std::vector<Direction>& axes, double cap_deg);

/// Pixel-center directions of an h × w equirectangular grid with h·w = n,
/// picking the factorization whose width is closest to 2h.
std::vector<Direction> erp_grid_directions(std::size_t n);

struct LatticeUniformityReport {
    std::size_t count = 0;
    double cap_deg = 0.0;
    std::size_t axes = 0;
    /// n·(1 − cos cap)/2.
    double expected_mean = 0.0;
    CapStatistics lattice;
    CapStatistics erp_grid;
};

/// Cap counts over the default 89 schedule axes for `dirs` and for an
/// equal-count ERP grid. Throws for an empty direction list.
LatticeUniformityReport lattice_uniformity_report(const std::vector<Direction>& dirs, double cap_deg);

/// "key=value" lines in a fixed order.
std::string format_report(const LatticeUniformityReport& report);

}  // namespace spherediff
