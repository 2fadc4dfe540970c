#pragma once

// Spherical latents and their arrangement onto square perspective grids.

#include "spherediff/geometry.hpp"

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

namespace spherediff {

/// Dense row-major rows × cols matrix of doubles.
class FeatureMatrix {
public:
    FeatureMatrix() = default;
    FeatureMatrix(std::size_t rows, std::size_t cols, double fill = 0.0)
        : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }

    std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
    std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }
    double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
    double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

    std::span<double> data() { return data_; }
    std::span<const double> data() const { return data_; }

    bool operator==(const FeatureMatrix&) const = default;

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> data_;
};

/// N (direction, C-channel feature) pairs.
class SphericalLatentSet {
public:
    /// Throws std::invalid_argument on size mismatch, N = 0, C = 0, or
    /// repeated directions.
    SphericalLatentSet(std::vector<Direction> directions, FeatureMatrix features,
                       std::optional<std::uint64_t> rng_seed = std::nullopt);

    /// Fibonacci directions with i.i.d. standard-normal features.
    static SphericalLatentSet gaussian(std::size_t n, std::size_t channels, std::uint64_t seed);

    std::size_t size() const { return directions_.size(); }
    std::size_t channels() const { return features_.cols(); }
    const std::vector<Direction>& directions() const { return directions_; }
    const FeatureMatrix& features() const { return features_; }
    std::optional<std::uint64_t> rng_seed() const { return rng_seed_; }

    /// Same directions, new features. Row count must match.
    SphericalLatentSet with_features(FeatureMatrix features) const;

    bool operator==(const SphericalLatentSet&) const = default;

private:
    struct Trusted {};
    SphericalLatentSet(Trusted, std::vector<Direction> directions, FeatureMatrix features,
                       std::optional<std::uint64_t> rng_seed);

    std::vector<Direction> directions_;
    FeatureMatrix features_;
    std::optional<std::uint64_t> rng_seed_;
};

struct ProjectedLatent {
    PerspectiveCoord coord;
    std::size_t latent_index = 0;
};

/// Latents that land inside the [−1, 1]² frame of one camera.
struct ProjectedLatentSet {
    std::vector<ProjectedLatent> entries;
    std::size_t parent_size = 0;

    std::size_t size() const { return entries.size(); }
    bool empty() const { return entries.empty(); }
};

ProjectedLatentSet project_latents(std::span<const Direction> directions, const CameraModel& cam);
inline ProjectedLatentSet project_latents(const SphericalLatentSet& s, const CameraModel& cam) {
    return project_latents(s.directions(), cam);
}

enum class SamplingStrategy { nearest, dynamic };

/// H × W arrangement of latents. Each occupied cell records its source
/// latent and that latent's projected coordinate; features are filled by
/// gather().
class PerspectiveGrid {
public:
    PerspectiveGrid(std::size_t height, std::size_t width, SamplingStrategy strategy);

    std::size_t height() const { return height_; }
    std::size_t width() const { return width_; }
    std::size_t cell_count() const { return height_ * width_; }
    std::size_t channels() const { return features_.cols(); }
    SamplingStrategy strategy() const { return strategy_; }

    bool occupied(std::size_t cell) const { return source_[cell].has_value(); }
    std::optional<std::size_t> source_index(std::size_t cell) const { return source_[cell]; }
    const PerspectiveCoord& coord(std::size_t cell) const { return coords_[cell]; }
    void assign(std::size_t cell, const ProjectedLatent& p);

    /// Center of cell (row, col) in normalized image coordinates.
    PerspectiveCoord cell_center(std::size_t row, std::size_t col) const;

    /// Copies source features verbatim; unoccupied cells are zero.
    void gather(const SphericalLatentSet& s);
    const FeatureMatrix& features() const { return features_; }
    FeatureMatrix& features() { return features_; }

    /// Source indices of occupied cells, in cell order.
    std::vector<std::size_t> selected_indices() const;

private:
    std::size_t height_;
    std::size_t width_;
    SamplingStrategy strategy_;
    std::vector<std::optional<std::size_t>> source_;
    std::vector<PerspectiveCoord> coords_;
    FeatureMatrix features_;
};

/// Every cell takes the projected latent closest to its center (ties by
/// lower latent index). Latents may repeat.
PerspectiveGrid nearest_point_sampling(const ProjectedLatentSet& p, std::size_t height, std::size_t width);

/// Largest even integer not above floor(√m); 0 when m < 4.
std::size_t dynamic_grid_side(std::size_t m);

/// Center-first queue assignment: the H·W smallest-norm latents fill the
/// grid ring by ring; each latent is used at most once.
PerspectiveGrid dynamic_latent_sampling(const ProjectedLatentSet& p);

}  // namespace spherediff
