#include "spherediff/latents.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <stdexcept>
#include <string>

namespace spherediff {

SphericalLatentSet::SphericalLatentSet(std::vector<Direction> directions, FeatureMatrix features,
                                       std::optional<std::uint64_t> rng_seed)
    : directions_(std::move(directions)), features_(std::move(features)), rng_seed_(rng_seed) {
    if (directions_.empty()) throw std::invalid_argument("SphericalLatentSet: needs at least one latent");
    if (features_.cols() == 0) throw std::invalid_argument("SphericalLatentSet: channel count must be at least 1");
    if (features_.rows() != directions_.size()) {
        throw std::invalid_argument("SphericalLatentSet: " + std::to_string(directions_.size()) + " directions but " +
                                    std::to_string(features_.rows()) + " feature rows");
    }
    std::vector<std::size_t> order(directions_.size());
    std::iota(order.begin(), order.end(), 0);
    const auto key = [this](std::size_t i) {
        const auto& d = directions_[i];
        return std::tuple(d.x(), d.y(), d.z());
    };
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return key(a) < key(b); });
    for (std::size_t k = 1; k < order.size(); ++k) {
        if (key(order[k]) == key(order[k - 1])) {
            throw std::invalid_argument("SphericalLatentSet: latents " + std::to_string(order[k - 1]) + " and " +
                                        std::to_string(order[k]) + " share a direction");
        }
    }
}

SphericalLatentSet::SphericalLatentSet(Trusted, std::vector<Direction> directions, FeatureMatrix features,
                                       std::optional<std::uint64_t> rng_seed)
    : directions_(std::move(directions)), features_(std::move(features)), rng_seed_(rng_seed) {}

SphericalLatentSet SphericalLatentSet::gaussian(std::size_t n, std::size_t channels, std::uint64_t seed) {
    if (channels == 0) throw std::invalid_argument("SphericalLatentSet: channel count must be at least 1");
    auto dirs = fibonacci_lattice(n);
    FeatureMatrix f(n, channels);
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    for (double& x : f.data()) x = normal(rng);
    return SphericalLatentSet(std::move(dirs), std::move(f), seed);
}

SphericalLatentSet SphericalLatentSet::with_features(FeatureMatrix features) const {
    if (features.rows() != size() || features.cols() == 0) {
        throw std::invalid_argument("SphericalLatentSet::with_features: shape mismatch");
    }
    return SphericalLatentSet(Trusted{}, directions_, std::move(features), rng_seed_);
}

ProjectedLatentSet project_latents(std::span<const Direction> directions, const CameraModel& cam) {
    ProjectedLatentSet out;
    out.parent_size = directions.size();
    for (std::size_t i = 0; i < directions.size(); ++i) {
        const auto p = spherical_to_perspective(directions[i], cam);
        if (p && p->in_frame()) out.entries.push_back({*p, i});
    }
    return out;
}

PerspectiveGrid::PerspectiveGrid(std::size_t height, std::size_t width, SamplingStrategy strategy)
    : height_(height), width_(width), strategy_(strategy), source_(height * width), coords_(height * width) {
    if (height == 0 || width == 0) throw std::invalid_argument("PerspectiveGrid: dimensions must be positive");
}

void PerspectiveGrid::assign(std::size_t cell, const ProjectedLatent& p) {
    source_.at(cell) = p.latent_index;
    coords_.at(cell) = p.coord;
}

PerspectiveCoord PerspectiveGrid::cell_center(std::size_t row, std::size_t col) const {
    return {-1.0 + (2.0 * static_cast<double>(col) + 1.0) / static_cast<double>(width_),
            -1.0 + (2.0 * static_cast<double>(row) + 1.0) / static_cast<double>(height_)};
}

void PerspectiveGrid::gather(const SphericalLatentSet& s) {
    features_ = FeatureMatrix(cell_count(), s.channels());
    for (std::size_t cell = 0; cell < cell_count(); ++cell) {
        if (!source_[cell]) continue;
        const auto src = s.features().row(*source_[cell]);
        std::copy(src.begin(), src.end(), features_.row(cell).begin());
    }
}

std::vector<std::size_t> PerspectiveGrid::selected_indices() const {
    std::vector<std::size_t> out;
    out.reserve(source_.size());
    for (const auto& s : source_) {
        if (s) out.push_back(*s);
    }
    return out;
}

PerspectiveGrid nearest_point_sampling(const ProjectedLatentSet& p, std::size_t height, std::size_t width) {
    if (p.empty()) throw std::invalid_argument("nearest_point_sampling: no projected latents");
    PerspectiveGrid grid(height, width, SamplingStrategy::nearest);
    for (std::size_t r = 0; r < height; ++r) {
        for (std::size_t c = 0; c < width; ++c) {
            const auto center = grid.cell_center(r, c);
            const ProjectedLatent* best = nullptr;
            double best_d2 = std::numeric_limits<double>::infinity();
            for (const auto& e : p.entries) {
                const double du = e.coord.u - center.u;
                const double dv = e.coord.v - center.v;
                const double d2 = du * du + dv * dv;
                if (d2 < best_d2 || (d2 == best_d2 && e.latent_index < best->latent_index)) {
                    best = &e;
                    best_d2 = d2;
                }
            }
            grid.assign(r * width + c, *best);
        }
    }
    return grid;
}

std::size_t dynamic_grid_side(std::size_t m) {
    auto side = static_cast<std::size_t>(std::sqrt(static_cast<double>(m)));
    // Correct the floating-point root for large m.
    while (side * side > m) --side;
    while ((side + 1) * (side + 1) <= m) ++side;
    return side - side % 2;
}

namespace {

// Ring of a cell in an even side×side grid: 1 for the central 2×2 block.
std::size_t ring_of(std::size_t row, std::size_t col, std::size_t side) {
    const auto half = static_cast<long>(side / 2);
    const auto ring_1d = [half](std::size_t i) {
        const long a = static_cast<long>(i) - half;
        return static_cast<std::size_t>(a >= 0 ? a + 1 : -a);
    };
    return std::max(ring_1d(row), ring_1d(col));
}

}  // namespace

PerspectiveGrid dynamic_latent_sampling(const ProjectedLatentSet& p) {
    const std::size_t m = p.size();
    if (m < 4) {
        throw std::invalid_argument("dynamic_latent_sampling: needs at least 4 projected latents, got " +
                                    std::to_string(m));
    }
    const std::size_t side = dynamic_grid_side(m);
    PerspectiveGrid grid(side, side, SamplingStrategy::dynamic);

    std::vector<const ProjectedLatent*> queue;
    queue.reserve(m);
    for (const auto& e : p.entries) queue.push_back(&e);
    std::sort(queue.begin(), queue.end(), [](const ProjectedLatent* a, const ProjectedLatent* b) {
        const double na = a->coord.norm();
        const double nb = b->coord.norm();
        if (na != nb) return na < nb;
        return a->latent_index < b->latent_index;
    });

    std::vector<std::vector<std::size_t>> rings(side / 2 + 1);
    for (std::size_t r = 0; r < side; ++r) {
        for (std::size_t c = 0; c < side; ++c) rings[ring_of(r, c, side)].push_back(r * side + c);
    }

    std::size_t head = 0;
    for (std::size_t i = 1; i <= side / 2; ++i) {
        auto& cells = rings[i];
        const std::size_t n = (2 * i) * (2 * i) - (2 * i - 2) * (2 * i - 2);
        std::vector<const ProjectedLatent*> ring_latents(queue.begin() + static_cast<long>(head),
                                                         queue.begin() + static_cast<long>(head + n));
        head += n;

        const auto cell_angle = [&](std::size_t cell) {
            const auto ctr = grid.cell_center(cell / side, cell % side);
            return std::atan2(ctr.v, ctr.u);
        };
        std::sort(cells.begin(), cells.end(),
                  [&](std::size_t a, std::size_t b) { return cell_angle(a) < cell_angle(b); });
        std::sort(ring_latents.begin(), ring_latents.end(), [](const ProjectedLatent* a, const ProjectedLatent* b) {
            const double ta = std::atan2(a->coord.v, a->coord.u);
            const double tb = std::atan2(b->coord.v, b->coord.u);
            if (ta != tb) return ta < tb;
            return a->latent_index < b->latent_index;
        });
        for (std::size_t k = 0; k < n; ++k) grid.assign(cells[k], *ring_latents[k]);
    }
    return grid;
}

}  // namespace spherediff
