#include "spherediff/latents.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <set>
#include <stdexcept>

using namespace spherediff;

namespace {

ProjectedLatentSet make_set(const std::vector<PerspectiveCoord>& coords) {
    ProjectedLatentSet p;
    p.parent_size = coords.size();
    for (std::size_t i = 0; i < coords.size(); ++i) p.entries.push_back({coords[i], i});
    return p;
}

// Ring of a cell: 1 for the central 2×2 block, growing outward.
std::size_t cell_ring(std::size_t row, std::size_t col, std::size_t side) {
    const auto dist = [side](std::size_t k) {
        const auto twice = static_cast<long>(2 * k) - static_cast<long>(side - 1);
        return static_cast<std::size_t>((std::labs(twice) + 1) / 2);
    };
    return std::max(dist(row), dist(col));
}

}  // namespace

TEST_CASE("latent set validation") {
    const auto dirs = fibonacci_lattice(3);
    CHECK_NOTHROW(SphericalLatentSet(dirs, FeatureMatrix(3, 2)));
    CHECK_THROWS_AS(SphericalLatentSet(dirs, FeatureMatrix(2, 2)), std::invalid_argument);
    CHECK_THROWS_AS(SphericalLatentSet({}, FeatureMatrix(0, 2)), std::invalid_argument);
    CHECK_THROWS_AS(SphericalLatentSet(dirs, FeatureMatrix(3, 0)), std::invalid_argument);
    CHECK_THROWS_AS(SphericalLatentSet({dirs[0], dirs[1], dirs[0]}, FeatureMatrix(3, 1)), std::invalid_argument);

    const auto g = SphericalLatentSet::gaussian(100, 4, 9);
    CHECK(g.size() == 100);
    CHECK(g.channels() == 4);
    CHECK(g.rng_seed() == 9u);
    CHECK(g == SphericalLatentSet::gaussian(100, 4, 9));
    CHECK_FALSE(g == SphericalLatentSet::gaussian(100, 4, 10));
    double mean = 0.0;
    for (double v : g.features().data()) mean += v;
    CHECK(std::abs(mean / 400.0) < 0.2);
    CHECK_THROWS_AS(g.with_features(FeatureMatrix(99, 4)), std::invalid_argument);
}

TEST_CASE("project_latents keeps frontal in-frame latents") {
    const CameraModel cam(Direction(0, 0, 1), 1.0);
    const std::vector<Direction> dirs = {Direction(0, 0, 1), Direction(0, 0, -1), Direction(1.2, 0, 1),
                                         Direction(0.5, -0.5, 1)};
    const auto p = project_latents(dirs, cam);
    CHECK(p.parent_size == 4);
    REQUIRE(p.size() == 2);
    CHECK(p.entries[0].latent_index == 0);
    CHECK(p.entries[0].coord == PerspectiveCoord{0.0, 0.0});
    CHECK(p.entries[1].latent_index == 3);
    CHECK(p.entries[1].coord.u == doctest::Approx(0.5));
    CHECK(p.entries[1].coord.v == doctest::Approx(-0.5));
}

TEST_CASE("nearest point sampling") {
    CHECK_THROWS_AS(nearest_point_sampling(ProjectedLatentSet{}, 2, 2), std::invalid_argument);

    const auto single = nearest_point_sampling(make_set({{0, 0}}), 1, 1);
    CHECK(single.source_index(0) == 0u);
    CHECK(single.strategy() == SamplingStrategy::nearest);

    const auto two = nearest_point_sampling(make_set({{-0.5, 0}, {0.5, 0}}), 2, 2);
    const auto sel = two.selected_indices();
    CHECK(sel.size() == 4);
    CHECK(std::set<std::size_t>(sel.begin(), sel.end()).size() < sel.size());

    SUBCASE("latents on the cell centers give a bijection") {
        PerspectiveGrid probe(4, 4, SamplingStrategy::nearest);
        std::vector<PerspectiveCoord> coords;
        for (std::size_t r = 0; r < 4; ++r) {
            for (std::size_t c = 0; c < 4; ++c) coords.push_back(probe.cell_center(r, c));
        }
        std::reverse(coords.begin(), coords.end());
        const auto g = nearest_point_sampling(make_set(coords), 4, 4);
        for (std::size_t cell = 0; cell < 16; ++cell) {
            // Brute-force nearest.
            const auto center = probe.cell_center(cell / 4, cell % 4);
            std::size_t best = 0;
            double best_d = 1e9;
            for (std::size_t i = 0; i < coords.size(); ++i) {
                const double d = std::hypot(coords[i].u - center.u, coords[i].v - center.v);
                if (d < best_d) {
                    best_d = d;
                    best = i;
                }
            }
            CHECK(g.source_index(cell) == best);
            CHECK(best == 15 - cell);
        }
    }
}

TEST_CASE("cell centers") {
    const PerspectiveGrid g(4, 4, SamplingStrategy::dynamic);
    CHECK(g.cell_center(0, 0) == PerspectiveCoord{-0.75, -0.75});
    CHECK(g.cell_center(3, 1) == PerspectiveCoord{-0.25, 0.75});
}

TEST_CASE("dynamic grid side") {
    CHECK(dynamic_grid_side(3) == 0);
    CHECK(dynamic_grid_side(4) == 2);
    CHECK(dynamic_grid_side(8) == 2);
    CHECK(dynamic_grid_side(9) == 2);
    CHECK(dynamic_grid_side(16) == 4);
    CHECK(dynamic_grid_side(35) == 4);
    CHECK(dynamic_grid_side(36) == 6);
    CHECK(dynamic_grid_side(349) == 18);
}

TEST_CASE("dynamic latent sampling examples") {
    CHECK_THROWS_AS(dynamic_latent_sampling(make_set({{0, 0}, {0.1, 0}, {0.2, 0}})), std::invalid_argument);

    SUBCASE("M = 4 fills the single ring") {
        const auto g = dynamic_latent_sampling(make_set({{0.1, 0.1}, {-0.1, 0.1}, {0.1, -0.1}, {-0.1, -0.1}}));
        CHECK(g.height() == 2);
        CHECK(g.width() == 2);
        auto sel = g.selected_indices();
        std::sort(sel.begin(), sel.end());
        CHECK(sel == std::vector<std::size_t>{0, 1, 2, 3});
        // Angular matching keeps quadrants: (−,−) top-left, (+,+) bottom-right.
        CHECK(g.source_index(0) == 3u);
        CHECK(g.source_index(3) == 0u);
    }

    SUBCASE("M = 5 drops the outermost latent") {
        const auto g = dynamic_latent_sampling(make_set({{0.1, 0}, {0.9, 0.9}, {0, 0.2}, {-0.3, 0}, {0, -0.4}}));
        CHECK(g.height() == 2);
        auto sel = g.selected_indices();
        std::sort(sel.begin(), sel.end());
        CHECK(sel == std::vector<std::size_t>{0, 2, 3, 4});
    }

    SUBCASE("M = 16 with distinct norms") {
        std::vector<PerspectiveCoord> coords;
        for (int i = 0; i < 16; ++i) {
            const double r = 0.05 * (i + 1), a = 2.4 * i;
            coords.push_back({r * std::cos(a), r * std::sin(a)});
        }
        const auto g = dynamic_latent_sampling(make_set(coords));
        CHECK(g.height() == 4);
        std::size_t ring1 = 0, ring2 = 0;
        for (std::size_t cell = 0; cell < 16; ++cell) {
            REQUIRE(g.occupied(cell));
            const auto ring = cell_ring(cell / 4, cell % 4, 4);
            const auto src = *g.source_index(cell);
            // Norm rank equals index here: ranks 0..3 belong to ring 1.
            CHECK(ring == (src < 4 ? 1u : 2u));
            (ring == 1 ? ring1 : ring2)++;
        }
        CHECK(ring1 == 4);
        CHECK(ring2 == 12);
        const auto sel = g.selected_indices();
        CHECK(std::set<std::size_t>(sel.begin(), sel.end()).size() == 16);
    }
}

TEST_CASE("dynamic sampling against a sort oracle on random sets") {
    std::mt19937_64 rng(21);
    std::uniform_real_distribution<double> uni(-1.0, 1.0);
    std::uniform_int_distribution<int> count(4, 300);
    for (int trial = 0; trial < 200; ++trial) {
        const int m = count(rng);
        std::vector<PerspectiveCoord> coords(static_cast<std::size_t>(m));
        for (auto& c : coords) c = {uni(rng), uni(rng)};
        if (trial % 5 == 0) coords[1] = {coords[0].v, coords[0].u};  // force a norm tie
        const auto g = dynamic_latent_sampling(make_set(coords));
        const std::size_t side = static_cast<std::size_t>(std::sqrt(static_cast<double>(m))) / 2 * 2;
        REQUIRE(g.height() == side);
        std::vector<std::size_t> order(coords.size());
        std::iota(order.begin(), order.end(), 0);
        std::stable_sort(order.begin(), order.end(),
                         [&](std::size_t a, std::size_t b) { return coords[a].norm() < coords[b].norm(); });
        std::vector<std::size_t> rank(coords.size());
        for (std::size_t k = 0; k < order.size(); ++k) rank[order[k]] = k;

        std::set<std::size_t> seen;
        for (std::size_t cell = 0; cell < g.cell_count(); ++cell) {
            REQUIRE(g.occupied(cell));
            const auto src = *g.source_index(cell);
            CHECK(seen.insert(src).second);
            CHECK(rank[src] < side * side);
            const auto ring = cell_ring(cell / side, cell % side, side);
            const auto k = rank[src];
            CHECK(k >= (2 * ring - 2) * (2 * ring - 2));
            CHECK(k < (2 * ring) * (2 * ring));
            CHECK(g.coord(cell) == coords[src]);
        }
    }
}

TEST_CASE("gather copies features verbatim") {
    const auto s = SphericalLatentSet::gaussian(400, 3, 1);
    const CameraModel cam = CameraModel::from_fov(Direction(0, 0, 1), 80.0);
    auto g = dynamic_latent_sampling(project_latents(s, cam));
    g.gather(s);
    for (std::size_t cell = 0; cell < g.cell_count(); ++cell) {
        const auto src = *g.source_index(cell);
        for (std::size_t c = 0; c < 3; ++c) CHECK(g.features()(cell, c) == s.features()(src, c));
    }
}
