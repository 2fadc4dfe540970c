#include "spherediff/geometry.hpp"

#include <doctest.h>

#include <cmath>
#include <random>
#include <stdexcept>

using namespace spherediff;

namespace {

Direction random_direction(std::mt19937_64& rng) {
    std::normal_distribution<double> n(0.0, 1.0);
    return Direction(n(rng), n(rng), n(rng));
}

}  // namespace

TEST_CASE("direction is normalized and rejects degenerate input") {
    const Direction d(3.0, 0.0, 4.0);
    CHECK(d.x() == doctest::Approx(0.6));
    CHECK(d.z() == doctest::Approx(0.8));
    CHECK(d.vec().norm() == doctest::Approx(1.0).epsilon(1e-12));
    CHECK_THROWS_AS(Direction(0.0, 0.0, 0.0), std::invalid_argument);
    CHECK_THROWS_AS(Direction(NAN, 0.0, 1.0), std::invalid_argument);
}

TEST_CASE("axis conventions: +X right, +Y down, +Z forward") {
    CHECK(Direction::from_degrees(0, 0).z() == doctest::Approx(1.0));
    CHECK(Direction::from_degrees(90, 0).x() == doctest::Approx(1.0));
    CHECK(Direction::from_degrees(0, 90).y() == doctest::Approx(1.0));
    CHECK(Direction::from_degrees(0, -90).y() == doctest::Approx(-1.0));
    CHECK(Direction(-1, 0, 0).azimuth_deg() == doctest::Approx(270.0));
}

TEST_CASE("angle round trip away from the poles") {
    std::mt19937_64 rng(11);
    std::uniform_real_distribution<double> az(0.0, 2.0 * kPi), el(-1.5, 1.5);
    for (int i = 0; i < 1000; ++i) {
        const double a = az(rng), e = el(rng);
        const Direction d = Direction::from_angles(a, e);
        CHECK(std::abs(d.azimuth() - a) < 1e-6);
        CHECK(std::abs(d.elevation() - e) < 1e-6);
        CHECK(d.azimuth() >= 0.0);
        CHECK(d.azimuth() < 2.0 * kPi);
    }
}

TEST_CASE("fibonacci lattice") {
    CHECK_THROWS_AS(fibonacci_lattice(0), std::invalid_argument);

    const auto one = fibonacci_lattice(1);
    REQUIRE(one.size() == 1);
    CHECK(one[0].vec().norm() == doctest::Approx(1.0).epsilon(1e-12));

    SUBCASE("n = 4 spreads its points") {
        const auto p = fibonacci_lattice(4);
        double min_angle = 10.0;
        for (std::size_t i = 0; i < p.size(); ++i) {
            for (std::size_t j = i + 1; j < p.size(); ++j) min_angle = std::min(min_angle, p[i].angle_to(p[j]));
        }
        CHECK(min_angle > deg_to_rad(60.0));
    }

    SUBCASE("unit norms and the height formula") {
        const auto p = fibonacci_lattice(2600);
        REQUIRE(p.size() == 2600);
        for (std::size_t i = 0; i < p.size(); ++i) {
            CHECK(std::abs(p[i].vec().norm() - 1.0) < 1e-9);
            CHECK(p[i].y() == doctest::Approx(1.0 - (2.0 * static_cast<double>(i) + 1.0) / 2600.0).epsilon(1e-12));
        }
        CHECK(fibonacci_lattice(2600) == p);
    }

    SUBCASE("cap counts follow the cap-area fraction") {
        const auto p = fibonacci_lattice(2600);
        const double expected = 2600.0 * (1.0 - std::cos(deg_to_rad(40.0))) / 2.0;
        CHECK(expected == doctest::Approx(304.14).epsilon(1e-4));
        std::mt19937_64 rng(5);
        for (int trial = 0; trial < 50; ++trial) {
            const Direction axis = random_direction(rng);
            int count = 0;
            for (const auto& d : p) count += d.dot(axis) >= std::cos(deg_to_rad(40.0)) ? 1 : 0;
            CHECK(std::abs(count - expected) < 0.03 * expected);
        }
    }
}

TEST_CASE("camera rotation is orthonormal and maps the view to the forward axis") {
    std::mt19937_64 rng(2);
    for (int i = 0; i < 200; ++i) {
        const Direction v = random_direction(rng);
        const CameraModel cam(v, 1.3);
        const Eigen::Matrix3d& r = cam.rotation();
        CHECK((r.transpose() * r - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff() < 1e-9);
        CHECK(r.determinant() == doctest::Approx(1.0));
        const Eigen::Vector3d f = r * v.vec();
        CHECK(f.z() == doctest::Approx(1.0));
        CHECK(std::abs(f.x()) < 1e-12);
        CHECK(std::abs(f.y()) < 1e-12);
    }
}

TEST_CASE("camera near the poles falls back to a +Z up hint") {
    const CameraModel up(Direction(0, -1, 0), 1.0);
    CHECK(up.up_hint() == Direction(0, 0, 1));
    const CameraModel level(Direction(0, 0, 1), 1.0);
    CHECK(level.up_hint() == Direction(0, -1, 0));
    // Level camera: image right is world +X, image down is world +Y.
    CHECK(level.rotation().row(0).x() == doctest::Approx(1.0));
    CHECK(level.rotation().row(1).y() == doctest::Approx(1.0));
}

TEST_CASE("yaw-pitch cameras") {
    const auto cam = CameraModel::from_yaw_pitch(90.0, -45.0, 80.0);
    CHECK(cam.view_direction().azimuth_deg() == doctest::Approx(90.0));
    CHECK(cam.view_direction().elevation_deg() == doctest::Approx(-45.0));
    CHECK(cam.fov_deg() == doctest::Approx(80.0));
    // The four pole views share an axis and differ by roll.
    const auto a = CameraModel::from_yaw_pitch(0.0, -90.0, 80.0);
    const auto b = CameraModel::from_yaw_pitch(90.0, -90.0, 80.0);
    CHECK(a.view_direction().y() == doctest::Approx(-1.0));
    CHECK(b.view_direction().y() == doctest::Approx(-1.0));
    CHECK((a.rotation() - b.rotation()).cwiseAbs().maxCoeff() > 0.5);
}

TEST_CASE("focal from field of view") {
    CHECK(focal_from_fov(90.0) == doctest::Approx(1.0));
    CHECK(focal_from_fov(80.0) == doctest::Approx(1.0 / std::tan(deg_to_rad(40.0))));
    CHECK_THROWS_AS(focal_from_fov(0.0), std::invalid_argument);
    CHECK_THROWS_AS(focal_from_fov(180.0), std::invalid_argument);
    CHECK(CameraModel::from_fov(Direction(), 60.0).focal() == doctest::Approx(1.0 / std::tan(deg_to_rad(30.0))));
}

TEST_CASE("spherical to perspective") {
    const CameraModel cam(Direction(0, 0, 1), 1.0);
    const auto center = spherical_to_perspective(cam.view_direction(), cam);
    REQUIRE(center);
    CHECK(center->u == 0.0);
    CHECK(center->v == 0.0);

    const auto edge = spherical_to_perspective(Direction(1, 0, 1), cam);
    REQUIRE(edge);
    CHECK(edge->u == doctest::Approx(1.0));
    CHECK(edge->v == doctest::Approx(0.0));

    CHECK_FALSE(spherical_to_perspective(-cam.view_direction(), cam));
    CHECK_FALSE(spherical_to_perspective(Direction(1, 0, 0), cam));
    CHECK(spherical_to_perspective(Direction(1, 0, 1e-6), cam));

    SUBCASE("optical axis maps to the center for any focal") {
        std::mt19937_64 rng(8);
        for (double f : {0.3, 1.0, 4.0}) {
            const Direction v = random_direction(rng);
            const auto p = spherical_to_perspective(v, CameraModel(v, f));
            REQUIRE(p);
            CHECK(std::abs(p->u) < 1e-12);
            CHECK(std::abs(p->v) < 1e-12);
        }
    }
}

TEST_CASE("perspective to spherical") {
    const CameraModel cam(Direction(0, 0, 1), 1.0);
    CHECK(perspective_to_spherical({0, 0}, cam) == cam.view_direction());
    const Direction d = perspective_to_spherical({1, 0}, cam);
    CHECK(d.x() == doctest::Approx(std::sqrt(0.5)));
    CHECK(d.y() == doctest::Approx(0.0));
    CHECK(d.z() == doctest::Approx(std::sqrt(0.5)));

    SUBCASE("round trip of random frontal directions") {
        std::mt19937_64 rng(3);
        int checked = 0;
        while (checked < 1000) {
            const Direction view = random_direction(rng);
            const CameraModel c = CameraModel::from_fov(view, 80.0);
            const Direction d = random_direction(rng);
            const auto p = spherical_to_perspective(d, c);
            if (!p || !p->in_frame()) continue;
            const Direction back = perspective_to_spherical(*p, c);
            CHECK(back.angle_to(d) < 1e-6);
            const auto p2 = spherical_to_perspective(back, c);
            REQUIRE(p2);
            CHECK(std::abs(p2->u - p->u) < 1e-6);
            CHECK(std::abs(p2->v - p->v) < 1e-6);
            ++checked;
        }
    }
}

TEST_CASE("distortion ratio") {
    CHECK(distortion_ratio(0.0) == 1.0);
    CHECK(std::abs(distortion_ratio(1e-9) - 1.0) < 1e-15);
    CHECK(std::abs(distortion_ratio(kPi / 4.0) - 4.0 / kPi) < 1e-12);
    CHECK_THROWS_AS(distortion_ratio(kPi / 2.0), std::domain_error);
    CHECK_THROWS_AS(distortion_ratio(-0.1), std::domain_error);
    double prev = 1.0;
    for (int i = 1; i < 1000; ++i) {
        const double r = distortion_ratio(static_cast<double>(i) * (kPi / 2.0) / 1000.0);
        CHECK(r > prev);
        prev = r;
    }
    // Continuity across the series/closed-form switch.
    CHECK(std::abs(distortion_ratio(0.99999e-4) - distortion_ratio(1.00001e-4)) < 1e-12);
}
