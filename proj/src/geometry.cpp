#include "spherediff/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace spherediff {

namespace {

constexpr double kPoleThreshold = 1.0 - 1e-6;

// World up is −Y because +Y points down.
Direction default_up_hint(const Direction& view) {
    if (std::abs(view.y()) > kPoleThreshold) return Direction(0.0, 0.0, 1.0);
    return Direction(0.0, -1.0, 0.0);
}

}  // namespace

Direction::Direction(double x, double y, double z) {
    const Eigen::Vector3d v(x, y, z);
    const double n = v.norm();
    if (!(n > 0.0) || !std::isfinite(n)) {
        throw std::invalid_argument("Direction: vector must be finite and non-zero");
    }
    v_ = v / n;
}

Direction Direction::from_angles(double azimuth_rad, double elevation_rad) {
    const double ce = std::cos(elevation_rad);
    return Direction(ce * std::sin(azimuth_rad), std::sin(elevation_rad), ce * std::cos(azimuth_rad));
}

double Direction::azimuth() const {
    double a = std::atan2(v_.x(), v_.z());
    if (a < 0.0) a += 2.0 * kPi;
    // atan2 can return exactly −0 → 0, or a value that rounds to 2π.
    if (a >= 2.0 * kPi) a = 0.0;
    return a;
}

double Direction::elevation() const { return std::asin(std::clamp(v_.y(), -1.0, 1.0)); }

double Direction::angle_to(const Direction& o) const {
    // atan2 form stays accurate for nearly parallel vectors.
    return std::atan2(v_.cross(o.v_).norm(), v_.dot(o.v_));
}

Direction yaw_pitch_up(double azimuth_rad, double elevation_rad) {
    const double se = std::sin(elevation_rad);
    return Direction(se * std::sin(azimuth_rad), -std::cos(elevation_rad), se * std::cos(azimuth_rad));
}

double PerspectiveCoord::norm() const { return std::hypot(u, v); }

double focal_from_fov(double fov_deg) {
    if (!(fov_deg > 0.0 && fov_deg < 180.0)) {
        throw std::invalid_argument("field of view must lie in (0, 180) degrees, got " + std::to_string(fov_deg));
    }
    return 1.0 / std::tan(deg_to_rad(fov_deg) / 2.0);
}

CameraModel::CameraModel(const Direction& view, double focal) : CameraModel(view, default_up_hint(view), focal) {}

CameraModel::CameraModel(const Direction& view, const Direction& up_hint, double focal)
    : view_(view), up_(up_hint), focal_(focal) {
    if (!(focal > 0.0) || !std::isfinite(focal)) {
        throw std::invalid_argument("CameraModel: focal length must be positive and finite");
    }
    const Eigen::Vector3d& fwd = view_.vec();
    Eigen::Vector3d down = -up_.vec();
    down -= down.dot(fwd) * fwd;
    if (down.norm() < 1e-6) {
        up_ = default_up_hint(view_);
        down = -up_.vec();
        down -= down.dot(fwd) * fwd;
    }
    down.normalize();
    const Eigen::Vector3d right = down.cross(fwd);
    rotation_.row(0) = right.transpose();
    rotation_.row(1) = down.transpose();
    rotation_.row(2) = fwd.transpose();
}

CameraModel CameraModel::from_fov(const Direction& view, double fov_deg) {
    return CameraModel(view, focal_from_fov(fov_deg));
}

CameraModel CameraModel::from_fov(const Direction& view, const Direction& up_hint, double fov_deg) {
    return CameraModel(view, up_hint, focal_from_fov(fov_deg));
}

CameraModel CameraModel::from_yaw_pitch(double azimuth_deg, double elevation_deg, double fov_deg) {
    const double az = deg_to_rad(azimuth_deg);
    const double el = deg_to_rad(elevation_deg);
    return from_fov(Direction::from_angles(az, el), yaw_pitch_up(az, el), fov_deg);
}

double CameraModel::fov_deg() const { return rad_to_deg(2.0 * std::atan(1.0 / focal_)); }

std::vector<Direction> fibonacci_lattice(std::size_t n) {
    if (n == 0) throw std::invalid_argument("fibonacci_lattice: n must be at least 1");
    const double golden_ratio = (1.0 + std::sqrt(5.0)) / 2.0;
    const double golden_angle = 2.0 * kPi * (1.0 - 1.0 / golden_ratio);
    const auto count = static_cast<double>(n);

    std::vector<Direction> out;
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        const auto fi = static_cast<double>(i);
        const double h = 1.0 - (2.0 * fi + 1.0) / count;
        const double r = std::sqrt(std::max(0.0, 1.0 - h * h));
        const double theta = fi * golden_angle;
        out.emplace_back(r * std::sin(theta), h, r * std::cos(theta));
    }
    return out;
}

std::optional<PerspectiveCoord> spherical_to_perspective(const Direction& d, const CameraModel& cam) {
    const Eigen::Vector3d c = cam.rotation() * d.vec();
    if (!(c.z() > 0.0)) return std::nullopt;
    return PerspectiveCoord{cam.focal() * c.x() / c.z(), cam.focal() * c.y() / c.z()};
}

Direction perspective_to_spherical(const PerspectiveCoord& p, const CameraModel& cam) {
    const Eigen::Vector3d c(p.u / cam.focal(), p.v / cam.focal(), 1.0);
    return Direction(cam.rotation().transpose() * c);
}

double distortion_ratio(double theta) {
    if (!(theta >= 0.0 && theta < kPi / 2.0)) {
        throw std::domain_error("distortion_ratio: theta must lie in [0, pi/2), got " + std::to_string(theta));
    }
    if (theta == 0.0) return 1.0;
    // Series below 1e-4 keeps the ratio exact to double precision.
    if (theta < 1e-4) {
        const double t2 = theta * theta;
        return 1.0 + t2 / 3.0 + 2.0 * t2 * t2 / 15.0;
    }
    return std::tan(theta) / theta;
}

}  // namespace spherediff
