#pragma once

// Sphere coordinate conventions, Fibonacci lattice, and pinhole projection.
//
// World frame is left-handed: +X right, +Y down, +Z forward. Azimuth starts
// at +Z and grows toward +X; elevation is negative above the horizon
// (looking up) and positive below it. Angles are radians internally; the
// *_deg helpers are the external (degree) interface.

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <numbers>
#include <optional>
#include <vector>

namespace spherediff {

inline constexpr double kPi = std::numbers::pi;

constexpr double deg_to_rad(double deg) { return deg * kPi / 180.0; }
constexpr double rad_to_deg(double rad) { return rad * 180.0 / kPi; }

/// Unit vector on S². Always normalized on construction.
class Direction {
public:
    Direction() = default;  // +Z
    Direction(double x, double y, double z);
    explicit Direction(const Eigen::Vector3d& v) : Direction(v.x(), v.y(), v.z()) {}

    static Direction from_angles(double azimuth_rad, double elevation_rad);
    static Direction from_degrees(double azimuth_deg, double elevation_deg) {
        return from_angles(deg_to_rad(azimuth_deg), deg_to_rad(elevation_deg));
    }

    double x() const { return v_.x(); }
    double y() const { return v_.y(); }
    double z() const { return v_.z(); }
    const Eigen::Vector3d& vec() const { return v_; }

    /// Azimuth in [0, 2π).
    double azimuth() const;
    /// Elevation in [−π/2, π/2].
    double elevation() const;
    double azimuth_deg() const { return rad_to_deg(azimuth()); }
    double elevation_deg() const { return rad_to_deg(elevation()); }

    double dot(const Direction& o) const { return v_.dot(o.v_); }
    /// Great-circle angle in radians.
    double angle_to(const Direction& o) const;

    Direction operator-() const { return Direction(-v_.x(), -v_.y(), -v_.z()); }
    bool operator==(const Direction& o) const { return v_ == o.v_; }

private:
    Eigen::Vector3d v_{0.0, 0.0, 1.0};
};

/// Camera-up direction of a camera obtained by yawing to `azimuth` and then
/// pitching to `elevation`. Well defined at the poles, where it encodes roll.
Direction yaw_pitch_up(double azimuth_rad, double elevation_rad);

/// Normalized image-plane coordinate. u grows right, v grows down; the
/// visible frame is [−1, 1]².
struct PerspectiveCoord {
    double u = 0.0;
    double v = 0.0;

    double norm() const;
    bool in_frame() const { return u >= -1.0 && u <= 1.0 && v >= -1.0 && v <= 1.0; }
    bool operator==(const PerspectiveCoord&) const = default;
};

/// Pinhole camera at the origin (t = 0). `rotation` maps world directions
/// into camera coordinates (rows: right, down, forward).
class CameraModel {
public:
    /// Up hint defaults to world up (−Y); near the poles it falls back to +Z.
    CameraModel(const Direction& view, double focal);
    CameraModel(const Direction& view, const Direction& up_hint, double focal);

    static CameraModel from_fov(const Direction& view, double fov_deg);
    static CameraModel from_fov(const Direction& view, const Direction& up_hint, double fov_deg);
    /// Yaw/pitch camera; at the poles the azimuth sets the roll.
    static CameraModel from_yaw_pitch(double azimuth_deg, double elevation_deg, double fov_deg);

    const Direction& view_direction() const { return view_; }
    const Direction& up_hint() const { return up_; }
    double focal() const { return focal_; }
    /// Full field of view in degrees for the [−1, 1] frame.
    double fov_deg() const;
    const Eigen::Matrix3d& rotation() const { return rotation_; }

private:
    Direction view_;
    Direction up_;
    double focal_;
    Eigen::Matrix3d rotation_;
};

double focal_from_fov(double fov_deg);

/// n near-uniform directions. Point i: height 1 − (2i+1)/n along the
/// vertical (Y) axis, azimuth i times the golden angle.
std::vector<Direction> fibonacci_lattice(std::size_t n);

/// Image coordinate of a frontal direction, nothing for directions with
/// non-positive inner product against the view direction. The result is not
/// cropped to the frame.
std::optional<PerspectiveCoord> spherical_to_perspective(const Direction& d, const CameraModel& cam);

/// Ray through an image coordinate.
Direction perspective_to_spherical(const PerspectiveCoord& p, const CameraModel& cam);

/// Tangent-plane stretch tan(θ)/θ for an angle θ from the optical axis.
/// Throws std::domain_error outside [0, π/2).
double distortion_ratio(double theta);

}  // namespace spherediff
