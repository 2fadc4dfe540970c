#pragma once

// The denoiser contract: one grid in, one grid out, per view per timestep.
// Backends live behind Denoiser; the engine never sees model internals.

#include "spherediff/geometry.hpp"
#include "spherediff/latents.hpp"

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace spherediff {

struct DenoiseRequest {
    std::size_t height = 0;
    std::size_t width = 0;
    /// height·width rows of `channels` values, row-major cell order.
    FeatureMatrix features;
    /// Projected coordinate of each cell's source latent.
    std::vector<PerspectiveCoord> coords;
    /// Direction of each cell's source latent.
    std::vector<Direction> directions;
    int t = 1;
    int total_steps = 1;
    std::string prompt;
    double view_azimuth_deg = 0.0;
    double view_elevation_deg = 0.0;
    std::uint64_t seed = 0;

    std::size_t channels() const { return features.cols(); }
    std::size_t cell_count() const { return height * width; }

    /// Throws ShapeMismatchError naming the first inconsistent field.
    void validate() const;
};

/// Failure inside a denoiser backend. `field()` names the offending
/// request/response field when there is one.
class DenoiserError : public std::runtime_error {
public:
    DenoiserError(const std::string& what, std::string field = {})
        : std::runtime_error(what), field_(std::move(field)) {}
    const std::string& field() const { return field_; }

private:
    std::string field_;
};

class TransportError : public DenoiserError {
public:
    using DenoiserError::DenoiserError;
};

class ShapeMismatchError : public DenoiserError {
public:
    using DenoiserError::DenoiserError;
};

class ProtocolVersionError : public DenoiserError {
public:
    using DenoiserError::DenoiserError;
};

/// Frame could not be parsed.
class ProtocolError : public DenoiserError {
public:
    using DenoiserError::DenoiserError;
};

/// The backend answered with an error message.
class RemoteError : public DenoiserError {
public:
    using DenoiserError::DenoiserError;
};

class Denoiser {
public:
    virtual ~Denoiser() = default;

    /// One denoising step. Returns cell_count × channels values.
    virtual FeatureMatrix denoise(const DenoiseRequest& req) const = 0;

    /// Noise standard deviation the backend associates with timestep t of T,
    /// used when re-noising for refinement. Mocks use t/T.
    virtual double noise_sigma(int t, int total_steps) const;

    virtual std::string name() const = 0;
};

using DenoiserHandle = std::shared_ptr<const Denoiser>;

/// Writes g(d) into `out` (one value per channel).
using TargetField = std::function<void(const Direction&, std::span<double>)>;

/// g(d) = (x, y, z, 0, …), truncated when fewer than three channels.
void direction_field(const Direction& d, std::span<double> out);

class IdentityDenoiser final : public Denoiser {
public:
    FeatureMatrix denoise(const DenoiseRequest& req) const override;
    std::string name() const override { return "identity"; }
};

class ConstantDenoiser final : public Denoiser {
public:
    explicit ConstantDenoiser(std::vector<double> value) : value_(std::move(value)) {}
    FeatureMatrix denoise(const DenoiseRequest& req) const override;
    std::string name() const override { return "constant"; }

private:
    std::vector<double> value_;
};

/// Returns g(direction(cell)) in one step.
class AnalyticDenoiser final : public Denoiser {
public:
    explicit AnalyticDenoiser(TargetField g = direction_field) : g_(std::move(g)) {}
    FeatureMatrix denoise(const DenoiseRequest& req) const override;
    std::string name() const override { return "analytic"; }

private:
    TargetField g_;
};

/// Contracts toward g: out = ((t − 1)·f + g) / t, evaluated in double.
/// At t = 1 the output is g exactly.
class SchedulerDenoiser final : public Denoiser {
public:
    explicit SchedulerDenoiser(TargetField g = direction_field) : g_(std::move(g)) {}
    FeatureMatrix denoise(const DenoiseRequest& req) const override;
    std::string name() const override { return "scheduler"; }

    static double step(double feature, double target, int t);

private:
    TargetField g_;
};

}  // namespace spherediff
