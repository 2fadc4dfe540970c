#include "spherediff/denoiser.hpp"

#include <algorithm>

namespace spherediff {

void DenoiseRequest::validate() const {
    if (height == 0) throw ShapeMismatchError("request height must be positive", "H");
    if (width == 0) throw ShapeMismatchError("request width must be positive", "W");
    if (features.cols() == 0) throw ShapeMismatchError("request channel count must be positive", "C");
    if (features.rows() != cell_count()) {
        throw ShapeMismatchError("feature rows " + std::to_string(features.rows()) + " != H*W " +
                                     std::to_string(cell_count()),
                                 "features");
    }
    if (!coords.empty() && coords.size() != cell_count()) {
        throw ShapeMismatchError("coordinate count does not match H*W", "coords");
    }
    if (directions.size() != cell_count()) {
        throw ShapeMismatchError("direction count does not match H*W", "directions");
    }
    if (total_steps < 1) throw ShapeMismatchError("total steps must be at least 1", "T");
    if (t < 1 || t > total_steps) {
        throw ShapeMismatchError("timestep " + std::to_string(t) + " outside [1, " + std::to_string(total_steps) + "]",
                                 "t");
    }
}

double Denoiser::noise_sigma(int t, int total_steps) const {
    if (total_steps < 1 || t < 0 || t > total_steps) {
        throw std::invalid_argument("noise_sigma: timestep outside [0, T]");
    }
    return static_cast<double>(t) / static_cast<double>(total_steps);
}

void direction_field(const Direction& d, std::span<double> out) {
    std::fill(out.begin(), out.end(), 0.0);
    const double xyz[3] = {d.x(), d.y(), d.z()};
    for (std::size_t c = 0; c < out.size() && c < 3; ++c) out[c] = xyz[c];
}

FeatureMatrix IdentityDenoiser::denoise(const DenoiseRequest& req) const {
    req.validate();
    return req.features;
}

FeatureMatrix ConstantDenoiser::denoise(const DenoiseRequest& req) const {
    req.validate();
    if (value_.size() != req.channels()) {
        throw ShapeMismatchError("constant denoiser has " + std::to_string(value_.size()) + " channels, request has " +
                                     std::to_string(req.channels()),
                                 "C");
    }
    FeatureMatrix out(req.cell_count(), req.channels());
    for (std::size_t cell = 0; cell < req.cell_count(); ++cell) {
        std::copy(value_.begin(), value_.end(), out.row(cell).begin());
    }
    return out;
}

FeatureMatrix AnalyticDenoiser::denoise(const DenoiseRequest& req) const {
    req.validate();
    FeatureMatrix out(req.cell_count(), req.channels());
    for (std::size_t cell = 0; cell < req.cell_count(); ++cell) g_(req.directions[cell], out.row(cell));
    return out;
}

double SchedulerDenoiser::step(double feature, double target, int t) {
    const double td = static_cast<double>(t);
    return ((td - 1.0) * feature + target) / td;
}

FeatureMatrix SchedulerDenoiser::denoise(const DenoiseRequest& req) const {
    req.validate();
    FeatureMatrix out(req.cell_count(), req.channels());
    std::vector<double> target(req.channels());
    for (std::size_t cell = 0; cell < req.cell_count(); ++cell) {
        g_(req.directions[cell], target);
        const auto in = req.features.row(cell);
        auto dst = out.row(cell);
        for (std::size_t c = 0; c < target.size(); ++c) dst[c] = step(in[c], target[c], req.t);
    }
    return out;
}

}  // namespace spherediff
