#include "spherediff/erp.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <stdexcept>
#include <string>
#include <thread>

namespace spherediff {

Raster::Raster(std::size_t height, std::size_t width, std::size_t channels, float fill)
    : height_(height), width_(width), channels_(channels), data_(height * width * channels, fill) {
    if (height == 0 || width == 0 || channels == 0) throw std::invalid_argument("Raster: dimensions must be positive");
}

void Raster::sample_clamped(double x, double y, std::span<float> out) const {
    x = std::clamp(x, 0.0, static_cast<double>(width_ - 1));
    y = std::clamp(y, 0.0, static_cast<double>(height_ - 1));
    const auto x0 = static_cast<std::size_t>(x);
    const auto y0 = static_cast<std::size_t>(y);
    const std::size_t x1 = std::min(x0 + 1, width_ - 1);
    const std::size_t y1 = std::min(y0 + 1, height_ - 1);
    const double fx = x - static_cast<double>(x0);
    const double fy = y - static_cast<double>(y0);
    for (std::size_t ch = 0; ch < channels_ && ch < out.size(); ++ch) {
        const double top = at(y0, x0, ch) * (1.0 - fx) + at(y0, x1, ch) * fx;
        const double bottom = at(y1, x0, ch) * (1.0 - fx) + at(y1, x1, ch) * fx;
        out[ch] = static_cast<float>(top * (1.0 - fy) + bottom * fy);
    }
}

std::uint8_t to_u8(float v) {
    const float c = std::clamp(v, 0.0f, 1.0f);
    return static_cast<std::uint8_t>(std::lround(c * 255.0f));
}

Raster quantize_8bit(const Raster& r) {
    Raster out = r;
    for (float& v : out.data()) v = static_cast<float>(to_u8(v)) / 255.0f;
    return out;
}

ERPImage::ERPImage(std::size_t height, std::size_t channels, float fill) : raster_(height, 2 * height, channels, fill) {}

ERPImage::ERPImage(Raster raster) : raster_(std::move(raster)) {
    if (raster_.width() != 2 * raster_.height()) {
        throw std::invalid_argument("ERPImage: width must be twice the height, got " +
                                    std::to_string(raster_.width()) + "x" + std::to_string(raster_.height()));
    }
}

Direction erp_pixel_direction(double row, double col, std::size_t height) {
    const auto h = static_cast<double>(height);
    const double elevation = -kPi / 2.0 + kPi * (row + 0.5) / h;
    const double azimuth = 2.0 * kPi * (col + 0.5) / (2.0 * h);
    return Direction::from_angles(azimuth, elevation);
}

ErpPosition erp_position(const Direction& d, std::size_t height) {
    const auto h = static_cast<double>(height);
    return {d.azimuth() / (2.0 * kPi) * 2.0 * h - 0.5, (d.elevation() + kPi / 2.0) / kPi * h - 0.5};
}

void ERPImage::sample(const Direction& d, std::span<float> out) const {
    const auto pos = erp_position(d, height());
    const auto w = static_cast<long>(width());
    const double y = std::clamp(pos.row, 0.0, static_cast<double>(height() - 1));
    const auto y0 = static_cast<std::size_t>(y);
    const std::size_t y1 = std::min(y0 + 1, height() - 1);
    const double fy = y - static_cast<double>(y0);
    const double xf = std::floor(pos.col);
    const double fx = pos.col - xf;
    long x0 = static_cast<long>(xf) % w;
    if (x0 < 0) x0 += w;
    const long x1 = (x0 + 1) % w;
    const auto& r = raster_;
    for (std::size_t ch = 0; ch < channels() && ch < out.size(); ++ch) {
        const double top = r.at(y0, static_cast<std::size_t>(x0), ch) * (1.0 - fx) +
                           r.at(y0, static_cast<std::size_t>(x1), ch) * fx;
        const double bottom = r.at(y1, static_cast<std::size_t>(x0), ch) * (1.0 - fx) +
                              r.at(y1, static_cast<std::size_t>(x1), ch) * fx;
        out[ch] = static_cast<float>(top * (1.0 - fy) + bottom * fy);
    }
}

namespace {

template <typename Fn>
void parallel_rows(std::size_t rows, unsigned threads, Fn&& fn) {
    if (threads == 0) threads = std::max(1U, std::thread::hardware_concurrency());
    threads = static_cast<unsigned>(std::min<std::size_t>(threads, rows));
    if (threads <= 1) {
        for (std::size_t r = 0; r < rows; ++r) fn(r);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    for (unsigned w = 0; w < threads; ++w) {
        pool.emplace_back([&] {
            for (std::size_t r = next++; r < rows; r = next++) fn(r);
        });
    }
    for (auto& t : pool) t.join();
}

struct DecodedView {
    const ViewSpec* view;
    Raster raster;
    double d_max;
    double cos_reach;  // directions with smaller cosine to the axis are outside the frame
};

}  // namespace

CompositeResult compose_erp(const SphericalLatentSet& s, const std::vector<ViewSpec>& views,
                            const ViewDecoder& decoder, std::size_t height, unsigned threads) {
    if (height == 0) throw std::invalid_argument("compose_erp: height must be positive");
    if (views.empty()) throw std::invalid_argument("compose_erp: no views");

    std::vector<DecodedView> decoded;
    decoded.reserve(views.size());
    std::size_t channels = 0;
    for (std::size_t i = 0; i < views.size(); ++i) {
        const auto& view = views[i];
        auto grid = dynamic_latent_sampling(project_latents(s, view.camera));
        grid.gather(s);
        Raster raster = decoder(grid);
        if (raster.empty()) throw std::invalid_argument("compose_erp: decoder returned an empty raster");
        if (channels == 0) channels = raster.channels();
        if (raster.channels() != channels) {
            throw std::invalid_argument("compose_erp: view " + std::to_string(i) + " decoded to " +
                                        std::to_string(raster.channels()) + " channels, expected " +
                                        std::to_string(channels));
        }
        double d_max = 0.0;
        if (view.kernel.kind == WeightKernel::Kind::beta) {
            if (view.kernel.d_max) {
                d_max = *view.kernel.d_max;
            } else {
                for (std::size_t c = 0; c < grid.cell_count(); ++c) d_max = std::max(d_max, grid.coord(c).norm());
            }
        }
        const double reach = std::atan(std::sqrt(2.0) / view.camera.focal());
        decoded.push_back({&view, std::move(raster), d_max, std::cos(reach) - 1e-9});
    }

    ERPImage img(height, channels);
    std::vector<std::size_t> holes_per_row(height, 0);
    parallel_rows(height, threads, [&](std::size_t r) {
        std::vector<double> acc(channels);
        std::vector<float> sample(channels);
        for (std::size_t c = 0; c < img.width(); ++c) {
            const Direction d = erp_pixel_direction(static_cast<double>(r), static_cast<double>(c), height);
            std::fill(acc.begin(), acc.end(), 0.0);
            double wsum = 0.0;
            for (const auto& dv : decoded) {
                if (d.dot(dv.view->camera.view_direction()) < dv.cos_reach) continue;
                const auto p = spherical_to_perspective(d, dv.view->camera);
                if (!p || !p->in_frame()) continue;
                const double w = dv.view->kernel.evaluate(p->norm(), dv.d_max);
                if (!(w > 0.0)) continue;
                const auto& ras = dv.raster;
                dv.raster.sample_clamped((p->u + 1.0) / 2.0 * static_cast<double>(ras.width()) - 0.5,
                                         (p->v + 1.0) / 2.0 * static_cast<double>(ras.height()) - 0.5, sample);
                for (std::size_t ch = 0; ch < channels; ++ch) acc[ch] += w * sample[ch];
                wsum += w;
            }
            auto px = img.raster().pixel(r, c);
            if (wsum > 0.0) {
                for (std::size_t ch = 0; ch < channels; ++ch) px[ch] = static_cast<float>(acc[ch] / wsum);
            } else {
                ++holes_per_row[r];
            }
        }
    });
    std::size_t holes = 0;
    for (auto h : holes_per_row) holes += h;
    return {std::move(img), holes};
}

Raster erp_to_perspective(const ERPImage& img, const CameraModel& cam, std::size_t height, std::size_t width) {
    Raster out(height, width, img.channels());
    for (std::size_t r = 0; r < height; ++r) {
        for (std::size_t c = 0; c < width; ++c) {
            const PerspectiveCoord p{-1.0 + (2.0 * static_cast<double>(c) + 1.0) / static_cast<double>(width),
                                     -1.0 + (2.0 * static_cast<double>(r) + 1.0) / static_cast<double>(height)};
            img.sample(perspective_to_spherical(p, cam), out.pixel(r, c));
        }
    }
    return out;
}

std::vector<CameraModel> evaluation_cameras(double fov_deg) {
    std::vector<CameraModel> cams;
    for (double el : {-45.0, 0.0, 45.0}) {
        for (double az : {0.0, 90.0, 180.0, 270.0}) cams.push_back(CameraModel::from_yaw_pitch(az, el, fov_deg));
    }
    cams.push_back(CameraModel::from_yaw_pitch(0.0, -90.0, fov_deg));
    cams.push_back(CameraModel::from_yaw_pitch(0.0, 90.0, fov_deg));
    return cams;
}

Raster mock_decode(const PerspectiveGrid& grid) {
    if (grid.channels() < 3) {
        throw std::invalid_argument("mock_decode: needs at least 3 channels, grid has " +
                                    std::to_string(grid.channels()));
    }
    Raster out(grid.height(), grid.width(), 3);
    for (std::size_t r = 0; r < grid.height(); ++r) {
        for (std::size_t c = 0; c < grid.width(); ++c) {
            const auto f = grid.features().row(r * grid.width() + c);
            for (std::size_t ch = 0; ch < 3; ++ch) {
                out.at(r, c, ch) = static_cast<float>(std::clamp((f[ch] + 1.0) / 2.0, 0.0, 1.0));
            }
        }
    }
    return out;
}

FeatureMatrix mock_encode(const Raster& raster) {
    if (raster.channels() < 3) throw std::invalid_argument("mock_encode: needs at least 3 channels");
    FeatureMatrix f(raster.height() * raster.width(), 3);
    for (std::size_t r = 0; r < raster.height(); ++r) {
        for (std::size_t c = 0; c < raster.width(); ++c) {
            for (std::size_t ch = 0; ch < 3; ++ch) {
                f(r * raster.width() + c, ch) = 2.0 * static_cast<double>(raster.at(r, c, ch)) - 1.0;
            }
        }
    }
    return f;
}

}  // namespace spherediff
