#include "spherediff/evalkit.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <iomanip>
#include <limits>
#include <sstream>
#include <stdexcept>

namespace spherediff {

void DegradationSpec::validate() const {
    if (kind == Kind::distortion && !(elevation_shift_deg >= 0.0 && elevation_shift_deg < 90.0)) {
        throw std::invalid_argument("distortion elevation shift must lie in [0, 90) degrees");
    }
}

Raster degrade_discontinuity(const Raster& raster, std::size_t shift_px) {
    if (shift_px >= raster.height()) {
        throw std::invalid_argument("discontinuity shift " + std::to_string(shift_px) + " px must be below height " +
                                    std::to_string(raster.height()));
    }
    Raster out = raster;
    const std::size_t half = raster.width() / 2;
    for (std::size_t r = 0; r < raster.height(); ++r) {
        const std::size_t src = r >= shift_px ? r - shift_px : 0;
        for (std::size_t c = 0; c < half; ++c) {
            const auto from = raster.pixel(src, c);
            std::copy(from.begin(), from.end(), out.pixel(r, c).begin());
        }
    }
    return out;
}

Raster degrade_distortion(const ERPImage& img, double elevation_shift_deg, const DistortionRender& view) {
    DegradationSpec::distortion(elevation_shift_deg).validate();
    const double el = std::clamp(view.base_elevation_deg + elevation_shift_deg, -90.0, 90.0);
    const auto cam = CameraModel::from_yaw_pitch(view.azimuth_deg, el, view.fov_deg);
    return erp_to_perspective(img, cam, view.size, view.size);
}

ContinuityError end_continuity_error(const Raster& img) {
    if (img.width() < 2) throw std::invalid_argument("end_continuity_error: width must be at least 2");
    ContinuityError e;
    const std::size_t last = img.width() - 1;
    double sum = 0.0;
    for (std::size_t r = 0; r < img.height(); ++r) {
        for (std::size_t ch = 0; ch < img.channels(); ++ch) {
            sum += std::abs(static_cast<double>(img.at(r, 0, ch)) - static_cast<double>(img.at(r, last, ch)));
        }
    }
    e.border = sum / static_cast<double>(img.height() * img.channels());

    const auto row_std = [&img](std::size_t r) {
        double total = 0.0;
        for (std::size_t ch = 0; ch < img.channels(); ++ch) {
            double mean = 0.0;
            for (std::size_t c = 0; c < img.width(); ++c) mean += img.at(r, c, ch);
            mean /= static_cast<double>(img.width());
            double var = 0.0;
            for (std::size_t c = 0; c < img.width(); ++c) {
                const double d = img.at(r, c, ch) - mean;
                var += d * d;
            }
            total += std::sqrt(var / static_cast<double>(img.width()));
        }
        return total / static_cast<double>(img.channels());
    };
    e.top_pole_std = row_std(0);
    e.bottom_pole_std = row_std(img.height() - 1);
    return e;
}

ERPImage latitude_stripes(std::size_t height, double band_deg, std::size_t channels) {
    if (!(band_deg > 0.0)) throw std::invalid_argument("latitude_stripes: band must be positive");
    ERPImage img(height, channels);
    for (std::size_t r = 0; r < height; ++r) {
        const double el = -90.0 + 180.0 * (static_cast<double>(r) + 0.5) / static_cast<double>(height);
        const auto band = static_cast<long>(std::floor((el + 90.0) / band_deg));
        const float v = band % 2 == 0 ? 0.0f : 1.0f;
        for (std::size_t c = 0; c < img.width(); ++c) {
            for (std::size_t ch = 0; ch < channels; ++ch) img.raster().at(r, c, ch) = v;
        }
    }
    return img;
}

namespace {

std::vector<double> column_crossings(const Raster& raster, std::size_t col) {
    std::vector<double> out;
    for (std::size_t r = 0; r + 1 < raster.height(); ++r) {
        const double a = raster.at(r, col, 0) - 0.5;
        const double b = raster.at(r + 1, col, 0) - 0.5;
        if (a * b < 0.0) {
            out.push_back(static_cast<double>(r) + a / (a - b));
        } else if (a == 0.0 && b != 0.0) {
            out.push_back(static_cast<double>(r));
        }
    }
    return out;
}

}  // namespace

double stripe_curvature(const Raster& raster) {
    constexpr double kMaxStepPx = 3.0;
    const std::size_t w = raster.width();
    const double center_row = static_cast<double>(raster.height()) / 2.0;
    std::vector<double> pos(w, std::numeric_limits<double>::quiet_NaN());
    const std::size_t mid = w / 2;

    const auto nearest = [](const std::vector<double>& xs, double target) {
        return *std::min_element(xs.begin(), xs.end(),
                                 [target](double a, double b) { return std::abs(a - target) < std::abs(b - target); });
    };
    const auto start = column_crossings(raster, mid);
    if (start.empty()) return 0.0;
    pos[mid] = nearest(start, center_row);

    const auto trace = [&](long step) {
        double prev = pos[mid];
        for (long c = static_cast<long>(mid) + step; c >= 0 && c < static_cast<long>(w); c += step) {
            const auto xs = column_crossings(raster, static_cast<std::size_t>(c));
            if (xs.empty()) break;
            const double next = nearest(xs, prev);
            if (std::abs(next - prev) > kMaxStepPx) break;
            pos[static_cast<std::size_t>(c)] = next;
            prev = next;
        }
    };
    trace(1);
    trace(-1);

    double n = 0.0, sx = 0.0, sy = 0.0, sxx = 0.0, sxy = 0.0;
    for (std::size_t c = 0; c < w; ++c) {
        if (std::isnan(pos[c])) continue;
        const double x = static_cast<double>(c);
        n += 1.0;
        sx += x;
        sy += pos[c];
        sxx += x * x;
        sxy += x * pos[c];
    }
    if (n < 3.0) return 0.0;
    const double denom = n * sxx - sx * sx;
    const double slope = denom != 0.0 ? (n * sxy - sx * sy) / denom : 0.0;
    const double intercept = (sy - slope * sx) / n;
    double ss = 0.0;
    for (std::size_t c = 0; c < w; ++c) {
        if (std::isnan(pos[c])) continue;
        const double r = pos[c] - (intercept + slope * static_cast<double>(c));
        ss += r * r;
    }
    return std::sqrt(ss / n) / static_cast<double>(raster.height());
}

CapStatistics cap_statistics(const std::vector<Direction>& dirs, const std::vector<Direction>& axes, double cap_deg) {
    CapStatistics s;
    const double cos_cap = std::cos(deg_to_rad(cap_deg));
    s.counts.reserve(axes.size());
    for (const auto& axis : axes) {
        std::size_t k = 0;
        for (const auto& d : dirs) {
            if (d.dot(axis) >= cos_cap) ++k;
        }
        s.counts.push_back(k);
    }
    if (s.counts.empty()) return s;
    double sum = 0.0;
    for (auto k : s.counts) sum += static_cast<double>(k);
    s.mean = sum / static_cast<double>(s.counts.size());
    double var = 0.0;
    for (auto k : s.counts) var += (static_cast<double>(k) - s.mean) * (static_cast<double>(k) - s.mean);
    s.stddev = std::sqrt(var / static_cast<double>(s.counts.size()));
    s.cov = s.mean > 0.0 ? s.stddev / s.mean : 0.0;
    const auto [lo, hi] = std::minmax_element(s.counts.begin(), s.counts.end());
    s.min_max_ratio = *hi > 0 ? static_cast<double>(*lo) / static_cast<double>(*hi) : 0.0;
    return s;
}

std::vector<Direction> erp_grid_directions(std::size_t n) {
    if (n == 0) throw std::invalid_argument("erp_grid_directions: n must be at least 1");
    std::size_t best_h = 1;
    auto best_gap = std::numeric_limits<long>::max();
    for (std::size_t h = 1; h <= n; ++h) {
        if (n % h != 0) continue;
        const long gap = std::labs(static_cast<long>(n / h) - 2 * static_cast<long>(h));
        if (gap < best_gap) {
            best_gap = gap;
            best_h = h;
        }
    }
    const std::size_t h = best_h;
    const std::size_t w = n / h;
    std::vector<Direction> out;
    out.reserve(n);
    for (std::size_t r = 0; r < h; ++r) {
        const double el = -90.0 + 180.0 * (static_cast<double>(r) + 0.5) / static_cast<double>(h);
        for (std::size_t c = 0; c < w; ++c) {
            out.push_back(Direction::from_degrees(360.0 * (static_cast<double>(c) + 0.5) / static_cast<double>(w), el));
        }
    }
    return out;
}

LatticeUniformityReport lattice_uniformity_report(const std::vector<Direction>& dirs, double cap_deg) {
    if (dirs.empty()) throw std::invalid_argument("lattice_uniformity_report: no directions");
    std::vector<Direction> axes;
    for (const auto& ring : default_schedule_rings()) {
        for (std::size_t k = 0; k < ring.count; ++k) {
            axes.push_back(Direction::from_degrees(360.0 * static_cast<double>(k) / static_cast<double>(ring.count),
                                                   ring.elevation_deg));
        }
    }
    LatticeUniformityReport rep;
    rep.count = dirs.size();
    rep.cap_deg = cap_deg;
    rep.axes = axes.size();
    rep.expected_mean = static_cast<double>(dirs.size()) * (1.0 - std::cos(deg_to_rad(cap_deg))) / 2.0;
    rep.lattice = cap_statistics(dirs, axes, cap_deg);
    rep.erp_grid = cap_statistics(erp_grid_directions(dirs.size()), axes, cap_deg);
    return rep;
}

std::string format_report(const LatticeUniformityReport& r) {
    std::ostringstream os;
    os << std::setprecision(10);
    os << "count=" << r.count << "\n"
       << "cap_deg=" << r.cap_deg << "\n"
       << "axes=" << r.axes << "\n"
       << "expected_mean=" << r.expected_mean << "\n";
    const auto block = [&os](const char* prefix, const CapStatistics& s) {
        os << prefix << ".mean=" << s.mean << "\n"
           << prefix << ".stddev=" << s.stddev << "\n"
           << prefix << ".cov=" << s.cov << "\n"
           << prefix << ".min_max_ratio=" << s.min_max_ratio << "\n";
    };
    block("lattice", r.lattice);
    block("erp_grid", r.erp_grid);
    os << "cov_ratio=" << (r.lattice.cov > 0.0 ? r.erp_grid.cov / r.lattice.cov : 0.0) << "\n";
    return os.str();
}

}  // namespace spherediff
