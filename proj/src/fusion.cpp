#include "spherediff/fusion.hpp"

#include <algorithm>
#include <atomic>
#include <bit>
#include <cmath>
#include <exception>
#include <limits>
#include <numeric>
#include <random>
#include <sstream>
#include <stdexcept>
#include <thread>
#include <tuple>

namespace spherediff {

// ---------------------------------------------------------------- kernels

WeightKernel WeightKernel::exponential(double tau) {
    WeightKernel k;
    k.kind = Kind::exponential;
    k.tau = tau;
    k.validate();
    return k;
}

WeightKernel WeightKernel::beta(double b, std::optional<double> d_max) {
    WeightKernel k;
    k.kind = Kind::beta;
    k.b = b;
    k.d_max = d_max;
    k.validate();
    return k;
}

void WeightKernel::validate() const {
    if (kind == Kind::exponential && !(tau > 0.0 && std::isfinite(tau))) {
        throw std::invalid_argument("exponential kernel: tau must be positive, got " + std::to_string(tau));
    }
    if (kind == Kind::beta) {
        if (!std::isfinite(b)) throw std::invalid_argument("beta kernel: b must be finite");
        if (d_max && !(*d_max > 0.0 && std::isfinite(*d_max))) {
            throw std::invalid_argument("beta kernel: d_max must be positive, got " + std::to_string(*d_max));
        }
    }
}

double WeightKernel::beta_exponent() const { return 4.0 * std::exp(b); }

double WeightKernel::evaluate(double norm, double dmax) const {
    if (kind == Kind::exponential) return std::exp(-norm / tau);
    const double x = dmax > 0.0 ? std::min(norm / dmax, 1.0) : 0.0;
    return std::pow(1.0 - x, beta_exponent());
}

std::vector<double> weight_map(const WeightKernel& kernel, const PerspectiveGrid& grid) {
    kernel.validate();
    double dmax = 0.0;
    if (kernel.kind == WeightKernel::Kind::beta) {
        if (kernel.d_max) {
            dmax = *kernel.d_max;
        } else {
            for (std::size_t c = 0; c < grid.cell_count(); ++c) {
                if (grid.occupied(c)) dmax = std::max(dmax, grid.coord(c).norm());
            }
        }
    }
    std::vector<double> w(grid.cell_count(), 0.0);
    for (std::size_t c = 0; c < grid.cell_count(); ++c) {
        if (grid.occupied(c)) w[c] = kernel.evaluate(grid.coord(c).norm(), dmax);
    }
    return w;
}

// ---------------------------------------------------------------- prompts

double anchor_elevation_deg(ElevationSlot slot) {
    switch (slot) {
        case ElevationSlot::top: return -90.0;
        case ElevationSlot::upper: return -10.0;
        case ElevationSlot::middle: return 0.0;
        case ElevationSlot::lower: return 10.0;
        case ElevationSlot::bottom: return 90.0;
    }
    return 0.0;
}

std::string to_string(ElevationSlot slot) {
    switch (slot) {
        case ElevationSlot::top: return "top";
        case ElevationSlot::upper: return "upper";
        case ElevationSlot::middle: return "middle";
        case ElevationSlot::lower: return "lower";
        case ElevationSlot::bottom: return "bottom";
    }
    return "middle";
}

std::optional<ElevationSlot> parse_elevation_slot(const std::string& name) {
    for (auto s : kElevationSlots) {
        if (to_string(s) == name) return s;
    }
    return std::nullopt;
}

std::string PromptRef::to_string() const {
    if (kind == Kind::foreground) return "foreground:" + std::to_string(foreground_index);
    return spherediff::to_string(slot);
}

const std::string& PromptSet::text(const PromptRef& ref) const {
    if (ref.kind == PromptRef::Kind::foreground) return foreground.at(ref.foreground_index).prompt;
    return (*this)[ref.slot];
}

void PromptSet::validate() const {
    for (auto s : kElevationSlots) {
        if ((*this)[s].empty()) throw std::invalid_argument("prompt." + spherediff::to_string(s) + " is empty");
    }
    for (std::size_t i = 0; i < foreground.size(); ++i) {
        if (foreground[i].prompt.empty()) {
            throw std::invalid_argument("foreground view " + std::to_string(i) + " has an empty prompt");
        }
    }
}

PromptRef condition_map(const PromptSet& /*prompts*/, const Direction& view) {
    // Elevations recovered through asin carry ~1e-14° of noise; treat
    // distances this close as a tie.
    constexpr double kTieDeg = 1e-9;
    const double phi = view.elevation_deg();
    ElevationSlot best = ElevationSlot::middle;
    double best_dist = std::numeric_limits<double>::infinity();
    for (auto s : kElevationSlots) {
        const double anchor = anchor_elevation_deg(s);
        const double dist = std::abs(phi - anchor);
        const bool closer = dist < best_dist - kTieDeg;
        const bool tie_smaller = std::abs(dist - best_dist) <= kTieDeg &&
                                 std::abs(anchor) < std::abs(anchor_elevation_deg(best));
        if (closer || tie_smaller) {
            best = s;
            best_dist = std::min(dist, best_dist);
        }
    }
    return PromptRef::elevation(best);
}

// --------------------------------------------------------------- schedule

std::vector<ScheduleRing> default_schedule_rings() {
    return {{-90.0, 4}, {90.0, 4}, {-77.5, 8}, {77.5, 8}, {-45.0, 11},
            {45.0, 11}, {-22.5, 14}, {22.5, 14}, {0.0, 15}};
}

void PipelineConfig::validate() const {
    if (total_steps < 1) throw std::invalid_argument("steps must be at least 1");
    if (lattice_size < 4) throw std::invalid_argument("n must be at least 4");
    if (channels < 1) throw std::invalid_argument("channels must be at least 1");
    if (!(fov_deg > 0.0 && fov_deg < 180.0)) throw std::invalid_argument("fov must lie in (0, 180) degrees");
    if (!(overlap >= 0.0 && overlap < 1.0)) throw std::invalid_argument("overlap must lie in [0, 1)");
    if (rings.empty()) throw std::invalid_argument("rings must not be empty");
    for (const auto& r : rings) {
        if (r.count == 0) throw std::invalid_argument("rings: every ring needs at least one view");
        if (!(r.elevation_deg >= -90.0 && r.elevation_deg <= 90.0)) {
            throw std::invalid_argument("rings: elevation must lie in [-90, 90]");
        }
    }
    if (!(tau > 0.0 && std::isfinite(tau))) throw std::invalid_argument("tau must be positive");
    if (!(refine_noise == 0.0 || (refine_noise > 0.0 && refine_noise < 1.0))) {
        throw std::invalid_argument("refine_noise must be 0 (off) or lie in (0, 1)");
    }
    if (erp_height < 1) throw std::invalid_argument("erp_height must be at least 1");
}

std::vector<ViewSpec> generate_view_schedule(const PipelineConfig& cfg, const PromptSet& prompts) {
    if (cfg.rings.empty()) throw std::invalid_argument("generate_view_schedule: schedule has no rings");
    std::vector<ViewSpec> views;
    for (const auto& ring : cfg.rings) {
        if (ring.count == 0) throw std::invalid_argument("generate_view_schedule: ring with zero views");
        for (std::size_t k = 0; k < ring.count; ++k) {
            const double az = 360.0 * static_cast<double>(k) / static_cast<double>(ring.count);
            auto cam = CameraModel::from_yaw_pitch(az, ring.elevation_deg, cfg.fov_deg);
            const auto ref = condition_map(prompts, cam.view_direction());
            views.push_back(ViewSpec{cam, WeightKernel::exponential(cfg.tau), ref, prompts.text(ref), false, az,
                                     ring.elevation_deg});
        }
    }
    for (std::size_t i = 0; i < prompts.foreground.size(); ++i) {
        const auto& fg = prompts.foreground[i];
        auto cam = CameraModel::from_fov(fg.direction, cfg.fov_deg);
        views.push_back(ViewSpec{cam, WeightKernel::beta(fg.b), PromptRef::foreground(i), fg.prompt, true,
                                 fg.direction.azimuth_deg(), fg.direction.elevation_deg()});
    }
    return views;
}

// ----------------------------------------------------------------- fusion

std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
    // splitmix64 finalizer over a combined word.
    std::uint64_t z = a + 0x9e3779b97f4a7c15ULL + (b << 6) + (b >> 2) + b * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

namespace {

using ViewKey = std::tuple<std::array<double, 9>, double, int, double, double, double, bool, std::string>;

ViewKey view_key(const ViewSpec& v) {
    std::array<double, 9> r{};
    for (int i = 0; i < 9; ++i) r[static_cast<std::size_t>(i)] = v.camera.rotation()(i / 3, i % 3);
    return {r,
            v.camera.focal(),
            static_cast<int>(v.kernel.kind),
            v.kernel.tau,
            v.kernel.b,
            v.kernel.d_max.value_or(-1.0),
            v.is_foreground,
            v.prompt_text};
}

std::uint64_t hash_key(const ViewKey& key) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    const auto feed = [&h](std::uint64_t word) {
        for (int i = 0; i < 8; ++i) {
            h ^= (word >> (8 * i)) & 0xffU;
            h *= 0x100000001b3ULL;
        }
    };
    for (double d : std::get<0>(key)) feed(std::bit_cast<std::uint64_t>(d));
    feed(std::bit_cast<std::uint64_t>(std::get<1>(key)));
    feed(static_cast<std::uint64_t>(std::get<2>(key)));
    feed(std::bit_cast<std::uint64_t>(std::get<3>(key)));
    feed(std::bit_cast<std::uint64_t>(std::get<4>(key)));
    feed(std::bit_cast<std::uint64_t>(std::get<5>(key)));
    feed(std::get<6>(key) ? 1U : 0U);
    for (unsigned char c : std::get<7>(key)) feed(c);
    return h;
}

std::string describe(const ViewSpec& v) {
    std::ostringstream os;
    os << "az " << v.azimuth_deg << " el " << v.elevation_deg << (v.is_foreground ? " foreground" : "");
    return os.str();
}

template <typename Fn>
void for_each_index(std::size_t count, unsigned threads, Fn&& fn) {
    if (threads == 0) threads = std::max(1U, std::thread::hardware_concurrency());
    threads = static_cast<unsigned>(std::min<std::size_t>(threads, count));
    if (threads <= 1) {
        for (std::size_t i = 0; i < count; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    for (unsigned w = 0; w < threads; ++w) {
        pool.emplace_back([&] {
            for (std::size_t i = next++; i < count; i = next++) fn(i);
        });
    }
    for (auto& t : pool) t.join();
}

}  // namespace

ViewDenoiseError::ViewDenoiseError(std::size_t view_index, const ViewSpec& view, const std::string& cause)
    : DenoiserError("view " + std::to_string(view_index) + " (" + describe(view) + "): " + cause, "view"),
      view_index_(view_index) {}

FusionEngine::FusionEngine(std::vector<Direction> directions, std::vector<ViewSpec> views, SamplingStrategy sampling)
    : directions_(std::move(directions)), views_(std::move(views)) {
    if (views_.empty()) throw std::invalid_argument("FusionEngine: view list is empty");
    plans_.reserve(views_.size());
    std::vector<ViewKey> keys;
    keys.reserve(views_.size());
    for (std::size_t i = 0; i < views_.size(); ++i) {
        const auto& view = views_[i];
        const auto projected = project_latents(directions_, view.camera);
        std::optional<PerspectiveGrid> grid;
        if (sampling == SamplingStrategy::dynamic) {
            if (projected.size() < 4) {
                throw std::invalid_argument("view " + std::to_string(i) + " (" + describe(view) + ") sees only " +
                                            std::to_string(projected.size()) + " latents; dynamic sampling needs 4");
            }
            grid.emplace(dynamic_latent_sampling(projected));
        } else {
            if (projected.empty()) {
                throw std::invalid_argument("view " + std::to_string(i) + " (" + describe(view) + ") sees no latents");
            }
            const std::size_t side = std::max<std::size_t>(1, dynamic_grid_side(projected.size()));
            grid.emplace(nearest_point_sampling(projected, side, side));
        }
        auto weights = weight_map(view.kernel, *grid);
        std::vector<Direction> cell_dirs;
        cell_dirs.reserve(grid->cell_count());
        for (std::size_t c = 0; c < grid->cell_count(); ++c) {
            const auto src = grid->source_index(c);
            cell_dirs.push_back(src ? directions_[*src] : view.camera.view_direction());
        }
        keys.push_back(view_key(view));
        plans_.push_back(Plan{std::move(*grid), std::move(weights), std::move(cell_dirs), hash_key(keys.back())});
    }
    canonical_order_.resize(views_.size());
    std::iota(canonical_order_.begin(), canonical_order_.end(), 0);
    std::stable_sort(canonical_order_.begin(), canonical_order_.end(),
                     [&keys](std::size_t a, std::size_t b) { return keys[a] < keys[b]; });
}

std::vector<std::size_t> FusionEngine::selection_counts() const {
    std::vector<std::size_t> counts(directions_.size(), 0);
    for (const auto& plan : plans_) {
        for (std::size_t c = 0; c < plan.grid.cell_count(); ++c) {
            if (plan.grid.occupied(c) && plan.weights[c] > 0.0) ++counts[*plan.grid.source_index(c)];
        }
    }
    return counts;
}

std::vector<double> FusionEngine::weight_shares(std::size_t latent) const {
    std::vector<double> w(views_.size(), 0.0);
    double total = 0.0;
    for (std::size_t k : canonical_order_) {
        const auto& plan = plans_[k];
        for (std::size_t c = 0; c < plan.grid.cell_count(); ++c) {
            if (plan.grid.source_index(c) == latent) {
                w[k] += plan.weights[c];
                total += plan.weights[c];
            }
        }
    }
    if (total > 0.0) {
        for (double& x : w) x /= total;
    }
    return w;
}

SphericalLatentSet FusionEngine::step(const SphericalLatentSet& s, const Denoiser& denoiser, int t, int total_steps,
                                      std::uint64_t seed, StepStats* stats, unsigned threads) const {
    if (s.size() != directions_.size()) {
        throw std::invalid_argument("FusionEngine::step: latent count differs from the planned direction set");
    }
    const std::size_t channels = s.channels();
    std::vector<FeatureMatrix> outputs(views_.size());
    std::vector<std::exception_ptr> failures(views_.size());

    for_each_index(views_.size(), threads, [&](std::size_t k) {
        const auto& plan = plans_[k];
        const auto& view = views_[k];
        try {
            DenoiseRequest req;
            req.height = plan.grid.height();
            req.width = plan.grid.width();
            auto grid = plan.grid;
            grid.gather(s);
            req.features = std::move(grid.features());
            req.coords.reserve(grid.cell_count());
            for (std::size_t c = 0; c < grid.cell_count(); ++c) req.coords.push_back(grid.coord(c));
            req.directions = plan.cell_directions;
            req.t = t;
            req.total_steps = total_steps;
            req.prompt = view.prompt_text;
            req.view_azimuth_deg = view.azimuth_deg;
            req.view_elevation_deg = view.elevation_deg;
            req.seed = mix_seed(mix_seed(seed, static_cast<std::uint64_t>(t)), plan.key_hash);
            auto out = denoiser.denoise(req);
            if (out.rows() != req.cell_count() || out.cols() != channels) {
                throw ShapeMismatchError("denoiser returned " + std::to_string(out.rows()) + "x" +
                                             std::to_string(out.cols()) + ", expected " +
                                             std::to_string(req.cell_count()) + "x" + std::to_string(channels),
                                         "features");
            }
            outputs[k] = std::move(out);
        } catch (...) {
            failures[k] = std::current_exception();
        }
    });

    for (std::size_t k : canonical_order_) {
        if (!failures[k]) continue;
        try {
            std::rethrow_exception(failures[k]);
        } catch (const std::exception& e) {
            std::throw_with_nested(ViewDenoiseError(k, views_[k], e.what()));
        }
    }

    // Accumulate deviations from the first contribution, so a latent whose
    // contributions agree keeps that value bit-for-bit.
    const std::size_t n = s.size();
    FeatureMatrix reference(n, channels);
    FeatureMatrix delta(n, channels, 0.0);
    std::vector<double> weight_sum(n, 0.0);
    std::vector<std::size_t> selections(n, 0);
    std::vector<char> seen(n, 0);
    for (std::size_t k : canonical_order_) {
        const auto& plan = plans_[k];
        const auto& out = outputs[k];
        for (std::size_t c = 0; c < plan.grid.cell_count(); ++c) {
            const auto src = plan.grid.source_index(c);
            const double w = plan.weights[c];
            if (!src || !(w > 0.0)) continue;
            const auto value = out.row(c);
            auto ref = reference.row(*src);
            if (!seen[*src]) {
                std::copy(value.begin(), value.end(), ref.begin());
                seen[*src] = 1;
            } else {
                auto acc = delta.row(*src);
                for (std::size_t ch = 0; ch < channels; ++ch) acc[ch] += w * (value[ch] - ref[ch]);
            }
            weight_sum[*src] += w;
            ++selections[*src];
        }
    }

    FeatureMatrix next = s.features();
    std::size_t covered = 0;
    for (std::size_t i = 0; i < n; ++i) {
        if (!seen[i]) continue;
        ++covered;
        auto dst = next.row(i);
        const auto ref = reference.row(i);
        const auto acc = delta.row(i);
        for (std::size_t ch = 0; ch < channels; ++ch) dst[ch] = ref[ch] + acc[ch] / weight_sum[i];
    }

    if (stats) {
        stats->t = t;
        stats->views = views_.size();
        stats->covered = covered;
        stats->uncovered = n - covered;
        stats->max_selections = selections.empty() ? 0 : *std::max_element(selections.begin(), selections.end());
    }
    return s.with_features(std::move(next));
}

SphericalLatentSet fuse_step(const SphericalLatentSet& s, const std::vector<ViewSpec>& views,
                             const Denoiser& denoiser, int t, int total_steps, std::uint64_t seed, StepStats* stats) {
    if (total_steps == 0) total_steps = t;
    const FusionEngine engine(s.directions(), views);
    return engine.step(s, denoiser, t, total_steps, seed, stats);
}

namespace {

constexpr std::uint64_t kRefineSalt = 0x5265666e6e6f6973ULL;

}  // namespace

PipelineResult run_pipeline(const PipelineConfig& cfg, const PromptSet& prompts, const Denoiser& denoiser) {
    cfg.validate();
    prompts.validate();
    auto views = generate_view_schedule(cfg, prompts);
    if (views.empty()) throw std::invalid_argument("run_pipeline: schedule is empty");

    auto latents = SphericalLatentSet::gaussian(cfg.lattice_size, cfg.channels, cfg.seed);
    const FusionEngine engine(latents.directions(), views, cfg.sampling);
    std::vector<StepStats> steps;
    steps.reserve(static_cast<std::size_t>(cfg.total_steps));
    for (int t = cfg.total_steps; t >= 1; --t) {
        StepStats st;
        latents = engine.step(latents, denoiser, t, cfg.total_steps, cfg.seed, &st, cfg.threads);
        steps.push_back(st);
    }
    if (cfg.refine_noise > 0.0) {
        latents = refine(latents, cfg.refine_noise, denoiser, cfg, views, &steps);
    }
    return PipelineResult{std::move(latents), std::move(views), std::move(steps)};
}

SphericalLatentSet refine(const SphericalLatentSet& s, double noise_level, const Denoiser& denoiser,
                          const PipelineConfig& cfg, const std::vector<ViewSpec>& views,
                          std::vector<StepStats>* stats) {
    if (!(noise_level > 0.0 && noise_level < 1.0)) {
        throw std::invalid_argument("refine: noise_level must lie in (0, 1), got " + std::to_string(noise_level));
    }
    if (cfg.total_steps < 1) throw std::invalid_argument("refine: steps must be at least 1");
    const int start = std::clamp(static_cast<int>(std::ceil(noise_level * cfg.total_steps)), 1, cfg.total_steps);
    const double sigma = denoiser.noise_sigma(start, cfg.total_steps);

    FeatureMatrix noisy = s.features();
    std::mt19937_64 rng(mix_seed(cfg.seed, kRefineSalt));
    std::normal_distribution<double> normal(0.0, 1.0);
    for (double& x : noisy.data()) x += sigma * normal(rng);
    auto latents = s.with_features(std::move(noisy));

    const FusionEngine engine(latents.directions(), views, cfg.sampling);
    const std::uint64_t seed = mix_seed(cfg.seed, kRefineSalt + 1);
    for (int t = start; t >= 1; --t) {
        StepStats st;
        latents = engine.step(latents, denoiser, t, cfg.total_steps, seed, &st, cfg.threads);
        if (stats) stats->push_back(st);
    }
    return latents;
}

}  // namespace spherediff
