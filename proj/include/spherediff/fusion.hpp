#pragma once

// Spherical MultiDiffusion: per-view grids, distortion-aware weights,
// per-latent normalized fusion, the denoising loop, and refinement.

#include "spherediff/denoiser.hpp"
#include "spherediff/geometry.hpp"
#include "spherediff/latents.hpp"

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace spherediff {

/// Per-cell blend weight as a function of distance from the image center.
struct WeightKernel {
    enum class Kind { exponential, beta };

    Kind kind = Kind::exponential;
    double tau = 0.5;  // exponential
    double b = -3.0;   // beta
    /// Beta normalization distance; unset means "largest selected ‖u‖".
    std::optional<double> d_max;

    static WeightKernel exponential(double tau);
    static WeightKernel beta(double b, std::optional<double> d_max = std::nullopt);

    /// Throws std::invalid_argument for non-positive tau or d_max.
    void validate() const;
    /// Weight at distance `norm`; `d_max` is used by the beta kernel only.
    double evaluate(double norm, double d_max = 1.0) const;
    /// Beta exponent 4·e^b.
    double beta_exponent() const;
};

/// H·W weights (row-major). Unoccupied cells weigh 0.
std::vector<double> weight_map(const WeightKernel& kernel, const PerspectiveGrid& grid);

enum class ElevationSlot { top, upper, middle, lower, bottom };

inline constexpr std::array<ElevationSlot, 5> kElevationSlots = {
    ElevationSlot::top, ElevationSlot::upper, ElevationSlot::middle, ElevationSlot::lower, ElevationSlot::bottom};

/// Anchor elevations: −90°, −10°, 0°, +10°, +90°.
double anchor_elevation_deg(ElevationSlot slot);
std::string to_string(ElevationSlot slot);
std::optional<ElevationSlot> parse_elevation_slot(const std::string& name);

struct PromptRef {
    enum class Kind { elevation, foreground };
    Kind kind = Kind::elevation;
    ElevationSlot slot = ElevationSlot::middle;
    std::size_t foreground_index = 0;

    static PromptRef elevation(ElevationSlot s) { return {Kind::elevation, s, 0}; }
    static PromptRef foreground(std::size_t i) { return {Kind::foreground, ElevationSlot::middle, i}; }
    std::string to_string() const;
    bool operator==(const PromptRef&) const = default;
};

struct ForegroundView {
    Direction direction;
    std::string prompt;
    double b = -3.0;
};

struct PromptSet {
    std::array<std::string, 5> slots{"top", "upper", "middle", "lower", "bottom"};
    std::vector<ForegroundView> foreground;

    std::string& operator[](ElevationSlot s) { return slots[static_cast<std::size_t>(s)]; }
    const std::string& operator[](ElevationSlot s) const { return slots[static_cast<std::size_t>(s)]; }
    /// Throws std::out_of_range for a foreground index with no entry.
    const std::string& text(const PromptRef& ref) const;
    /// Every elevation slot must be non-empty.
    void validate() const;
};

/// Elevation slot whose anchor is nearest the view elevation; equidistant
/// anchors resolve to the one with smaller |anchor|.
PromptRef condition_map(const PromptSet& prompts, const Direction& view);

struct ViewSpec {
    CameraModel camera;
    WeightKernel kernel;
    PromptRef prompt;
    std::string prompt_text;
    bool is_foreground = false;
    double azimuth_deg = 0.0;
    double elevation_deg = 0.0;
};

struct ScheduleRing {
    double elevation_deg;
    std::size_t count;
};

/// ±90° ×4, ±77.5° ×8, ±45° ×11, ±22.5° ×14, 0° ×15.
std::vector<ScheduleRing> default_schedule_rings();

struct PipelineConfig {
    int total_steps = 50;
    std::size_t lattice_size = 2600;
    std::size_t channels = 4;
    double fov_deg = 80.0;
    /// Nominal neighbour overlap of the ring schedule; recorded, not derived.
    double overlap = 0.6;
    std::vector<ScheduleRing> rings = default_schedule_rings();
    double tau = 0.5;
    std::uint64_t seed = 0;
    SamplingStrategy sampling = SamplingStrategy::dynamic;
    /// Refinement re-noise fraction in (0, 1); 0 disables refinement.
    double refine_noise = 0.0;
    std::size_t erp_height = 1024;
    /// Worker threads for per-view denoising; 0 picks the hardware count.
    unsigned threads = 1;

    /// Throws std::invalid_argument naming the offending field.
    void validate() const;
};

/// Ring views in configured order, azimuth 360°·k/count, followed by one
/// beta-kernel view per foreground prompt.
std::vector<ViewSpec> generate_view_schedule(const PipelineConfig& cfg, const PromptSet& prompts = {});

struct StepStats {
    int t = 0;
    std::size_t views = 0;
    std::size_t covered = 0;
    std::size_t uncovered = 0;
    /// Most views selecting a single latent.
    std::size_t max_selections = 0;
};

/// Precomputed per-view arrangements for a fixed direction set. Views are
/// reduced in a canonical order derived from their contents, so the output
/// does not depend on the order of the input list.
class FusionEngine {
public:
    FusionEngine(std::vector<Direction> directions, std::vector<ViewSpec> views,
                 SamplingStrategy sampling = SamplingStrategy::dynamic);

    std::size_t latent_count() const { return directions_.size(); }
    const std::vector<ViewSpec>& views() const { return views_; }
    const PerspectiveGrid& grid(std::size_t view) const { return plans_[view].grid; }
    const std::vector<double>& weights(std::size_t view) const { return plans_[view].weights; }

    /// Number of views (with positive weight) selecting each latent.
    std::vector<std::size_t> selection_counts() const;
    /// Normalized share of every selecting view for one latent, indexed by
    /// view; non-selecting views get 0.
    std::vector<double> weight_shares(std::size_t latent) const;

    /// One fused denoising step. Throws ViewDenoiseError (with the backend
    /// error nested) when a view fails.
    SphericalLatentSet step(const SphericalLatentSet& s, const Denoiser& denoiser, int t, int total_steps,
                            std::uint64_t seed, StepStats* stats = nullptr, unsigned threads = 1) const;

private:
    struct Plan {
        PerspectiveGrid grid;
        std::vector<double> weights;
        std::vector<Direction> cell_directions;
        std::uint64_t key_hash;
    };

    std::vector<Direction> directions_;
    std::vector<ViewSpec> views_;
    std::vector<Plan> plans_;
    std::vector<std::size_t> canonical_order_;
};

/// A view's denoiser call failed; the backend exception is nested.
class ViewDenoiseError : public DenoiserError {
public:
    ViewDenoiseError(std::size_t view_index, const ViewSpec& view, const std::string& cause);
    std::size_t view_index() const { return view_index_; }

private:
    std::size_t view_index_;
};

/// Single fused step over `views` (builds the view arrangements each call).
SphericalLatentSet fuse_step(const SphericalLatentSet& s, const std::vector<ViewSpec>& views,
                             const Denoiser& denoiser, int t, int total_steps = 0, std::uint64_t seed = 0,
                             StepStats* stats = nullptr);

struct PipelineResult {
    SphericalLatentSet latents;
    std::vector<ViewSpec> views;
    std::vector<StepStats> steps;
};

/// Seeded Gaussian S_T, fused steps t = T…1, then optional refinement.
PipelineResult run_pipeline(const PipelineConfig& cfg, const PromptSet& prompts, const Denoiser& denoiser);

/// Re-noises a finished latent set to timestep ceil(noise_level·T) with
/// x + σ(t)·ε (σ from the denoiser) and denoises back to t = 1.
SphericalLatentSet refine(const SphericalLatentSet& s, double noise_level, const Denoiser& denoiser,
                          const PipelineConfig& cfg, const std::vector<ViewSpec>& views,
                          std::vector<StepStats>* stats = nullptr);

/// Stable 64-bit mixing used for per-request seeds.
std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b);

}  // namespace spherediff
