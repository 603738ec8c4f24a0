#pragma once

#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include "mtopo/types.hpp"

namespace mtopo {

// A demand band plus the minimum contiguous duration a run must hold inside
// it. p_low == p_high is allowed (a degenerate band is a legal sweep point),
// and p_high may be +inf for "everything above a floor" selections.
struct PowerBand {
    double p_low = 0.0;
    double p_high = 2.0;
    double t_dur_hours = 1.0;

    bool contains(double p_kw) const { return p_kw >= p_low && p_kw <= p_high; }

    void validate() const {
        if (!(p_low >= 0.0)) throw std::invalid_argument("band floor must be non-negative");
        if (!(p_high >= p_low)) throw std::invalid_argument("band ceiling must not be below the floor");
        if (!(t_dur_hours >= 0.0)) throw std::invalid_argument("minimum duration must be non-negative");
        if (std::isnan(p_high)) throw std::invalid_argument("band ceiling must not be NaN");
    }
};

// When too few qualifying runs exist the selection falls back to the whole
// series. FewerThanTwoRuns treats a single run as insufficient (correlation
// over one snippet is fragile); NoRuns falls back only when nothing at all
// qualifies.
enum class FallbackRule { FewerThanTwoRuns, NoRuns };

// JointMask requires both meters in-band simultaneously for the full
// duration. PerMeter lets each meter qualify its own runs first and then
// intersects them, which admits overlaps shorter than t_dur.
enum class DurationSemantics { JointMask, PerMeter };

struct SegmentationOptions {
    FallbackRule fallback = FallbackRule::FewerThanTwoRuns;
    DurationSemantics duration = DurationSemantics::JointMask;
};

// half-open index run [begin, end) on the shared grid
struct IndexRun {
    std::size_t begin = 0;
    std::size_t end = 0;
    std::size_t length() const { return end - begin; }
};

struct SegmentSet {
    std::vector<IndexRun> runs; // disjoint, ascending
    std::size_t total_points = 0;
    bool fallback_used = false;
};

// minimum number of samples a run needs to span t_dur_hours at dt_minutes
std::size_t min_run_samples(double t_dur_hours, int dt_minutes);

// Selects the index runs where both meters draw inside the band (missing
// power or voltage readings break a run) for at least the minimum duration.
// Symmetric in its two series arguments. Both series must share a grid of
// equal length; `grid` supplies the interval.
SegmentSet select_segments(const MeterSeries& a, const MeterSeries& b,
                           const TimeGrid& grid, const PowerBand& band,
                           const SegmentationOptions& options = {});

struct PairCoverage {
    std::size_t i = 0;
    std::size_t j = 0;
    std::size_t run_count = 0;
    std::size_t total_points = 0;
    double coverage_fraction = 0.0;
    bool fallback_used = false;
};

// Per-pair segment statistics across the whole dataset (i < j ordering).
std::vector<PairCoverage> segment_coverage(const FeederDataset& ds, const PowerBand& band,
                                           const SegmentationOptions& options = {});

void write_coverage_csv(const FeederDataset& ds, const std::vector<PairCoverage>& rows,
                        const std::string& path);

} // namespace mtopo
