#include "mtopo/segmentation.hpp"

#include <algorithm>
#include <fstream>

#include "mtopo/csv.hpp"

namespace mtopo {

std::size_t min_run_samples(double t_dur_hours, int dt_minutes) {
    if (dt_minutes <= 0) throw std::invalid_argument("interval must be positive");
    double samples = t_dur_hours * 60.0 / static_cast<double>(dt_minutes);
    // tiny slack so that exact multiples (1 h at 15 min = 4.0) do not round up
    auto need = static_cast<std::size_t>(std::ceil(samples - 1e-9));
    return std::max<std::size_t>(need, 1);
}

namespace {

// true where the meter reports a usable in-band sample
std::vector<char> band_mask(const MeterSeries& m, const PowerBand& band) {
    std::vector<char> mask(m.size(), 0);
    for (std::size_t t = 0; t < m.size(); ++t) {
        if (is_missing(m.power_kw[t]) || is_missing(m.voltage[t])) continue;
        mask[t] = band.contains(m.power_kw[t]) ? 1 : 0;
    }
    return mask;
}

std::vector<IndexRun> mask_runs(const std::vector<char>& mask, std::size_t need) {
    std::vector<IndexRun> runs;
    std::size_t t = 0;
    while (t < mask.size()) {
        if (!mask[t]) {
            ++t;
            continue;
        }
        std::size_t begin = t;
        while (t < mask.size() && mask[t]) ++t;
        if (t - begin >= need) runs.push_back(IndexRun{begin, t});
    }
    return runs;
}

std::vector<char> runs_to_mask(const std::vector<IndexRun>& runs, std::size_t n) {
    std::vector<char> mask(n, 0);
    for (const auto& r : runs) {
        for (std::size_t t = r.begin; t < r.end; ++t) mask[t] = 1;
    }
    return mask;
}

std::vector<IndexRun> intersect_runs(const std::vector<IndexRun>& a,
                                     const std::vector<IndexRun>& b, std::size_t n) {
    auto ma = runs_to_mask(a, n);
    auto mb = runs_to_mask(b, n);
    for (std::size_t t = 0; t < n; ++t) ma[t] = ma[t] && mb[t];
    return mask_runs(ma, 1);
}

} // namespace

SegmentSet select_segments(const MeterSeries& a, const MeterSeries& b,
                           const TimeGrid& grid, const PowerBand& band,
                           const SegmentationOptions& options) {
    band.validate();
    if (a.size() != grid.count || b.size() != grid.count) {
        throw std::invalid_argument("series '" + a.meter_id + "' and '" + b.meter_id
                                    + "' are not on the given grid");
    }
    const std::size_t need = min_run_samples(band.t_dur_hours, grid.dt_minutes);

    std::vector<IndexRun> runs;
    if (options.duration == DurationSemantics::JointMask) {
        auto mask = band_mask(a, band);
        auto mb = band_mask(b, band);
        for (std::size_t t = 0; t < mask.size(); ++t) mask[t] = mask[t] && mb[t];
        runs = mask_runs(mask, need);
    } else {
        runs = intersect_runs(mask_runs(band_mask(a, band), need),
                              mask_runs(band_mask(b, band), need), grid.count);
    }

    std::size_t threshold = options.fallback == FallbackRule::FewerThanTwoRuns ? 2 : 1;
    SegmentSet out;
    if (runs.size() < threshold) {
        out.runs = {IndexRun{0, grid.count}};
        out.total_points = grid.count;
        out.fallback_used = true;
        return out;
    }
    out.total_points = 0;
    for (const auto& r : runs) out.total_points += r.length();
    out.runs = std::move(runs);
    return out;
}

std::vector<PairCoverage> segment_coverage(const FeederDataset& ds, const PowerBand& band,
                                           const SegmentationOptions& options) {
    std::vector<PairCoverage> rows;
    const std::size_t n = ds.meter_count();
    rows.reserve(n * (n - 1) / 2);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = i + 1; j < n; ++j) {
            auto seg = select_segments(ds.meters[i], ds.meters[j], ds.grid, band, options);
            PairCoverage pc;
            pc.i = i;
            pc.j = j;
            // a fallback pair reports its single full-series run: K=1, 100%
            pc.run_count = seg.runs.size();
            pc.total_points = seg.total_points;
            pc.coverage_fraction = ds.grid.count == 0
                ? 0.0
                : static_cast<double>(pc.total_points) / static_cast<double>(ds.grid.count);
            pc.fallback_used = seg.fallback_used;
            rows.push_back(pc);
        }
    }
    return rows;
}

void write_coverage_csv(const FeederDataset& ds, const std::vector<PairCoverage>& rows,
                        const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write '" + path + "'");
    out << "meter_a,meter_b,run_count,points,coverage_fraction,fallback\n";
    for (const auto& r : rows) {
        out << csv::join_row({ds.meters[r.i].meter_id, ds.meters[r.j].meter_id,
                              std::to_string(r.run_count), std::to_string(r.total_points),
                              csv::format_double(r.coverage_fraction),
                              r.fallback_used ? "true" : "false"})
            << "\n";
    }
    if (!out) throw std::runtime_error("failed while writing '" + path + "'");
}

} // namespace mtopo
