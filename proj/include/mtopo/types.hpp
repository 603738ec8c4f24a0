#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace mtopo {

// ---------------------------------------------------------------------------
// missing data
// ---------------------------------------------------------------------------

// Missing readings are carried as quiet NaN so they survive arithmetic
// audits: any computation that accidentally consumes one yields NaN instead
// of a silently wrong number.
inline double missing_value() {
    return std::numeric_limits<double>::quiet_NaN();
}

inline bool is_missing(double v) {
    return std::isnan(v);
}

// ---------------------------------------------------------------------------
// phases
// ---------------------------------------------------------------------------

enum class Phase : int { A = 0, B = 1, C = 2 };

inline char phase_char(Phase p) {
    switch (p) {
        case Phase::A: return 'A';
        case Phase::B: return 'B';
        case Phase::C: return 'C';
    }
    return '?';
}

inline std::optional<Phase> parse_phase(const std::string& s) {
    if (s == "A" || s == "a") return Phase::A;
    if (s == "B" || s == "b") return Phase::B;
    if (s == "C" || s == "c") return Phase::C;
    return std::nullopt;
}

// ---------------------------------------------------------------------------
// time grid
// ---------------------------------------------------------------------------

// A regular sampling grid: `count` instants spaced dt_minutes apart starting
// at start_epoch_s (UTC). All series in a dataset share one grid; per-meter
// gaps are represented by missing values at grid slots, never by shorter
// arrays, so index i always means the same instant for every meter.
struct TimeGrid {
    std::int64_t start_epoch_s = 0;
    int dt_minutes = 15;
    std::size_t count = 0;

    std::int64_t epoch_at(std::size_t i) const {
        return start_epoch_s + static_cast<std::int64_t>(i) * 60 * dt_minutes;
    }

    bool operator==(const TimeGrid& other) const = default;

    void validate() const {
        if (dt_minutes <= 0) throw std::invalid_argument("time grid interval must be positive");
    }
};

// half-open index window [begin, end) on a grid, with a display label
struct TimeWindow {
    std::size_t begin = 0;
    std::size_t end = 0;
    std::string label;
};

// civil <-> epoch conversion (proleptic Gregorian, UTC)
std::int64_t epoch_from_civil(int year, int month, int day,
                              int hour = 0, int minute = 0, int second = 0);
void civil_from_epoch(std::int64_t epoch_s, int& year, int& month, int& day,
                      int& hour, int& minute, int& second);
std::string format_timestamp(std::int64_t epoch_s);

// ---------------------------------------------------------------------------
// meter series and feeder dataset
// ---------------------------------------------------------------------------

struct MeterSeries {
    std::string meter_id;
    std::string transformer_id;          // empty when unknown
    std::optional<Phase> recorded_phase; // label from utility records, may be wrong
    std::vector<double> power_kw;        // demand, NaN = missing
    std::vector<double> voltage;         // per-unit after normalize_voltage, NaN = missing

    std::size_t size() const { return power_kw.size(); }
};

struct FeederDataset {
    std::string name;
    TimeGrid grid;
    std::vector<MeterSeries> meters;

    const MeterSeries& meter(std::size_t i) const { return meters[i]; }
    std::size_t meter_count() const { return meters.size(); }

    // index lookup by id; throws when absent
    std::size_t index_of(const std::string& meter_id) const;

    bool any_recorded_phase() const;
    bool any_transformer_id() const;

    // Checks the structural invariants: at least two meters, unique ids,
    // every series sized to the grid.
    void validate() const;
};

// Extracts the half-open index window [begin, end) as a new dataset on a
// shifted grid. Used for seasonal slices.
FeederDataset slice_dataset(const FeederDataset& ds, std::size_t begin, std::size_t end);

// mean over non-missing entries; nullopt when all entries are missing
std::optional<double> finite_mean(const std::vector<double>& values);

// fraction of entries that are missing
double missing_fraction(const std::vector<double>& values);

// ---------------------------------------------------------------------------
// compensated accumulation
// ---------------------------------------------------------------------------

// Neumaier variant of Kahan summation. Year-long channels hold tens of
// thousands of points whose magnitudes span volts to kilowatts; plain
// accumulation loses enough precision to matter at the 1e-12 tolerances the
// correlation tests pin down.
struct CompensatedSum {
    double sum = 0.0;
    double carry = 0.0;

    void add(double x) {
        double t = sum + x;
        if (std::abs(sum) >= std::abs(x)) {
            carry += (sum - t) + x;
        } else {
            carry += (x - t) + sum;
        }
        sum = t;
    }

    double value() const { return sum + carry; }
};

} // namespace mtopo
