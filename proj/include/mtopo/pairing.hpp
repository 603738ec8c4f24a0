#pragma once

#include <array>
#include <limits>
#include <map>
#include <string>
#include <vector>

#include "mtopo/correlation.hpp"
#include "mtopo/segmentation.hpp"
#include "mtopo/types.hpp"

namespace mtopo {

struct TransformerGroup {
    std::string transformer_id;
    std::vector<std::size_t> meter_indices; // into the dataset, ascending
};

// Groups meters by their recorded transformer id, sorted by id. Meters with
// no transformer id are left out (callers may report them separately).
std::vector<TransformerGroup> transformer_groups(const FeederDataset& ds);

enum class FlagStage { Apcc, T2pcc };

struct FlagRecord {
    std::string meter_id;
    std::string original_transformer;
    std::string identified_transformer; // never equals original
    FlagStage stage = FlagStage::Apcc;
    double within = 0.0;     // the losing side of the flagging inequality
    double best_cross = 0.0; // the winning side
    bool seasonal_retained = true;
    bool stage2_retained = true;
    bool low_consumption = false; // too little high-power data to verify
};

struct PairingConfig {
    std::array<double, 2> t2_weights{0.5, 0.5};
    double seasonal_percentile = 20.0;
    // default: threshold = percentile of the seasonal group-average PCCs
    // pooled across the feeder. The per-transformer variant thresholds each
    // transformer against its own seasonal values; that reading retains every
    // flag by construction (a set's minimum never exceeds its percentiles)
    // and is kept only as the documented alternative interpretation.
    bool seasonal_per_transformer = false;
    double verify_low_power_kw = 1.0;      // stage-2 band floor
    double verify_t_dur_hours = 1.0;
    std::vector<TimeWindow> seasons;       // empty = calendar quarters
    SegmentationOptions segmentation;      // stage-2 segment selection

    void validate() const;
};

// mean PCC between meter j and the other members of its own group
double apcc_within(std::size_t j, const TransformerGroup& own, const SymmetricMatrix& pcc);
// mean PCC between meter j and every member of another group
double apcc_cross(std::size_t j, const TransformerGroup& other, const SymmetricMatrix& pcc);

// weighted top-2 variants; a single peer takes the full weight
double t2pcc_within(std::size_t j, const TransformerGroup& own, const SymmetricMatrix& pcc,
                    const std::array<double, 2>& w);
double t2pcc_cross(std::size_t j, const TransformerGroup& other, const SymmetricMatrix& pcc,
                   const std::array<double, 2>& w);

// Stage-1 flagging: a meter whose within-group score loses to some other
// group's cross score is flagged against the best-scoring group (ties toward
// the smaller transformer id). Groups with fewer than two members are
// skipped as unverifiable.
std::vector<FlagRecord> flag_by_apcc(const FeederDataset& ds,
                                     const std::vector<TransformerGroup>& groups,
                                     const SymmetricMatrix& pcc);
std::vector<FlagRecord> flag_by_t2pcc(const FeederDataset& ds,
                                      const std::vector<TransformerGroup>& groups,
                                      const SymmetricMatrix& pcc, const std::array<double, 2>& w);

// calendar-quarter index windows of the grid (Q1 = Jan-Mar, labeled)
std::vector<TimeWindow> calendar_quarter_windows(const TimeGrid& grid);

// Sets seasonal_retained on each flag: a flag survives when its recorded
// transformer's seasonal within-group average PCC dips to or below the
// configured percentile of the seasonal APCC distribution in at least one
// season. Stable-in-every-season transformers shed their flags. Returns
// human-readable warnings for seasons that could not be evaluated.
std::vector<std::string> seasonal_check(const FeederDataset& ds,
                                        const std::vector<TransformerGroup>& groups,
                                        std::vector<FlagRecord>& flags,
                                        const PairingConfig& config, unsigned jobs = 0);

// Stage-2 verification on high-power segments (band [low_power, inf), min
// duration per config): flags whose meter has no qualifying high-power run
// are unflagged as low-consumption; otherwise the within/cross comparison is
// recomputed on segments and the flag is dropped when within wins either the
// average or the top-2 form. Never adds flags.
void stage2_verify(const FeederDataset& ds, std::vector<FlagRecord>& flags,
                   const PairingConfig& config, unsigned jobs = 0);

struct ConnectivityEdge {
    std::string transformer_id;
    std::string from_meter;
    std::string to_meter;
    double pcc = 0.0;
};

// Greedy service-drop chain for one transformer: start from the meter with
// the highest mean voltage, repeatedly attach the unattached meter with the
// strongest correlation to any attached one. Ties break by meter id.
std::vector<ConnectivityEdge> connectivity_map(const FeederDataset& ds,
                                               const TransformerGroup& group,
                                               const SymmetricMatrix& pcc);

struct PairingResult {
    std::vector<FlagRecord> flags; // all stage-1 records with their final status
    std::vector<std::string> skipped_singletons; // transformer ids too small to score
    std::vector<std::string> unassigned_meters;  // meters with no transformer id
    std::vector<std::string> warnings;
    std::vector<ConnectivityEdge> connectivity;
    std::size_t stage1_count = 0;
    std::size_t seasonal_retained_count = 0;
    std::size_t final_count = 0;

    bool is_final(const FlagRecord& f) const {
        return f.seasonal_retained && f.stage2_retained && !f.low_consumption;
    }
};

// Full two-stage pipeline: full-series correlation matrix, APCC and top-2
// flagging, seasonal filter, high-power verification, connectivity maps.
PairingResult run_pairing(const FeederDataset& ds, const PairingConfig& config,
                          unsigned jobs = 0);

// Writes the final flag list: only records that survived the seasonal and
// verification filters. A clean feeder yields a header-only file.
void write_flag_report_csv(const PairingResult& result, const std::string& path);
void write_connectivity_csv(const std::vector<ConnectivityEdge>& edges, const std::string& path);

} // namespace mtopo
