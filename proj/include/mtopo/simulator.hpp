#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "mtopo/types.hpp"

namespace mtopo {

// Secondary-side service layout between a transformer and two metered loads.
// A shared conductor (resistance R) carries both currents; each load then
// drops over its own branch. Parallel taps both loads straight onto the
// transformer (R = 0); Cascade places load j at the shared junction
// (R_j = 0), so j sees only the common drop.
enum class ConnectionType { Parallel, Shared, Cascade };

struct CircuitSpec {
    ConnectionType type = ConnectionType::Shared;
    double shared_r_ohm = 0.01; // R
    double r_i_ohm = 0.05;      // branch of load i
    double r_j_ohm = 0.05;      // branch of load j
    double v_nominal = 122.0;   // transformer-side source
    double v_halfwidth = 0.2;   // uniform variation band around nominal

    static CircuitSpec parallel(double r_i = 0.05, double r_j = 0.05,
                                double v_nominal = 122.0, double v_halfwidth = 0.2);
    static CircuitSpec shared(double r = 0.01, double r_i = 0.05, double r_j = 0.05,
                              double v_nominal = 122.0, double v_halfwidth = 0.2);
    static CircuitSpec cascade(double r = 0.01, double r_i = 0.05,
                               double v_nominal = 122.0, double v_halfwidth = 0.2);

    // resistances non-negative; the layout constraints above must hold
    void validate() const;
};

// Service voltages for two resistive loads fed through the circuit.
// Currents obey I = P/V, solved by fixed-point iteration from I = P/v_t
// (at most max_iter rounds, converged when no node moves more than 1e-9 V).
// fast_mode skips the iteration and keeps the I = P/v_t linearization.
std::pair<double, double> solve_secondary(double v_t, double p_i_kw, double p_j_kw,
                                          const CircuitSpec& spec, bool fast_mode = false,
                                          int max_iter = 20);

// General n-load form used by the feeder generator: every load shares one
// source-side resistance and owns a branch resistance.
std::vector<double> solve_node_voltages(double v_source, std::span<const double> p_kw,
                                        double shared_r_ohm, std::span<const double> branch_r_ohm,
                                        bool fast_mode = false, int max_iter = 20);

// ---------------------------------------------------------------------------
// Monte Carlo correlation study
// ---------------------------------------------------------------------------

struct MonteCarloOptions {
    // Loads hold a level for a correlation window and wobble around it by a
    // small relative jitter, mirroring how consumption behaves between meter
    // reads; per-sample independent draws would wash the voltage correlation
    // out entirely and tell us nothing about the band effect.
    std::size_t window = 48;
    double rel_jitter = 0.08;
};

struct BandPccStats {
    double band_low_kw = 0.0;
    double band_high_kw = 0.0;
    double mean_pcc = 0.0;
    double q25 = 0.0;
    double median = 0.0;
    double q75 = 0.0;
    std::size_t windows = 0;
    std::size_t undefined_windows = 0;
};

// Correlation between the two service voltages as a function of the load
// band. `samples` is the per-band sample count (>= 100); bands must not
// overlap. Throws undefined_correlation_error if every window in a band is
// degenerate (e.g. zero variation and zero load).
std::vector<BandPccStats> monte_carlo_pcc(const CircuitSpec& spec,
                                          const std::vector<std::pair<double, double>>& bands_kw,
                                          std::size_t samples, std::uint64_t seed,
                                          const MonteCarloOptions& options = {});

void write_band_stats_csv(const std::vector<BandPccStats>& stats, const std::string& path);

// ---------------------------------------------------------------------------
// feeder synthesis
// ---------------------------------------------------------------------------

// Two-state household profile: a low draw inside [0, 2] kW during idle hours
// and a heavy draw otherwise. Levels persist for level_hold_minutes and then
// redraw; each sample wobbles around the held level.
struct LoadModel {
    double idle_low_kw = 0.05;
    double idle_high_kw = 1.5;
    double active_low_kw = 2.0;
    double active_high_kw = 16.0;
    double level_hold_minutes = 90.0;
    double rel_jitter = 0.08;
    std::vector<std::pair<int, int>> idle_hours{{0, 6}, {9, 16}}; // [start, end) hour of day
    int max_hour_offset = 1; // per-meter schedule shift, uniform in [-offset, +offset]
};

struct TransformerSpec {
    std::string id;
    Phase phase = Phase::A;
    std::size_t n_meters = 3;
    double source_r_ohm = 0.01; // transformer + shared service drop, common to members
    double branch_r_ohm = 0.05; // per-meter service branch
};

// the utility record claims this meter belongs to recorded_transformer_id,
// but it is simulated where the feeder layout actually puts it
struct SwapInjection {
    std::string meter_id;
    std::string recorded_transformer_id;
};

// the meter physically moves to another transformer partway through the
// span while the record keeps the original host
struct MoveInjection {
    std::string meter_id;
    std::string to_transformer_id;
    std::size_t at_index = 0; // grid slot of the move
};

struct FeederSpec {
    std::string name = "synthetic-feeder";
    std::int64_t start_epoch_s = 0; // 0 = 2023-01-01 via make_uniform_feeder
    int dt_minutes = 15;
    int days = 30;
    double v_nominal = 122.0;
    double phase_walk_halfwidth_v = 0.5; // variation band of each primary phase
    double phase_walk_step_v = 0.12;     // per-step walk increment bound
    double meter_noise_halfwidth_v = 0.0;
    double service_voltage = 120.0; // per-unit base
    LoadModel loads;
    std::vector<TransformerSpec> transformers;
    std::vector<SwapInjection> swaps;
    std::vector<MoveInjection> moves;

    std::size_t sample_count() const {
        return static_cast<std::size_t>(days) * 24 * 60 / static_cast<std::size_t>(dt_minutes);
    }
    void validate() const;
};

struct GroundTruth {
    std::map<std::string, Phase> true_phase;
    std::map<std::string, std::string> actual_transformer;   // physical host (post-move)
    std::map<std::string, std::string> recorded_transformer; // what the records claim
    std::vector<std::string> mislabeled;                     // meters whose record is wrong
};

struct SimulatedFeeder {
    FeederDataset dataset; // voltages already per-unit on service_voltage
    GroundTruth truth;
};

// Deterministic synthesis: every stream (phase walks, load levels, noise) is
// seeded from (seed, entity), so a given (spec, seed) yields byte-identical
// datasets regardless of call order or thread count.
SimulatedFeeder generate_feeder(const FeederSpec& spec, std::uint64_t seed);

// n_transformers round-robin across phases A/B/C, meters_each per transformer
FeederSpec make_uniform_feeder(std::size_t n_transformers, std::size_t meters_each,
                               int days = 30, int dt_minutes = 15);

// reshapes a spec into the heavy-usage scenario: long active hours at high
// draw, one short shared idle window
void make_high_load(FeederSpec& spec);

// Picks n_swaps swap and n_moves move injections deterministically: donors
// have >= 3 meters, targets share the donor's phase, each meter is touched
// at most once. Moves land at 38-46% of the span so a correlation over the
// whole record straddles the change.
void inject_mislabels(FeederSpec& spec, std::size_t n_swaps, std::size_t n_moves,
                      std::uint64_t seed);

void write_ground_truth_csv(const GroundTruth& truth, const std::string& path);

} // namespace mtopo
