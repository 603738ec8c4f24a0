#include "mtopo/simulator.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include "mtopo/correlation.hpp"
#include "mtopo/csv.hpp"
#include "mtopo/ingest.hpp"
#include "mtopo/rng.hpp"

namespace mtopo {

namespace {

// stream tags for seed derivation; spacing keeps entity families apart
constexpr std::uint64_t kStreamPhaseWalk = 0x100;
constexpr std::uint64_t kStreamLoad = 0x200;
constexpr std::uint64_t kStreamNoise = 0x300;
constexpr std::uint64_t kStreamInject = 0x400;
constexpr std::uint64_t kStreamMonteCarlo = 0x500;

} // namespace

// ---------------------------------------------------------------------------
// circuit solve
// ---------------------------------------------------------------------------

CircuitSpec CircuitSpec::parallel(double r_i, double r_j, double v_nominal, double v_halfwidth) {
    return CircuitSpec{ConnectionType::Parallel, 0.0, r_i, r_j, v_nominal, v_halfwidth};
}

CircuitSpec CircuitSpec::shared(double r, double r_i, double r_j, double v_nominal,
                                double v_halfwidth) {
    return CircuitSpec{ConnectionType::Shared, r, r_i, r_j, v_nominal, v_halfwidth};
}

CircuitSpec CircuitSpec::cascade(double r, double r_i, double v_nominal, double v_halfwidth) {
    return CircuitSpec{ConnectionType::Cascade, r, r_i, 0.0, v_nominal, v_halfwidth};
}

void CircuitSpec::validate() const {
    if (shared_r_ohm < 0.0 || r_i_ohm < 0.0 || r_j_ohm < 0.0) {
        throw std::invalid_argument("circuit resistances must be non-negative");
    }
    if (v_nominal <= 0.0) throw std::invalid_argument("nominal voltage must be positive");
    if (v_halfwidth < 0.0) throw std::invalid_argument("voltage half-width must be non-negative");
    if (type == ConnectionType::Parallel && shared_r_ohm != 0.0) {
        throw std::invalid_argument("parallel layout requires zero shared resistance");
    }
    if (type == ConnectionType::Cascade && r_j_ohm != 0.0) {
        throw std::invalid_argument("cascade layout requires zero branch resistance for load j");
    }
}

std::vector<double> solve_node_voltages(double v_source, std::span<const double> p_kw,
                                        double shared_r_ohm, std::span<const double> branch_r_ohm,
                                        bool fast_mode, int max_iter) {
    if (v_source <= 0.0) throw std::invalid_argument("source voltage must be positive");
    if (p_kw.size() != branch_r_ohm.size()) {
        throw std::invalid_argument("load and branch-resistance counts differ");
    }
    const std::size_t n = p_kw.size();
    std::vector<double> watts(n);
    for (std::size_t k = 0; k < n; ++k) {
        if (p_kw[k] < 0.0) throw std::invalid_argument("load power must be non-negative");
        watts[k] = p_kw[k] * 1000.0;
    }

    // I_k = P_k / V_k starting from V_k = v_source; each round recomputes the
    // shared and branch drops from the latest currents
    std::vector<double> v(n, v_source);
    std::vector<double> v_next(n);
    for (int it = 0; it < max_iter; ++it) {
        double total_i = 0.0;
        for (std::size_t k = 0; k < n; ++k) total_i += watts[k] / v[k];
        double v_junction = v_source - total_i * shared_r_ohm;
        double worst = 0.0;
        for (std::size_t k = 0; k < n; ++k) {
            v_next[k] = v_junction - (watts[k] / v[k]) * branch_r_ohm[k];
            if (v_next[k] <= 0.0) {
                throw std::runtime_error("service voltage collapsed: load exceeds what the circuit can carry");
            }
            worst = std::max(worst, std::abs(v_next[k] - v[k]));
        }
        v.swap(v_next);
        if (fast_mode || worst < 1e-9) return v;
    }
    throw std::runtime_error("service voltage fixed point did not converge");
}

std::pair<double, double> solve_secondary(double v_t, double p_i_kw, double p_j_kw,
                                          const CircuitSpec& spec, bool fast_mode, int max_iter) {
    spec.validate();
    const double p[2] = {p_i_kw, p_j_kw};
    const double r[2] = {spec.r_i_ohm, spec.r_j_ohm};
    auto v = solve_node_voltages(v_t, std::span<const double>(p, 2), spec.shared_r_ohm,
                                 std::span<const double>(r, 2), fast_mode, max_iter);
    return {v[0], v[1]};
}

// ---------------------------------------------------------------------------
// Monte Carlo correlation study
// ---------------------------------------------------------------------------

namespace {

double quantile_sorted(const std::vector<double>& sorted, double q) {
    if (sorted.empty()) return std::numeric_limits<double>::quiet_NaN();
    if (sorted.size() == 1) return sorted[0];
    double pos = q * static_cast<double>(sorted.size() - 1);
    auto lo = static_cast<std::size_t>(std::floor(pos));
    auto hi = static_cast<std::size_t>(std::ceil(pos));
    double frac = pos - static_cast<double>(lo);
    return sorted[lo] + frac * (sorted[hi] - sorted[lo]);
}

} // namespace

std::vector<BandPccStats> monte_carlo_pcc(const CircuitSpec& spec,
                                          const std::vector<std::pair<double, double>>& bands_kw,
                                          std::size_t samples, std::uint64_t seed,
                                          const MonteCarloOptions& options) {
    spec.validate();
    if (bands_kw.empty()) throw std::invalid_argument("no power bands given");
    if (samples < 100) throw std::invalid_argument("need at least 100 samples per band");
    if (options.window < 8) throw std::invalid_argument("correlation window must hold at least 8 samples");
    for (const auto& [lo, hi] : bands_kw) {
        if (lo < 0.0 || hi < lo) throw std::invalid_argument("malformed power band");
    }
    // overlap check (touching endpoints allowed)
    std::vector<std::pair<double, double>> sorted_bands = bands_kw;
    std::sort(sorted_bands.begin(), sorted_bands.end());
    for (std::size_t k = 1; k < sorted_bands.size(); ++k) {
        if (sorted_bands[k].first < sorted_bands[k - 1].second) {
            throw std::invalid_argument("power bands must be disjoint");
        }
    }

    std::vector<BandPccStats> out;
    out.reserve(bands_kw.size());
    for (std::size_t b = 0; b < bands_kw.size(); ++b) {
        const auto [lo, hi] = bands_kw[b];
        Rng rng(derive_seed(seed, kStreamMonteCarlo, b));
        std::size_t n_windows = std::max<std::size_t>(1, samples / options.window);

        std::vector<double> pccs;
        pccs.reserve(n_windows);
        std::size_t undefined = 0;
        std::vector<double> vi(options.window), vj(options.window);
        for (std::size_t w = 0; w < n_windows; ++w) {
            // each window: one load level per meter, jittered per sample
            const double level_i = rng.uniform(lo, hi);
            const double level_j = rng.uniform(lo, hi);
            for (std::size_t t = 0; t < options.window; ++t) {
                double pi = std::clamp(level_i * (1.0 + options.rel_jitter * rng.symmetric(1.0)), lo, hi);
                double pj = std::clamp(level_j * (1.0 + options.rel_jitter * rng.symmetric(1.0)), lo, hi);
                double vt = spec.v_nominal + rng.symmetric(spec.v_halfwidth);
                auto [a, c] = solve_secondary(vt, pi, pj, spec);
                vi[t] = a;
                vj[t] = c;
            }
            try {
                pccs.push_back(pcc(vi, vj));
            } catch (const undefined_correlation_error&) {
                ++undefined;
            } catch (const insufficient_data_error&) {
                ++undefined;
            }
        }
        if (pccs.empty()) {
            throw undefined_correlation_error(
                "every Monte Carlo window in band [" + csv::format_double(lo) + ", "
                + csv::format_double(hi) + "] kW was degenerate");
        }
        BandPccStats st;
        st.band_low_kw = lo;
        st.band_high_kw = hi;
        CompensatedSum acc;
        for (double r : pccs) acc.add(r);
        st.mean_pcc = acc.value() / static_cast<double>(pccs.size());
        std::sort(pccs.begin(), pccs.end());
        st.q25 = quantile_sorted(pccs, 0.25);
        st.median = quantile_sorted(pccs, 0.5);
        st.q75 = quantile_sorted(pccs, 0.75);
        st.windows = pccs.size() + undefined;
        st.undefined_windows = undefined;
        out.push_back(st);
    }
    return out;
}

void write_band_stats_csv(const std::vector<BandPccStats>& stats, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write '" + path + "'");
    out << "band_low_kw,band_high_kw,mean_pcc,q25,median,q75,windows,undefined_windows\n";
    for (const auto& s : stats) {
        out << csv::join_row({csv::format_double(s.band_low_kw), csv::format_double(s.band_high_kw),
                              csv::format_double(s.mean_pcc), csv::format_double(s.q25),
                              csv::format_double(s.median), csv::format_double(s.q75),
                              std::to_string(s.windows), std::to_string(s.undefined_windows)})
            << "\n";
    }
    if (!out) throw std::runtime_error("failed while writing '" + path + "'");
}

// ---------------------------------------------------------------------------
// feeder synthesis
// ---------------------------------------------------------------------------

void FeederSpec::validate() const {
    if (days <= 0 || dt_minutes <= 0) throw std::invalid_argument("feeder span must be positive");
    if ((24 * 60) % dt_minutes != 0) {
        throw std::invalid_argument("interval must divide a day evenly");
    }
    if (transformers.empty()) throw std::invalid_argument("feeder needs at least one transformer");
    std::size_t meters = 0;
    for (const auto& t : transformers) {
        if (t.id.empty()) throw std::invalid_argument("transformer id must be non-empty");
        if (t.source_r_ohm < 0.0 || t.branch_r_ohm < 0.0) {
            throw std::invalid_argument("transformer resistances must be non-negative");
        }
        meters += t.n_meters;
    }
    if (meters < 2) throw std::invalid_argument("feeder needs at least two meters");
    if (loads.idle_low_kw < 0.0 || loads.idle_high_kw < loads.idle_low_kw
        || loads.active_low_kw < 0.0 || loads.active_high_kw < loads.active_low_kw) {
        throw std::invalid_argument("load bands are malformed");
    }
    for (const auto& [a, b] : loads.idle_hours) {
        if (a < 0 || b > 24 || a >= b) throw std::invalid_argument("idle hours must be within a day");
    }
}

FeederSpec make_uniform_feeder(std::size_t n_transformers, std::size_t meters_each,
                               int days, int dt_minutes) {
    if (n_transformers == 0 || meters_each == 0) {
        throw std::invalid_argument("feeder dimensions must be positive");
    }
    FeederSpec spec;
    spec.start_epoch_s = epoch_from_civil(2023, 1, 1);
    spec.days = days;
    spec.dt_minutes = dt_minutes;
    spec.meter_noise_halfwidth_v = 0.02;

    int width = n_transformers >= 100 ? 3 : 2;
    for (std::size_t k = 0; k < n_transformers; ++k) {
        TransformerSpec t;
        char buf[32];
        std::snprintf(buf, sizeof(buf), "T%0*zu", width, k + 1);
        t.id = buf;
        t.phase = static_cast<Phase>(k % 3);
        t.n_meters = meters_each;
        spec.transformers.push_back(t);
    }
    return spec;
}

void make_high_load(FeederSpec& spec) {
    spec.loads.idle_hours = {{1, 5}};
    spec.loads.max_hour_offset = 0;
    spec.loads.active_low_kw = 6.0;
    spec.loads.active_high_kw = 16.0;
    spec.loads.level_hold_minutes = 60.0;
}

namespace {

struct MeterPlan {
    std::string id;
    std::size_t home_transformer;   // index into spec.transformers (physical origin)
    std::size_t moved_to;           // index, == home unless a move applies
    std::size_t move_at = SIZE_MAX; // grid slot; SIZE_MAX = never
    std::string recorded_id;        // transformer id in the records
};

bool in_idle_hours(const LoadModel& loads, int hour) {
    for (const auto& [a, b] : loads.idle_hours) {
        if (hour >= a && hour < b) return true;
    }
    return false;
}

} // namespace

SimulatedFeeder generate_feeder(const FeederSpec& spec, std::uint64_t seed) {
    spec.validate();
    const std::size_t T = spec.sample_count();
    const std::size_t n_transformers = spec.transformers.size();

    // --- meter plans -------------------------------------------------------
    std::vector<MeterPlan> plan;
    std::map<std::string, std::size_t> meter_index;
    {
        std::size_t counter = 0;
        std::size_t total = 0;
        for (const auto& t : spec.transformers) total += t.n_meters;
        int width = total >= 1000 ? 4 : 3;
        for (std::size_t ti = 0; ti < n_transformers; ++ti) {
            for (std::size_t k = 0; k < spec.transformers[ti].n_meters; ++k) {
                MeterPlan mp;
                char buf[32];
                std::snprintf(buf, sizeof(buf), "M%0*zu", width, ++counter);
                mp.id = buf;
                mp.home_transformer = ti;
                mp.moved_to = ti;
                mp.recorded_id = spec.transformers[ti].id;
                meter_index.emplace(mp.id, plan.size());
                plan.push_back(std::move(mp));
            }
        }
    }
    auto transformer_by_id = [&](const std::string& id) -> std::size_t {
        for (std::size_t ti = 0; ti < n_transformers; ++ti) {
            if (spec.transformers[ti].id == id) return ti;
        }
        throw std::invalid_argument("unknown transformer id '" + id + "' in injection list");
    };
    for (const auto& sw : spec.swaps) {
        auto it = meter_index.find(sw.meter_id);
        if (it == meter_index.end()) {
            throw std::invalid_argument("unknown meter id '" + sw.meter_id + "' in swap list");
        }
        transformer_by_id(sw.recorded_transformer_id); // existence check
        plan[it->second].recorded_id = sw.recorded_transformer_id;
    }
    for (const auto& mv : spec.moves) {
        auto it = meter_index.find(mv.meter_id);
        if (it == meter_index.end()) {
            throw std::invalid_argument("unknown meter id '" + mv.meter_id + "' in move list");
        }
        if (mv.at_index >= T) throw std::invalid_argument("move index beyond the simulated span");
        plan[it->second].moved_to = transformer_by_id(mv.to_transformer_id);
        plan[it->second].move_at = mv.at_index;
    }

    // --- phase voltage walks ------------------------------------------------
    // independent bounded random walks, one per phase, reflected at the band
    // edges so they wander instead of sticking
    std::vector<std::vector<double>> phase_v(3, std::vector<double>(T));
    for (int p = 0; p < 3; ++p) {
        Rng rng(derive_seed(seed, kStreamPhaseWalk, static_cast<std::uint64_t>(p)));
        const double lo = spec.v_nominal - spec.phase_walk_halfwidth_v;
        const double hi = spec.v_nominal + spec.phase_walk_halfwidth_v;
        double v = spec.v_nominal + rng.symmetric(spec.phase_walk_halfwidth_v);
        for (std::size_t t = 0; t < T; ++t) {
            phase_v[static_cast<std::size_t>(p)][t] = v;
            v += rng.symmetric(spec.phase_walk_step_v);
            if (v > hi) v = 2.0 * hi - v;
            if (v < lo) v = 2.0 * lo - v;
            v = std::clamp(v, lo, hi); // guards a step larger than the band
        }
    }

    // --- per-meter load series ----------------------------------------------
    const std::size_t n_meters = plan.size();
    std::vector<std::vector<double>> load(n_meters, std::vector<double>(T));
    const std::size_t hold_steps = std::max<std::size_t>(
        1, static_cast<std::size_t>(std::llround(spec.loads.level_hold_minutes
                                                 / static_cast<double>(spec.dt_minutes))));
    for (std::size_t m = 0; m < n_meters; ++m) {
        Rng rng(derive_seed(seed, kStreamLoad, m));
        const int offset_h = spec.loads.max_hour_offset == 0
            ? 0
            : static_cast<int>(rng.integer(static_cast<std::uint64_t>(2 * spec.loads.max_hour_offset + 1)))
                  - spec.loads.max_hour_offset;
        std::size_t next_redraw = rng.integer(hold_steps); // stagger meters
        double level = 0.0;
        bool level_is_idle = true;
        bool have_level = false;
        for (std::size_t t = 0; t < T; ++t) {
            std::int64_t local = spec.start_epoch_s + static_cast<std::int64_t>(t) * 60 * spec.dt_minutes
                                 + static_cast<std::int64_t>(offset_h) * 3600;
            int hour = static_cast<int>((local / 3600) % 24);
            if (hour < 0) hour += 24;
            bool idle = in_idle_hours(spec.loads, hour);
            // redraw on schedule or immediately when the occupancy state flips
            if (!have_level || t >= next_redraw || idle != level_is_idle) {
                level = idle ? rng.uniform(spec.loads.idle_low_kw, spec.loads.idle_high_kw)
                             : rng.uniform(spec.loads.active_low_kw, spec.loads.active_high_kw);
                level_is_idle = idle;
                have_level = true;
                next_redraw = t + hold_steps;
            }
            double p = level * (1.0 + spec.loads.rel_jitter * rng.symmetric(1.0));
            load[m][t] = std::max(p, 0.0);
        }
    }

    // --- circuit solve per transformer per step ------------------------------
    std::vector<std::vector<double>> volt(n_meters, std::vector<double>(T));
    std::vector<std::size_t> members; // reused buffer
    std::vector<double> p_buf, r_buf;
    for (std::size_t t = 0; t < T; ++t) {
        for (std::size_t ti = 0; ti < n_transformers; ++ti) {
            members.clear();
            p_buf.clear();
            r_buf.clear();
            for (std::size_t m = 0; m < n_meters; ++m) {
                std::size_t host = (plan[m].move_at != SIZE_MAX && t >= plan[m].move_at)
                    ? plan[m].moved_to
                    : plan[m].home_transformer;
                if (host == ti) {
                    members.push_back(m);
                    p_buf.push_back(load[m][t]);
                    r_buf.push_back(spec.transformers[ti].branch_r_ohm);
                }
            }
            if (members.empty()) continue;
            auto v = solve_node_voltages(phase_v[static_cast<std::size_t>(spec.transformers[ti].phase)][t],
                                         p_buf, spec.transformers[ti].source_r_ohm, r_buf);
            for (std::size_t k = 0; k < members.size(); ++k) volt[members[k]][t] = v[k];
        }
    }

    // --- assemble dataset + truth -------------------------------------------
    SimulatedFeeder out;
    out.dataset.name = spec.name;
    out.dataset.grid = TimeGrid{spec.start_epoch_s, spec.dt_minutes, T};
    out.dataset.meters.reserve(n_meters);
    for (std::size_t m = 0; m < n_meters; ++m) {
        Rng noise(derive_seed(seed, kStreamNoise, m));
        MeterSeries s;
        s.meter_id = plan[m].id;
        s.transformer_id = plan[m].recorded_id;
        const TransformerSpec& home = spec.transformers[plan[m].home_transformer];
        s.recorded_phase = home.phase;
        s.power_kw = load[m];
        s.voltage.resize(T);
        for (std::size_t t = 0; t < T; ++t) {
            double v = volt[m][t];
            if (spec.meter_noise_halfwidth_v > 0.0) v += noise.symmetric(spec.meter_noise_halfwidth_v);
            s.voltage[t] = v / spec.service_voltage;
        }
        out.dataset.meters.push_back(std::move(s));

        const TransformerSpec& actual = spec.transformers[plan[m].moved_to];
        out.truth.true_phase[plan[m].id] = actual.phase;
        out.truth.actual_transformer[plan[m].id] = actual.id;
        out.truth.recorded_transformer[plan[m].id] = plan[m].recorded_id;
        if (plan[m].recorded_id != actual.id) out.truth.mislabeled.push_back(plan[m].id);
    }
    out.dataset.validate();
    return out;
}

void inject_mislabels(FeederSpec& spec, std::size_t n_swaps, std::size_t n_moves,
                      std::uint64_t seed) {
    spec.validate();
    const std::size_t T = spec.sample_count();

    // reconstruct the generator's meter naming to pick victims by id
    std::vector<std::pair<std::string, std::size_t>> meters; // (id, transformer index)
    {
        std::size_t counter = 0;
        std::size_t total = 0;
        for (const auto& t : spec.transformers) total += t.n_meters;
        int width = total >= 1000 ? 4 : 3;
        for (std::size_t ti = 0; ti < spec.transformers.size(); ++ti) {
            for (std::size_t k = 0; k < spec.transformers[ti].n_meters; ++k) {
                char buf[32];
                std::snprintf(buf, sizeof(buf), "M%0*zu", width, ++counter);
                meters.emplace_back(buf, ti);
            }
        }
    }

    Rng rng(derive_seed(seed, kStreamInject));
    std::vector<bool> touched(meters.size(), false);

    auto pick_victim = [&]() -> std::size_t {
        for (int tries = 0; tries < 10000; ++tries) {
            std::size_t m = rng.integer(meters.size());
            if (touched[m]) continue;
            // donor must keep at least two recorded members for its own
            // within-group statistics to exist
            if (spec.transformers[meters[m].second].n_meters < 3) continue;
            return m;
        }
        throw std::runtime_error("could not find an eligible meter to mislabel");
    };
    auto pick_target = [&](std::size_t donor_ti) -> std::size_t {
        Phase ph = spec.transformers[donor_ti].phase;
        for (int tries = 0; tries < 10000; ++tries) {
            std::size_t ti = rng.integer(spec.transformers.size());
            if (ti == donor_ti) continue;
            if (spec.transformers[ti].phase != ph) continue; // same phase: hardest case
            return ti;
        }
        throw std::runtime_error("no same-phase target transformer available");
    };

    for (std::size_t k = 0; k < n_swaps; ++k) {
        std::size_t m = pick_victim();
        touched[m] = true;
        std::size_t target = pick_target(meters[m].second);
        spec.swaps.push_back({meters[m].first, spec.transformers[target].id});
    }
    for (std::size_t k = 0; k < n_moves; ++k) {
        std::size_t m = pick_victim();
        touched[m] = true;
        std::size_t target = pick_target(meters[m].second);
        double frac = rng.uniform(0.38, 0.46);
        spec.moves.push_back({meters[m].first, spec.transformers[target].id,
                              static_cast<std::size_t>(frac * static_cast<double>(T))});
    }
}

void write_ground_truth_csv(const GroundTruth& truth, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write '" + path + "'");
    out << "meter_id,true_phase,actual_transformer,recorded_transformer,mislabeled\n";
    for (const auto& [id, phase] : truth.true_phase) {
        bool bad = std::find(truth.mislabeled.begin(), truth.mislabeled.end(), id)
                   != truth.mislabeled.end();
        out << csv::join_row({id, std::string(1, phase_char(phase)),
                              truth.actual_transformer.at(id),
                              truth.recorded_transformer.at(id), bad ? "true" : "false"})
            << "\n";
    }
    if (!out) throw std::runtime_error("failed while writing '" + path + "'");
}

} // namespace mtopo
