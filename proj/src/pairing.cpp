#include "mtopo/pairing.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <mutex>
#include <sstream>
#include <unordered_map>

#include "mtopo/csv.hpp"
#include "mtopo/ingest.hpp"
#include "mtopo/parallel.hpp"

namespace mtopo {

void PairingConfig::validate() const {
    if (t2_weights[0] < 0.0 || t2_weights[1] < 0.0
        || std::abs(t2_weights[0] + t2_weights[1] - 1.0) > 1e-12) {
        throw std::invalid_argument("top-2 weights must be non-negative and sum to 1");
    }
    if (!(seasonal_percentile > 0.0 && seasonal_percentile <= 100.0)) {
        throw std::invalid_argument("seasonal percentile must lie in (0, 100]");
    }
    if (verify_low_power_kw < 0.0) throw std::invalid_argument("low-power threshold must be non-negative");
    if (verify_t_dur_hours < 0.0) throw std::invalid_argument("verification duration must be non-negative");
}

std::vector<TransformerGroup> transformer_groups(const FeederDataset& ds) {
    std::map<std::string, std::vector<std::size_t>> by_id;
    for (std::size_t i = 0; i < ds.meter_count(); ++i) {
        const auto& tid = ds.meters[i].transformer_id;
        if (!tid.empty()) by_id[tid].push_back(i);
    }
    std::vector<TransformerGroup> groups;
    groups.reserve(by_id.size());
    for (auto& [id, members] : by_id) {
        groups.push_back(TransformerGroup{id, std::move(members)});
    }
    return groups;
}

// ---------------------------------------------------------------------------
// scores
// ---------------------------------------------------------------------------

double apcc_within(std::size_t j, const TransformerGroup& own, const SymmetricMatrix& pcc) {
    CompensatedSum acc;
    std::size_t n = 0;
    for (std::size_t k : own.meter_indices) {
        if (k == j) continue;
        acc.add(pcc.at(j, k));
        ++n;
    }
    if (n == 0) {
        throw std::invalid_argument("meter has no peers under transformer '"
                                    + own.transformer_id + "'");
    }
    return acc.value() / static_cast<double>(n);
}

double apcc_cross(std::size_t j, const TransformerGroup& other, const SymmetricMatrix& pcc) {
    if (other.meter_indices.empty()) {
        throw std::invalid_argument("empty transformer group '" + other.transformer_id + "'");
    }
    CompensatedSum acc;
    for (std::size_t k : other.meter_indices) {
        if (k == j) throw std::invalid_argument("meter belongs to the cross group");
        acc.add(pcc.at(j, k));
    }
    return acc.value() / static_cast<double>(other.meter_indices.size());
}

namespace {

double top2(std::vector<double>& vals, const std::array<double, 2>& w) {
    if (vals.empty()) throw std::invalid_argument("no peers for a top-2 score");
    if (vals.size() == 1) return vals[0]; // single peer carries the full weight
    std::nth_element(vals.begin(), vals.begin() + 1, vals.end(), std::greater<double>());
    double first = std::max(vals[0], vals[1]);
    double second = std::min(vals[0], vals[1]);
    return w[0] * first + w[1] * second;
}

} // namespace

double t2pcc_within(std::size_t j, const TransformerGroup& own, const SymmetricMatrix& pcc,
                    const std::array<double, 2>& w) {
    std::vector<double> vals;
    for (std::size_t k : own.meter_indices) {
        if (k != j) vals.push_back(pcc.at(j, k));
    }
    return top2(vals, w);
}

double t2pcc_cross(std::size_t j, const TransformerGroup& other, const SymmetricMatrix& pcc,
                   const std::array<double, 2>& w) {
    std::vector<double> vals;
    for (std::size_t k : other.meter_indices) {
        if (k == j) throw std::invalid_argument("meter belongs to the cross group");
        vals.push_back(pcc.at(j, k));
    }
    return top2(vals, w);
}

// ---------------------------------------------------------------------------
// stage-1 flagging
// ---------------------------------------------------------------------------

namespace {

// shared skeleton of the two flag passes: `score` evaluates within/cross for
// the configured metric
template <typename WithinFn, typename CrossFn>
std::vector<FlagRecord> flag_pass(const FeederDataset& ds,
                                  const std::vector<TransformerGroup>& groups,
                                  FlagStage stage, WithinFn within_of, CrossFn cross_of) {
    std::vector<FlagRecord> flags;
    for (std::size_t gi = 0; gi < groups.size(); ++gi) {
        const auto& own = groups[gi];
        if (own.meter_indices.size() < 2) continue; // singleton: unverifiable, reported upstream
        for (std::size_t j : own.meter_indices) {
            double within = within_of(j, own);
            double best = -std::numeric_limits<double>::infinity();
            std::size_t best_g = SIZE_MAX;
            for (std::size_t gr = 0; gr < groups.size(); ++gr) {
                if (gr == gi || groups[gr].meter_indices.empty()) continue;
                double cross = cross_of(j, groups[gr]);
                if (cross > best) { // strict: ties keep the smaller transformer id
                    best = cross;
                    best_g = gr;
                }
            }
            if (best_g != SIZE_MAX && within < best) {
                FlagRecord f;
                f.meter_id = ds.meters[j].meter_id;
                f.original_transformer = own.transformer_id;
                f.identified_transformer = groups[best_g].transformer_id;
                f.stage = stage;
                f.within = within;
                f.best_cross = best;
                flags.push_back(std::move(f));
            }
        }
    }
    return flags;
}

} // namespace

std::vector<FlagRecord> flag_by_apcc(const FeederDataset& ds,
                                     const std::vector<TransformerGroup>& groups,
                                     const SymmetricMatrix& pcc) {
    return flag_pass(ds, groups, FlagStage::Apcc,
                     [&](std::size_t j, const TransformerGroup& g) { return apcc_within(j, g, pcc); },
                     [&](std::size_t j, const TransformerGroup& g) { return apcc_cross(j, g, pcc); });
}

std::vector<FlagRecord> flag_by_t2pcc(const FeederDataset& ds,
                                      const std::vector<TransformerGroup>& groups,
                                      const SymmetricMatrix& pcc, const std::array<double, 2>& w) {
    return flag_pass(ds, groups, FlagStage::T2pcc,
                     [&](std::size_t j, const TransformerGroup& g) { return t2pcc_within(j, g, pcc, w); },
                     [&](std::size_t j, const TransformerGroup& g) { return t2pcc_cross(j, g, pcc, w); });
}

// ---------------------------------------------------------------------------
// seasonal filter
// ---------------------------------------------------------------------------

std::vector<TimeWindow> calendar_quarter_windows(const TimeGrid& grid) {
    std::vector<TimeWindow> windows;
    if (grid.count == 0) return windows;
    auto quarter_of = [&](std::size_t idx) {
        int y, mo, d, h, mi, s;
        civil_from_epoch(grid.epoch_at(idx), y, mo, d, h, mi, s);
        return std::make_pair(y, (mo - 1) / 3);
    };
    std::size_t begin = 0;
    auto current = quarter_of(0);
    for (std::size_t i = 1; i <= grid.count; ++i) {
        auto q = i < grid.count ? quarter_of(i) : std::make_pair(-1, -1);
        if (i == grid.count || q != current) {
            std::ostringstream label;
            label << current.first << "Q" << (current.second + 1);
            windows.push_back(TimeWindow{begin, i, label.str()});
            begin = i;
            current = q;
        }
    }
    return windows;
}

namespace {

double percentile_linear(std::vector<double> values, double p) {
    if (values.empty()) throw std::invalid_argument("percentile of an empty set");
    std::sort(values.begin(), values.end());
    if (values.size() == 1) return values[0];
    double pos = (p / 100.0) * static_cast<double>(values.size() - 1);
    auto lo = static_cast<std::size_t>(std::floor(pos));
    auto hi = static_cast<std::size_t>(std::ceil(pos));
    double frac = pos - static_cast<double>(lo);
    return values[lo] + frac * (values[hi] - values[lo]);
}

} // namespace

std::vector<std::string> seasonal_check(const FeederDataset& ds,
                                        const std::vector<TransformerGroup>& groups,
                                        std::vector<FlagRecord>& flags,
                                        const PairingConfig& config, unsigned jobs) {
    config.validate();
    std::vector<std::string> warnings;
    if (flags.empty()) return warnings;

    std::vector<TimeWindow> seasons =
        config.seasons.empty() ? calendar_quarter_windows(ds.grid) : config.seasons;
    for (const auto& w : seasons) {
        if (w.begin >= w.end || w.end > ds.grid.count) {
            throw std::invalid_argument("season window '" + w.label + "' is out of range");
        }
    }

    // per (group, season) within-group average PCC; NaN marks "not computable"
    const double nan = std::numeric_limits<double>::quiet_NaN();
    std::vector<std::vector<double>> apcc(groups.size(),
                                          std::vector<double>(seasons.size(), nan));
    std::vector<std::string> warn_slots(groups.size() * seasons.size());

    parallel_for(groups.size() * seasons.size(), jobs, [&](std::size_t cell) {
        const std::size_t gi = cell / seasons.size();
        const std::size_t si = cell % seasons.size();
        const auto& g = groups[gi];
        if (g.meter_indices.size() < 2) return;
        const auto& w = seasons[si];
        CompensatedSum acc;
        std::size_t pairs = 0;
        for (std::size_t a = 0; a < g.meter_indices.size(); ++a) {
            for (std::size_t b = a + 1; b < g.meter_indices.size(); ++b) {
                const auto& va = ds.meters[g.meter_indices[a]].voltage;
                const auto& vb = ds.meters[g.meter_indices[b]].voltage;
                try {
                    acc.add(pcc(std::span<const double>(va).subspan(w.begin, w.end - w.begin),
                                std::span<const double>(vb).subspan(w.begin, w.end - w.begin)));
                    ++pairs;
                } catch (const insufficient_data_error&) {
                    // a pair without data contributes no evidence either way
                } catch (const undefined_correlation_error&) {
                }
            }
        }
        if (pairs == 0) {
            warn_slots[cell] = "season " + w.label + " skipped for transformer '"
                               + g.transformer_id + "': no computable meter pair";
            return;
        }
        apcc[gi][si] = acc.value() / static_cast<double>(pairs);
    });
    for (auto& w : warn_slots) {
        if (!w.empty()) warnings.push_back(std::move(w));
    }

    // threshold(s) from the pooled distribution
    std::map<std::string, std::size_t> group_of_id;
    for (std::size_t gi = 0; gi < groups.size(); ++gi) group_of_id[groups[gi].transformer_id] = gi;

    double feeder_eps = nan;
    if (!config.seasonal_per_transformer) {
        std::vector<double> pool;
        for (const auto& row : apcc) {
            for (double v : row) {
                if (!std::isnan(v)) pool.push_back(v);
            }
        }
        if (pool.empty()) {
            warnings.push_back("seasonal check skipped: no seasonal APCC was computable");
            return warnings;
        }
        feeder_eps = percentile_linear(pool, config.seasonal_percentile);
    }

    for (auto& f : flags) {
        auto it = group_of_id.find(f.original_transformer);
        if (it == group_of_id.end()) continue; // defensive; flags come from these groups
        const auto& row = apcc[it->second];
        std::vector<double> own;
        for (double v : row) {
            if (!std::isnan(v)) own.push_back(v);
        }
        if (own.empty()) {
            // no seasonal evidence at all: nothing shows the transformer
            // stable, so the flag stays
            f.seasonal_retained = true;
            continue;
        }
        // Note: the per-transformer variant is never selective. Its threshold
        // is a percentile of the transformer's own seasonal values, and the
        // smallest of those always sits at or below any percentile of them,
        // so the "dips in at least one season" test is satisfied by
        // construction. It exists as the literal alternative reading of the
        // threshold scope; the pooled default is the discriminating one.
        double eps = config.seasonal_per_transformer
            ? percentile_linear(own, config.seasonal_percentile)
            : feeder_eps;
        f.seasonal_retained = std::any_of(own.begin(), own.end(),
                                          [&](double v) { return v <= eps; });
    }
    return warnings;
}

// ---------------------------------------------------------------------------
// stage-2 verification
// ---------------------------------------------------------------------------

void stage2_verify(const FeederDataset& ds, std::vector<FlagRecord>& flags,
                   const PairingConfig& config, unsigned jobs) {
    config.validate();
    if (flags.empty()) return;
    const auto groups = transformer_groups(ds);
    std::map<std::string, const TransformerGroup*> by_id;
    for (const auto& g : groups) by_id[g.transformer_id] = &g;

    const PowerBand band{config.verify_low_power_kw,
                         std::numeric_limits<double>::infinity(),
                         config.verify_t_dur_hours};
    const std::size_t need = min_run_samples(band.t_dur_hours, ds.grid.dt_minutes);

    // per-meter check: does this meter ever hold the band long enough on its own?
    auto has_high_power_run = [&](const MeterSeries& m) {
        std::size_t len = 0;
        for (std::size_t t = 0; t < m.size(); ++t) {
            bool ok = !is_missing(m.power_kw[t]) && !is_missing(m.voltage[t])
                      && band.contains(m.power_kw[t]);
            len = ok ? len + 1 : 0;
            if (len >= need) return true;
        }
        return false;
    };

    // segment-PCC cache: flags referencing the same groups share pairs
    std::unordered_map<std::uint64_t, double> cache;
    std::mutex cache_mutex;
    auto seg_pcc = [&](std::size_t a, std::size_t b) {
        const std::uint64_t key = (static_cast<std::uint64_t>(std::min(a, b)) << 32)
                                  | static_cast<std::uint64_t>(std::max(a, b));
        {
            std::lock_guard<std::mutex> lock(cache_mutex);
            auto it = cache.find(key);
            if (it != cache.end()) return it->second;
        }
        double r;
        try {
            auto segs = select_segments(ds.meters[a], ds.meters[b], ds.grid, band,
                                        config.segmentation);
            r = pcc_over_segments(ds.meters[a].voltage, ds.meters[b].voltage, segs);
        } catch (const undefined_correlation_error&) {
            r = 0.0;
        } catch (const insufficient_data_error&) {
            r = 0.0;
        }
        std::lock_guard<std::mutex> lock(cache_mutex);
        cache.emplace(key, r);
        return r;
    };

    parallel_for(flags.size(), jobs, [&](std::size_t fi) {
        FlagRecord& f = flags[fi];
        if (!f.seasonal_retained) return; // already excluded upstream
        const std::size_t j = ds.index_of(f.meter_id);

        if (!has_high_power_run(ds.meters[j])) {
            f.low_consumption = true;
            f.stage2_retained = false;
            return;
        }

        auto own_it = by_id.find(f.original_transformer);
        auto cross_it = by_id.find(f.identified_transformer);
        if (own_it == by_id.end() || cross_it == by_id.end()) return; // defensive
        const TransformerGroup& own = *own_it->second;
        const TransformerGroup& other = *cross_it->second;

        std::vector<double> within_vals, cross_vals;
        for (std::size_t k : own.meter_indices) {
            if (k != j) within_vals.push_back(seg_pcc(j, k));
        }
        for (std::size_t k : other.meter_indices) cross_vals.push_back(seg_pcc(j, k));
        if (within_vals.empty() || cross_vals.empty()) return; // nothing to compare

        auto mean = [](const std::vector<double>& v) {
            CompensatedSum acc;
            for (double x : v) acc.add(x);
            return acc.value() / static_cast<double>(v.size());
        };
        double apcc_w = mean(within_vals);
        double apcc_c = mean(cross_vals);
        std::vector<double> wv = within_vals, cv = cross_vals;
        double t2_w = top2(wv, config.t2_weights);
        double t2_c = top2(cv, config.t2_weights);

        // the flag falls when the recorded group wins either comparison on
        // high-power evidence
        if (apcc_w > apcc_c || t2_w > t2_c) f.stage2_retained = false;
    });
}

// ---------------------------------------------------------------------------
// connectivity map
// ---------------------------------------------------------------------------

std::vector<ConnectivityEdge> connectivity_map(const FeederDataset& ds,
                                               const TransformerGroup& group,
                                               const SymmetricMatrix& pcc) {
    if (group.meter_indices.size() < 2) {
        throw std::invalid_argument("connectivity map needs at least two meters");
    }
    // seed: highest mean voltage; ties toward the smaller meter id
    std::size_t seed = group.meter_indices.front();
    double best_mean = -std::numeric_limits<double>::infinity();
    for (std::size_t k : group.meter_indices) {
        auto m = finite_mean(ds.meters[k].voltage);
        double v = m ? *m : -std::numeric_limits<double>::infinity();
        if (v > best_mean
            || (v == best_mean && ds.meters[k].meter_id < ds.meters[seed].meter_id)) {
            best_mean = v;
            seed = k;
        }
    }

    std::vector<std::size_t> attached{seed};
    std::vector<std::size_t> remaining;
    for (std::size_t k : group.meter_indices) {
        if (k != seed) remaining.push_back(k);
    }

    std::vector<ConnectivityEdge> edges;
    while (!remaining.empty()) {
        double best = -std::numeric_limits<double>::infinity();
        std::size_t best_new = SIZE_MAX, best_old = SIZE_MAX;
        for (std::size_t cand : remaining) {
            for (std::size_t old : attached) {
                double r = pcc.at(cand, old);
                bool better = r > best;
                if (r == best && best_new != SIZE_MAX) {
                    // tie rule: smaller candidate id, then smaller attached id
                    const auto& cid = ds.meters[cand].meter_id;
                    const auto& nid = ds.meters[best_new].meter_id;
                    better = cid < nid
                             || (cid == nid && ds.meters[old].meter_id < ds.meters[best_old].meter_id);
                }
                if (better) {
                    best = r;
                    best_new = cand;
                    best_old = old;
                }
            }
        }
        edges.push_back(ConnectivityEdge{group.transformer_id, ds.meters[best_old].meter_id,
                                         ds.meters[best_new].meter_id, best});
        attached.push_back(best_new);
        remaining.erase(std::find(remaining.begin(), remaining.end(), best_new));
    }
    return edges;
}

// ---------------------------------------------------------------------------
// pipeline
// ---------------------------------------------------------------------------

PairingResult run_pairing(const FeederDataset& ds, const PairingConfig& config, unsigned jobs) {
    config.validate();
    ds.validate();

    PairingResult res;
    for (const auto& m : ds.meters) {
        if (m.transformer_id.empty()) res.unassigned_meters.push_back(m.meter_id);
    }
    auto groups = transformer_groups(ds);
    if (groups.empty()) {
        throw std::runtime_error("no transformer ids in the dataset: pairing needs recorded groups");
    }
    for (const auto& g : groups) {
        if (g.meter_indices.size() < 2) res.skipped_singletons.push_back(g.transformer_id);
    }

    auto mat = pcc_matrix(ds, std::nullopt, {}, jobs);
    for (const auto& w : mat.warnings) {
        res.warnings.push_back("correlation undefined for pair ("
                               + ds.meters[w.i].meter_id + ", " + ds.meters[w.j].meter_id
                               + "): " + w.reason + "; recorded as 0");
    }

    res.flags = flag_by_apcc(ds, groups, mat.matrix);
    auto t2 = flag_by_t2pcc(ds, groups, mat.matrix, config.t2_weights);
    res.flags.insert(res.flags.end(), t2.begin(), t2.end());
    res.stage1_count = res.flags.size();

    auto season_warnings = seasonal_check(ds, groups, res.flags, config, jobs);
    res.warnings.insert(res.warnings.end(), season_warnings.begin(), season_warnings.end());
    for (const auto& f : res.flags) {
        if (f.seasonal_retained) ++res.seasonal_retained_count;
    }

    stage2_verify(ds, res.flags, config, jobs);
    for (const auto& f : res.flags) {
        if (res.is_final(f)) ++res.final_count;
    }

    for (const auto& g : groups) {
        if (g.meter_indices.size() < 2) continue;
        auto edges = connectivity_map(ds, g, mat.matrix);
        res.connectivity.insert(res.connectivity.end(), edges.begin(), edges.end());
    }
    return res;
}

void write_flag_report_csv(const PairingResult& result, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write '" + path + "'");
    out << "meter_id,original_T,identified_T,stage,apcc_within,apcc_cross,"
           "seasonal_retained,stage2_retained\n";
    for (const auto& f : result.flags) {
        // The report is the actionable deliverable: only flags that survived
        // every filter appear. Shed candidates stay in PairingResult::flags
        // for callers that want the audit trail.
        if (!result.is_final(f)) continue;
        out << csv::join_row({f.meter_id, f.original_transformer, f.identified_transformer,
                              f.stage == FlagStage::Apcc ? "apcc" : "t2pcc",
                              csv::format_double(f.within), csv::format_double(f.best_cross),
                              f.seasonal_retained ? "true" : "false",
                              f.stage2_retained ? "true" : "false"})
            << "\n";
    }
    if (!out) throw std::runtime_error("failed while writing '" + path + "'");
}

void write_connectivity_csv(const std::vector<ConnectivityEdge>& edges, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write '" + path + "'");
    out << "transformer_id,from_meter,to_meter,pcc\n";
    for (const auto& e : edges) {
        out << csv::join_row({e.transformer_id, e.from_meter, e.to_meter,
                              csv::format_double(e.pcc)})
            << "\n";
    }
    if (!out) throw std::runtime_error("failed while writing '" + path + "'");
}

} // namespace mtopo
