#include <CLI11.hpp>
#include <json.hpp>

#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <initializer_list>
#include <iostream>
#include <limits>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "mtopo/clustering.hpp"
#include "mtopo/correlation.hpp"
#include "mtopo/ensemble.hpp"
#include "mtopo/ingest.hpp"
#include "mtopo/pairing.hpp"
#include "mtopo/segmentation.hpp"
#include "mtopo/simulator.hpp"
#include "mtopo/types.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace mtopo;

namespace {

constexpr const char* k_version = "0.1.0";

struct RunOptions {
    std::string config_path;
    std::string input;
    std::string out_dir = "mtopo-out";
    std::uint64_t seed = 1;
    unsigned jobs = 0;
};

[[noreturn]] void fail(const std::string& msg) {
    throw std::runtime_error(msg);
}

// Strict key checking so a typo in a config file fails loudly instead of
// silently running on defaults.
void check_keys(const json& j, std::initializer_list<const char*> allowed, const std::string& where) {
    if (j.is_null()) return;
    if (!j.is_object()) fail(where + " must be a JSON object");
    for (auto it = j.begin(); it != j.end(); ++it) {
        bool known = false;
        for (const char* k : allowed) {
            if (it.key() == k) {
                known = true;
                break;
            }
        }
        if (!known) fail("unknown key '" + it.key() + "' in " + where);
    }
}

json load_config(const std::string& path) {
    if (path.empty()) return json::object();
    std::ifstream in(path);
    if (!in) fail("cannot open config file '" + path + "'");
    json j = json::parse(in);
    if (!j.is_object()) fail("config root must be a JSON object");
    return j;
}

// ---------------------------------------------------------------------------
// config section parsers (each echoes back what was actually used)
// ---------------------------------------------------------------------------

PowerBand band_from_json(const json& j, bool strict_keys = true) {
    if (strict_keys) check_keys(j, {"p_low_kw", "p_high_kw", "t_dur_hours"}, "band");
    PowerBand b;
    if (j.is_object()) {
        if (j.contains("p_low_kw")) b.p_low = j.at("p_low_kw").get<double>();
        if (j.contains("p_high_kw")) {
            b.p_high = j.at("p_high_kw").is_null() ? std::numeric_limits<double>::infinity()
                                                   : j.at("p_high_kw").get<double>();
        }
        if (j.contains("t_dur_hours")) b.t_dur_hours = j.at("t_dur_hours").get<double>();
    }
    b.validate();
    return b;
}

json band_to_json(const PowerBand& b) {
    json j;
    j["p_low_kw"] = b.p_low;
    if (std::isinf(b.p_high)) {
        j["p_high_kw"] = nullptr;
    } else {
        j["p_high_kw"] = b.p_high;
    }
    j["t_dur_hours"] = b.t_dur_hours;
    return j;
}

SegmentationOptions segmentation_from_json(const json& j) {
    check_keys(j, {"fallback", "duration"}, "segmentation");
    SegmentationOptions o;
    if (j.is_object() && j.contains("fallback")) {
        const std::string s = j.at("fallback").get<std::string>();
        if (s == "fewer_than_two_runs") {
            o.fallback = FallbackRule::FewerThanTwoRuns;
        } else if (s == "no_runs") {
            o.fallback = FallbackRule::NoRuns;
        } else {
            fail("segmentation.fallback must be 'fewer_than_two_runs' or 'no_runs'");
        }
    }
    if (j.is_object() && j.contains("duration")) {
        const std::string s = j.at("duration").get<std::string>();
        if (s == "joint") {
            o.duration = DurationSemantics::JointMask;
        } else if (s == "per_meter") {
            o.duration = DurationSemantics::PerMeter;
        } else {
            fail("segmentation.duration must be 'joint' or 'per_meter'");
        }
    }
    return o;
}

json segmentation_to_json(const SegmentationOptions& o) {
    json j;
    j["fallback"] = o.fallback == FallbackRule::FewerThanTwoRuns ? "fewer_than_two_runs" : "no_runs";
    j["duration"] = o.duration == DurationSemantics::JointMask ? "joint" : "per_meter";
    return j;
}

EnsembleSpec ensemble_from_json(const json& j, Linkage linkage) {
    check_keys(j, {"decay", "members"}, "ensemble");
    EnsembleSpec spec;
    spec.linkage = linkage;
    if (j.is_object() && j.contains("decay")) spec.decay = j.at("decay").get<double>();
    if (j.is_object() && j.contains("members")) {
        const json& members = j.at("members");
        if (!members.is_array()) fail("ensemble.members must be an array");
        for (const json& m : members) {
            check_keys(m, {"p_low_kw", "p_high_kw", "t_dur_hours", "n_clusters"}, "ensemble member");
            EnsembleMember em;
            em.band = band_from_json(m, false);
            if (m.contains("n_clusters")) em.n_clusters = m.at("n_clusters").get<std::size_t>();
            spec.members.push_back(em);
        }
    }
    if (spec.members.empty()) spec.members = default_ensemble_members();
    spec.validate();
    return spec;
}

json ensemble_to_json(const EnsembleSpec& s) {
    json j;
    j["decay"] = s.decay;
    json members = json::array();
    for (const EnsembleMember& m : s.members) {
        json mj = band_to_json(m.band);
        mj["n_clusters"] = m.n_clusters;
        members.push_back(mj);
    }
    j["members"] = members;
    return j;
}

PairingConfig pairing_from_json(const json& j) {
    check_keys(j,
               {"t2_weights", "seasonal_percentile", "seasonal_per_transformer", "verify_low_power_kw",
                "verify_t_dur_hours", "seasons", "segmentation"},
               "pairing");
    PairingConfig pc;
    if (!j.is_object()) {
        pc.validate();
        return pc;
    }
    if (j.contains("t2_weights")) {
        const json& w = j.at("t2_weights");
        if (!w.is_array() || w.size() != 2) fail("pairing.t2_weights must be an array of two numbers");
        pc.t2_weights = {w[0].get<double>(), w[1].get<double>()};
    }
    if (j.contains("seasonal_percentile")) pc.seasonal_percentile = j.at("seasonal_percentile").get<double>();
    if (j.contains("seasonal_per_transformer"))
        pc.seasonal_per_transformer = j.at("seasonal_per_transformer").get<bool>();
    if (j.contains("verify_low_power_kw")) pc.verify_low_power_kw = j.at("verify_low_power_kw").get<double>();
    if (j.contains("verify_t_dur_hours")) pc.verify_t_dur_hours = j.at("verify_t_dur_hours").get<double>();
    if (j.contains("seasons")) {
        for (const json& sj : j.at("seasons")) {
            check_keys(sj, {"begin", "end", "label"}, "pairing season");
            TimeWindow w;
            w.begin = sj.at("begin").get<std::size_t>();
            w.end = sj.at("end").get<std::size_t>();
            w.label = sj.value("label", "");
            pc.seasons.push_back(w);
        }
    }
    if (j.contains("segmentation")) pc.segmentation = segmentation_from_json(j.at("segmentation"));
    pc.validate();
    return pc;
}

json pairing_to_json(const PairingConfig& pc) {
    json j;
    j["t2_weights"] = {pc.t2_weights[0], pc.t2_weights[1]};
    j["seasonal_percentile"] = pc.seasonal_percentile;
    j["seasonal_per_transformer"] = pc.seasonal_per_transformer;
    j["verify_low_power_kw"] = pc.verify_low_power_kw;
    j["verify_t_dur_hours"] = pc.verify_t_dur_hours;
    j["segmentation"] = segmentation_to_json(pc.segmentation);
    if (!pc.seasons.empty()) {
        json seasons = json::array();
        for (const TimeWindow& w : pc.seasons) {
            seasons.push_back({{"begin", w.begin}, {"end", w.end}, {"label", w.label}});
        }
        j["seasons"] = seasons;
    }
    return j;
}

// ---------------------------------------------------------------------------
// staged artifact writing: everything goes to temp names first and is renamed
// into place only after the whole command succeeds, so a failed run leaves no
// partial output files behind
// ---------------------------------------------------------------------------

class ArtifactSink {
  public:
    explicit ArtifactSink(const std::string& out_dir) : dir_(out_dir) {
        fs::create_directories(dir_);
    }

    ArtifactSink(const ArtifactSink&) = delete;
    ArtifactSink& operator=(const ArtifactSink&) = delete;

    ~ArtifactSink() {
        // anything still staged belongs to a failed run
        for (const Staged& s : staged_) {
            std::error_code ec;
            fs::remove(s.temp, ec);
        }
    }

    std::string stage(const std::string& name) {
        staged_.push_back({dir_ / (name + ".tmp"), dir_ / name, name});
        return staged_.back().temp.string();
    }

    std::vector<std::string> names() const {
        std::vector<std::string> out;
        out.reserve(staged_.size());
        for (const Staged& s : staged_) out.push_back(s.name);
        return out;
    }

    void commit() {
        for (const Staged& s : staged_) fs::rename(s.temp, s.final_path);
        staged_.clear();
    }

  private:
    struct Staged {
        fs::path temp;
        fs::path final_path;
        std::string name;
    };
    fs::path dir_;
    std::vector<Staged> staged_;
};

class StageTimer {
  public:
    StageTimer() : start_(Clock::now()), last_(start_) {}

    void lap(const std::string& name) {
        auto now = Clock::now();
        laps_[name] = ms_between(last_, now);
        last_ = now;
    }

    json finish() const {
        json out = laps_;
        out["total"] = ms_between(start_, Clock::now());
        return out;
    }

  private:
    using Clock = std::chrono::steady_clock;

    static std::int64_t ms_between(Clock::time_point a, Clock::time_point b) {
        return std::chrono::duration_cast<std::chrono::milliseconds>(b - a).count();
    }

    Clock::time_point start_;
    Clock::time_point last_;
    json laps_ = json::object();
};

// Note: the manifest carries wall-clock timings, so it is the one artifact
// exempt from the byte-identical rerun guarantee. The data artifacts are
// exact.
void write_manifest(const std::string& path, const std::string& command, const RunOptions& opts,
                    const json& effective_config, const json& summary, const json& timings,
                    const std::vector<std::string>& artifacts) {
    json m;
    m["tool"] = "mtopo";
    m["version"] = k_version;
    m["command"] = command;
    m["seed"] = opts.seed;
    m["jobs"] = opts.jobs;
    if (!opts.input.empty()) m["input"] = opts.input;
    m["out_dir"] = opts.out_dir;
    m["config"] = effective_config;
    m["summary"] = summary;
    m["timings_ms"] = timings;
    m["artifacts"] = artifacts;
    std::ofstream out(path);
    if (!out) fail("cannot write '" + path + "'");
    out << m.dump(2) << "\n";
    out.flush();
    if (!out) fail("failed writing '" + path + "'");
}

void write_text_file(const std::string& path, const std::string& text) {
    std::ofstream out(path);
    if (!out) fail("cannot write '" + path + "'");
    out << text;
    out.flush();
    if (!out) fail("failed writing '" + path + "'");
}

// ---------------------------------------------------------------------------
// shared input pipeline: parse, per-unit normalize, drop gap-ridden meters
// ---------------------------------------------------------------------------

struct LoadedDataset {
    FeederDataset ds;
    std::vector<std::string> dropped;
};

LoadedDataset load_dataset(const RunOptions& opts, const json& cfg, json& effective) {
    if (opts.input.empty()) fail("--input is required for this command");
    FeederDataset raw = parse_ami_csv(opts.input);
    const double service = cfg.value("service_voltage", 120.0);
    const double max_missing = cfg.value("filter_missing_threshold", 0.8);
    FeederDataset normalized = normalize_voltage(raw, {}, service);
    FilterResult filtered = filter_missing(normalized, max_missing);
    effective["service_voltage"] = service;
    effective["filter_missing_threshold"] = max_missing;
    LoadedDataset out;
    out.ds = std::move(filtered.dataset);
    for (const RemovalRecord& r : filtered.report) {
        if (r.dropped) out.dropped.push_back(r.meter_id);
    }
    out.ds.validate();
    return out;
}

std::map<std::string, Phase> recorded_phases(const FeederDataset& ds) {
    std::map<std::string, Phase> out;
    for (const MeterSeries& m : ds.meters) {
        if (m.recorded_phase) out[m.meter_id] = *m.recorded_phase;
    }
    return out;
}

std::vector<std::string> meter_id_list(const FeederDataset& ds) {
    std::vector<std::string> ids;
    ids.reserve(ds.meter_count());
    for (const MeterSeries& m : ds.meters) ids.push_back(m.meter_id);
    return ids;
}

void write_labels_csv(const std::map<std::string, Phase>& predicted,
                      const std::map<std::string, Phase>& recorded, const std::string& path) {
    std::ofstream out(path);
    if (!out) fail("cannot write '" + path + "'");
    out << "meter_id,recorded_phase,predicted_phase,agrees\n";
    for (const auto& [id, p] : predicted) {
        auto it = recorded.find(id);
        out << id << ',';
        if (it != recorded.end()) out << phase_char(it->second);
        out << ',' << phase_char(p) << ','
            << (it != recorded.end() && it->second == p ? "true" : "false") << "\n";
    }
    out.flush();
    if (!out) fail("failed writing '" + path + "'");
}

void write_ensemble_partitions_csv(const std::vector<Partition>& parts,
                                   const std::vector<std::string>& ids, const std::string& path) {
    std::ofstream out(path);
    if (!out) fail("cannot write '" + path + "'");
    out << "meter_id";
    for (std::size_t k = 0; k < parts.size(); ++k) out << ",member_" << k;
    out << "\n";
    for (const std::string& id : ids) {
        out << id;
        for (const Partition& p : parts) out << ',' << p.assignment.at(id);
        out << "\n";
    }
    out.flush();
    if (!out) fail("failed writing '" + path + "'");
}

// ---------------------------------------------------------------------------
// commands
// ---------------------------------------------------------------------------

int run_simulate(const RunOptions& opts, const json& cfg) {
    const json sim = cfg.value("simulate", json::object());
    check_keys(sim,
               {"name", "transformers", "meters_each", "days", "dt_minutes", "high_load", "swaps",
                "moves", "meter_noise_halfwidth_v"},
               "simulate");
    const std::size_t transformers = sim.value("transformers", std::size_t{20});
    const std::size_t meters_each = sim.value("meters_each", std::size_t{3});
    const int days = sim.value("days", 30);
    const int dt_minutes = sim.value("dt_minutes", 15);
    const bool high_load = sim.value("high_load", false);
    const std::size_t swaps = sim.value("swaps", std::size_t{0});
    const std::size_t moves = sim.value("moves", std::size_t{0});

    FeederSpec spec = make_uniform_feeder(transformers, meters_each, days, dt_minutes);
    if (high_load) make_high_load(spec);
    if (sim.contains("name")) spec.name = sim.at("name").get<std::string>();
    if (sim.contains("meter_noise_halfwidth_v"))
        spec.meter_noise_halfwidth_v = sim.at("meter_noise_halfwidth_v").get<double>();
    if (swaps + moves > 0) inject_mislabels(spec, swaps, moves, opts.seed);
    spec.validate();

    StageTimer timer;
    SimulatedFeeder feeder = generate_feeder(spec, opts.seed);
    timer.lap("generate");

    ArtifactSink sink(opts.out_dir);
    write_ami_csv(feeder.dataset, sink.stage("dataset.csv"));
    write_ground_truth_csv(feeder.truth, sink.stage("ground_truth.csv"));
    timer.lap("write");

    json effective;
    effective["simulate"] = {{"name", spec.name},
                             {"transformers", transformers},
                             {"meters_each", meters_each},
                             {"days", days},
                             {"dt_minutes", dt_minutes},
                             {"high_load", high_load},
                             {"swaps", swaps},
                             {"moves", moves},
                             {"meter_noise_halfwidth_v", spec.meter_noise_halfwidth_v}};
    json summary;
    summary["meters"] = feeder.dataset.meter_count();
    summary["samples"] = feeder.dataset.grid.count;
    summary["mislabeled"] = feeder.truth.mislabeled;

    const std::string manifest_path = sink.stage("run_manifest.json");
    write_manifest(manifest_path, "simulate", opts, effective, summary, timer.finish(), sink.names());
    sink.commit();
    return 0;
}

int run_phase_id(const RunOptions& opts, const json& cfg) {
    json effective;
    StageTimer timer;
    LoadedDataset loaded = load_dataset(opts, cfg, effective);
    const FeederDataset& ds = loaded.ds;
    timer.lap("load");

    const Linkage linkage = parse_linkage(cfg.value("linkage", "average"));
    const bool labeled =
        cfg.contains("labeled") && !cfg.at("labeled").is_null() ? cfg.at("labeled").get<bool>()
                                                                : ds.any_recorded_phase();
    const std::size_t n_clusters = cfg.contains("n_clusters") && !cfg.at("n_clusters").is_null()
                                       ? cfg.at("n_clusters").get<std::size_t>()
                                       : default_cluster_count(ds.meter_count());
    effective["linkage"] = linkage_name(linkage);
    effective["labeled"] = labeled;
    effective["n_clusters"] = n_clusters;

    ArtifactSink sink(opts.out_dir);
    json summary;

    if (labeled) {
        const std::map<std::string, Phase> recorded = recorded_phases(ds);
        if (recorded.empty()) fail("labeled mode requires recorded phase labels in the input");
        const PowerBand band = band_from_json(cfg.value("band", json::object()));
        const SegmentationOptions seg = segmentation_from_json(cfg.value("segmentation", json::object()));
        effective["band"] = band_to_json(band);
        effective["segmentation"] = segmentation_to_json(seg);

        PccMatrixResult pcc = pcc_matrix(ds, band, seg, opts.jobs);
        SymmetricMatrix dist = correlation_distance(pcc.matrix);
        Dendrogram tree = agglomerate(dist, linkage);
        Partition part = cut(tree, n_clusters);
        VoteResult vote = majority_vote(part, recorded);
        AccuracyReport acc = phase_accuracy(vote.labels, recorded);
        timer.lap("analysis");

        write_partition_csv(part, sink.stage("clusters.csv"));
        write_labels_csv(vote.labels, recorded, sink.stage("predicted_labels.csv"));
        write_accuracy_csv(acc, sink.stage("accuracy.csv"));
        write_text_file(sink.stage("accuracy_table.txt"), accuracy_table_text(acc));
        timer.lap("write");

        summary["accuracy_percent"] = acc.reported_percent;
        summary["correct"] = acc.correct;
        summary["total"] = acc.total;
        summary["degenerate_pairs"] = pcc.warnings.size();
        summary["tied_clusters"] = vote.tied_clusters.size();
    } else {
        if (!cfg.contains("ensemble")) fail("unlabeled mode requires ensemble spec");
        const EnsembleSpec spec = ensemble_from_json(cfg.at("ensemble"), linkage);
        effective["ensemble"] = ensemble_to_json(spec);

        const std::vector<std::string> ids = meter_id_list(ds);
        std::vector<Partition> partitions = generate_ensemble(ds, spec, opts.jobs);
        SymmetricMatrix similarity = cts_matrix(partitions, ids, spec.decay);
        Partition consensus = consensus_partition(similarity, n_clusters, linkage);
        timer.lap("analysis");

        write_partition_csv(consensus, sink.stage("consensus_clusters.csv"));
        timer.lap("write");

        summary["ensemble_members"] = spec.members.size();
        summary["clusters"] = consensus.n_clusters;
    }
    if (!loaded.dropped.empty()) summary["dropped_meters"] = loaded.dropped;

    const std::string manifest_path = sink.stage("run_manifest.json");
    write_manifest(manifest_path, "phase-id", opts, effective, summary, timer.finish(), sink.names());
    sink.commit();
    return 0;
}

int run_pair_id(const RunOptions& opts, const json& cfg) {
    json effective;
    StageTimer timer;
    LoadedDataset loaded = load_dataset(opts, cfg, effective);
    timer.lap("load");

    const PairingConfig pc = pairing_from_json(cfg.value("pairing", json::object()));
    effective["pairing"] = pairing_to_json(pc);

    PairingResult result = run_pairing(loaded.ds, pc, opts.jobs);
    timer.lap("analysis");

    ArtifactSink sink(opts.out_dir);
    write_flag_report_csv(result, sink.stage("flag_report.csv"));
    write_connectivity_csv(result.connectivity, sink.stage("connectivity.csv"));
    timer.lap("write");

    json summary;
    summary["stage1_flags"] = result.stage1_count;
    summary["seasonal_retained"] = result.seasonal_retained_count;
    summary["final_flags"] = result.final_count;
    if (!result.skipped_singletons.empty()) summary["skipped_singletons"] = result.skipped_singletons;
    if (!result.unassigned_meters.empty()) summary["unassigned_meters"] = result.unassigned_meters;
    if (!result.warnings.empty()) summary["warnings"] = result.warnings;
    if (!loaded.dropped.empty()) summary["dropped_meters"] = loaded.dropped;

    const std::string manifest_path = sink.stage("run_manifest.json");
    write_manifest(manifest_path, "pair-id", opts, effective, summary, timer.finish(), sink.names());
    sink.commit();
    return 0;
}

int run_sweep(const RunOptions& opts, const json& cfg) {
    json effective;
    StageTimer timer;
    LoadedDataset loaded = load_dataset(opts, cfg, effective);
    timer.lap("load");

    const std::map<std::string, Phase> recorded = recorded_phases(loaded.ds);
    if (recorded.empty()) fail("sweep requires recorded phase labels in the input");

    const Linkage linkage = parse_linkage(cfg.value("linkage", "average"));
    const SegmentationOptions seg = segmentation_from_json(cfg.value("segmentation", json::object()));
    const json sw = cfg.value("sweep", json::object());
    check_keys(sw, {"bands", "cluster_counts"}, "sweep");

    std::vector<PowerBand> bands;
    if (sw.is_object() && sw.contains("bands")) {
        const json& list = sw.at("bands");
        if (!list.is_array() || list.empty()) fail("sweep.bands must be a non-empty array");
        for (const json& bj : list) bands.push_back(band_from_json(bj));
    } else {
        // default grid: ceilings 0.2..2.0 kW, idle floor 0, a few durations
        for (int i = 1; i <= 10; ++i) {
            for (double dur : {0.5, 1.0, 2.0}) {
                PowerBand b;
                b.p_low = 0.0;
                b.p_high = 0.2 * i;
                b.t_dur_hours = dur;
                bands.push_back(b);
            }
        }
    }
    std::vector<std::size_t> counts;
    if (sw.is_object() && sw.contains("cluster_counts")) {
        counts = sw.at("cluster_counts").get<std::vector<std::size_t>>();
        if (counts.empty()) fail("sweep.cluster_counts must be non-empty");
    } else {
        counts = {default_cluster_count(loaded.ds.meter_count())};
    }

    json bands_echo = json::array();
    for (const PowerBand& b : bands) bands_echo.push_back(band_to_json(b));
    effective["linkage"] = linkage_name(linkage);
    effective["segmentation"] = segmentation_to_json(seg);
    effective["sweep"] = {{"bands", bands_echo}, {"cluster_counts", counts}};

    SweepResult result = sweep_parameters(loaded.ds, recorded, bands, counts, linkage, seg, opts.jobs);
    timer.lap("analysis");

    ArtifactSink sink(opts.out_dir);
    write_sweep_csv(result, sink.stage("sweep.csv"));
    timer.lap("write");

    json summary;
    summary["cells"] = result.cells.size();
    summary["maximizers"] = result.maximizers.size();
    if (!result.maximizers.empty()) {
        summary["best_accuracy_percent"] = truncate_percent(result.maximizers.front().accuracy_percent);
        summary["best_band"] = band_to_json(result.maximizers.front().band);
        summary["best_n_clusters"] = result.maximizers.front().n_clusters;
    }
    if (!loaded.dropped.empty()) summary["dropped_meters"] = loaded.dropped;

    const std::string manifest_path = sink.stage("run_manifest.json");
    write_manifest(manifest_path, "sweep", opts, effective, summary, timer.finish(), sink.names());
    sink.commit();
    return 0;
}

int run_ensemble(const RunOptions& opts, const json& cfg) {
    json effective;
    StageTimer timer;
    LoadedDataset loaded = load_dataset(opts, cfg, effective);
    const FeederDataset& ds = loaded.ds;
    timer.lap("load");

    const Linkage linkage = parse_linkage(cfg.value("linkage", "average"));
    const std::size_t n_clusters = cfg.contains("n_clusters") && !cfg.at("n_clusters").is_null()
                                       ? cfg.at("n_clusters").get<std::size_t>()
                                       : default_cluster_count(ds.meter_count());
    const EnsembleSpec spec = ensemble_from_json(cfg.value("ensemble", json::object()), linkage);
    effective["linkage"] = linkage_name(linkage);
    effective["n_clusters"] = n_clusters;
    effective["ensemble"] = ensemble_to_json(spec);

    const std::vector<std::string> ids = meter_id_list(ds);
    std::vector<Partition> partitions = generate_ensemble(ds, spec, opts.jobs);
    SymmetricMatrix similarity = cts_matrix(partitions, ids, spec.decay);
    Partition consensus = consensus_partition(similarity, n_clusters, linkage);
    timer.lap("analysis");

    ArtifactSink sink(opts.out_dir);
    write_matrix_csv(similarity, sink.stage("cts_matrix.csv"));
    write_ensemble_partitions_csv(partitions, ids, sink.stage("ensemble_partitions.csv"));
    write_partition_csv(consensus, sink.stage("consensus_clusters.csv"));
    timer.lap("write");

    json summary;
    summary["ensemble_members"] = spec.members.size();
    summary["clusters"] = consensus.n_clusters;
    if (!loaded.dropped.empty()) summary["dropped_meters"] = loaded.dropped;

    const std::string manifest_path = sink.stage("run_manifest.json");
    write_manifest(manifest_path, "ensemble", opts, effective, summary, timer.finish(), sink.names());
    sink.commit();
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"meter-to-transformer topology identification from AMI interval data"};
    app.set_version_flag("--version", std::string("mtopo ") + k_version);
    app.require_subcommand(1);

    RunOptions opts;
    auto add_common = [&opts](CLI::App* sub, bool needs_input) {
        sub->add_option("--config", opts.config_path, "JSON config file");
        CLI::Option* in = sub->add_option("--input", opts.input, "input AMI interval CSV");
        if (needs_input) in->required();
        sub->add_option("--out-dir", opts.out_dir, "output directory (default mtopo-out)");
        sub->add_option("--seed", opts.seed, "random seed for synthesis and tie-free reruns");
        sub->add_option("--jobs", opts.jobs, "worker threads, 0 = all hardware threads");
    };

    CLI::App* simulate =
        app.add_subcommand("simulate", "synthesize a feeder dataset with known ground truth");
    add_common(simulate, false);
    CLI::App* phase_id = app.add_subcommand(
        "phase-id", "identify meter phase connectivity by voltage correlation clustering");
    add_common(phase_id, true);
    CLI::App* pair_id = app.add_subcommand(
        "pair-id", "flag meters whose recorded transformer disagrees with the voltage evidence");
    add_common(pair_id, true);
    CLI::App* sweep =
        app.add_subcommand("sweep", "grid-search band and cluster-count parameters against labels");
    add_common(sweep, true);
    CLI::App* ensemble = app.add_subcommand(
        "ensemble", "cluster-ensemble consensus grouping with similarity diagnostics");
    add_common(ensemble, true);

    CLI11_PARSE(app, argc, argv);

    try {
        const json cfg = load_config(opts.config_path);
        check_keys(cfg,
                   {"service_voltage", "filter_missing_threshold", "band", "segmentation", "linkage",
                    "labeled", "n_clusters", "ensemble", "pairing", "sweep", "simulate"},
                   "config");
        if (simulate->parsed()) return run_simulate(opts, cfg);
        if (phase_id->parsed()) return run_phase_id(opts, cfg);
        if (pair_id->parsed()) return run_pair_id(opts, cfg);
        if (sweep->parsed()) return run_sweep(opts, cfg);
        if (ensemble->parsed()) return run_ensemble(opts, cfg);
        std::cerr << "error: no command selected\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
