#include "mtopo/ingest.hpp"

#include <algorithm>
#include <cctype>
#include <cerrno>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <unordered_map>

#include "mtopo/csv.hpp"

namespace mtopo {

// ---------------------------------------------------------------------------
// calendar arithmetic (proleptic Gregorian; no leap seconds)
// ---------------------------------------------------------------------------

namespace {

std::int64_t days_from_civil(int y, int m, int d) {
    y -= m <= 2;
    const std::int64_t era = (y >= 0 ? y : y - 399) / 400;
    const unsigned yoe = static_cast<unsigned>(y - era * 400);
    const unsigned doy = (153u * static_cast<unsigned>(m + (m > 2 ? -3 : 9)) + 2u) / 5u
                         + static_cast<unsigned>(d) - 1u;
    const unsigned doe = yoe * 365u + yoe / 4u - yoe / 100u + doy;
    return era * 146097 + static_cast<std::int64_t>(doe) - 719468;
}

void civil_from_days(std::int64_t z, int& y, int& m, int& d) {
    z += 719468;
    const std::int64_t era = (z >= 0 ? z : z - 146096) / 146097;
    const unsigned doe = static_cast<unsigned>(z - era * 146097);
    const unsigned yoe = (doe - doe / 1460 + doe / 36524 - doe / 146096) / 365;
    const std::int64_t yy = static_cast<std::int64_t>(yoe) + era * 400;
    const unsigned doy = doe - (365 * yoe + yoe / 4 - yoe / 100);
    const unsigned mp = (5 * doy + 2) / 153;
    d = static_cast<int>(doy - (153 * mp + 2) / 5 + 1);
    m = static_cast<int>(mp < 10 ? mp + 3 : mp - 9);
    y = static_cast<int>(yy + (m <= 2));
}

} // namespace

std::int64_t epoch_from_civil(int year, int month, int day,
                              int hour, int minute, int second) {
    return days_from_civil(year, month, day) * 86400
           + hour * 3600 + minute * 60 + second;
}

void civil_from_epoch(std::int64_t epoch_s, int& year, int& month, int& day,
                      int& hour, int& minute, int& second) {
    std::int64_t days = epoch_s / 86400;
    std::int64_t rem = epoch_s % 86400;
    if (rem < 0) {
        rem += 86400;
        days -= 1;
    }
    civil_from_days(days, year, month, day);
    hour = static_cast<int>(rem / 3600);
    minute = static_cast<int>((rem % 3600) / 60);
    second = static_cast<int>(rem % 60);
}

std::string format_timestamp(std::int64_t epoch_s) {
    int y, mo, d, h, mi, s;
    civil_from_epoch(epoch_s, y, mo, d, h, mi, s);
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%04d-%02d-%02dT%02d:%02d:%02dZ", y, mo, d, h, mi, s);
    return buf;
}

// ---------------------------------------------------------------------------
// FeederDataset members
// ---------------------------------------------------------------------------

std::size_t FeederDataset::index_of(const std::string& meter_id) const {
    for (std::size_t i = 0; i < meters.size(); ++i) {
        if (meters[i].meter_id == meter_id) return i;
    }
    throw std::out_of_range("no meter named '" + meter_id + "' in dataset '" + name + "'");
}

bool FeederDataset::any_recorded_phase() const {
    for (const auto& m : meters) {
        if (m.recorded_phase) return true;
    }
    return false;
}

bool FeederDataset::any_transformer_id() const {
    for (const auto& m : meters) {
        if (!m.transformer_id.empty()) return true;
    }
    return false;
}

void FeederDataset::validate() const {
    grid.validate();
    if (meters.size() < 2) {
        throw std::runtime_error("dataset '" + name + "' must contain at least two meters");
    }
    std::vector<std::string> ids;
    ids.reserve(meters.size());
    for (const auto& m : meters) {
        if (m.meter_id.empty()) throw std::runtime_error("dataset contains a meter with an empty id");
        if (m.power_kw.size() != grid.count || m.voltage.size() != grid.count) {
            throw std::runtime_error("meter '" + m.meter_id + "' series length does not match the grid");
        }
        ids.push_back(m.meter_id);
    }
    std::sort(ids.begin(), ids.end());
    auto dup = std::adjacent_find(ids.begin(), ids.end());
    if (dup != ids.end()) {
        throw std::runtime_error("duplicate meter id '" + *dup + "'");
    }
}

FeederDataset slice_dataset(const FeederDataset& ds, std::size_t begin, std::size_t end) {
    if (begin > end || end > ds.grid.count) {
        throw std::out_of_range("slice window out of range");
    }
    FeederDataset out;
    out.name = ds.name;
    out.grid = TimeGrid{ds.grid.epoch_at(begin), ds.grid.dt_minutes, end - begin};
    out.meters.reserve(ds.meters.size());
    for (const auto& m : ds.meters) {
        MeterSeries s;
        s.meter_id = m.meter_id;
        s.transformer_id = m.transformer_id;
        s.recorded_phase = m.recorded_phase;
        s.power_kw.assign(m.power_kw.begin() + begin, m.power_kw.begin() + end);
        s.voltage.assign(m.voltage.begin() + begin, m.voltage.begin() + end);
        out.meters.push_back(std::move(s));
    }
    return out;
}

std::optional<double> finite_mean(const std::vector<double>& values) {
    CompensatedSum acc;
    std::size_t n = 0;
    for (double v : values) {
        if (!is_missing(v)) {
            acc.add(v);
            ++n;
        }
    }
    if (n == 0) return std::nullopt;
    return acc.value() / static_cast<double>(n);
}

double missing_fraction(const std::vector<double>& values) {
    if (values.empty()) return 0.0;
    std::size_t miss = 0;
    for (double v : values) {
        if (is_missing(v)) ++miss;
    }
    return static_cast<double>(miss) / static_cast<double>(values.size());
}

// ---------------------------------------------------------------------------
// CSV parsing
// ---------------------------------------------------------------------------

namespace {

[[noreturn]] void fail_at(const std::string& path, std::size_t line, const std::string& what) {
    std::ostringstream os;
    os << path << ":" << line << ": " << what;
    throw std::runtime_error(os.str());
}

// Accepts "YYYY-MM-DD[T ]HH:MM[:SS][.frac][Z|+HH:MM|-HH:MM]".
bool parse_timestamp(const std::string& s, std::int64_t& epoch_out) {
    int y = 0, mo = 0, d = 0, h = 0, mi = 0;
    int sec = 0;
    const char* p = s.c_str();
    auto read_int = [&](int digits, int& out) -> bool {
        out = 0;
        for (int i = 0; i < digits; ++i) {
            if (*p < '0' || *p > '9') return false;
            out = out * 10 + (*p - '0');
            ++p;
        }
        return true;
    };
    if (!read_int(4, y)) return false;
    if (*p++ != '-') return false;
    if (!read_int(2, mo)) return false;
    if (*p++ != '-') return false;
    if (!read_int(2, d)) return false;
    if (*p != 'T' && *p != ' ') return false;
    ++p;
    if (!read_int(2, h)) return false;
    if (*p++ != ':') return false;
    if (!read_int(2, mi)) return false;
    if (*p == ':') {
        ++p;
        if (!read_int(2, sec)) return false;
    }
    if (*p == '.') { // fractional seconds: accepted, truncated
        ++p;
        while (*p >= '0' && *p <= '9') ++p;
    }
    int offset_s = 0;
    if (*p == 'Z') {
        ++p;
    } else if (*p == '+' || *p == '-') {
        int sign = (*p == '+') ? 1 : -1;
        ++p;
        int oh = 0, om = 0;
        if (!read_int(2, oh)) return false;
        if (*p == ':') ++p;
        if (!read_int(2, om)) return false;
        offset_s = sign * (oh * 3600 + om * 60);
    }
    if (*p != '\0') return false;
    if (mo < 1 || mo > 12 || d < 1 || d > 31 || h > 23 || mi > 59 || sec > 60) return false;
    epoch_out = epoch_from_civil(y, mo, d, h, mi, sec) - offset_s;
    return true;
}

bool parse_value(const std::string& s, double& out) {
    if (s.empty()) {
        out = missing_value();
        return true;
    }
    std::string low = s;
    std::transform(low.begin(), low.end(), low.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    if (low == "nan" || low == "na" || low == "null") {
        out = missing_value();
        return true;
    }
    errno = 0;
    char* end = nullptr;
    double v = std::strtod(s.c_str(), &end);
    if (end == s.c_str() || *end != '\0' || errno == ERANGE) return false;
    out = v;
    return true;
}

struct RawRow {
    std::size_t line;
    std::int64_t epoch;
    double power;
    double voltage;
};

} // namespace

FeederDataset parse_ami_csv(const std::string& path, const CsvSchema& schema) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open '" + path + "'");

    std::string line;
    if (!std::getline(in, line)) throw std::runtime_error(path + ": empty file");
    auto header = csv::split_line(line);

    auto column = [&](const std::string& name) -> int {
        for (std::size_t i = 0; i < header.size(); ++i) {
            if (header[i] == name) return static_cast<int>(i);
        }
        return -1;
    };
    int c_meter = column(schema.meter_id);
    int c_time = column(schema.timestamp);
    int c_power = column(schema.power_kw);
    int c_volt = column(schema.voltage);
    int c_xfmr = column(schema.transformer_id);
    int c_phase = column(schema.phase);
    for (auto [idx, name] : {std::pair{c_meter, schema.meter_id},
                             std::pair{c_time, schema.timestamp},
                             std::pair{c_power, schema.power_kw},
                             std::pair{c_volt, schema.voltage}}) {
        if (idx < 0) throw std::runtime_error(path + ": missing required column '" + name + "'");
    }

    // first pass: collect rows per meter plus the union of timestamps
    std::vector<std::string> meter_order;
    std::unordered_map<std::string, std::size_t> meter_slot;
    std::vector<std::vector<RawRow>> rows_by_meter;
    std::vector<std::string> xfmr_by_meter;
    std::vector<std::optional<Phase>> phase_by_meter;
    std::vector<std::int64_t> all_times;

    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty() || line == "\r") continue;
        auto fields = csv::split_line(line);
        if (fields.size() != header.size()) {
            fail_at(path, line_no, "malformed row: expected "
                    + std::to_string(header.size()) + " fields, found "
                    + std::to_string(fields.size()));
        }
        const std::string& mid = fields[static_cast<std::size_t>(c_meter)];
        if (mid.empty()) fail_at(path, line_no, "empty meter id");

        std::int64_t epoch;
        if (!parse_timestamp(fields[static_cast<std::size_t>(c_time)], epoch)) {
            fail_at(path, line_no, "unparseable timestamp '"
                    + fields[static_cast<std::size_t>(c_time)] + "'");
        }
        double p, v;
        if (!parse_value(fields[static_cast<std::size_t>(c_power)], p)) {
            fail_at(path, line_no, "unparseable power value '"
                    + fields[static_cast<std::size_t>(c_power)] + "'");
        }
        if (!parse_value(fields[static_cast<std::size_t>(c_volt)], v)) {
            fail_at(path, line_no, "unparseable voltage value '"
                    + fields[static_cast<std::size_t>(c_volt)] + "'");
        }

        auto it = meter_slot.find(mid);
        std::size_t slot;
        if (it == meter_slot.end()) {
            slot = meter_order.size();
            meter_slot.emplace(mid, slot);
            meter_order.push_back(mid);
            rows_by_meter.emplace_back();
            xfmr_by_meter.emplace_back();
            phase_by_meter.emplace_back();
        } else {
            slot = it->second;
        }
        rows_by_meter[slot].push_back(RawRow{line_no, epoch, p, v});
        all_times.push_back(epoch);

        if (c_xfmr >= 0) {
            const std::string& t = fields[static_cast<std::size_t>(c_xfmr)];
            if (!t.empty()) {
                if (!xfmr_by_meter[slot].empty() && xfmr_by_meter[slot] != t) {
                    fail_at(path, line_no, "meter '" + mid + "' has conflicting transformer ids '"
                            + xfmr_by_meter[slot] + "' and '" + t + "'");
                }
                xfmr_by_meter[slot] = t;
            }
        }
        if (c_phase >= 0) {
            const std::string& ph = fields[static_cast<std::size_t>(c_phase)];
            if (!ph.empty()) {
                auto parsed = parse_phase(ph);
                if (!parsed) fail_at(path, line_no, "unknown phase label '" + ph + "'");
                if (phase_by_meter[slot] && *phase_by_meter[slot] != *parsed) {
                    fail_at(path, line_no, "meter '" + mid + "' has conflicting phase labels");
                }
                phase_by_meter[slot] = parsed;
            }
        }
    }

    if (meter_order.size() < 2) {
        throw std::runtime_error(path + ": dataset must contain at least two meters");
    }

    // infer the interval from the union of timestamps: most common gap
    // between consecutive distinct instants, ties toward the shorter gap
    std::sort(all_times.begin(), all_times.end());
    all_times.erase(std::unique(all_times.begin(), all_times.end()), all_times.end());
    if (all_times.size() < 2) {
        throw std::runtime_error(path + ": cannot infer a sampling interval from fewer than two distinct timestamps");
    }
    std::map<std::int64_t, std::size_t> gap_counts;
    for (std::size_t i = 1; i < all_times.size(); ++i) {
        ++gap_counts[all_times[i] - all_times[i - 1]];
    }
    std::int64_t step_s = 0;
    std::size_t best = 0;
    for (const auto& [gap, n] : gap_counts) { // map order: smaller gap wins ties
        if (n > best) {
            best = n;
            step_s = gap;
        }
    }
    if (step_s % 60 != 0 || step_s <= 0) {
        throw std::runtime_error(path + ": inferred interval " + std::to_string(step_s)
                                 + " s is not a whole number of minutes");
    }

    const std::int64_t t0 = all_times.front();
    auto slot_of = [&](std::int64_t t) -> std::int64_t {
        double f = static_cast<double>(t - t0) / static_cast<double>(step_s);
        std::int64_t s = std::llround(f);
        std::int64_t residual = t - (t0 + s * step_s);
        if (residual > 60 || residual < -60) return -1; // beyond snap tolerance
        return s;
    };

    // the union must cover its slot range contiguously
    std::int64_t max_slot = 0;
    std::vector<std::int64_t> union_slots;
    union_slots.reserve(all_times.size());
    for (std::int64_t t : all_times) {
        std::int64_t s = slot_of(t);
        if (s < 0) {
            throw std::runtime_error(path + ": inconsistent interval: timestamp "
                                     + format_timestamp(t) + " is off the "
                                     + std::to_string(step_s / 60) + "-minute grid");
        }
        union_slots.push_back(s);
        max_slot = std::max(max_slot, s);
    }
    for (std::size_t i = 1; i < union_slots.size(); ++i) {
        if (union_slots[i] == union_slots[i - 1]) continue;
        if (union_slots[i] != union_slots[i - 1] + 1) {
            throw std::runtime_error(path + ": inconsistent interval: gap between "
                                     + format_timestamp(all_times[i - 1]) + " and "
                                     + format_timestamp(all_times[i])
                                     + " is not the inferred " + std::to_string(step_s / 60)
                                     + "-minute spacing");
        }
    }

    TimeGrid grid{t0, static_cast<int>(step_s / 60), static_cast<std::size_t>(max_slot) + 1};

    FeederDataset ds;
    ds.name = path;
    ds.grid = grid;
    ds.meters.reserve(meter_order.size());
    for (std::size_t i = 0; i < meter_order.size(); ++i) {
        MeterSeries m;
        m.meter_id = meter_order[i];
        m.transformer_id = xfmr_by_meter[i];
        m.recorded_phase = phase_by_meter[i];
        m.power_kw.assign(grid.count, missing_value());
        m.voltage.assign(grid.count, missing_value());
        std::vector<bool> seen(grid.count, false);
        for (const RawRow& r : rows_by_meter[i]) {
            std::int64_t s = slot_of(r.epoch);
            // union pass already guaranteed s >= 0
            auto idx = static_cast<std::size_t>(s);
            if (seen[idx]) {
                fail_at(path, r.line, "duplicate reading for meter '" + m.meter_id
                        + "' at " + format_timestamp(grid.epoch_at(idx)));
            }
            seen[idx] = true;
            m.power_kw[idx] = r.power;
            m.voltage[idx] = r.voltage;
        }
        ds.meters.push_back(std::move(m));
    }
    ds.validate();
    return ds;
}

void write_ami_csv(const FeederDataset& ds, const std::string& path, const CsvSchema& schema) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write '" + path + "'");

    bool with_xfmr = ds.any_transformer_id();
    bool with_phase = ds.any_recorded_phase();

    std::vector<std::string> header{schema.meter_id, schema.timestamp,
                                    schema.power_kw, schema.voltage};
    if (with_xfmr) header.push_back(schema.transformer_id);
    if (with_phase) header.push_back(schema.phase);
    out << csv::join_row(header) << "\n";

    auto value_field = [](double v) -> std::string {
        return is_missing(v) ? std::string() : csv::format_double(v);
    };

    for (const auto& m : ds.meters) {
        for (std::size_t i = 0; i < ds.grid.count; ++i) {
            std::vector<std::string> row{m.meter_id,
                                         format_timestamp(ds.grid.epoch_at(i)),
                                         value_field(m.power_kw[i]),
                                         value_field(m.voltage[i])};
            if (with_xfmr) row.push_back(m.transformer_id);
            if (with_phase) {
                row.push_back(m.recorded_phase ? std::string(1, phase_char(*m.recorded_phase))
                                               : std::string());
            }
            out << csv::join_row(row) << "\n";
        }
    }
    if (!out) throw std::runtime_error("failed while writing '" + path + "'");
}

// ---------------------------------------------------------------------------
// normalization and filtering
// ---------------------------------------------------------------------------

FeederDataset normalize_voltage(const FeederDataset& ds,
                                const std::map<std::string, double>& service_voltage_by_meter,
                                double default_service_voltage) {
    FeederDataset out = ds;
    for (auto& m : out.meters) {
        auto mean = finite_mean(m.voltage);
        if (!mean) continue; // nothing to normalize
        if (*mean >= 0.8 && *mean <= 1.2) continue; // already per-unit
        double service = default_service_voltage;
        if (auto it = service_voltage_by_meter.find(m.meter_id);
            it != service_voltage_by_meter.end()) {
            service = it->second;
        }
        if (service <= 0.0) {
            throw std::runtime_error("non-positive service voltage for meter '" + m.meter_id + "'");
        }
        for (double& v : m.voltage) {
            if (!is_missing(v)) v /= service;
        }
        // a sanity band around nominal; violations indicate a bad service
        // voltage entry rather than plausible grid conditions
        auto post = finite_mean(m.voltage);
        if (post && (*post < 0.5 || *post > 1.5)) {
            throw std::runtime_error("voltage for meter '" + m.meter_id
                                     + "' is implausible after normalization (mean "
                                     + csv::format_double(*post) + " per-unit)");
        }
    }
    return out;
}

FilterResult filter_missing(const FeederDataset& ds, double max_missing_fraction) {
    if (max_missing_fraction < 0.0 || max_missing_fraction > 1.0) {
        throw std::invalid_argument("max_missing_fraction must lie in [0, 1]");
    }
    FilterResult res;
    res.dataset.name = ds.name;
    res.dataset.grid = ds.grid;
    for (const auto& m : ds.meters) {
        RemovalRecord rec;
        rec.meter_id = m.meter_id;
        rec.missing_fraction = std::max(missing_fraction(m.power_kw),
                                        missing_fraction(m.voltage));
        rec.dropped = rec.missing_fraction >= max_missing_fraction;
        if (!rec.dropped) res.dataset.meters.push_back(m);
        res.report.push_back(std::move(rec));
    }
    if (res.dataset.meters.empty()) {
        throw std::runtime_error("empty dataset after filtering: every meter exceeded the missing-data limit");
    }
    if (res.dataset.meters.size() < 2) {
        throw std::runtime_error("only one meter remains after filtering; pairwise analysis needs at least two");
    }
    return res;
}

void write_removal_report_csv(const std::vector<RemovalRecord>& report, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write '" + path + "'");
    out << "meter_id,missing_fraction,dropped\n";
    for (const auto& r : report) {
        out << csv::join_row({r.meter_id, csv::format_double(r.missing_fraction),
                              r.dropped ? "true" : "false"})
            << "\n";
    }
    if (!out) throw std::runtime_error("failed while writing '" + path + "'");
}

} // namespace mtopo
