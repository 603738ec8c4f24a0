#pragma once

#include <map>
#include <string>
#include <vector>

#include "mtopo/types.hpp"

namespace mtopo {

// Column names expected in an AMI interval CSV. transformer_id and phase are
// optional; the rest are required.
struct CsvSchema {
    std::string meter_id = "meter_id";
    std::string timestamp = "timestamp";
    std::string power_kw = "power_kw";
    std::string voltage = "voltage";
    std::string transformer_id = "transformer_id";
    std::string phase = "phase";
};

// Reads an interval CSV into a dataset on one shared regular grid.
//
// The interval is inferred as the most common gap between consecutive
// distinct timestamps (ties broken toward the shorter gap). Every timestamp
// must then land within 60 s of a grid slot and the union of all meters'
// timestamps must cover the grid with no holes; otherwise the file is
// rejected as having an inconsistent interval. A slot a particular meter
// never reports is stored as a missing value.
//
// Errors carry "<path>:<line>" positions where a specific row is at fault.
FeederDataset parse_ami_csv(const std::string& path, const CsvSchema& schema = {});

// Writes a dataset back out; missing values become empty fields. Optional
// columns appear only when some meter carries them. parse(write(ds)) returns
// an identical dataset.
void write_ami_csv(const FeederDataset& ds, const std::string& path,
                   const CsvSchema& schema = {});

// Converts voltages to per-unit. A meter whose mean voltage already sits in
// [0.8, 1.2] is taken to be per-unit and passes through unchanged; otherwise
// readings divide by the meter's service voltage (service_voltage_by_meter
// entry if present, else default_service_voltage). Scaling by a constant
// leaves correlation untouched, which downstream tests rely on.
FeederDataset normalize_voltage(const FeederDataset& ds,
                                const std::map<std::string, double>& service_voltage_by_meter = {},
                                double default_service_voltage = 120.0);

struct RemovalRecord {
    std::string meter_id;
    double missing_fraction = 0.0; // max of the power and voltage fractions
    bool dropped = false;
};

struct FilterResult {
    FeederDataset dataset;
    std::vector<RemovalRecord> report; // one row per input meter, input order
};

// Drops meters whose worst-channel missing fraction is >= max_missing_fraction.
FilterResult filter_missing(const FeederDataset& ds, double max_missing_fraction = 0.8);

void write_removal_report_csv(const std::vector<RemovalRecord>& report, const std::string& path);

} // namespace mtopo
