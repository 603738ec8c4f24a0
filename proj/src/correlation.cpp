#include "mtopo/correlation.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "mtopo/csv.hpp"
#include "mtopo/parallel.hpp"

namespace mtopo {

namespace {

double pcc_complete(const std::vector<double>& x, const std::vector<double>& y) {
    // two-pass: means first, then centered second moments
    const std::size_t n = x.size();
    if (n < 3) {
        throw insufficient_data_error("fewer than three complete sample pairs ("
                                      + std::to_string(n) + ")");
    }
    CompensatedSum sx, sy;
    for (std::size_t i = 0; i < n; ++i) {
        sx.add(x[i]);
        sy.add(y[i]);
    }
    const double mx = sx.value() / static_cast<double>(n);
    const double my = sy.value() / static_cast<double>(n);

    CompensatedSum sxx, syy, sxy;
    for (std::size_t i = 0; i < n; ++i) {
        const double dx = x[i] - mx;
        const double dy = y[i] - my;
        sxx.add(dx * dx);
        syy.add(dy * dy);
        sxy.add(dx * dy);
    }
    const double vxx = sxx.value();
    const double vyy = syy.value();
    if (vxx <= 0.0 || vyy <= 0.0) {
        throw undefined_correlation_error("constant sequence: correlation undefined");
    }
    double r = sxy.value() / std::sqrt(vxx * vyy);
    return std::clamp(r, -1.0, 1.0);
}

} // namespace

double pcc(std::span<const double> x, std::span<const double> y) {
    if (x.size() != y.size()) {
        throw std::invalid_argument("correlation inputs differ in length");
    }
    std::vector<double> xs, ys;
    xs.reserve(x.size());
    ys.reserve(y.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
        if (is_missing(x[i]) || is_missing(y[i])) continue;
        xs.push_back(x[i]);
        ys.push_back(y[i]);
    }
    return pcc_complete(xs, ys);
}

double pcc_over_segments(const std::vector<double>& x, const std::vector<double>& y,
                         const SegmentSet& segments) {
    if (x.size() != y.size()) {
        throw std::invalid_argument("correlation inputs differ in length");
    }
    std::vector<double> xs, ys;
    xs.reserve(segments.total_points);
    ys.reserve(segments.total_points);
    for (const auto& run : segments.runs) {
        if (run.end > x.size()) throw std::out_of_range("segment run exceeds series length");
        for (std::size_t t = run.begin; t < run.end; ++t) {
            if (is_missing(x[t]) || is_missing(y[t])) continue;
            xs.push_back(x[t]);
            ys.push_back(y[t]);
        }
    }
    return pcc_complete(xs, ys);
}

SymmetricMatrix::SymmetricMatrix(std::vector<std::string> ids_, double diagonal)
    : ids(std::move(ids_)), values(ids.size() * ids.size(), 0.0) {
    for (std::size_t i = 0; i < ids.size(); ++i) values[i * ids.size() + i] = diagonal;
}

PccMatrixResult pcc_matrix(const FeederDataset& ds, const std::optional<PowerBand>& band,
                           const SegmentationOptions& options, unsigned jobs) {
    ds.validate();
    const std::size_t n = ds.meter_count();

    std::vector<std::string> ids;
    ids.reserve(n);
    for (const auto& m : ds.meters) ids.push_back(m.meter_id);

    PccMatrixResult res{SymmetricMatrix(std::move(ids), 1.0), {}};

    struct Pair {
        std::size_t i, j;
    };
    std::vector<Pair> pairs;
    pairs.reserve(n * (n - 1) / 2);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = i + 1; j < n; ++j) pairs.push_back({i, j});
    }

    // each task owns the (i, j) slot it writes; warnings merge afterwards in
    // pair order so output is independent of scheduling
    std::vector<std::string> warning_by_pair(pairs.size());
    parallel_for(pairs.size(), jobs, [&](std::size_t k) {
        const auto [i, j] = pairs[k];
        const auto& a = ds.meters[i];
        const auto& b = ds.meters[j];
        try {
            double r;
            if (band) {
                auto segs = select_segments(a, b, ds.grid, *band, options);
                r = pcc_over_segments(a.voltage, b.voltage, segs);
            } else {
                r = pcc(a.voltage, b.voltage);
            }
            res.matrix.set(i, j, r);
        } catch (const undefined_correlation_error& e) {
            res.matrix.set(i, j, 0.0);
            warning_by_pair[k] = e.what();
        } catch (const insufficient_data_error& e) {
            res.matrix.set(i, j, 0.0);
            warning_by_pair[k] = e.what();
        }
    });

    for (std::size_t k = 0; k < pairs.size(); ++k) {
        if (!warning_by_pair[k].empty()) {
            res.warnings.push_back({pairs[k].i, pairs[k].j, warning_by_pair[k]});
        }
    }
    return res;
}

SymmetricMatrix correlation_distance(const SymmetricMatrix& pcc_matrix) {
    SymmetricMatrix d(pcc_matrix.ids, 0.0);
    const std::size_t n = pcc_matrix.size();
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = i + 1; j < n; ++j) {
            d.set(i, j, 1.0 - std::abs(pcc_matrix.at(i, j)));
        }
    }
    return d;
}

void write_matrix_csv(const SymmetricMatrix& m, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write '" + path + "'");
    std::vector<std::string> header{"meter_id"};
    header.insert(header.end(), m.ids.begin(), m.ids.end());
    out << csv::join_row(header) << "\n";
    for (std::size_t i = 0; i < m.size(); ++i) {
        std::vector<std::string> row{m.ids[i]};
        for (std::size_t j = 0; j < m.size(); ++j) row.push_back(csv::format_double(m.at(i, j)));
        out << csv::join_row(row) << "\n";
    }
    if (!out) throw std::runtime_error("failed while writing '" + path + "'");
}

SymmetricMatrix read_matrix_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open '" + path + "'");
    std::string line;
    if (!std::getline(in, line)) throw std::runtime_error(path + ": empty file");
    auto header = csv::split_line(line);
    if (header.size() < 2) throw std::runtime_error(path + ": not a matrix file");
    std::vector<std::string> ids(header.begin() + 1, header.end());
    SymmetricMatrix m(ids, 0.0);
    std::size_t row = 0;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        auto fields = csv::split_line(line);
        if (fields.size() != ids.size() + 1 || row >= ids.size()) {
            throw std::runtime_error(path + ": malformed matrix row");
        }
        for (std::size_t j = 0; j < ids.size(); ++j) {
            m.values[row * ids.size() + j] = std::strtod(fields[j + 1].c_str(), nullptr);
        }
        ++row;
    }
    if (row != ids.size()) throw std::runtime_error(path + ": matrix row count mismatch");
    return m;
}

} // namespace mtopo
