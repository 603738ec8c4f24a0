#pragma once

#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "mtopo/segmentation.hpp"
#include "mtopo/types.hpp"

namespace mtopo {

// Raised when fewer than three complete sample pairs remain after dropping
// missing entries; a correlation over one or two points is meaningless.
class insufficient_data_error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Raised when either sequence is constant over the compared indices.
class undefined_correlation_error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Pearson correlation with pairwise-complete deletion: indices where either
// input is missing are skipped. Uses compensated accumulation; the result is
// clamped into [-1, 1] to absorb last-bit overshoot.
double pcc(std::span<const double> x, std::span<const double> y);

// Pearson correlation over the concatenation of the given index runs. Means
// and variances are taken over the pooled points of all runs together, not
// per run, so a handful of short windows behaves like one long sample.
double pcc_over_segments(const std::vector<double>& x, const std::vector<double>& y,
                         const SegmentSet& segments);

// Symmetric dense matrix keyed by meter ids; diagonal is fixed by the ctor.
struct SymmetricMatrix {
    std::vector<std::string> ids;
    std::vector<double> values; // row-major n*n

    SymmetricMatrix() = default;
    SymmetricMatrix(std::vector<std::string> ids_, double diagonal);

    std::size_t size() const { return ids.size(); }
    double at(std::size_t i, std::size_t j) const { return values[i * ids.size() + j]; }
    void set(std::size_t i, std::size_t j, double v) {
        values[i * ids.size() + j] = v;
        values[j * ids.size() + i] = v;
    }
};

struct DegeneratePair {
    std::size_t i = 0;
    std::size_t j = 0;
    std::string reason;
};

struct PccMatrixResult {
    SymmetricMatrix matrix;                // diagonal 1
    std::vector<DegeneratePair> warnings;  // pairs recorded as 0
};

// Voltage-correlation matrix over all meter pairs. With a band, each pair is
// correlated over its own qualifying segments (subject to the fallback rule);
// without one, over the full series. Pairs with undefined or insufficient
// correlation are stored as 0 and reported in `warnings` rather than thrown:
// one dead pair should not abort a feeder-wide matrix.
PccMatrixResult pcc_matrix(const FeederDataset& ds,
                           const std::optional<PowerBand>& band = std::nullopt,
                           const SegmentationOptions& options = {},
                           unsigned jobs = 0);

// D(i,j) = 1 - |r(i,j)|, zero diagonal. Values land in [0, 1].
SymmetricMatrix correlation_distance(const SymmetricMatrix& pcc_matrix);

void write_matrix_csv(const SymmetricMatrix& m, const std::string& path);
SymmetricMatrix read_matrix_csv(const std::string& path);

} // namespace mtopo
