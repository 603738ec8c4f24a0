#pragma once

#include <array>
#include <map>
#include <string>
#include <vector>

#include "mtopo/correlation.hpp"
#include "mtopo/types.hpp"

namespace mtopo {

enum class Linkage { Average, Complete, Single };

Linkage parse_linkage(const std::string& s);
std::string linkage_name(Linkage l);

// One merge step. Node ids follow the usual convention: leaves are
// 0..n_leaves-1 and the node created by merge step k is n_leaves + k.
struct Merge {
    std::size_t left = 0;   // smaller node id
    std::size_t right = 0;  // larger node id
    double distance = 0.0;
    std::size_t size = 0;   // leaves under the new node
};

struct Dendrogram {
    std::vector<std::string> ids; // leaf order = input matrix order
    std::vector<Merge> merges;    // n_leaves - 1 entries, non-decreasing distances
    std::size_t n_leaves() const { return ids.size(); }
};

// Deterministic agglomerative clustering over a distance matrix.
// At every step the candidate pair with the minimum linkage distance merges;
// exact ties break toward the lexicographically smallest (node id, node id)
// pair, so a given matrix always yields one specific dendrogram.
Dendrogram agglomerate(const SymmetricMatrix& distances, Linkage linkage = Linkage::Average);

struct Partition {
    std::map<std::string, int> assignment; // meter id -> cluster index
    int n_clusters = 0;
};

// Cuts the tree into exactly n_clusters groups (the first
// n_leaves - n_clusters merges are applied). Cluster indices are renumbered
// in first-appearance order over the leaf sequence, so equal trees cut at
// equal depths label identically.
Partition cut(const Dendrogram& tree, std::size_t n_clusters);

struct VoteResult {
    std::map<std::string, Phase> labels;
    std::vector<int> tied_clusters; // clusters decided by the A < B < C rule
};

// Assigns each cluster the majority recorded phase of its members; ties go
// to the earliest phase in A, B, C order and are reported. A cluster with no
// labeled member at all cannot be voted on and raises an error naming it.
VoteResult majority_vote(const Partition& partition,
                         const std::map<std::string, Phase>& recorded);

struct AccuracyReport {
    std::array<std::size_t, 3> recorded_counts{};  // per phase A, B, C
    std::array<std::size_t, 3> predicted_counts{};
    std::array<std::size_t, 3> correct_counts{};
    std::size_t correct = 0;
    std::size_t total = 0;
    double percent = 0.0;          // exact ratio * 100
    double reported_percent = 0.0; // truncated to one decimal place
};

// Truncation (not rounding) to one decimal, matching how the headline
// numbers are reported: 537/577 -> 93.0, 804/919 -> 87.4.
double truncate_percent(double percent);

AccuracyReport phase_accuracy(const std::map<std::string, Phase>& predicted,
                              const std::map<std::string, Phase>& recorded);

void write_accuracy_csv(const AccuracyReport& r, const std::string& path);
std::string accuracy_table_text(const AccuracyReport& r);

// in-order leaf sequence of the dendrogram (children visited smaller-id first)
std::vector<std::size_t> leaf_order(const Dendrogram& tree);

void write_partition_csv(const Partition& p, const std::string& path);

// default cluster-count heuristic by feeder size
std::size_t default_cluster_count(std::size_t n_meters);

struct SweepCell {
    PowerBand band;
    std::size_t n_clusters = 0;
    double accuracy_percent = 0.0; // NaN when the cell could not be evaluated
};

struct SweepResult {
    std::vector<SweepCell> cells;      // band-major, then cluster count
    std::vector<SweepCell> maximizers; // every cell attaining the best accuracy
};

// Evaluates labeled phase identification over a grid of power bands and
// cluster counts. Each band costs one correlation matrix and one dendrogram;
// cluster counts reuse them. Cells that cannot be evaluated (for example a
// cut finer than the meter count) carry NaN accuracy and never win.
SweepResult sweep_parameters(const FeederDataset& ds,
                             const std::map<std::string, Phase>& recorded,
                             const std::vector<PowerBand>& bands,
                             const std::vector<std::size_t>& cluster_counts,
                             Linkage linkage = Linkage::Average,
                             const SegmentationOptions& options = {},
                             unsigned jobs = 0);

void write_sweep_csv(const SweepResult& r, const std::string& path);

} // namespace mtopo
