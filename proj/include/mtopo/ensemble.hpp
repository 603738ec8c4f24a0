#pragma once

#include <string>
#include <vector>

#include "mtopo/clustering.hpp"
#include "mtopo/correlation.hpp"
#include "mtopo/segmentation.hpp"
#include "mtopo/types.hpp"

namespace mtopo {

// One base clustering: a band/duration selection plus a cluster count.
struct EnsembleMember {
    PowerBand band;
    std::size_t n_clusters = 30;
};

struct EnsembleSpec {
    std::vector<EnsembleMember> members;
    double decay = 0.8;                // weight of indirect (shared-neighbor) evidence
    Linkage linkage = Linkage::Average;

    void validate() const;
};

// conventional member grid: band ceilings 0.6..1.0 kW x durations 0.5/1.0 h
std::vector<EnsembleMember> default_ensemble_members();

// Runs the segment/correlate/cluster pipeline once per member. Members with
// identical parameters produce identical partitions (everything downstream
// is deterministic).
std::vector<Partition> generate_ensemble(const FeederDataset& ds, const EnsembleSpec& spec,
                                         unsigned jobs = 0);

// Jaccard overlap between every pair of clusters pooled across all
// partitions. Clusters are indexed globally: partition 0's clusters first,
// then partition 1's, and so on.
struct ClusterLinkGraph {
    std::vector<std::size_t> partition_of;          // global cluster -> partition
    std::vector<std::vector<std::size_t>> members;  // global cluster -> sorted meter indices
    std::vector<std::size_t> offset;                // partition -> first global cluster
    std::vector<double> weights;                    // dense symmetric, size c*c
    std::size_t cluster_count() const { return partition_of.size(); }
    double weight(std::size_t a, std::size_t b) const { return weights[a * cluster_count() + b]; }
};

ClusterLinkGraph cluster_jaccard_weights(const std::vector<Partition>& partitions,
                                         const std::vector<std::string>& meter_ids);

// Pairwise similarity refined by shared cluster neighborhoods. For meters
// x, y and each base partition: if the partition co-clusters them the
// contribution is 1; otherwise it is decay times the normalized connection
// strength between their two host clusters, where the connection strength of
// clusters (a, b) sums min(w(a,t), w(b,t)) over every other cluster t in the
// ensemble and is normalized by the partition's largest such strength. The
// matrix averages the contributions over all partitions. decay = 0 reduces
// exactly to the co-association (co-clustering frequency) matrix.
SymmetricMatrix cts_matrix(const std::vector<Partition>& partitions,
                           const std::vector<std::string>& meter_ids, double decay);

// Agglomerates 1 - similarity and cuts to n_clusters.
Partition consensus_partition(const SymmetricMatrix& similarity, std::size_t n_clusters,
                              Linkage linkage = Linkage::Average);

} // namespace mtopo
