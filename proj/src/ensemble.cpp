#include "mtopo/ensemble.hpp"

#include <algorithm>
#include <stdexcept>

#include "mtopo/parallel.hpp"

namespace mtopo {

void EnsembleSpec::validate() const {
    if (members.size() < 2) {
        throw std::invalid_argument("an ensemble needs at least two member clusterings");
    }
    if (!(decay >= 0.0 && decay <= 1.0)) {
        throw std::invalid_argument("decay must lie in [0, 1]");
    }
    for (const auto& m : members) {
        m.band.validate();
        if (m.n_clusters < 1) throw std::invalid_argument("member cluster count must be positive");
    }
}

std::vector<EnsembleMember> default_ensemble_members() {
    std::vector<EnsembleMember> members;
    for (double hi : {0.6, 0.7, 0.8, 0.9, 1.0}) {
        for (double dur : {0.5, 1.0}) {
            members.push_back({PowerBand{0.0, hi, dur}, 30});
        }
    }
    return members;
}

std::vector<Partition> generate_ensemble(const FeederDataset& ds, const EnsembleSpec& spec,
                                         unsigned jobs) {
    spec.validate();
    ds.validate();
    std::vector<Partition> parts(spec.members.size());
    // members run serially; the pair loop inside each correlation matrix is
    // the hot path and carries the parallelism
    for (std::size_t m = 0; m < spec.members.size(); ++m) {
        const auto& member = spec.members[m];
        std::size_t k = std::min<std::size_t>(member.n_clusters, ds.meter_count());
        auto mat = pcc_matrix(ds, member.band, {}, jobs);
        auto tree = agglomerate(correlation_distance(mat.matrix), spec.linkage);
        parts[m] = cut(tree, k);
    }
    return parts;
}

ClusterLinkGraph cluster_jaccard_weights(const std::vector<Partition>& partitions,
                                         const std::vector<std::string>& meter_ids) {
    if (partitions.empty()) throw std::invalid_argument("no partitions given");

    // dense meter index in meter_ids order
    std::map<std::string, std::size_t> index;
    for (std::size_t i = 0; i < meter_ids.size(); ++i) index.emplace(meter_ids[i], i);

    ClusterLinkGraph g;
    for (std::size_t p = 0; p < partitions.size(); ++p) {
        const Partition& part = partitions[p];
        if (part.assignment.size() != meter_ids.size()) {
            throw std::invalid_argument("partition " + std::to_string(p)
                                        + " does not cover the meter universe");
        }
        g.offset.push_back(g.members.size());
        std::vector<std::vector<std::size_t>> clusters(static_cast<std::size_t>(part.n_clusters));
        for (const auto& [id, c] : part.assignment) {
            auto it = index.find(id);
            if (it == index.end()) {
                throw std::invalid_argument("partition " + std::to_string(p)
                                            + " labels unknown meter '" + id + "'");
            }
            clusters[static_cast<std::size_t>(c)].push_back(it->second);
        }
        for (auto& c : clusters) {
            std::sort(c.begin(), c.end());
            g.members.push_back(std::move(c));
            g.partition_of.push_back(p);
        }
    }

    const std::size_t nc = g.members.size();
    g.weights.assign(nc * nc, 0.0);
    for (std::size_t a = 0; a < nc; ++a) {
        g.weights[a * nc + a] = 1.0;
        for (std::size_t b = a + 1; b < nc; ++b) {
            // |A n B| via sorted-list walk
            const auto& ma = g.members[a];
            const auto& mb = g.members[b];
            std::size_t ia = 0, ib = 0, inter = 0;
            while (ia < ma.size() && ib < mb.size()) {
                if (ma[ia] < mb[ib]) ++ia;
                else if (mb[ib] < ma[ia]) ++ib;
                else { ++inter; ++ia; ++ib; }
            }
            std::size_t uni = ma.size() + mb.size() - inter;
            double w = (uni == 0 || inter == 0) ? 0.0
                                                : static_cast<double>(inter) / static_cast<double>(uni);
            g.weights[a * nc + b] = w;
            g.weights[b * nc + a] = w;
        }
    }
    return g;
}

SymmetricMatrix cts_matrix(const std::vector<Partition>& partitions,
                           const std::vector<std::string>& meter_ids, double decay) {
    if (partitions.empty()) throw std::invalid_argument("no partitions given");
    if (!(decay >= 0.0 && decay <= 1.0)) throw std::invalid_argument("decay must lie in [0, 1]");

    const ClusterLinkGraph g = cluster_jaccard_weights(partitions, meter_ids);
    const std::size_t n = meter_ids.size();
    const std::size_t nc = g.cluster_count();
    const std::size_t np = partitions.size();

    // host cluster of each meter per partition, as a global cluster index
    std::vector<std::vector<std::size_t>> host(np, std::vector<std::size_t>(n, 0));
    for (std::size_t p = 0; p < np; ++p) {
        std::size_t base = g.offset[p];
        std::size_t count = (p + 1 < np ? g.offset[p + 1] : nc) - base;
        for (std::size_t c = 0; c < count; ++c) {
            for (std::size_t meter : g.members[base + c]) host[p][meter] = base + c;
        }
    }

    // per-partition normalized connection strength between its cluster pairs:
    // strength(a, b) = sum over every other ensemble cluster t of
    // min(w(a,t), w(b,t)), then divided by the partition's maximum strength
    std::vector<std::vector<double>> norm_strength(np);
    for (std::size_t p = 0; p < np; ++p) {
        std::size_t base = g.offset[p];
        std::size_t count = (p + 1 < np ? g.offset[p + 1] : nc) - base;
        std::vector<double> s(count * count, 0.0);
        double max_s = 0.0;
        for (std::size_t a = 0; a < count; ++a) {
            for (std::size_t b = a + 1; b < count; ++b) {
                CompensatedSum acc;
                for (std::size_t t = 0; t < nc; ++t) {
                    if (t == base + a || t == base + b) continue;
                    acc.add(std::min(g.weight(base + a, t), g.weight(base + b, t)));
                }
                double v = acc.value();
                s[a * count + b] = v;
                s[b * count + a] = v;
                max_s = std::max(max_s, v);
            }
        }
        if (max_s > 0.0) {
            for (double& v : s) v /= max_s;
        }
        norm_strength[p] = std::move(s);
    }

    SymmetricMatrix sim(meter_ids, 1.0);
    for (std::size_t x = 0; x < n; ++x) {
        for (std::size_t y = x + 1; y < n; ++y) {
            double total = 0.0; // plain sum keeps the decay-monotonicity exact
            for (std::size_t p = 0; p < np; ++p) {
                std::size_t ca = host[p][x];
                std::size_t cb = host[p][y];
                if (ca == cb) {
                    total += 1.0;
                } else {
                    std::size_t base = g.offset[p];
                    std::size_t count = (p + 1 < np ? g.offset[p + 1] : nc) - base;
                    double ns = norm_strength[p][(ca - base) * count + (cb - base)];
                    total += decay * ns;
                }
            }
            sim.set(x, y, total / static_cast<double>(np));
        }
    }
    return sim;
}

Partition consensus_partition(const SymmetricMatrix& similarity, std::size_t n_clusters,
                              Linkage linkage) {
    SymmetricMatrix dist(similarity.ids, 0.0);
    const std::size_t n = similarity.size();
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = i + 1; j < n; ++j) {
            double s = similarity.at(i, j);
            if (std::isnan(s) || s < 0.0 || s > 1.0) {
                throw std::invalid_argument("similarity entries must lie in [0, 1]");
            }
            dist.set(i, j, 1.0 - s);
        }
    }
    return cut(agglomerate(dist, linkage), n_clusters);
}

} // namespace mtopo
