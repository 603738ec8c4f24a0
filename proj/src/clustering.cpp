#include "mtopo/clustering.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <functional>
#include <limits>
#include <sstream>

#include "mtopo/csv.hpp"
#include "mtopo/parallel.hpp"

namespace mtopo {

Linkage parse_linkage(const std::string& s) {
    if (s == "average") return Linkage::Average;
    if (s == "complete") return Linkage::Complete;
    if (s == "single") return Linkage::Single;
    throw std::invalid_argument("unknown linkage '" + s + "' (expected average, complete, or single)");
}

std::string linkage_name(Linkage l) {
    switch (l) {
        case Linkage::Average: return "average";
        case Linkage::Complete: return "complete";
        case Linkage::Single: return "single";
    }
    return "?";
}

// ---------------------------------------------------------------------------
// agglomeration
// ---------------------------------------------------------------------------

Dendrogram agglomerate(const SymmetricMatrix& distances, Linkage linkage) {
    const std::size_t n = distances.size();
    if (n < 2) throw std::invalid_argument("clustering needs at least two items");
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = i + 1; j < n; ++j) {
            double d = distances.at(i, j);
            if (std::isnan(d) || d < 0.0) {
                throw std::invalid_argument("distance matrix entry (" + std::to_string(i) + ","
                                            + std::to_string(j) + ") is invalid");
            }
            if (distances.at(j, i) != d) {
                throw std::invalid_argument("distance matrix is not symmetric");
            }
        }
    }

    // Active clusters live in a slot array; slots are recycled so memory
    // stays O(n^2). Node ids are tracked separately and only ever grow,
    // which is what makes the tie-break well defined: candidates are scanned
    // in ascending (id, id) order and strict < keeps the first minimum.
    struct Active {
        std::size_t node_id;
        std::size_t slot;
        std::size_t size;
    };
    std::vector<Active> active;
    active.reserve(n);
    for (std::size_t i = 0; i < n; ++i) active.push_back({i, i, 1});

    std::vector<double> dist = distances.values; // n*n working copy, slot-indexed
    auto d_at = [&](std::size_t a, std::size_t b) -> double& { return dist[a * n + b]; };

    Dendrogram tree;
    tree.ids = distances.ids;
    tree.merges.reserve(n - 1);

    for (std::size_t step = 0; step + 1 < n; ++step) {
        std::size_t best_a = 0, best_b = 0;
        double best_d = std::numeric_limits<double>::infinity();
        for (std::size_t a = 0; a + 1 < active.size(); ++a) {
            for (std::size_t b = a + 1; b < active.size(); ++b) {
                double d = d_at(active[a].slot, active[b].slot);
                if (d < best_d) { // strict: ties keep the earliest-scanned pair
                    best_d = d;
                    best_a = a;
                    best_b = b;
                }
            }
        }

        const Active left = active[best_a];
        const Active right = active[best_b];
        const std::size_t new_size = left.size + right.size;

        // update slot distances to the merged cluster (Lance-Williams forms)
        for (std::size_t k = 0; k < active.size(); ++k) {
            if (k == best_a || k == best_b) continue;
            const std::size_t s = active[k].slot;
            const double dl = d_at(left.slot, s);
            const double dr = d_at(right.slot, s);
            double nd = 0.0;
            switch (linkage) {
                case Linkage::Average:
                    nd = (static_cast<double>(left.size) * dl
                          + static_cast<double>(right.size) * dr)
                         / static_cast<double>(new_size);
                    break;
                case Linkage::Complete:
                    nd = std::max(dl, dr);
                    break;
                case Linkage::Single:
                    nd = std::min(dl, dr);
                    break;
            }
            d_at(left.slot, s) = nd;
            d_at(s, left.slot) = nd;
        }

        tree.merges.push_back(Merge{left.node_id, right.node_id, best_d, new_size});

        // merged cluster reuses the left slot and takes a fresh node id;
        // push_back keeps `active` sorted by node id since ids only grow
        active.erase(active.begin() + static_cast<std::ptrdiff_t>(best_b));
        active.erase(active.begin() + static_cast<std::ptrdiff_t>(best_a));
        active.push_back({n + step, left.slot, new_size});
    }
    return tree;
}

std::vector<std::size_t> leaf_order(const Dendrogram& tree) {
    const std::size_t n = tree.n_leaves();
    // children[k] holds the two merged node ids of internal node n + k
    std::vector<std::pair<std::size_t, std::size_t>> children(tree.merges.size());
    for (std::size_t k = 0; k < tree.merges.size(); ++k) {
        children[k] = {tree.merges[k].left, tree.merges[k].right};
    }
    std::vector<std::size_t> order;
    order.reserve(n);
    // iterative depth-first walk from the root, smaller child first
    std::vector<std::size_t> stack;
    if (tree.merges.empty()) {
        for (std::size_t i = 0; i < n; ++i) order.push_back(i);
        return order;
    }
    stack.push_back(n + tree.merges.size() - 1);
    while (!stack.empty()) {
        std::size_t node = stack.back();
        stack.pop_back();
        if (node < n) {
            order.push_back(node);
        } else {
            auto [l, r] = children[node - n];
            stack.push_back(r); // right below left: left subtree explored first
            stack.push_back(l);
        }
    }
    return order;
}

Partition cut(const Dendrogram& tree, std::size_t n_clusters) {
    const std::size_t n = tree.n_leaves();
    if (n_clusters < 1 || n_clusters > n) {
        throw std::invalid_argument("cluster count " + std::to_string(n_clusters)
                                    + " outside [1, " + std::to_string(n) + "]");
    }
    // union-find over node ids; apply the first n - n_clusters merges
    std::vector<std::size_t> parent(2 * n - 1);
    for (std::size_t i = 0; i < parent.size(); ++i) parent[i] = i;
    std::function<std::size_t(std::size_t)> find = [&](std::size_t x) {
        while (parent[x] != x) {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        return x;
    };
    for (std::size_t k = 0; k + n_clusters < n; ++k) {
        const Merge& m = tree.merges[k];
        std::size_t root_new = n + k;
        parent[find(m.left)] = root_new;
        parent[find(m.right)] = root_new;
    }

    Partition part;
    part.n_clusters = static_cast<int>(n_clusters);
    std::map<std::size_t, int> relabel; // root -> cluster index, first-appearance order
    for (std::size_t leaf = 0; leaf < n; ++leaf) {
        std::size_t root = find(leaf);
        auto it = relabel.find(root);
        int c;
        if (it == relabel.end()) {
            c = static_cast<int>(relabel.size());
            relabel.emplace(root, c);
        } else {
            c = it->second;
        }
        part.assignment[tree.ids[leaf]] = c;
    }
    return part;
}

// ---------------------------------------------------------------------------
// voting and accuracy
// ---------------------------------------------------------------------------

VoteResult majority_vote(const Partition& partition,
                         const std::map<std::string, Phase>& recorded) {
    const int k = partition.n_clusters;
    std::vector<std::array<std::size_t, 3>> votes(static_cast<std::size_t>(k), {0, 0, 0});
    std::vector<std::vector<std::string>> members(static_cast<std::size_t>(k));
    for (const auto& [id, cluster] : partition.assignment) {
        members[static_cast<std::size_t>(cluster)].push_back(id);
        auto it = recorded.find(id);
        if (it != recorded.end()) {
            ++votes[static_cast<std::size_t>(cluster)][static_cast<std::size_t>(it->second)];
        }
    }

    VoteResult res;
    std::vector<Phase> winner(static_cast<std::size_t>(k));
    for (int c = 0; c < k; ++c) {
        const auto& v = votes[static_cast<std::size_t>(c)];
        std::size_t total = v[0] + v[1] + v[2];
        if (total == 0) {
            std::ostringstream os;
            os << "cluster " << c << " has no labeled member to vote with (members:";
            for (const auto& id : members[static_cast<std::size_t>(c)]) os << " " << id;
            os << ")";
            throw std::runtime_error(os.str());
        }
        std::size_t best = std::max({v[0], v[1], v[2]});
        // earliest phase in A, B, C order wins a tie
        int w = v[0] == best ? 0 : (v[1] == best ? 1 : 2);
        bool tie = (v[0] == best) + (v[1] == best) + (v[2] == best) > 1;
        if (tie) res.tied_clusters.push_back(c);
        winner[static_cast<std::size_t>(c)] = static_cast<Phase>(w);
    }
    for (const auto& [id, cluster] : partition.assignment) {
        res.labels[id] = winner[static_cast<std::size_t>(cluster)];
    }
    return res;
}

double truncate_percent(double percent) {
    // floor at one decimal; the 1e-9 guards against a value such as 93.0 that
    // arrives as 92.999999999 from float division
    return std::floor(percent * 10.0 + 1e-9) / 10.0;
}

AccuracyReport phase_accuracy(const std::map<std::string, Phase>& predicted,
                              const std::map<std::string, Phase>& recorded) {
    // scoring set is the recorded meters; extra predictions are ignored so a
    // fully voted partition can be scored against partial ground truth
    AccuracyReport r;
    for (const auto& [id, truth] : recorded) {
        auto it = predicted.find(id);
        if (it == predicted.end()) {
            throw std::invalid_argument("meter '" + id + "' has no predicted label");
        }
        ++r.recorded_counts[static_cast<std::size_t>(truth)];
        ++r.predicted_counts[static_cast<std::size_t>(it->second)];
        if (it->second == truth) {
            ++r.correct_counts[static_cast<std::size_t>(truth)];
            ++r.correct;
        }
        ++r.total;
    }
    r.percent = r.total == 0 ? 0.0
                             : 100.0 * static_cast<double>(r.correct) / static_cast<double>(r.total);
    r.reported_percent = truncate_percent(r.percent);
    return r;
}

std::string accuracy_table_text(const AccuracyReport& r) {
    std::ostringstream os;
    os << "phase  recorded  predicted  correct\n";
    for (int p = 0; p < 3; ++p) {
        auto i = static_cast<std::size_t>(p);
        char pc = phase_char(static_cast<Phase>(p));
        char buf[80];
        std::snprintf(buf, sizeof(buf), "%-5c  %8zu  %9zu  %7zu\n",
                      pc, r.recorded_counts[i], r.predicted_counts[i], r.correct_counts[i]);
        os << buf;
    }
    char buf[96];
    std::snprintf(buf, sizeof(buf), "total  %8zu  correct %zu  accuracy %.1f%%\n",
                  r.total, r.correct, r.reported_percent);
    os << buf;
    return os.str();
}

void write_accuracy_csv(const AccuracyReport& r, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write '" + path + "'");
    out << "phase,recorded,predicted,correct\n";
    for (int p = 0; p < 3; ++p) {
        auto i = static_cast<std::size_t>(p);
        out << phase_char(static_cast<Phase>(p)) << "," << r.recorded_counts[i] << ","
            << r.predicted_counts[i] << "," << r.correct_counts[i] << "\n";
    }
    out << "total," << r.total << ",," << r.correct << "\n";
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.1f", r.reported_percent);
    out << "accuracy_percent," << buf << ",,\n";
    if (!out) throw std::runtime_error("failed while writing '" + path + "'");
}

void write_partition_csv(const Partition& p, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write '" + path + "'");
    out << "meter_id,cluster\n";
    for (const auto& [id, c] : p.assignment) {
        out << csv::join_row({id, std::to_string(c)}) << "\n";
    }
    if (!out) throw std::runtime_error("failed while writing '" + path + "'");
}

std::size_t default_cluster_count(std::size_t n_meters) {
    if (n_meters < 100) return 6;
    if (n_meters < 400) return 12;
    return 36;
}

// ---------------------------------------------------------------------------
// parameter sweep
// ---------------------------------------------------------------------------

SweepResult sweep_parameters(const FeederDataset& ds,
                             const std::map<std::string, Phase>& recorded,
                             const std::vector<PowerBand>& bands,
                             const std::vector<std::size_t>& cluster_counts,
                             Linkage linkage, const SegmentationOptions& options,
                             unsigned jobs) {
    if (bands.empty() || cluster_counts.empty()) {
        throw std::invalid_argument("sweep grids must be non-empty");
    }
    SweepResult res;
    res.cells.resize(bands.size() * cluster_counts.size());

    // one matrix + dendrogram per band, shared across the cluster-count axis;
    // bands run in parallel, each cell writes its own slot
    parallel_for(bands.size(), jobs, [&](std::size_t bi) {
        const PowerBand& band = bands[bi];
        Dendrogram tree;
        bool tree_ok = false;
        try {
            auto mat = pcc_matrix(ds, band, options, 1);
            tree = agglomerate(correlation_distance(mat.matrix), linkage);
            tree_ok = true;
        } catch (const std::exception&) {
            // whole band failed; all its cells stay NaN
        }
        for (std::size_t ci = 0; ci < cluster_counts.size(); ++ci) {
            SweepCell& cell = res.cells[bi * cluster_counts.size() + ci];
            cell.band = band;
            cell.n_clusters = cluster_counts[ci];
            cell.accuracy_percent = std::numeric_limits<double>::quiet_NaN();
            if (!tree_ok) continue;
            try {
                auto part = cut(tree, cluster_counts[ci]);
                auto vote = majority_vote(part, recorded);
                cell.accuracy_percent = phase_accuracy(vote.labels, recorded).percent;
            } catch (const std::exception&) {
                // unevaluable cell (cut too fine, unlabeled cluster): stays NaN
            }
        }
    });

    double best = -1.0;
    for (const auto& c : res.cells) {
        if (!std::isnan(c.accuracy_percent) && c.accuracy_percent > best) {
            best = c.accuracy_percent;
        }
    }
    if (best < 0.0) throw std::runtime_error("no sweep cell could be evaluated");
    for (const auto& c : res.cells) {
        if (c.accuracy_percent == best) res.maximizers.push_back(c);
    }
    return res;
}

void write_sweep_csv(const SweepResult& r, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write '" + path + "'");
    out << "p_low_kw,p_high_kw,t_dur_hours,n_clusters,accuracy_percent,is_best\n";
    auto is_best = [&](const SweepCell& c) {
        for (const auto& b : r.maximizers) {
            if (b.band.p_low == c.band.p_low && b.band.p_high == c.band.p_high
                && b.band.t_dur_hours == c.band.t_dur_hours && b.n_clusters == c.n_clusters) {
                return true;
            }
        }
        return false;
    };
    for (const auto& c : r.cells) {
        out << csv::join_row({csv::format_double(c.band.p_low), csv::format_double(c.band.p_high),
                              csv::format_double(c.band.t_dur_hours), std::to_string(c.n_clusters),
                              std::isnan(c.accuracy_percent) ? std::string()
                                                             : csv::format_double(c.accuracy_percent),
                              is_best(c) ? "true" : "false"})
            << "\n";
    }
    if (!out) throw std::runtime_error("failed while writing '" + path + "'");
}

} // namespace mtopo
