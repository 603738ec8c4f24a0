#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include "mtopo/clustering.hpp"
#include "mtopo/rng.hpp"

using namespace mtopo;
using doctest::Approx;

namespace {

SymmetricMatrix four_point() {
    // two tight pairs (a,b) and (c,d) far from each other
    SymmetricMatrix m({"a", "b", "c", "d"}, 0.0);
    m.set(0, 1, 0.1);
    m.set(2, 3, 0.2);
    m.set(0, 2, 0.9);
    m.set(0, 3, 0.85);
    m.set(1, 2, 0.8);
    m.set(1, 3, 0.95);
    return m;
}

SymmetricMatrix random_distance(Rng& rng, std::size_t n) {
    std::vector<std::string> ids;
    for (std::size_t i = 0; i < n; ++i) ids.push_back("m" + std::to_string(i));
    SymmetricMatrix m(std::move(ids), 0.0);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j)
            m.set(i, j, rng.uniform(0.0, 1.0));
    return m;
}

} // namespace

TEST_CASE("average linkage reproduces the hand-worked tree") {
    auto tree = agglomerate(four_point(), Linkage::Average);
    REQUIRE(tree.merges.size() == 3);
    // (a,b) at 0.1, (c,d) at 0.2, then the pair of pairs at the mean of the
    // four cross distances (0.9 + 0.85 + 0.8 + 0.95) / 4
    CHECK(tree.merges[0].left == 0);
    CHECK(tree.merges[0].right == 1);
    CHECK(tree.merges[0].distance == Approx(0.1));
    CHECK(tree.merges[0].size == 2);
    CHECK(tree.merges[1].left == 2);
    CHECK(tree.merges[1].right == 3);
    CHECK(tree.merges[1].distance == Approx(0.2));
    CHECK(tree.merges[2].left == 4);
    CHECK(tree.merges[2].right == 5);
    CHECK(tree.merges[2].distance == Approx(0.875));
    CHECK(tree.merges[2].size == 4);
}

TEST_CASE("complete and single linkage take the extreme cross distances") {
    auto complete = agglomerate(four_point(), Linkage::Complete);
    CHECK(complete.merges[2].distance == Approx(0.95));
    auto single = agglomerate(four_point(), Linkage::Single);
    CHECK(single.merges[2].distance == Approx(0.8));
    // first two merges identical across linkages for this matrix
    for (const auto& t : {complete, single}) {
        CHECK(t.merges[0].left == 0);
        CHECK(t.merges[0].right == 1);
        CHECK(t.merges[1].left == 2);
        CHECK(t.merges[1].right == 3);
    }
}

TEST_CASE("unweighted average linkage pools member pairs, not subtrees") {
    // three leaves: merge (0,1) first, then the 2-cluster meets leaf 2 at the
    // plain mean of d(0,2) and d(1,2), regardless of subtree shape
    SymmetricMatrix m({"x", "y", "z"}, 0.0);
    m.set(0, 1, 0.1);
    m.set(0, 2, 0.5);
    m.set(1, 2, 0.9);
    auto tree = agglomerate(m, Linkage::Average);
    REQUIRE(tree.merges.size() == 2);
    CHECK(tree.merges[1].distance == Approx(0.7));
}

TEST_CASE("exact distance ties break toward the smallest node ids") {
    // everything at the same distance: merge order must be (0,1), (2,3),
    // then (4,5), purely by the id rule
    SymmetricMatrix m({"p", "q", "r", "s"}, 0.0);
    for (std::size_t i = 0; i < 4; ++i)
        for (std::size_t j = i + 1; j < 4; ++j)
            m.set(i, j, 0.5);
    for (auto link : {Linkage::Average, Linkage::Complete, Linkage::Single}) {
        auto tree = agglomerate(m, link);
        REQUIRE(tree.merges.size() == 3);
        CHECK(tree.merges[0].left == 0);
        CHECK(tree.merges[0].right == 1);
        CHECK(tree.merges[1].left == 2);
        CHECK(tree.merges[1].right == 3);
        CHECK(tree.merges[2].left == 4);
        CHECK(tree.merges[2].right == 5);
        for (const auto& mg : tree.merges) CHECK(mg.distance == Approx(0.5));
    }
}

TEST_CASE("repeated runs over the same matrix give identical trees") {
    Rng rng(31);
    for (int trial = 0; trial < 20; ++trial) {
        auto m = random_distance(rng, 12);
        auto t1 = agglomerate(m);
        auto t2 = agglomerate(m);
        REQUIRE(t1.merges.size() == t2.merges.size());
        for (std::size_t k = 0; k < t1.merges.size(); ++k) {
            CHECK(t1.merges[k].left == t2.merges[k].left);
            CHECK(t1.merges[k].right == t2.merges[k].right);
            CHECK(t1.merges[k].distance == t2.merges[k].distance);
        }
    }
}

TEST_CASE("merge distances never decrease for average and complete linkage") {
    Rng rng(47);
    for (int trial = 0; trial < 30; ++trial) {
        auto m = random_distance(rng, 10);
        for (auto link : {Linkage::Average, Linkage::Complete}) {
            auto tree = agglomerate(m, link);
            for (std::size_t k = 1; k < tree.merges.size(); ++k)
                CHECK(tree.merges[k].distance >= tree.merges[k - 1].distance - 1e-12);
        }
    }
}

TEST_CASE("invalid matrices are rejected") {
    SymmetricMatrix neg({"a", "b"}, 0.0);
    neg.set(0, 1, -0.25);
    CHECK_THROWS_AS(agglomerate(neg), std::invalid_argument);
    SymmetricMatrix lone({"a"}, 0.0);
    CHECK_THROWS_AS(agglomerate(lone), std::invalid_argument);
}

TEST_CASE("cut produces first-appearance labels at every depth") {
    auto tree = agglomerate(four_point());
    auto p4 = cut(tree, 4);
    CHECK(p4.assignment.at("a") == 0);
    CHECK(p4.assignment.at("b") == 1);
    CHECK(p4.assignment.at("c") == 2);
    CHECK(p4.assignment.at("d") == 3);
    auto p3 = cut(tree, 3);
    CHECK(p3.assignment.at("a") == 0);
    CHECK(p3.assignment.at("b") == 0);
    CHECK(p3.assignment.at("c") == 1);
    CHECK(p3.assignment.at("d") == 2);
    auto p2 = cut(tree, 2);
    CHECK(p2.assignment.at("a") == 0);
    CHECK(p2.assignment.at("b") == 0);
    CHECK(p2.assignment.at("c") == 1);
    CHECK(p2.assignment.at("d") == 1);
    auto p1 = cut(tree, 1);
    for (const auto& [id, c] : p1.assignment) CHECK(c == 0);
    CHECK_THROWS_AS(cut(tree, 0), std::invalid_argument);
    CHECK_THROWS_AS(cut(tree, 5), std::invalid_argument);
}

TEST_CASE("each cut refines the next coarser one") {
    Rng rng(53);
    for (int trial = 0; trial < 20; ++trial) {
        auto m = random_distance(rng, 14);
        auto tree = agglomerate(m);
        for (std::size_t k = 1; k < 14; ++k) {
            auto coarse = cut(tree, k);
            auto fine = cut(tree, k + 1);
            // two meters together in the fine cut stay together in the coarse
            std::map<int, std::set<int>> image;
            for (const auto& [id, fc] : fine.assignment)
                image[fc].insert(coarse.assignment.at(id));
            for (const auto& [fc, coarse_set] : image)
                CHECK(coarse_set.size() == 1);
        }
    }
}

TEST_CASE("majority vote follows the dominant recorded phase") {
    Partition p;
    p.assignment = {{"m1", 0}, {"m2", 0}, {"m3", 0}, {"m4", 1}, {"m5", 1}};
    p.n_clusters = 2;
    std::map<std::string, Phase> rec{{"m1", Phase::A},
                                     {"m2", Phase::A},
                                     {"m3", Phase::B},
                                     {"m4", Phase::C}};
    // m5 carries no recorded phase; it inherits the cluster vote
    auto vote = majority_vote(p, rec);
    CHECK(vote.labels.at("m1") == Phase::A);
    CHECK(vote.labels.at("m3") == Phase::A); // outvoted member is relabeled
    CHECK(vote.labels.at("m4") == Phase::C);
    CHECK(vote.labels.at("m5") == Phase::C);
    CHECK(vote.tied_clusters.empty());
}

TEST_CASE("vote ties resolve to the earliest phase and are reported") {
    Partition p;
    p.assignment = {{"m1", 0}, {"m2", 0}, {"m3", 1}, {"m4", 1}};
    p.n_clusters = 2;
    std::map<std::string, Phase> rec{{"m1", Phase::B},
                                     {"m2", Phase::C},
                                     {"m3", Phase::C},
                                     {"m4", Phase::B}};
    auto vote = majority_vote(p, rec);
    CHECK(vote.labels.at("m1") == Phase::B); // B beats C on the A,B,C order
    CHECK(vote.labels.at("m3") == Phase::B);
    REQUIRE(vote.tied_clusters.size() == 2);
    CHECK(vote.tied_clusters[0] == 0);
    CHECK(vote.tied_clusters[1] == 1);
}

TEST_CASE("a cluster without any labeled member cannot be voted") {
    Partition p;
    p.assignment = {{"m1", 0}, {"m2", 1}};
    p.n_clusters = 2;
    std::map<std::string, Phase> rec{{"m1", Phase::A}};
    CHECK_THROWS_WITH_AS(majority_vote(p, rec),
                         doctest::Contains("no labeled member"),
                         std::runtime_error);
}

TEST_CASE("reported accuracy truncates instead of rounding") {
    CHECK(truncate_percent(100.0 * 537.0 / 577.0) == Approx(93.0));
    CHECK(truncate_percent(100.0 * 804.0 / 919.0) == Approx(87.4));
    CHECK(truncate_percent(99.99) == Approx(99.9));
    CHECK(truncate_percent(100.0) == Approx(100.0));
    CHECK(truncate_percent(87.4999999) == Approx(87.4));
    CHECK(truncate_percent(0.0) == Approx(0.0));
    // exactly representable tenths pass through
    CHECK(truncate_percent(93.0) == Approx(93.0));
}

TEST_CASE("accuracy report counts per phase and overall") {
    std::map<std::string, Phase> rec{{"m1", Phase::A}, {"m2", Phase::A},
                                     {"m3", Phase::B}, {"m4", Phase::C},
                                     {"m5", Phase::C}};
    std::map<std::string, Phase> pred{{"m1", Phase::A}, {"m2", Phase::B},
                                      {"m3", Phase::B}, {"m4", Phase::C},
                                      {"m5", Phase::C}, {"m6", Phase::A}};
    auto r = phase_accuracy(pred, rec);
    // m6 has no recorded truth and must not count either way
    CHECK(r.total == 5);
    CHECK(r.correct == 4);
    CHECK(r.recorded_counts[0] == 2);
    CHECK(r.recorded_counts[1] == 1);
    CHECK(r.recorded_counts[2] == 2);
    CHECK(r.predicted_counts[0] == 1); // among scored meters
    CHECK(r.predicted_counts[1] == 2);
    CHECK(r.predicted_counts[2] == 2);
    CHECK(r.correct_counts[0] == 1);
    CHECK(r.correct_counts[1] == 1);
    CHECK(r.correct_counts[2] == 2);
    CHECK(r.percent == Approx(80.0));
    CHECK(r.reported_percent == Approx(80.0));
    auto text = accuracy_table_text(r);
    CHECK(text.find("80.0") != std::string::npos);
}

TEST_CASE("leaf order visits children smaller id first") {
    auto tree = agglomerate(four_point());
    auto order = leaf_order(tree);
    REQUIRE(order.size() == 4);
    CHECK(order[0] == 0);
    CHECK(order[1] == 1);
    CHECK(order[2] == 2);
    CHECK(order[3] == 3);

    // a tree where a leaf joins an existing cluster: merges (0,2) then (1,3)
    SymmetricMatrix m({"x", "y", "z"}, 0.0);
    m.set(0, 1, 0.9);
    m.set(0, 2, 0.1);
    m.set(1, 2, 0.8);
    auto t2 = agglomerate(m);
    REQUIRE(t2.merges.size() == 2);
    CHECK(t2.merges[0].left == 0);
    CHECK(t2.merges[0].right == 2);
    CHECK(t2.merges[1].left == 1);
    CHECK(t2.merges[1].right == 3);
    auto o2 = leaf_order(t2);
    REQUIRE(o2.size() == 3);
    CHECK(o2[0] == 1); // root visits leaf 1 before node 3
    CHECK(o2[1] == 0);
    CHECK(o2[2] == 2);
}

TEST_CASE("every leaf appears exactly once in the leaf order") {
    Rng rng(61);
    for (int trial = 0; trial < 10; ++trial) {
        auto m = random_distance(rng, 17);
        auto order = leaf_order(agglomerate(m));
        std::set<std::size_t> seen(order.begin(), order.end());
        CHECK(order.size() == 17);
        CHECK(seen.size() == 17);
        CHECK(*seen.rbegin() == 16);
    }
}

TEST_CASE("default cluster count scales with feeder size") {
    CHECK(default_cluster_count(20) == 6);
    CHECK(default_cluster_count(99) == 6);
    CHECK(default_cluster_count(100) == 12);
    CHECK(default_cluster_count(399) == 12);
    CHECK(default_cluster_count(400) == 36);
    CHECK(default_cluster_count(1000) == 36);
}

namespace {

// synthetic feeder where phase members share a sawtooth voltage signature
FeederDataset phase_toy(std::size_t per_phase, std::size_t len, Rng& rng) {
    FeederDataset ds;
    ds.name = "toy";
    ds.grid = TimeGrid{0, 15, len};
    std::vector<std::vector<double>> base(3, std::vector<double>(len));
    for (int ph = 0; ph < 3; ++ph)
        for (std::size_t t = 0; t < len; ++t)
            base[ph][t] = 120.0 + rng.uniform(-1.0, 1.0);
    std::size_t k = 0;
    for (int ph = 0; ph < 3; ++ph) {
        for (std::size_t i = 0; i < per_phase; ++i, ++k) {
            MeterSeries m;
            m.meter_id = "m" + std::to_string(k);
            m.recorded_phase = static_cast<Phase>(ph);
            m.power_kw.assign(len, 1.0);
            m.voltage.resize(len);
            for (std::size_t t = 0; t < len; ++t)
                m.voltage[t] = base[ph][t] + rng.uniform(-0.05, 0.05);
            ds.meters.push_back(std::move(m));
        }
    }
    return ds;
}

} // namespace

TEST_CASE("parameter sweep finds the grid cell that separates phases") {
    Rng rng(71);
    auto ds = phase_toy(6, 96, rng);
    std::map<std::string, Phase> rec;
    for (const auto& m : ds.meters) rec[m.meter_id] = *m.recorded_phase;

    std::vector<PowerBand> bands{{0.0, 2.0, 0.0}, {0.0, 0.5, 0.0}};
    std::vector<std::size_t> counts{3, 6, 40};
    auto sweep = sweep_parameters(ds, rec, bands, counts, Linkage::Average, {}, 2);

    REQUIRE(sweep.cells.size() == 6);
    // band-major layout
    CHECK(sweep.cells[0].band.p_high == Approx(2.0));
    CHECK(sweep.cells[0].n_clusters == 3);
    CHECK(sweep.cells[1].n_clusters == 6);
    CHECK(sweep.cells[3].band.p_high == Approx(0.5));

    // the 40-cluster cell exceeds 18 meters and must be NaN, never a winner
    CHECK(std::isnan(sweep.cells[2].accuracy_percent));
    CHECK(std::isnan(sweep.cells[5].accuracy_percent));
    // the second band selects nothing (power is 1.0 everywhere, fallback
    // still yields the full series) so it scores like the first
    REQUIRE_FALSE(sweep.maximizers.empty());
    for (const auto& cell : sweep.maximizers) {
        CHECK_FALSE(std::isnan(cell.accuracy_percent));
        CHECK(cell.accuracy_percent == Approx(100.0));
    }

    SUBCASE("csv dump marks the winners") {
        const auto path = std::filesystem::temp_directory_path() / "mtopo_sweep.csv";
        write_sweep_csv(sweep, path.string());
        std::ifstream in(path);
        std::string line;
        std::getline(in, line);
        CHECK(line.find("is_best") != std::string::npos);
        std::size_t best_rows = 0, rows = 0;
        while (std::getline(in, line)) {
            ++rows;
            if (line.size() >= 5 && line.compare(line.size() - 5, 5, ",true") == 0)
                ++best_rows;
        }
        CHECK(rows == 6);
        CHECK(best_rows == sweep.maximizers.size());
        std::filesystem::remove(path);
    }
}

TEST_CASE("partition csv lists meters with their cluster") {
    Partition p;
    p.assignment = {{"a", 0}, {"b", 1}};
    p.n_clusters = 2;
    const auto path = std::filesystem::temp_directory_path() / "mtopo_part.csv";
    write_partition_csv(p, path.string());
    std::ifstream in(path);
    std::string header, r1, r2;
    std::getline(in, header);
    std::getline(in, r1);
    std::getline(in, r2);
    CHECK(header == "meter_id,cluster");
    CHECK(r1 == "a,0");
    CHECK(r2 == "b,1");
    std::filesystem::remove(path);
}

TEST_CASE("linkage names round trip") {
    for (auto l : {Linkage::Average, Linkage::Complete, Linkage::Single})
        CHECK(parse_linkage(linkage_name(l)) == l);
    CHECK_THROWS_AS(parse_linkage("ward"), std::invalid_argument);
}
