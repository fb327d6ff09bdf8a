#include <algorithm>
#include <cmath>

#include "doctest.h"
#include "mmc/consolidation.hpp"
#include "mmc/tensor_file.hpp"
#include "oracles.hpp"
#include "testutil.hpp"

using namespace mmc;

namespace {

// graph from an explicit edge list over synthetic unit embeddings; distances
// are forced by wiring the adjacency directly
SubjectGraph graph_from_edges(std::size_t n, const std::vector<std::pair<int, int>>& edges) {
    SubjectGraph g;
    g.tau_d = 0.5;
    for (std::size_t i = 0; i < n; ++i) {
        ObservationRecord r;
        r.frame_idx = static_cast<int>(i);
        r.crop_ref = "n" + std::to_string(i);
        r.clip_score = 1.0;
        r.embedding = {1.0, 0.0};
        g.nodes.push_back(r);
    }
    g.adj.assign(n, std::vector<uint64_t>((n + 63) / 64, 0));
    for (auto [u, v] : edges) {
        g.adj[u][v / 64] |= uint64_t(1) << (v % 64);
        g.adj[v][u / 64] |= uint64_t(1) << (u % 64);
    }
    return g;
}

ObservationRecord obs(int frame, const std::string& ref, double score,
                      std::vector<double> emb) {
    return make_observation(frame, ref, score, std::move(emb));
}

}  // namespace

TEST_CASE("segmentation validation keeps strictly-above-threshold records") {
    std::vector<ObservationRecord> recs = {obs(0, "a", 0.2, {1, 0}), obs(1, "b", 0.35, {1, 0})};
    CHECK(validate_segmentation(recs, 0.3).size() == 1);
    CHECK(validate_segmentation(recs, 0.3)[0].crop_ref == "b");
    CHECK(validate_segmentation(recs, 0.0).size() == 2);  // all with score > 0
    CHECK(validate_segmentation(recs, 1.0).empty());
    CHECK_THROWS_AS((void)validate_segmentation(recs, 1.5), std::invalid_argument);
}

TEST_CASE("observation ingest normalizes and validates") {
    ObservationRecord r = obs(0, "x", 0.5, {3.0, 4.0});
    double n = 0.0;
    for (double v : r.embedding) n += v * v;
    CHECK(std::abs(std::sqrt(n) - 1.0) < 1e-9);
    CHECK_THROWS_AS((void)obs(-1, "x", 0.5, {1, 0}), std::invalid_argument);
    CHECK_THROWS_AS((void)obs(0, "x", 2.0, {1, 0}), std::invalid_argument);
    CHECK_THROWS_AS((void)obs(0, "x", 0.5, {0, 0}), std::invalid_argument);
    CHECK_THROWS_AS((void)obs(0, "x", 0.5, {}), std::invalid_argument);
}

TEST_CASE("identical embeddings give a complete graph") {
    std::vector<ObservationRecord> recs;
    for (int i = 0; i < 4; ++i) recs.push_back(obs(i, "r" + std::to_string(i), 1.0, {1, 2, 3}));
    SubjectGraph g = build_graph(recs, 0.1);
    for (std::size_t u = 0; u < 4; ++u)
        for (std::size_t v = 0; v < 4; ++v)
            if (u != v) CHECK(g.adjacent(u, v));
}

TEST_CASE("orthogonal embeddings give an edgeless graph at tau 0.5") {
    std::vector<ObservationRecord> recs = {obs(0, "a", 1.0, {1, 0}), obs(1, "b", 1.0, {0, 1})};
    SubjectGraph g = build_graph(recs, 0.5);  // cosine distance is 1
    CHECK_FALSE(g.adjacent(0, 1));
}

TEST_CASE("empty input gives an empty graph") {
    SubjectGraph g = build_graph({}, 0.3);
    CHECK(g.size() == 0);
    CHECK_THROWS_AS((void)max_clique(g), std::invalid_argument);
}

TEST_CASE("node cap guards pathological inputs") {
    std::vector<ObservationRecord> recs;
    for (int i = 0; i < 5; ++i) recs.push_back(obs(i, "r", 1.0, {1, 0}));
    CHECK_THROWS_AS((void)build_graph(recs, 0.3, 4), std::invalid_argument);
}

TEST_CASE("triangle plus isolated node yields the triangle") {
    SubjectGraph g = graph_from_edges(4, {{0, 1}, {0, 2}, {1, 2}});
    Clique c = max_clique(g);
    CHECK(c.members == std::vector<std::size_t>{0, 1, 2});
}

TEST_CASE("edgeless graph picks the lexicographically first node") {
    SubjectGraph g = graph_from_edges(3, {});
    Clique c = max_clique(g);
    CHECK(c.members == std::vector<std::size_t>{0});
    CHECK(c.representative == 0);
}

TEST_CASE("two disjoint triangles: tie broken lexicographically") {
    SubjectGraph g = graph_from_edges(6, {{0, 1}, {0, 2}, {1, 2}, {3, 4}, {3, 5}, {4, 5}});
    Clique c = max_clique(g);
    CHECK(c.members == std::vector<std::size_t>{0, 1, 2});
}

TEST_CASE("exactness against brute force on random graphs") {
    // 200 random graphs, n <= 15, density in {0.2, 0.5, 0.8}
    Rng rng(91);
    const double densities[3] = {0.2, 0.5, 0.8};
    for (int trial = 0; trial < 200; ++trial) {
        const std::size_t n = 1 + rng.next_u64() % 15;
        const double p = densities[trial % 3];
        std::vector<std::pair<int, int>> edges;
        for (std::size_t u = 0; u < n; ++u)
            for (std::size_t v = u + 1; v < n; ++v)
                if (rng.uniform() < p) edges.emplace_back(static_cast<int>(u),
                                                          static_cast<int>(v));
        SubjectGraph g = graph_from_edges(n, edges);
        Clique got = max_clique(g);
        auto want = oracle::brute_max_clique(g);
        CHECK(got.members == want);
    }
}

TEST_CASE("consolidate accepts cliques strictly above one third") {
    // 9 frames, two disjoint 4-cliques: both pass (4 > 3)
    std::vector<std::pair<int, int>> edges;
    for (int u = 0; u < 4; ++u)
        for (int v = u + 1; v < 4; ++v) {
            edges.emplace_back(u, v);
            edges.emplace_back(u + 4, v + 4);
        }
    SubjectGraph g = graph_from_edges(8, edges);
    auto cliques = consolidate(g, 9);
    REQUIRE(cliques.size() == 2);
    CHECK(cliques[0].members == std::vector<std::size_t>{0, 1, 2, 3});
    CHECK(cliques[1].members == std::vector<std::size_t>{4, 5, 6, 7});
}

TEST_CASE("consolidate boundary: exactly one third is rejected") {
    // 9 frames, max clique size 3: 3 > 3 is false ⇒ no subjects
    SubjectGraph g = graph_from_edges(5, {{0, 1}, {0, 2}, {1, 2}});
    CHECK(consolidate(g, 9).empty());
    // one more than a third passes
    auto accepted = consolidate(g, 8);  // threshold 8/3 = 2.67 < 3
    REQUIRE(accepted.size() == 1);
    CHECK(accepted[0].members.size() == 3);
}

TEST_CASE("singleton graph with one frame qualifies") {
    SubjectGraph g = graph_from_edges(1, {});
    auto cliques = consolidate(g, 1);  // 1 > 1/3
    REQUIRE(cliques.size() == 1);
    CHECK(cliques[0].members == std::vector<std::size_t>{0});
}

TEST_CASE("consolidate returns disjoint cliques of non-increasing size") {
    Rng rng(93);
    for (int trial = 0; trial < 20; ++trial) {
        const std::size_t n = 6 + rng.next_u64() % 8;
        std::vector<std::pair<int, int>> edges;
        for (std::size_t u = 0; u < n; ++u)
            for (std::size_t v = u + 1; v < n; ++v)
                if (rng.uniform() < 0.6) edges.emplace_back(static_cast<int>(u),
                                                            static_cast<int>(v));
        SubjectGraph g = graph_from_edges(n, edges);
        const std::size_t total_frames = 6;
        auto cliques = consolidate(g, total_frames);
        std::vector<bool> used(n, false);
        std::size_t prev = n + 1;
        for (const auto& c : cliques) {
            CHECK(c.members.size() <= prev);
            CHECK(static_cast<double>(c.members.size()) >
                  static_cast<double>(total_frames) / 3.0);
            prev = c.members.size();
            for (std::size_t m : c.members) {
                CHECK_FALSE(used[m]);
                used[m] = true;
            }
            CHECK(std::find(c.members.begin(), c.members.end(), c.representative) !=
                  c.members.end());
        }
    }
}

TEST_CASE("medoid representative minimizes summed distance") {
    // three close nodes, the middle one is the medoid
    std::vector<ObservationRecord> recs = {
        obs(0, "a", 1.0, {1.0, 0.00}),
        obs(1, "b", 1.0, {1.0, 0.10}),
        obs(2, "c", 1.0, {1.0, 0.20}),
    };
    SubjectGraph g = build_graph(recs, 0.5);
    Clique c = max_clique(g);
    REQUIRE(c.members.size() == 3);
    CHECK(g.nodes[c.representative].crop_ref == "b");
}

TEST_CASE("build_graph canonicalizes input order") {
    std::vector<ObservationRecord> recs = {
        obs(2, "z", 1.0, {1, 0, 0}),
        obs(0, "a", 1.0, {0.9, 0.1, 0}),
        obs(1, "m", 1.0, {0, 1, 0}),
        obs(0, "b", 1.0, {0.92, 0.05, 0}),
    };
    SubjectGraph g1 = build_graph(recs, 0.3);
    std::reverse(recs.begin(), recs.end());
    SubjectGraph g2 = build_graph(recs, 0.3);
    REQUIRE(g1.size() == g2.size());
    for (std::size_t i = 0; i < g1.size(); ++i) {
        CHECK(g1.nodes[i].crop_ref == g2.nodes[i].crop_ref);
        CHECK(g1.nodes[i].frame_idx == g2.nodes[i].frame_idx);
    }
    auto c1 = consolidate(g1, 3), c2 = consolidate(g2, 3);
    REQUIRE(c1.size() == c2.size());
    for (std::size_t i = 0; i < c1.size(); ++i) CHECK(c1[i].members == c2[i].members);
}

TEST_CASE("jsonl ingest reads the exact field names") {
    auto dir = testutil::scratch_dir("jsonl");
    const char* doc =
        "{\"frame\": 0, \"crop_ref\": \"f0_s0\", \"clip_score\": 0.9, \"embedding\": [1, 0]}\n"
        "\n"
        "{\"frame\": 1, \"crop_ref\": \"f1_s0\", \"clip_score\": 0.8, \"embedding\": [0.9, "
        "0.1]}\n";
    atomic_write_file(dir / "obs.jsonl", doc);
    auto recs = read_observations_jsonl(dir / "obs.jsonl");
    REQUIRE(recs.size() == 2);
    CHECK(recs[0].crop_ref == "f0_s0");
    CHECK(recs[1].frame_idx == 1);

    atomic_write_file(dir / "bad.jsonl", "{\"frame\": 0, \"clip_score\": 0.9}\n");
    CHECK_THROWS_AS((void)read_observations_jsonl(dir / "bad.jsonl"), std::invalid_argument);
    atomic_write_file(dir / "garbled.jsonl", "not json\n");
    CHECK_THROWS_AS((void)read_observations_jsonl(dir / "garbled.jsonl"), std::invalid_argument);
}
