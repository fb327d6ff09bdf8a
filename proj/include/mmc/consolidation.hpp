#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace mmc {

// One detected subject crop in one frame; embedding is unit-normalized on
// ingest.
struct ObservationRecord {
    int frame_idx = 0;
    std::string crop_ref;
    double clip_score = 0.0;
    std::vector<double> embedding;
};

// Validates fields and normalizes the embedding to unit length.
ObservationRecord make_observation(int frame_idx, std::string crop_ref, double clip_score,
                                   std::vector<double> embedding);

// JSONL, one object per line with fields exactly:
//   frame, crop_ref, clip_score, embedding
std::vector<ObservationRecord> read_observations_jsonl(const std::filesystem::path& path);

// Segmentation-validation gate: keep records with clip_score > tau_clip.
std::vector<ObservationRecord> validate_segmentation(std::vector<ObservationRecord> records,
                                                     double tau_clip);

// Embedding-distance graph. Nodes are canonically sorted by
// (frame_idx, crop_ref); edge (u,v) iff cosine distance < tau_d.
struct SubjectGraph {
    std::vector<ObservationRecord> nodes;
    std::vector<std::vector<uint64_t>> adj;  // bitset rows, no self edges
    double tau_d = 0.3;

    std::size_t size() const { return nodes.size(); }
    bool adjacent(std::size_t u, std::size_t v) const {
        return (adj[u][v / 64] >> (v % 64)) & 1u;
    }
};

inline constexpr std::size_t kDefaultNodeCap = 2000;

SubjectGraph build_graph(std::vector<ObservationRecord> records, double tau_d,
                         std::size_t node_cap = kDefaultNodeCap);

struct Clique {
    std::vector<std::size_t> members;  // sorted ascending
    std::size_t representative = 0;    // medoid, lowest index on ties
};

// Exact maximum clique (branch and bound with a greedy coloring bound);
// among maximum cliques, the lexicographically smallest sorted index
// sequence wins. Throws on an empty graph.
Clique max_clique(const SubjectGraph& g);

// Repeatedly extract the maximum clique while its size strictly exceeds
// total_frames / 3, removing accepted members from the graph.
std::vector<Clique> consolidate(const SubjectGraph& g, std::size_t total_frames);

double cosine_distance(const std::vector<double>& a, const std::vector<double>& b);

}  // namespace mmc
