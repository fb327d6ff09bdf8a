#include "mmc/consolidation.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <stdexcept>

#include "json.hpp"

namespace mmc {

ObservationRecord make_observation(int frame_idx, std::string crop_ref, double clip_score,
                                   std::vector<double> embedding) {
    if (frame_idx < 0) throw std::invalid_argument("observation: frame must be >= 0");
    if (!(clip_score >= 0.0 && clip_score <= 1.0))
        throw std::invalid_argument("observation: clip_score must be in [0,1]");
    if (embedding.empty()) throw std::invalid_argument("observation: empty embedding");
    double norm2 = 0.0;
    for (double x : embedding) {
        if (!std::isfinite(x)) throw std::invalid_argument("observation: non-finite embedding");
        norm2 += x * x;
    }
    if (norm2 <= 0.0) throw std::invalid_argument("observation: zero embedding");
    const double inv = 1.0 / std::sqrt(norm2);
    for (double& x : embedding) x *= inv;
    return ObservationRecord{frame_idx, std::move(crop_ref), clip_score, std::move(embedding)};
}

std::vector<ObservationRecord> read_observations_jsonl(const std::filesystem::path& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("cannot open observations file: " + path.string());
    std::vector<ObservationRecord> out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(f, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            throw std::invalid_argument(path.string() + ":" + std::to_string(lineno) +
                                        ": bad JSON: " + e.what());
        }
        for (const auto& key : {"frame", "crop_ref", "clip_score", "embedding"})
            if (!j.contains(key))
                throw std::invalid_argument(path.string() + ":" + std::to_string(lineno) +
                                            ": missing field '" + key + "'");
        out.push_back(make_observation(j.at("frame").get<int>(),
                                       j.at("crop_ref").get<std::string>(),
                                       j.at("clip_score").get<double>(),
                                       j.at("embedding").get<std::vector<double>>()));
    }
    return out;
}

std::vector<ObservationRecord> validate_segmentation(std::vector<ObservationRecord> records,
                                                     double tau_clip) {
    if (!(tau_clip >= 0.0 && tau_clip <= 1.0))
        throw std::invalid_argument("validate_segmentation: tau_clip must be in [0,1]");
    std::vector<ObservationRecord> kept;
    kept.reserve(records.size());
    for (auto& r : records)
        if (r.clip_score > tau_clip) kept.push_back(std::move(r));
    return kept;
}

double cosine_distance(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() != b.size()) throw std::invalid_argument("cosine_distance: dim mismatch");
    double dot = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) dot += a[i] * b[i];
    return 1.0 - dot;  // embeddings are unit-normalized on ingest
}

SubjectGraph build_graph(std::vector<ObservationRecord> records, double tau_d,
                         std::size_t node_cap) {
    if (records.size() > node_cap)
        throw std::invalid_argument("build_graph: " + std::to_string(records.size()) +
                                    " nodes exceed the cap of " + std::to_string(node_cap));
    std::sort(records.begin(), records.end(), [](const auto& a, const auto& b) {
        return std::tie(a.frame_idx, a.crop_ref) < std::tie(b.frame_idx, b.crop_ref);
    });
    SubjectGraph g;
    g.tau_d = tau_d;
    g.nodes = std::move(records);
    const std::size_t n = g.nodes.size();
    const std::size_t words = (n + 63) / 64;
    g.adj.assign(n, std::vector<uint64_t>(words, 0));
    for (std::size_t u = 0; u < n; ++u) {
        if (!g.nodes[u].embedding.empty() && u + 1 < n &&
            g.nodes[u].embedding.size() != g.nodes[u + 1].embedding.size())
            throw std::invalid_argument("build_graph: embedding dimensionality varies");
        for (std::size_t v = u + 1; v < n; ++v) {
            if (cosine_distance(g.nodes[u].embedding, g.nodes[v].embedding) < tau_d) {
                g.adj[u][v / 64] |= uint64_t(1) << (v % 64);
                g.adj[v][u / 64] |= uint64_t(1) << (u % 64);
            }
        }
    }
    return g;
}

namespace {

using Bits = std::vector<uint64_t>;

std::size_t popcount_bits(const Bits& b) {
    std::size_t c = 0;
    for (uint64_t w : b) c += static_cast<std::size_t>(std::popcount(w));
    return c;
}

Bits and_bits(const Bits& a, const Bits& b) {
    Bits out(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] & b[i];
    return out;
}

bool test_bit(const Bits& b, std::size_t i) { return (b[i / 64] >> (i % 64)) & 1u; }
void clear_bit(Bits& b, std::size_t i) { b[i / 64] &= ~(uint64_t(1) << (i % 64)); }

// Greedy sequential coloring of the induced subgraph; the color count bounds
// the clique size from above.
std::size_t color_bound(const SubjectGraph& g, const Bits& cand) {
    const std::size_t n = g.size();
    std::vector<Bits> color_classes;
    std::size_t colors = 0;
    for (std::size_t v = 0; v < n; ++v) {
        if (!test_bit(cand, v)) continue;
        bool placed = false;
        for (auto& cls : color_classes) {
            bool conflict = false;
            for (std::size_t w = 0; w < g.adj[v].size(); ++w)
                if (g.adj[v][w] & cls[w]) {
                    conflict = true;
                    break;
                }
            if (!conflict) {
                cls[v / 64] |= uint64_t(1) << (v % 64);
                placed = true;
                break;
            }
        }
        if (!placed) {
            Bits cls(g.adj.empty() ? 0 : g.adj[0].size(), 0);
            cls[v / 64] |= uint64_t(1) << (v % 64);
            color_classes.push_back(std::move(cls));
            ++colors;
        }
    }
    return colors;
}

// Exact max-clique size by branch and bound over ascending vertex chains,
// pruned with the coloring bound. `depth` is the size of the chain so far.
void mc_size(const SubjectGraph& g, const Bits& cand, std::size_t depth, std::size_t& best) {
    if (depth > best) best = depth;
    const std::size_t cnt = popcount_bits(cand);
    if (cnt == 0 || depth + cnt <= best) return;
    if (depth + color_bound(g, cand) <= best) return;
    Bits rest = cand;
    for (std::size_t v = 0; v < g.size(); ++v) {
        if (!test_bit(rest, v)) continue;
        if (depth + popcount_bits(rest) <= best) break;
        clear_bit(rest, v);  // chains through v only use vertices tried later
        mc_size(g, and_bits(rest, g.adj[v]), depth + 1, best);
    }
}

// Does `cand` contain a clique of size k (as an ascending chain)?
bool exists_clique(const SubjectGraph& g, const Bits& cand, std::size_t k) {
    if (k == 0) return true;
    if (popcount_bits(cand) < k) return false;
    if (color_bound(g, cand) < k) return false;
    Bits rest = cand;
    for (std::size_t v = 0; v < g.size(); ++v) {
        if (!test_bit(rest, v)) continue;
        clear_bit(rest, v);
        if (exists_clique(g, and_bits(rest, g.adj[v]), k - 1)) return true;
    }
    return false;
}

Clique max_clique_in(const SubjectGraph& g, const Bits& alive) {
    std::size_t best = 0;
    mc_size(g, alive, 0, best);
    if (best == 0) throw std::invalid_argument("max_clique: empty graph");

    // lexicographically smallest maximum clique, built smallest-vertex-first
    Clique c;
    Bits cand = alive;
    std::size_t need = best;
    while (need > 0) {
        bool advanced = false;
        for (std::size_t v = 0; v < g.size(); ++v) {
            if (!test_bit(cand, v)) continue;
            clear_bit(cand, v);  // later picks must be > v anyway
            Bits next = and_bits(cand, g.adj[v]);
            if (exists_clique(g, next, need - 1)) {
                c.members.push_back(v);
                cand = std::move(next);
                --need;
                advanced = true;
                break;
            }
        }
        if (!advanced) throw std::logic_error("max_clique: extraction failed");
    }

    // medoid representative
    double best_sum = 0.0;
    std::size_t rep = c.members[0];
    for (std::size_t i = 0; i < c.members.size(); ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < c.members.size(); ++j)
            if (i != j)
                s += cosine_distance(g.nodes[c.members[i]].embedding,
                                     g.nodes[c.members[j]].embedding);
        if (i == 0 || s < best_sum) {
            best_sum = s;
            rep = c.members[i];
        }
    }
    c.representative = rep;
    return c;
}

}  // namespace

Clique max_clique(const SubjectGraph& g) {
    if (g.size() == 0) throw std::invalid_argument("max_clique: empty graph");
    Bits all((g.size() + 63) / 64, 0);
    for (std::size_t i = 0; i < g.size(); ++i) all[i / 64] |= uint64_t(1) << (i % 64);
    return max_clique_in(g, all);
}

std::vector<Clique> consolidate(const SubjectGraph& g, std::size_t total_frames) {
    if (total_frames < 1) throw std::invalid_argument("consolidate: total_frames must be >= 1");
    std::vector<Clique> out;
    Bits alive((g.size() + 63) / 64, 0);
    for (std::size_t i = 0; i < g.size(); ++i) alive[i / 64] |= uint64_t(1) << (i % 64);
    const double threshold = static_cast<double>(total_frames) / 3.0;
    while (popcount_bits(alive) > 0) {
        Clique c = max_clique_in(g, alive);
        if (!(static_cast<double>(c.members.size()) > threshold)) break;
        for (std::size_t v : c.members) clear_bit(alive, v);
        out.push_back(std::move(c));
    }
    return out;
}

}  // namespace mmc
