#pragma once

#include <vector>

#include "mmc/tensor.hpp"
#include "mmc/token_layout.hpp"

namespace mmc {

// Integer position triple for the rotary encoding. Text tokens keep the
// spatial plane at (0, 0) and advance along t only.
struct RopeIndex {
    int t = 0;
    int y = 0;
    int x = 0;
    bool operator==(const RopeIndex&) const = default;
};

// Head-dimension partition across the three axes plus the frequency base.
// Each component must be even and >= 2.
struct RopeConfig {
    std::size_t head_dim = 8;
    std::size_t d_t = 4;
    std::size_t d_y = 2;
    std::size_t d_x = 2;
    double theta = 10000.0;

    // Split head_dim into even parts as equally as possible, favoring d_t
    // then d_y. Requires head_dim >= 6 and even.
    static RopeConfig make_default(std::size_t head_dim);
    void validate() const;
};

std::vector<RopeIndex> assign_text_indices(int start_t, std::size_t count);
std::vector<RopeIndex> assign_image_sem_indices(int m1, std::size_t w, std::size_t h);
std::vector<RopeIndex> assign_image_vae_indices(int m1, std::size_t w, std::size_t h);

// Per-subject grids used when walking a TokenStream.
struct SubjectGrids {
    std::size_t sem_w = 0, sem_h = 0;
    std::size_t vae_w = 0, vae_h = 0;
};

// One RopeIndex per stream entry, in sequence order. Text segments ramp along
// t; a subject's sem grid sits at t = m1+1 and its vae grid at t = m1+2 with
// identical spatial layout, where m1 is the temporal index of the last text
// token before that subject's sem block. The following text segment resumes
// at m1+3.
std::vector<RopeIndex> assign_stream(const TokenStream& stream,
                                     const std::vector<SubjectGrids>& grids);

// Rotate one head_dim vector: axis a contributes d_a/2 planar rotations on
// consecutive pairs, pair j turning by idx_a * theta^(-2j/d_a).
Tensor apply_rope(const Tensor& vec, const RopeIndex& idx, const RopeConfig& cfg);

// Same rotation applied to every head block of every row of x [n x d],
// d a multiple of cfg.head_dim, row i rotated by indices[i]. Differentiable.
Tensor rope_rotate(const Tensor& x, const std::vector<RopeIndex>& indices,
                   const RopeConfig& cfg);

}  // namespace mmc
