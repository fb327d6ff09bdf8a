#pragma once

#include <vector>

#include "mmc/lora.hpp"
#include "mmc/rope3d.hpp"
#include "mmc/tensor.hpp"
#include "mmc/token_layout.hpp"

namespace mmc {

// Two-layer GELU feed-forward.
struct FeedForward {
    ReparamLinear up;
    ReparamLinear down;

    Tensor forward(const Tensor& x) const { return down.forward(gelu(up.forward(x))); }
    void collect_trainable(std::vector<Tensor>& out) const {
        up.collect_trainable(out);
        down.collect_trainable(out);
    }
    static FeedForward init(std::size_t d, std::size_t hidden, Rng& rng, bool frozen = true);
    void attach_adapters(std::size_t rank, double alpha, Rng& rng);
    FeedForward inherit_base(std::size_t rank, double alpha, Rng& rng) const;
};

// Joint attention over an image/video-like stream V and a text-like stream T.
// Each stream projects with its own q/k/v, rotary rotation is applied from the
// given indices, the streams are concatenated (V first) for one full
// bidirectional softmax attention, and each stream gets residual + its own FFN.
struct MmAttentionBlock {
    ReparamLinear wq_v, wk_v, wv_v;
    ReparamLinear wq_t, wk_t, wv_t;
    FeedForward ffn_v, ffn_t;
    std::size_t n_heads = 4;
    std::size_t head_dim = 8;
    RopeConfig rope;

    std::size_t d_model() const { return n_heads * head_dim; }

    static MmAttentionBlock init(std::size_t n_heads, std::size_t head_dim, std::size_t ffn_hidden,
                                 Rng& rng);
    void attach_adapters(std::size_t rank, double alpha, Rng& rng);
    void collect_trainable(std::vector<Tensor>& out) const;

    // (out_v, out_t)
    std::pair<Tensor, Tensor> forward(const Tensor& tokens_v, const Tensor& tokens_t,
                                      const std::vector<RopeIndex>& rope_v,
                                      const std::vector<RopeIndex>& rope_t) const;
};

// Multi-head softmax attention over already-projected rows, scale 1/sqrt(hd).
Tensor multihead_attention(const Tensor& q, const Tensor& k, const Tensor& v,
                           std::size_t n_heads);

// Text-image interaction pass: the vae token stream z_I attends jointly with
// the text-space stream z_T (prompt + sem tokens) under the stream's rope
// assignment. Returns (enhanced_text, enhanced_image).
struct InteractionResult {
    Tensor text;   // z_T hat
    Tensor image;  // z_I hat
};
InteractionResult text_image_interaction(const MmAttentionBlock& block, const Tensor& z_t,
                                         const Tensor& z_i, const TokenStream& stream,
                                         const std::vector<SubjectGrids>& grids);

}  // namespace mmc
