#pragma once

#include <vector>

#include "mmc/mm_attention.hpp"

namespace mmc {

enum class InjectionMode { ATTENTION_INHERITED, TOKEN_CONCAT, ADAPTER };

const char* injection_mode_name(InjectionMode m);
InjectionMode parse_injection_mode(const std::string& s);

// Cross-attention branch that feeds enhanced image tokens into the video
// stream, gated by a zero-initialized output projection so a fresh block is
// an exact no-op. In ATTENTION_INHERITED mode the projections start as deep
// copies of a pretrained MM-attention block's V-stream weights; in ADAPTER
// mode they are independent random weights behind an extra image encoder.
struct InjectionBlock {
    ReparamLinear wq;  // video side
    ReparamLinear wk, wv;  // image side
    FeedForward ffn;
    ReparamLinear zero_fc;  // all-zero weight and bias at init, fully trainable
    ReparamLinear adapter_encoder;  // ADAPTER mode only
    InjectionMode mode = InjectionMode::ATTENTION_INHERITED;
    std::size_t n_heads = 4;
    RopeConfig rope;

    static InjectionBlock inherit(const MmAttentionBlock& base, std::size_t rank, double alpha,
                                  Rng& rng);
    static InjectionBlock adapter_init(std::size_t n_heads, std::size_t head_dim,
                                       std::size_t ffn_hidden, std::size_t rank, double alpha,
                                       Rng& rng);
    static InjectionBlock concat_marker();  // TOKEN_CONCAT carries no branch weights

    void collect_trainable(std::vector<Tensor>& out) const;

    // z + zero_fc(FFN(cross_attn(z, z_img))). Rope is applied to q/k for
    // spatial alignment between video cells and image cells.
    Tensor inject(const Tensor& z, const Tensor& z_img, const std::vector<RopeIndex>& rope_vid,
                  const std::vector<RopeIndex>& rope_img) const;
};

// One denoiser block: identity injection followed by the frozen base
// MM-attention against the text stream. In TOKEN_CONCAT mode the image tokens
// are prepended to the video stream inside the MM-attention instead.
struct DenoiserBlockResult {
    Tensor video;
    Tensor text;
};
DenoiserBlockResult denoiser_block_forward(const InjectionBlock& inj, const MmAttentionBlock& mm,
                                           const Tensor& z, const Tensor& z_text,
                                           const Tensor& z_img,
                                           const std::vector<RopeIndex>& rope_vid,
                                           const std::vector<RopeIndex>& rope_text,
                                           const std::vector<RopeIndex>& rope_img,
                                           bool conditioned);

// Spec surface: video-side output only.
Tensor block_forward(const InjectionBlock& inj, const MmAttentionBlock& mm, const Tensor& z,
                     const Tensor& z_text, const Tensor& z_img,
                     const std::vector<RopeIndex>& rope_vid,
                     const std::vector<RopeIndex>& rope_text,
                     const std::vector<RopeIndex>& rope_img);

}  // namespace mmc
