#include "mmc/identity_injection.hpp"

#include <stdexcept>

namespace mmc {

const char* injection_mode_name(InjectionMode m) {
    switch (m) {
        case InjectionMode::ATTENTION_INHERITED: return "attention_inherited";
        case InjectionMode::TOKEN_CONCAT: return "token_concat";
        case InjectionMode::ADAPTER: return "adapter";
    }
    return "?";
}

InjectionMode parse_injection_mode(const std::string& s) {
    if (s == "attention_inherited") return InjectionMode::ATTENTION_INHERITED;
    if (s == "token_concat") return InjectionMode::TOKEN_CONCAT;
    if (s == "adapter") return InjectionMode::ADAPTER;
    throw std::invalid_argument("unknown injection mode: " + s);
}

InjectionBlock InjectionBlock::inherit(const MmAttentionBlock& base, std::size_t rank,
                                       double alpha, Rng& rng) {
    InjectionBlock b;
    b.mode = InjectionMode::ATTENTION_INHERITED;
    b.n_heads = base.n_heads;
    b.rope = base.rope;
    const std::size_t d = base.d_model();
    b.wq = base.wq_v.inherit_base(rank, alpha, rng);
    b.wk = base.wk_v.inherit_base(rank, alpha, rng);
    b.wv = base.wv_v.inherit_base(rank, alpha, rng);
    b.ffn = base.ffn_v.inherit_base(rank, alpha, rng);
    b.zero_fc = ReparamLinear::zero_init(d, d, true);
    return b;
}

InjectionBlock InjectionBlock::adapter_init(std::size_t n_heads, std::size_t head_dim,
                                            std::size_t ffn_hidden, std::size_t rank,
                                            double alpha, Rng& rng) {
    InjectionBlock b;
    b.mode = InjectionMode::ADAPTER;
    b.n_heads = n_heads;
    b.rope = RopeConfig::make_default(head_dim);
    const std::size_t d = n_heads * head_dim;
    b.wq = ReparamLinear::init(d, d, rng, false);
    b.wk = ReparamLinear::init(d, d, rng, false);
    b.wv = ReparamLinear::init(d, d, rng, false);
    b.ffn = FeedForward::init(d, ffn_hidden, rng);
    b.adapter_encoder = ReparamLinear::init(d, d, rng, false);
    b.wq.attach_adapter(rank, alpha, rng);
    b.wk.attach_adapter(rank, alpha, rng);
    b.wv.attach_adapter(rank, alpha, rng);
    b.ffn.attach_adapters(rank, alpha, rng);
    b.adapter_encoder.attach_adapter(rank, alpha, rng);
    b.zero_fc = ReparamLinear::zero_init(d, d, true);
    return b;
}

InjectionBlock InjectionBlock::concat_marker() {
    InjectionBlock b;
    b.mode = InjectionMode::TOKEN_CONCAT;
    return b;
}

void InjectionBlock::collect_trainable(std::vector<Tensor>& out) const {
    if (mode == InjectionMode::TOKEN_CONCAT) return;
    wq.collect_trainable(out);
    wk.collect_trainable(out);
    wv.collect_trainable(out);
    ffn.collect_trainable(out);
    zero_fc.collect_trainable(out);
    if (mode == InjectionMode::ADAPTER) adapter_encoder.collect_trainable(out);
}

Tensor InjectionBlock::inject(const Tensor& z, const Tensor& z_img,
                              const std::vector<RopeIndex>& rope_vid,
                              const std::vector<RopeIndex>& rope_img) const {
    if (mode == InjectionMode::TOKEN_CONCAT)
        throw std::invalid_argument("inject: TOKEN_CONCAT has no cross-attention branch");
    if (z.dims().size() != 2 || z_img.dims().size() != 2 || z.dims()[1] != z_img.dims()[1])
        throw std::invalid_argument("inject: shape mismatch");
    if (rope_vid.size() != z.dims()[0] || rope_img.size() != z_img.dims()[0])
        throw std::invalid_argument("inject: rope index count mismatch");
    if (z_img.dims()[0] == 0) throw std::invalid_argument("inject: empty image stream");

    Tensor img = z_img;
    if (mode == InjectionMode::ADAPTER) img = adapter_encoder.forward(rms_norm_rows(img));

    Tensor q = rope_rotate(wq.forward(rms_norm_rows(z)), rope_vid, rope);
    Tensor imgn = rms_norm_rows(img);
    Tensor k = rope_rotate(wk.forward(imgn), rope_img, rope);
    Tensor v = wv.forward(imgn);
    Tensor zp = multihead_attention(q, k, v, n_heads);
    return add(z, zero_fc.forward(ffn.forward(zp)));
}

DenoiserBlockResult denoiser_block_forward(const InjectionBlock& inj, const MmAttentionBlock& mm,
                                           const Tensor& z, const Tensor& z_text,
                                           const Tensor& z_img,
                                           const std::vector<RopeIndex>& rope_vid,
                                           const std::vector<RopeIndex>& rope_text,
                                           const std::vector<RopeIndex>& rope_img,
                                           bool conditioned) {
    if (!conditioned) {
        auto [v, t] = mm.forward(z, z_text, rope_vid, rope_text);
        return {v, t};
    }
    if (inj.mode == InjectionMode::TOKEN_CONCAT) {
        std::vector<Tensor> parts = {z_img, z};  // condition tokens prepended
        Tensor vstream = concat_rows(parts);
        std::vector<RopeIndex> rope_all = rope_img;
        rope_all.insert(rope_all.end(), rope_vid.begin(), rope_vid.end());
        auto [v_all, t] = mm.forward(vstream, z_text, rope_all, rope_text);
        return {slice_rows(v_all, z_img.dims()[0], z.dims()[0]), t};
    }
    Tensor z_hat = inj.inject(z, z_img, rope_vid, rope_img);
    auto [v, t] = mm.forward(z_hat, z_text, rope_vid, rope_text);
    return {v, t};
}

Tensor block_forward(const InjectionBlock& inj, const MmAttentionBlock& mm, const Tensor& z,
                     const Tensor& z_text, const Tensor& z_img,
                     const std::vector<RopeIndex>& rope_vid,
                     const std::vector<RopeIndex>& rope_text,
                     const std::vector<RopeIndex>& rope_img) {
    return denoiser_block_forward(inj, mm, z, z_text, z_img, rope_vid, rope_text, rope_img, true)
        .video;
}

}  // namespace mmc
