#include "mmc/mm_attention.hpp"

#include <cmath>
#include <stdexcept>

namespace mmc {

FeedForward FeedForward::init(std::size_t d, std::size_t hidden, Rng& rng, bool frozen) {
    FeedForward f;
    f.up = ReparamLinear::init(d, hidden, rng, true, frozen);
    f.down = ReparamLinear::init(hidden, d, rng, true, frozen);
    return f;
}

void FeedForward::attach_adapters(std::size_t rank, double alpha, Rng& rng) {
    up.attach_adapter(rank, alpha, rng);
    down.attach_adapter(rank, alpha, rng);
}

FeedForward FeedForward::inherit_base(std::size_t rank, double alpha, Rng& rng) const {
    FeedForward f;
    f.up = up.inherit_base(rank, alpha, rng);
    f.down = down.inherit_base(rank, alpha, rng);
    return f;
}

Tensor multihead_attention(const Tensor& q, const Tensor& k, const Tensor& v,
                           std::size_t n_heads) {
    const std::size_t d = q.dims()[1];
    if (d % n_heads != 0) throw std::invalid_argument("multihead_attention: d % heads != 0");
    const std::size_t hd = d / n_heads;
    const double att_scale = 1.0 / std::sqrt(static_cast<double>(hd));
    std::vector<Tensor> head_outs;
    head_outs.reserve(n_heads);
    for (std::size_t h = 0; h < n_heads; ++h) {
        Tensor qh = slice_cols(q, h * hd, hd);
        Tensor kh = slice_cols(k, h * hd, hd);
        Tensor vh = slice_cols(v, h * hd, hd);
        Tensor attn = softmax_rows(scale(matmul(qh, transpose(kh)), att_scale));
        head_outs.push_back(matmul(attn, vh));
    }
    return concat_cols(head_outs);
}

MmAttentionBlock MmAttentionBlock::init(std::size_t n_heads, std::size_t head_dim,
                                        std::size_t ffn_hidden, Rng& rng) {
    MmAttentionBlock b;
    b.n_heads = n_heads;
    b.head_dim = head_dim;
    b.rope = RopeConfig::make_default(head_dim);
    const std::size_t d = n_heads * head_dim;
    b.wq_v = ReparamLinear::init(d, d, rng, false);
    b.wk_v = ReparamLinear::init(d, d, rng, false);
    b.wv_v = ReparamLinear::init(d, d, rng, false);
    b.wq_t = ReparamLinear::init(d, d, rng, false);
    b.wk_t = ReparamLinear::init(d, d, rng, false);
    b.wv_t = ReparamLinear::init(d, d, rng, false);
    b.ffn_v = FeedForward::init(d, ffn_hidden, rng);
    b.ffn_t = FeedForward::init(d, ffn_hidden, rng);
    return b;
}

void MmAttentionBlock::attach_adapters(std::size_t rank, double alpha, Rng& rng) {
    wq_v.attach_adapter(rank, alpha, rng);
    wk_v.attach_adapter(rank, alpha, rng);
    wv_v.attach_adapter(rank, alpha, rng);
    wq_t.attach_adapter(rank, alpha, rng);
    wk_t.attach_adapter(rank, alpha, rng);
    wv_t.attach_adapter(rank, alpha, rng);
    ffn_v.attach_adapters(rank, alpha, rng);
    ffn_t.attach_adapters(rank, alpha, rng);
}

void MmAttentionBlock::collect_trainable(std::vector<Tensor>& out) const {
    wq_v.collect_trainable(out);
    wk_v.collect_trainable(out);
    wv_v.collect_trainable(out);
    wq_t.collect_trainable(out);
    wk_t.collect_trainable(out);
    wv_t.collect_trainable(out);
    ffn_v.collect_trainable(out);
    ffn_t.collect_trainable(out);
}

std::pair<Tensor, Tensor> MmAttentionBlock::forward(const Tensor& tokens_v,
                                                    const Tensor& tokens_t,
                                                    const std::vector<RopeIndex>& rope_v,
                                                    const std::vector<RopeIndex>& rope_t) const {
    const std::size_t d = d_model();
    if (tokens_v.dims().size() != 2 || tokens_v.dims()[1] != d)
        throw std::invalid_argument("mm_attention: V stream must be [n_v x d]");
    if (tokens_t.dims().size() != 2 || tokens_t.dims()[1] != d)
        throw std::invalid_argument("mm_attention: T stream must be [n_t x d]");
    const std::size_t n_v = tokens_v.dims()[0], n_t = tokens_t.dims()[0];
    if (rope_v.size() != n_v || rope_t.size() != n_t)
        throw std::invalid_argument("mm_attention: rope index count mismatch");
    if (n_v + n_t == 0) throw std::invalid_argument("mm_attention: both streams empty");

    auto projected = [&](const ReparamLinear& w, const Tensor& xn,
                         const std::vector<RopeIndex>& idx, bool rotate) {
        Tensor p = w.forward(xn);
        return rotate ? rope_rotate(p, idx, rope) : p;
    };

    Tensor q, k, v;
    if (n_v > 0 && n_t > 0) {
        Tensor vn = rms_norm_rows(tokens_v);
        Tensor tn = rms_norm_rows(tokens_t);
        std::vector<Tensor> qs = {projected(wq_v, vn, rope_v, true),
                                  projected(wq_t, tn, rope_t, true)};
        std::vector<Tensor> ks = {projected(wk_v, vn, rope_v, true),
                                  projected(wk_t, tn, rope_t, true)};
        std::vector<Tensor> vs = {wv_v.forward(vn), wv_t.forward(tn)};
        q = concat_rows(qs);
        k = concat_rows(ks);
        v = concat_rows(vs);
    } else if (n_v > 0) {
        Tensor vn = rms_norm_rows(tokens_v);
        q = projected(wq_v, vn, rope_v, true);
        k = projected(wk_v, vn, rope_v, true);
        v = wv_v.forward(vn);
    } else {
        Tensor tn = rms_norm_rows(tokens_t);
        q = projected(wq_t, tn, rope_t, true);
        k = projected(wk_t, tn, rope_t, true);
        v = wv_t.forward(tn);
    }

    Tensor attn_out = multihead_attention(q, k, v, n_heads);

    auto finish = [&](const Tensor& residual, const Tensor& att, const FeedForward& ffn) {
        Tensor h = add(residual, att);
        return add(h, ffn.forward(rms_norm_rows(h)));
    };

    Tensor out_v, out_t;
    if (n_v > 0) out_v = finish(tokens_v, slice_rows(attn_out, 0, n_v), ffn_v);
    else out_v = tokens_v;
    if (n_t > 0) out_t = finish(tokens_t, slice_rows(attn_out, n_v, n_t), ffn_t);
    else out_t = tokens_t;
    return {out_v, out_t};
}

InteractionResult text_image_interaction(const MmAttentionBlock& block, const Tensor& z_t,
                                         const Tensor& z_i, const TokenStream& stream,
                                         const std::vector<SubjectGrids>& grids) {
    std::vector<RopeIndex> all = assign_stream(stream, grids);

    std::vector<RopeIndex> rope_t, rope_i;
    for (const TokenEntry& e : stream.entries) {
        if (e.kind == TokenKind::IMG_VAE) rope_i.push_back(all[e.seq_pos]);
        else rope_t.push_back(all[e.seq_pos]);
    }
    if (z_t.dims()[0] != rope_t.size())
        throw std::invalid_argument("text_image_interaction: z_T rows != text-space token count");
    if (z_i.dims()[0] != rope_i.size())
        throw std::invalid_argument("text_image_interaction: z_I rows != vae token count");

    auto [out_i, out_t] = block.forward(z_i, z_t, rope_i, rope_t);
    return InteractionResult{out_t, out_i};
}

}  // namespace mmc
