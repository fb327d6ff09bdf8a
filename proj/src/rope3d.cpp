#include "mmc/rope3d.hpp"

#include <cmath>
#include <stdexcept>

namespace mmc {

RopeConfig RopeConfig::make_default(std::size_t head_dim) {
    if (head_dim < 6 || head_dim % 2 != 0)
        throw std::invalid_argument("RopeConfig: head_dim must be even and >= 6");
    const std::size_t pairs = head_dim / 2;
    const std::size_t base = pairs / 3, rem = pairs % 3;
    RopeConfig cfg;
    cfg.head_dim = head_dim;
    cfg.d_t = 2 * (base + (rem > 0 ? 1 : 0));
    cfg.d_y = 2 * (base + (rem > 1 ? 1 : 0));
    cfg.d_x = 2 * base;
    cfg.theta = 10000.0;
    cfg.validate();
    return cfg;
}

void RopeConfig::validate() const {
    auto even_ge2 = [](std::size_t d) { return d >= 2 && d % 2 == 0; };
    if (!even_ge2(d_t) || !even_ge2(d_y) || !even_ge2(d_x))
        throw std::invalid_argument("RopeConfig: each partition component must be even and >= 2");
    if (d_t + d_y + d_x != head_dim)
        throw std::invalid_argument("RopeConfig: partition must sum to head_dim");
    if (theta <= 0.0) throw std::invalid_argument("RopeConfig: theta must be positive");
}

std::vector<RopeIndex> assign_text_indices(int start_t, std::size_t count) {
    std::vector<RopeIndex> out;
    out.reserve(count);
    for (std::size_t j = 0; j < count; ++j)
        out.push_back(RopeIndex{start_t + static_cast<int>(j), 0, 0});
    return out;
}

// Zero-based cell index i over the w x h grid; floor(i/h) walks the first
// spatial axis so the grid is exactly centered on (0, 0).
static std::vector<RopeIndex> grid_indices(int t, std::size_t w, std::size_t h) {
    if (w < 1 || h < 1) throw std::invalid_argument("rope grid: w, h must be >= 1");
    std::vector<RopeIndex> out;
    out.reserve(w * h);
    const int cy = static_cast<int>(w / 2), cx = static_cast<int>(h / 2);
    for (std::size_t i = 0; i < w * h; ++i) {
        const int y = static_cast<int>(i / h) - cy;
        const int x = static_cast<int>(i % h) - cx;
        out.push_back(RopeIndex{t, y, x});
    }
    return out;
}

std::vector<RopeIndex> assign_image_sem_indices(int m1, std::size_t w, std::size_t h) {
    return grid_indices(m1 + 1, w, h);
}

std::vector<RopeIndex> assign_image_vae_indices(int m1, std::size_t w, std::size_t h) {
    return grid_indices(m1 + 2, w, h);
}

std::vector<RopeIndex> assign_stream(const TokenStream& stream,
                                     const std::vector<SubjectGrids>& grids) {
    stream.validate();
    std::vector<RopeIndex> out(stream.size());
    std::vector<int> subject_m1(grids.size(), -1);

    int cursor = 1;  // next free temporal index; Eq.-style one-based ramp
    for (const Segment& seg : stream.segments) {
        switch (seg.kind) {
            case TokenKind::TEXT: {
                auto idx = assign_text_indices(cursor, seg.count);
                for (std::size_t j = 0; j < seg.count; ++j) out[seg.start + j] = idx[j];
                cursor += static_cast<int>(seg.count);
                break;
            }
            case TokenKind::IMG_SEM: {
                const std::size_t sid = *seg.subject_id;
                if (sid >= grids.size())
                    throw std::invalid_argument("assign_stream: missing grids for subject");
                if (grids[sid].sem_w * grids[sid].sem_h != seg.count)
                    throw std::invalid_argument("assign_stream: sem grid size mismatch");
                const int m1 = cursor - 1;  // last text index before this block
                subject_m1[sid] = m1;
                auto idx = assign_image_sem_indices(m1, grids[sid].sem_w, grids[sid].sem_h);
                for (std::size_t j = 0; j < seg.count; ++j) out[seg.start + j] = idx[j];
                cursor = m1 + 3;  // skip the vae slot; next text resumes at m1+3
                break;
            }
            case TokenKind::IMG_VAE: {
                const std::size_t sid = *seg.subject_id;
                if (sid >= grids.size() || subject_m1[sid] < 0)
                    throw std::invalid_argument("assign_stream: vae block before its sem block");
                if (grids[sid].vae_w * grids[sid].vae_h != seg.count)
                    throw std::invalid_argument("assign_stream: vae grid size mismatch");
                auto idx = assign_image_vae_indices(subject_m1[sid], grids[sid].vae_w,
                                                    grids[sid].vae_h);
                for (std::size_t j = 0; j < seg.count; ++j) out[seg.start + j] = idx[j];
                break;
            }
        }
    }
    return out;
}

namespace {

struct PairAngle {
    std::size_t axis;  // 0 = t, 1 = y, 2 = x
    double freq;       // theta^(-2j/d_a)
};

std::vector<PairAngle> pair_table(const RopeConfig& cfg) {
    cfg.validate();
    std::vector<PairAngle> table;
    table.reserve(cfg.head_dim / 2);
    const std::size_t parts[3] = {cfg.d_t, cfg.d_y, cfg.d_x};
    for (std::size_t a = 0; a < 3; ++a) {
        const double d = static_cast<double>(parts[a]);
        for (std::size_t j = 0; j < parts[a] / 2; ++j)
            table.push_back(PairAngle{a, std::pow(cfg.theta, -2.0 * static_cast<double>(j) / d)});
    }
    return table;
}

void rotate_span(const double* in, double* out, const std::vector<PairAngle>& table,
                 const RopeIndex& idx, bool invert) {
    const double pos[3] = {static_cast<double>(idx.t), static_cast<double>(idx.y),
                           static_cast<double>(idx.x)};
    for (std::size_t p = 0; p < table.size(); ++p) {
        double ang = pos[table[p].axis] * table[p].freq;
        if (invert) ang = -ang;
        const double c = std::cos(ang), s = std::sin(ang);
        const double a = in[2 * p], b = in[2 * p + 1];
        out[2 * p] = a * c - b * s;
        out[2 * p + 1] = a * s + b * c;
    }
}

}  // namespace

Tensor apply_rope(const Tensor& vec, const RopeIndex& idx, const RopeConfig& cfg) {
    if (vec.dims().size() != 1 || vec.dims()[0] != cfg.head_dim)
        throw std::invalid_argument("apply_rope: vector length must equal head_dim");
    auto table = pair_table(cfg);
    std::vector<double> out(cfg.head_dim);
    rotate_span(vec.data().data(), out.data(), table, idx, false);
    detail::check_finite(out, "apply_rope");
    return Tensor({cfg.head_dim}, std::move(out));
}

Tensor rope_rotate(const Tensor& x, const std::vector<RopeIndex>& indices,
                   const RopeConfig& cfg) {
    if (x.dims().size() != 2) throw std::invalid_argument("rope_rotate: expected rank-2 tensor");
    const std::size_t n = x.dims()[0], d = x.dims()[1];
    if (indices.size() != n) throw std::invalid_argument("rope_rotate: one index per row needed");
    if (d % cfg.head_dim != 0)
        throw std::invalid_argument("rope_rotate: cols must be a multiple of head_dim");
    auto table = pair_table(cfg);
    const std::size_t n_heads = d / cfg.head_dim;

    std::vector<double> out(n * d);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t h = 0; h < n_heads; ++h) {
            const std::size_t off = i * d + h * cfg.head_dim;
            rotate_span(x.data().data() + off, out.data() + off, table, indices[i], false);
        }

    auto xi = x.impl();
    return detail::make_node(
        {n, d}, std::move(out), {xi},
        // rotations are orthogonal, so the pullback rotates by the negated angles
        [xi, indices, table = std::move(table), n, d, hd = cfg.head_dim,
         n_heads](TensorImpl& self) {
            xi->ensure_grad();
            std::vector<double> tmp(hd);
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t h = 0; h < n_heads; ++h) {
                    const std::size_t off = i * d + h * hd;
                    rotate_span(self.grad.data() + off, tmp.data(), table, indices[i], true);
                    for (std::size_t j = 0; j < hd; ++j) xi->grad[off + j] += tmp[j];
                }
        },
        "rope_rotate");
}

}  // namespace mmc
