#include "mmc/toy_pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>

#include "json.hpp"
#include "mmc/optim.hpp"
#include "mmc/tensor_file.hpp"

namespace mmc {

void PipelineConfig::validate() const {
    auto positive = [](std::size_t v, const char* name) {
        if (v < 1) throw std::invalid_argument(std::string("config: ") + name + " must be >= 1");
    };
    positive(d, "d");
    positive(heads, "heads");
    positive(blocks, "blocks");
    positive(ffn_hidden, "ffn_hidden");
    positive(frames, "frames");
    positive(latent_h, "latent_h");
    positive(latent_w, "latent_w");
    positive(sem_w, "sem_w");
    positive(sem_h, "sem_h");
    positive(vae_w, "vae_w");
    positive(vae_h, "vae_h");
    positive(patch_dim, "patch_dim");
    positive(lora_rank, "lora_rank");
    positive(sample_steps, "sample_steps");
    positive(dataset_size, "dataset_size");
    if (d % heads != 0) throw std::invalid_argument("config: d must be divisible by heads");
    if (head_dim() < 6 || head_dim() % 2 != 0)
        throw std::invalid_argument("config: head_dim (d/heads) must be even and >= 6");
    if (lora_alpha <= 0.0) throw std::invalid_argument("config: lora_alpha must be positive");
    if (lr <= 0.0) throw std::invalid_argument("config: lr must be positive");
}

std::pair<int, int> SyntheticScene::position(std::size_t s, std::size_t f) const {
    static constexpr int kDr[4] = {0, 0, 1, -1};
    static constexpr int kDc[4] = {1, -1, 0, 0};
    return {starts[s].first + kDr[direction] * static_cast<int>(f),
            starts[s].second + kDc[direction] * static_cast<int>(f)};
}

namespace {

constexpr const char* kWords[] = {"fox", "cube", "bird", "drum", "kite", "frog", "lamp", "moss"};
constexpr const char* kDirections[] = {"right", "left", "down", "up"};

uint64_t fnv1a64(const std::string& s) {
    uint64_t h = 1469598103934665603ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

uint64_t fnv1a64_bytes(const void* p, std::size_t n, uint64_t h) {
    const auto* b = static_cast<const unsigned char*>(p);
    for (std::size_t i = 0; i < n; ++i) {
        h ^= b[i];
        h *= 1099511628211ull;
    }
    return h;
}

// How many non-overlapping subject bands fit for a movement direction.
std::size_t band_count(const PipelineConfig& cfg, std::size_t dir) {
    const bool horizontal = dir < 2;  // bands stacked on rows
    const std::size_t span = horizontal ? cfg.vae_w : cfg.vae_h;
    const std::size_t extent = horizontal ? cfg.latent_h : cfg.latent_w;
    if (extent < span) return 0;
    return (extent - span) / (span + 1) + 1;
}

bool travel_fits(const PipelineConfig& cfg, std::size_t dir) {
    const std::size_t travel = cfg.frames - 1;
    if (dir == 0) return cfg.latent_w >= travel + cfg.vae_h + 2;
    if (dir == 1) return cfg.latent_w >= travel + cfg.vae_h + 1;
    if (dir == 2) return cfg.latent_h >= travel + cfg.vae_w + 2;
    return cfg.latent_h >= travel + cfg.vae_w + 1;
}

}  // namespace

std::vector<SyntheticScene> make_dataset(const PipelineConfig& cfg, uint64_t seed,
                                         std::size_t count) {
    cfg.validate();
    if (count < 1) throw std::invalid_argument("make_dataset: count must be >= 1");
    for (std::size_t dir = 0; dir < 4; ++dir) {
        if (band_count(cfg, dir) == 0 || !travel_fits(cfg, dir))
            throw std::invalid_argument("make_dataset: latent grid too small for subject motion");
    }

    Rng item_seeds(seed);
    std::vector<SyntheticScene> out;
    out.reserve(count);
    for (std::size_t item = 0; item < count; ++item) {
        Rng rng(item_seeds.next_u64());
        SyntheticScene sc;
        sc.direction = rng.next_u64() % 4;
        const std::size_t max_subj = std::min<std::size_t>(3, band_count(cfg, sc.direction));
        const std::size_t n_subj = 1 + rng.next_u64() % max_subj;

        // distinct entity words
        std::vector<std::size_t> pool(std::size(kWords));
        for (std::size_t i = 0; i < pool.size(); ++i) pool[i] = i;
        std::vector<std::string> words;
        for (std::size_t s = 0; s < n_subj; ++s) {
            const std::size_t pick = rng.next_u64() % pool.size();
            words.push_back(kWords[pool[pick]]);
            pool.erase(pool.begin() + static_cast<std::ptrdiff_t>(pick));
        }

        sc.prompt = "the " + words[0];
        for (std::size_t s = 1; s < n_subj; ++s) sc.prompt += " and the " + words[s];
        sc.prompt += n_subj == 1 ? " drifts " : " drift ";
        sc.prompt += kDirections[sc.direction];

        const std::size_t travel = cfg.frames - 1;
        for (std::size_t s = 0; s < n_subj; ++s) {
            SubjectSpec spec;
            spec.entity_word = words[s];
            spec.sem_w = cfg.sem_w;
            spec.sem_h = cfg.sem_h;
            spec.vae_w = cfg.vae_w;
            spec.vae_h = cfg.vae_h;
            sc.subjects.push_back(spec);

            SubjectImage img;
            img.w = cfg.vae_w;
            img.h = cfg.vae_h;
            img.patch_dim = cfg.patch_dim;
            img.pixels.resize(cfg.vae_w * cfg.vae_h * cfg.patch_dim);
            for (double& px : img.pixels) px = rng.normal();
            sc.images.push_back(std::move(img));

            const int band_r = static_cast<int>(s * (cfg.vae_w + 1));
            const int band_c = static_cast<int>(s * (cfg.vae_h + 1));
            switch (sc.direction) {
                case 0: sc.starts.emplace_back(band_r, 1); break;
                case 1:
                    sc.starts.emplace_back(band_r,
                                           static_cast<int>(cfg.latent_w - cfg.vae_h - 1));
                    break;
                case 2: sc.starts.emplace_back(1, band_c); break;
                default:
                    sc.starts.emplace_back(static_cast<int>(cfg.latent_h - cfg.vae_w - 1),
                                           band_c);
            }
        }

        // stamp subject patches onto an empty grid, every frame
        std::vector<double> video(cfg.video_tokens() * cfg.patch_dim, 0.0);
        for (std::size_t f = 0; f < cfg.frames; ++f)
            for (std::size_t s = 0; s < n_subj; ++s) {
                auto [r0, c0] = sc.position(s, f);
                for (std::size_t cell = 0; cell < cfg.vae_w * cfg.vae_h; ++cell) {
                    const int r = r0 + static_cast<int>(cell / cfg.vae_h);
                    const int c = c0 + static_cast<int>(cell % cfg.vae_h);
                    if (r < 0 || c < 0 || r >= static_cast<int>(cfg.latent_h) ||
                        c >= static_cast<int>(cfg.latent_w))
                        throw std::logic_error("make_dataset: placement out of bounds");
                    const std::size_t tok =
                        f * cfg.latent_h * cfg.latent_w +
                        static_cast<std::size_t>(r) * cfg.latent_w + static_cast<std::size_t>(c);
                    auto patch = sc.images[s].cell(cell);
                    for (std::size_t p = 0; p < cfg.patch_dim; ++p)
                        video[tok * cfg.patch_dim + p] = patch[p];
                }
            }
        (void)travel;
        sc.video = Tensor({cfg.video_tokens(), cfg.patch_dim}, std::move(video));
        out.push_back(std::move(sc));
    }
    return out;
}

MockEncoders MockEncoders::init(uint64_t seed, const PipelineConfig& cfg) {
    MockEncoders e;
    e.d = cfg.d;
    e.patch_dim = cfg.patch_dim;
    e.sem_count = cfg.sem_w * cfg.sem_h;
    Rng rng(seed ^ subseed::kEncoders);

    const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(cfg.d));
    e.embed_table = Tensor::randn({e.vocab, cfg.d}, rng, inv_sqrt_d);

    const std::size_t px = cfg.vae_w * cfg.vae_h * cfg.patch_dim;
    e.sem_proj = Tensor::randn({e.sem_count * cfg.d, px}, rng,
                               1.0 / std::sqrt(static_cast<double>(px)));

    // orthonormal columns by modified Gram-Schmidt
    if (cfg.d < cfg.patch_dim)
        throw std::invalid_argument("MockEncoders: d must be >= patch_dim");
    std::vector<std::vector<double>> cols(cfg.patch_dim, std::vector<double>(cfg.d));
    for (auto& col : cols)
        for (double& x : col) x = rng.normal();
    for (std::size_t j = 0; j < cols.size(); ++j) {
        for (std::size_t k = 0; k < j; ++k) {
            double dot = 0.0;
            for (std::size_t i = 0; i < cfg.d; ++i) dot += cols[j][i] * cols[k][i];
            for (std::size_t i = 0; i < cfg.d; ++i) cols[j][i] -= dot * cols[k][i];
        }
        double nrm = 0.0;
        for (double x : cols[j]) nrm += x * x;
        nrm = std::sqrt(nrm);
        if (nrm < 1e-12) throw ComputeError("MockEncoders: degenerate vae basis column");
        for (double& x : cols[j]) x /= nrm;
    }
    std::vector<double> basis(cfg.d * cfg.patch_dim);
    for (std::size_t i = 0; i < cfg.d; ++i)
        for (std::size_t j = 0; j < cfg.patch_dim; ++j) basis[i * cfg.patch_dim + j] = cols[j][i];
    e.vae_basis = Tensor({cfg.d, cfg.patch_dim}, std::move(basis));
    return e;
}

std::size_t MockEncoders::token_id(const std::string& tok) const {
    return static_cast<std::size_t>(fnv1a64(tok) % vocab);
}

std::vector<double> MockEncoders::embed_token(const std::string& tok) const {
    const std::size_t id = token_id(tok);
    std::vector<double> row(d);
    for (std::size_t j = 0; j < d; ++j) row[j] = embed_table.at(id, j);
    return row;
}

std::vector<double> MockEncoders::vae_encode(std::span<const double> patch) const {
    if (patch.size() != patch_dim) throw std::invalid_argument("vae_encode: bad patch size");
    std::vector<double> z(d, 0.0);
    for (std::size_t i = 0; i < d; ++i)
        for (std::size_t j = 0; j < patch_dim; ++j) z[i] += vae_basis.at(i, j) * patch[j];
    return z;
}

std::vector<double> MockEncoders::vae_decode(std::span<const double> z) const {
    if (z.size() != d) throw std::invalid_argument("vae_decode: bad latent size");
    std::vector<double> p(patch_dim, 0.0);
    for (std::size_t i = 0; i < d; ++i)
        for (std::size_t j = 0; j < patch_dim; ++j) p[j] += vae_basis.at(i, j) * z[i];
    return p;
}

Tensor MockEncoders::sem_encode(const SubjectImage& img) const {
    const std::size_t px = img.pixels.size();
    if (px != sem_proj.dims()[1]) throw std::invalid_argument("sem_encode: bad image size");
    std::vector<double> out(sem_count * d, 0.0);
    for (std::size_t i = 0; i < sem_count * d; ++i)
        for (std::size_t j = 0; j < px; ++j) out[i] += sem_proj.at(i, j) * img.pixels[j];
    return Tensor({sem_count, d}, std::move(out));
}

ToyDenoiser ToyDenoiser::init(const PipelineConfig& cfg) {
    cfg.validate();
    ToyDenoiser m;
    m.cfg = cfg;
    m.enc = MockEncoders::init(cfg.seed, cfg);

    Rng base_rng(cfg.seed ^ subseed::kBase);
    m.patchify = ReparamLinear::init(cfg.patch_dim, cfg.d, base_rng, true);
    m.unpatchify = ReparamLinear::init(cfg.d, cfg.patch_dim, base_rng, true);
    m.time_proj = ReparamLinear::init(16, cfg.d, base_rng, true);
    m.video_pos_proj = ReparamLinear::init(42, cfg.d, base_rng, true);
    m.image_pos_proj = ReparamLinear::init(30, cfg.d, base_rng, true);
    m.interaction = MmAttentionBlock::init(cfg.heads, cfg.head_dim(), cfg.ffn_hidden, base_rng);
    for (std::size_t i = 0; i < cfg.blocks; ++i)
        m.mm_blocks.push_back(
            MmAttentionBlock::init(cfg.heads, cfg.head_dim(), cfg.ffn_hidden, base_rng));

    Rng ad_rng(cfg.seed ^ subseed::kAdapters);
    m.interaction.attach_adapters(cfg.lora_rank, cfg.lora_alpha, ad_rng);
    for (std::size_t i = 0; i < cfg.blocks; ++i) {
        switch (cfg.mode) {
            case InjectionMode::ATTENTION_INHERITED:
                m.inj_blocks.push_back(
                    InjectionBlock::inherit(m.mm_blocks[i], cfg.lora_rank, cfg.lora_alpha, ad_rng));
                break;
            case InjectionMode::ADAPTER:
                m.inj_blocks.push_back(InjectionBlock::adapter_init(
                    cfg.heads, cfg.head_dim(), cfg.ffn_hidden, cfg.lora_rank, cfg.lora_alpha,
                    ad_rng));
                break;
            case InjectionMode::TOKEN_CONCAT:
                m.inj_blocks.push_back(InjectionBlock::concat_marker());
                m.mm_blocks[i].attach_adapters(cfg.lora_rank, cfg.lora_alpha, ad_rng);
                break;
        }
    }

    m.rope_video.reserve(cfg.video_tokens());
    for (std::size_t f = 0; f < cfg.frames; ++f)
        for (std::size_t r = 0; r < cfg.latent_h; ++r)
            for (std::size_t c = 0; c < cfg.latent_w; ++c)
                m.rope_video.push_back(RopeIndex{static_cast<int>(f), static_cast<int>(r),
                                                 static_cast<int>(c)});
    return m;
}

std::vector<Tensor> ToyDenoiser::trainable() const {
    std::vector<Tensor> out;
    interaction.collect_trainable(out);
    if (cfg.train_injection) {
        for (const auto& b : inj_blocks) b.collect_trainable(out);
        if (cfg.mode == InjectionMode::TOKEN_CONCAT)
            for (const auto& b : mm_blocks) b.collect_trainable(out);
    }
    return out;
}

namespace {

void name_linear(const std::string& prefix, const ReparamLinear& l,
                 std::vector<std::pair<std::string, Tensor>>& out) {
    if (!l.frozen) {
        out.emplace_back(prefix + ".w", l.base_weight);
        if (l.base_bias) out.emplace_back(prefix + ".b", *l.base_bias);
    }
    if (l.adapter) {
        out.emplace_back(prefix + ".down", l.adapter->down);
        out.emplace_back(prefix + ".up", l.adapter->up);
    }
}

void name_ffn(const std::string& prefix, const FeedForward& f,
              std::vector<std::pair<std::string, Tensor>>& out) {
    name_linear(prefix + ".fc1", f.up, out);
    name_linear(prefix + ".fc2", f.down, out);
}

void name_mm(const std::string& prefix, const MmAttentionBlock& b,
             std::vector<std::pair<std::string, Tensor>>& out) {
    name_linear(prefix + ".wq_v", b.wq_v, out);
    name_linear(prefix + ".wk_v", b.wk_v, out);
    name_linear(prefix + ".wv_v", b.wv_v, out);
    name_linear(prefix + ".wq_t", b.wq_t, out);
    name_linear(prefix + ".wk_t", b.wk_t, out);
    name_linear(prefix + ".wv_t", b.wv_t, out);
    name_ffn(prefix + ".ffn_v", b.ffn_v, out);
    name_ffn(prefix + ".ffn_t", b.ffn_t, out);
}

void base_linear(const ReparamLinear& l, std::vector<Tensor>& out) {
    if (l.frozen && l.base_weight.defined()) {
        out.push_back(l.base_weight);
        if (l.base_bias) out.push_back(*l.base_bias);
    }
}

}  // namespace

std::vector<std::pair<std::string, Tensor>> ToyDenoiser::named_trainable() const {
    std::vector<std::pair<std::string, Tensor>> out;
    name_mm("interaction", interaction, out);
    if (cfg.train_injection) {
        for (std::size_t i = 0; i < inj_blocks.size(); ++i) {
            const auto& b = inj_blocks[i];
            if (b.mode == InjectionMode::TOKEN_CONCAT) continue;
            const std::string p = "inj" + std::to_string(i);
            name_linear(p + ".wq", b.wq, out);
            name_linear(p + ".wk", b.wk, out);
            name_linear(p + ".wv", b.wv, out);
            name_ffn(p + ".ffn", b.ffn, out);
            name_linear(p + ".zero_fc", b.zero_fc, out);
            if (b.mode == InjectionMode::ADAPTER)
                name_linear(p + ".adapter_encoder", b.adapter_encoder, out);
        }
        if (cfg.mode == InjectionMode::TOKEN_CONCAT)
            for (std::size_t i = 0; i < mm_blocks.size(); ++i)
                name_mm("mm" + std::to_string(i), mm_blocks[i], out);
    }
    return out;
}

uint64_t ToyDenoiser::base_hash() const {
    std::vector<Tensor> bases;
    base_linear(patchify, bases);
    base_linear(unpatchify, bases);
    base_linear(time_proj, bases);
    base_linear(video_pos_proj, bases);
    base_linear(image_pos_proj, bases);
    auto collect_mm_base = [&bases](const MmAttentionBlock& b) {
        base_linear(b.wq_v, bases);
        base_linear(b.wk_v, bases);
        base_linear(b.wv_v, bases);
        base_linear(b.wq_t, bases);
        base_linear(b.wk_t, bases);
        base_linear(b.wv_t, bases);
        base_linear(b.ffn_v.up, bases);
        base_linear(b.ffn_v.down, bases);
        base_linear(b.ffn_t.up, bases);
        base_linear(b.ffn_t.down, bases);
    };
    collect_mm_base(interaction);
    for (const auto& b : mm_blocks) collect_mm_base(b);
    for (const auto& b : inj_blocks) {
        if (b.mode == InjectionMode::TOKEN_CONCAT) continue;
        base_linear(b.wq, bases);
        base_linear(b.wk, bases);
        base_linear(b.wv, bases);
        base_linear(b.ffn.up, bases);
        base_linear(b.ffn.down, bases);
        base_linear(b.adapter_encoder, bases);
    }
    bases.push_back(enc.embed_table);
    bases.push_back(enc.sem_proj);
    bases.push_back(enc.vae_basis);

    uint64_t h = 1469598103934665603ull;
    for (const Tensor& t : bases)
        h = fnv1a64_bytes(t.data().data(), t.numel() * sizeof(double), h);
    return h;
}

namespace {

// three-frequency sinusoid bank over integer coordinates
std::vector<double> sincos_feats(const std::vector<double>& vals) {
    static const double freqs[3] = {2.0 * M_PI / 16.0, 2.0 * M_PI / 8.0, 2.0 * M_PI / 4.0};
    std::vector<double> out;
    out.reserve(vals.size() * 6);
    for (double v : vals)
        for (double w : freqs) {
            out.push_back(std::sin(w * v));
            out.push_back(std::cos(w * v));
        }
    return out;
}

}  // namespace

Tensor ToyDenoiser::video_pos_features() const {
    std::vector<double> rows;
    rows.reserve(cfg.video_tokens() * 42);
    for (std::size_t f = 0; f < cfg.frames; ++f)
        for (std::size_t r = 0; r < cfg.latent_h; ++r)
            for (std::size_t c = 0; c < cfg.latent_w; ++c) {
                const double fr = static_cast<double>(f), rr = static_cast<double>(r),
                             cc = static_cast<double>(c);
                auto feats = sincos_feats({rr, cc, fr, rr - fr, cc - fr, rr + fr, cc + fr});
                rows.insert(rows.end(), feats.begin(), feats.end());
            }
    return video_pos_proj.forward(Tensor({cfg.video_tokens(), 42}, std::move(rows))).detach();
}

Condition ToyDenoiser::encode_condition(const std::string& prompt,
                                        const std::vector<SubjectSpec>& subjects,
                                        const std::vector<SubjectImage>& images) const {
    if (subjects.size() != images.size())
        throw std::invalid_argument("encode_condition: one image per subject required");
    TemplateLayout layout = layout_template(prompt, subjects);
    const TokenStream& stream = layout.stream;

    std::vector<SubjectGrids> grids;
    for (const SubjectSpec& s : subjects)
        grids.push_back(SubjectGrids{s.sem_w, s.sem_h, s.vae_w, s.vae_h});

    std::vector<Tensor> sem_tokens;
    for (const SubjectImage& img : images) sem_tokens.push_back(enc.sem_encode(img));

    std::vector<double> text_data, image_data;
    std::size_t n_text = 0, n_img = 0;
    std::vector<std::size_t> sem_cursor(subjects.size(), 0), vae_cursor(subjects.size(), 0);
    for (const TokenEntry& e : stream.entries) {
        switch (e.kind) {
            case TokenKind::TEXT: {
                auto row = enc.embed_token(layout.token_text[e.seq_pos]);
                text_data.insert(text_data.end(), row.begin(), row.end());
                ++n_text;
                break;
            }
            case TokenKind::IMG_SEM: {
                const std::size_t sid = *e.subject_id;
                const std::size_t j = sem_cursor[sid]++;
                for (std::size_t c = 0; c < cfg.d; ++c)
                    text_data.push_back(sem_tokens[sid].at(j, c));
                ++n_text;
                break;
            }
            case TokenKind::IMG_VAE: {
                const std::size_t sid = *e.subject_id;
                const std::size_t j = vae_cursor[sid]++;
                auto z = enc.vae_encode(images[sid].cell(j));
                const double s = static_cast<double>(sid);
                const double iy = static_cast<double>(j / subjects[sid].vae_h);
                const double ix = static_cast<double>(j % subjects[sid].vae_h);
                auto feats = sincos_feats(
                    {s, iy, ix, s * static_cast<double>(subjects[sid].vae_w + 1) + iy,
                     s * static_cast<double>(subjects[sid].vae_h + 1) + ix});
                Tensor pos = image_pos_proj.forward(Tensor({1, 30}, std::move(feats)));
                for (std::size_t c = 0; c < cfg.d; ++c) image_data.push_back(z[c] + pos.at(c));
                ++n_img;
                break;
            }
        }
    }
    Tensor z_t({n_text, cfg.d}, std::move(text_data));
    Tensor z_i({n_img, cfg.d}, std::move(image_data));

    InteractionResult enhanced = text_image_interaction(interaction, z_t, z_i, stream, grids);

    std::vector<RopeIndex> all = assign_stream(stream, grids);
    Condition cond;
    for (const TokenEntry& e : stream.entries) {
        if (e.kind == TokenKind::IMG_VAE) cond.rope_img.push_back(all[e.seq_pos]);
        else cond.rope_text.push_back(all[e.seq_pos]);
    }
    cond.text = enhanced.text;
    cond.image = enhanced.image;
    return cond;
}

Tensor ToyDenoiser::forward_tokens(const Tensor& x_patches, double t, const Condition& cond,
                                   bool use_image) const {
    if (x_patches.dims().size() != 2 || x_patches.dims()[0] != cfg.video_tokens() ||
        x_patches.dims()[1] != cfg.patch_dim)
        throw std::invalid_argument("forward: x must be [video_tokens x patch_dim]");
    if (!cond.text.defined()) throw std::invalid_argument("forward: condition text required");

    // sinusoidal timestep features through a frozen projection
    std::vector<double> feats(16);
    for (std::size_t j = 0; j < 8; ++j) {
        const double ang = 2.0 * M_PI * std::ldexp(1.0, static_cast<int>(j)) * t;
        feats[2 * j] = std::sin(ang);
        feats[2 * j + 1] = std::cos(ang);
    }
    Tensor temb = time_proj.forward(Tensor({1, 16}, std::move(feats)));

    Tensor tokens = patchify.forward(x_patches);
    tokens = add_row_broadcast(tokens, reshape(temb, {cfg.d}));
    tokens = add(tokens, video_pos_features());

    const bool concat_route = use_image && cfg.mode == InjectionMode::TOKEN_CONCAT;
    Tensor vstream = tokens;
    std::vector<RopeIndex> rope_v = rope_video;
    if (concat_route) {
        std::vector<Tensor> parts = {cond.image, tokens};
        vstream = concat_rows(parts);
        rope_v = cond.rope_img;
        rope_v.insert(rope_v.end(), rope_video.begin(), rope_video.end());
    }

    Tensor text = cond.text;
    for (std::size_t i = 0; i < cfg.blocks; ++i) {
        if (use_image && cfg.mode != InjectionMode::TOKEN_CONCAT)
            vstream = inj_blocks[i].inject(vstream, cond.image, rope_video, cond.rope_img);
        auto [v_out, t_out] = mm_blocks[i].forward(vstream, text, rope_v, cond.rope_text);
        vstream = v_out;
        text = t_out;
    }
    if (concat_route) vstream = slice_rows(vstream, cond.image.dims()[0], cfg.video_tokens());
    return vstream;
}

Tensor ToyDenoiser::forward(const Tensor& x_patches, double t, const Condition& cond,
                            bool use_image) const {
    return unpatchify.forward(forward_tokens(x_patches, t, cond, use_image));
}

TrainResult train(const PipelineConfig& cfg) {
    cfg.validate();
    TrainResult result{ToyDenoiser::init(cfg), {}};
    ToyDenoiser& model = result.model;
    auto dataset = make_dataset(cfg, cfg.seed ^ subseed::kDataset, cfg.dataset_size);

    Adam opt(model.trainable(), cfg.lr);
    Rng rng(cfg.seed ^ subseed::kTrain);
    const std::size_t n_vid = cfg.video_tokens();

    for (std::size_t step = 0; step < cfg.train_steps; ++step) {
        const SyntheticScene& scene = dataset[rng.next_u64() % dataset.size()];
        const double t = rng.uniform();

        std::vector<double> xt(n_vid * cfg.patch_dim), target(n_vid * cfg.patch_dim);
        for (std::size_t i = 0; i < xt.size(); ++i) {
            const double x0 = rng.normal();
            const double x1 = scene.video.at(i);
            xt[i] = (1.0 - t) * x0 + t * x1;
            target[i] = x1 - x0;
        }

        Condition cond = model.encode_condition(scene.prompt, scene.subjects, scene.images);
        Tensor v = model.forward(Tensor({n_vid, cfg.patch_dim}, std::move(xt)), t, cond);
        Tensor diff = sub(v, Tensor({n_vid, cfg.patch_dim}, std::move(target)));
        Tensor loss = mean(mul(diff, diff));
        if (!std::isfinite(loss.item())) throw ComputeError("train: loss became non-finite");

        opt.zero_grad();
        backward(loss);
        opt.step();
        result.losses.push_back(loss.item());
    }
    return result;
}

Tensor generate(const ToyDenoiser& model, const SyntheticScene& scene, std::size_t steps,
                uint64_t noise_seed) {
    if (steps < 1) throw std::invalid_argument("generate: steps must be >= 1");
    const PipelineConfig& cfg = model.cfg;
    Condition cond = model.encode_condition(scene.prompt, scene.subjects, scene.images);

    Rng rng(noise_seed ^ subseed::kNoise);
    std::vector<double> x(cfg.video_tokens() * cfg.patch_dim);
    for (double& v : x) v = rng.normal();

    const double dt = 1.0 / static_cast<double>(steps);
    for (std::size_t s = 0; s < steps; ++s) {
        const double t = static_cast<double>(s) * dt;
        Tensor v = model.forward(Tensor({cfg.video_tokens(), cfg.patch_dim}, x), t, cond);
        for (std::size_t i = 0; i < x.size(); ++i) x[i] += v.at(i) * dt;
    }
    return Tensor({cfg.video_tokens(), cfg.patch_dim}, std::move(x));
}

double subject_region_identity(const ToyDenoiser& model, const Tensor& video,
                               const SyntheticScene& scene) {
    const PipelineConfig& cfg = model.cfg;
    if (video.dims() != std::vector<std::size_t>{cfg.video_tokens(), cfg.patch_dim})
        throw std::invalid_argument("subject_region_identity: wrong video shape");
    double acc = 0.0;
    std::size_t terms = 0;
    for (std::size_t s = 0; s < scene.subjects.size(); ++s)
        for (std::size_t f = 0; f < cfg.frames; ++f) {
            auto [r0, c0] = scene.position(s, f);
            for (std::size_t cell = 0; cell < cfg.vae_w * cfg.vae_h; ++cell) {
                const std::size_t r = static_cast<std::size_t>(r0) + cell / cfg.vae_h;
                const std::size_t c = static_cast<std::size_t>(c0) + cell % cfg.vae_h;
                const std::size_t tok = f * cfg.latent_h * cfg.latent_w + r * cfg.latent_w + c;
                std::vector<double> gen_patch(cfg.patch_dim);
                for (std::size_t p = 0; p < cfg.patch_dim; ++p)
                    gen_patch[p] = video.at(tok, p);
                auto gen_z = model.enc.vae_encode(gen_patch);
                auto ref_z = model.enc.vae_encode(scene.images[s].cell(cell));
                double dot = 0.0, ng = 0.0, nr = 0.0;
                for (std::size_t i = 0; i < gen_z.size(); ++i) {
                    dot += gen_z[i] * ref_z[i];
                    ng += gen_z[i] * gen_z[i];
                    nr += ref_z[i] * ref_z[i];
                }
                if (ng > 0.0 && nr > 0.0) acc += dot / std::sqrt(ng * nr);
                ++terms;
            }
        }
    return terms ? acc / static_cast<double>(terms) : 0.0;
}

std::vector<double> per_frame_identity_profile(const ToyDenoiser& model,
                                               const std::vector<SyntheticScene>& probes) {
    const PipelineConfig& cfg = model.cfg;
    if (probes.empty()) throw std::invalid_argument("per_frame_identity_profile: no probes");
    const std::size_t per_frame = cfg.latent_h * cfg.latent_w;
    std::vector<double> profile(cfg.frames, 0.0);

    for (std::size_t pi = 0; pi < probes.size(); ++pi) {
        const SyntheticScene& scene = probes[pi];
        Condition cond = model.encode_condition(scene.prompt, scene.subjects, scene.images);
        Rng rng(cfg.seed ^ subseed::kProbe ^ (0x9E3779B97F4A7C15ull * (pi + 1)));
        std::vector<double> xt(cfg.video_tokens() * cfg.patch_dim);
        for (std::size_t i = 0; i < xt.size(); ++i)
            xt[i] = 0.5 * rng.normal() + 0.5 * scene.video.at(i);
        Tensor x({cfg.video_tokens(), cfg.patch_dim}, std::move(xt));

        Tensor on = model.forward_tokens(x, 0.5, cond, true);
        Tensor off = model.forward_tokens(x, 0.5, cond, false);
        for (std::size_t f = 0; f < cfg.frames; ++f) {
            double frame_acc = 0.0;
            for (std::size_t i = 0; i < per_frame; ++i) {
                const std::size_t tok = f * per_frame + i;
                double nrm2 = 0.0;
                for (std::size_t c = 0; c < cfg.d; ++c) {
                    const double dlt = on.at(tok, c) - off.at(tok, c);
                    nrm2 += dlt * dlt;
                }
                frame_acc += std::sqrt(nrm2);
            }
            profile[f] += frame_acc / static_cast<double>(per_frame);
        }
    }
    for (double& p : profile) p /= static_cast<double>(probes.size());
    return profile;
}

double coefficient_of_variation(const std::vector<double>& xs) {
    if (xs.empty()) throw std::invalid_argument("coefficient_of_variation: empty input");
    double mu = 0.0;
    for (double x : xs) mu += x;
    mu /= static_cast<double>(xs.size());
    if (mu == 0.0) return 0.0;
    double var = 0.0;
    for (double x : xs) var += (x - mu) * (x - mu);
    var /= static_cast<double>(xs.size());
    return std::sqrt(var) / mu;
}

std::map<std::string, std::string> config_to_map(const PipelineConfig& cfg) {
    char buf[64];
    auto fmt = [&buf](double v) {
        std::snprintf(buf, sizeof(buf), "%.17g", v);
        return std::string(buf);
    };
    std::map<std::string, std::string> kv;
    kv["seed"] = std::to_string(cfg.seed);
    kv["d"] = std::to_string(cfg.d);
    kv["heads"] = std::to_string(cfg.heads);
    kv["blocks"] = std::to_string(cfg.blocks);
    kv["ffn_hidden"] = std::to_string(cfg.ffn_hidden);
    kv["frames"] = std::to_string(cfg.frames);
    kv["latent_h"] = std::to_string(cfg.latent_h);
    kv["latent_w"] = std::to_string(cfg.latent_w);
    kv["sem_w"] = std::to_string(cfg.sem_w);
    kv["sem_h"] = std::to_string(cfg.sem_h);
    kv["vae_w"] = std::to_string(cfg.vae_w);
    kv["vae_h"] = std::to_string(cfg.vae_h);
    kv["patch_dim"] = std::to_string(cfg.patch_dim);
    kv["lora_rank"] = std::to_string(cfg.lora_rank);
    kv["lora_alpha"] = fmt(cfg.lora_alpha);
    kv["mode"] = injection_mode_name(cfg.mode);
    kv["train_injection"] = cfg.train_injection ? "true" : "false";
    kv["train_steps"] = std::to_string(cfg.train_steps);
    kv["sample_steps"] = std::to_string(cfg.sample_steps);
    kv["lr"] = fmt(cfg.lr);
    kv["dataset_size"] = std::to_string(cfg.dataset_size);
    return kv;
}

PipelineConfig config_from_map(const std::map<std::string, std::string>& kv) {
    PipelineConfig cfg;
    auto parse_u64 = [](const std::string& key, const std::string& v) -> uint64_t {
        try {
            std::size_t pos = 0;
            uint64_t out = std::stoull(v, &pos);
            if (pos != v.size()) throw std::invalid_argument("trailing chars");
            return out;
        } catch (const std::exception&) {
            throw std::invalid_argument("config: bad integer for key '" + key + "': " + v);
        }
    };
    auto parse_f64 = [](const std::string& key, const std::string& v) -> double {
        try {
            std::size_t pos = 0;
            double out = std::stod(v, &pos);
            if (pos != v.size()) throw std::invalid_argument("trailing chars");
            return out;
        } catch (const std::exception&) {
            throw std::invalid_argument("config: bad number for key '" + key + "': " + v);
        }
    };
    for (const auto& [key, v] : kv) {
        if (key == "seed") cfg.seed = parse_u64(key, v);
        else if (key == "d") cfg.d = parse_u64(key, v);
        else if (key == "heads") cfg.heads = parse_u64(key, v);
        else if (key == "blocks") cfg.blocks = parse_u64(key, v);
        else if (key == "ffn_hidden") cfg.ffn_hidden = parse_u64(key, v);
        else if (key == "frames") cfg.frames = parse_u64(key, v);
        else if (key == "latent_h") cfg.latent_h = parse_u64(key, v);
        else if (key == "latent_w") cfg.latent_w = parse_u64(key, v);
        else if (key == "sem_w") cfg.sem_w = parse_u64(key, v);
        else if (key == "sem_h") cfg.sem_h = parse_u64(key, v);
        else if (key == "vae_w") cfg.vae_w = parse_u64(key, v);
        else if (key == "vae_h") cfg.vae_h = parse_u64(key, v);
        else if (key == "patch_dim") cfg.patch_dim = parse_u64(key, v);
        else if (key == "lora_rank") cfg.lora_rank = parse_u64(key, v);
        else if (key == "lora_alpha") cfg.lora_alpha = parse_f64(key, v);
        else if (key == "mode") cfg.mode = parse_injection_mode(v);
        else if (key == "train_injection") {
            if (v == "true") cfg.train_injection = true;
            else if (v == "false") cfg.train_injection = false;
            else throw std::invalid_argument("config: bad boolean for key 'train_injection'");
        } else if (key == "train_steps") cfg.train_steps = parse_u64(key, v);
        else if (key == "sample_steps") cfg.sample_steps = parse_u64(key, v);
        else if (key == "lr") cfg.lr = parse_f64(key, v);
        else if (key == "dataset_size") cfg.dataset_size = parse_u64(key, v);
        else throw std::invalid_argument("config: unknown key '" + key + "'");
    }
    cfg.validate();
    return cfg;
}

void save_checkpoint(const std::filesystem::path& dir, const ToyDenoiser& model) {
    std::filesystem::create_directories(dir);
    auto named = model.named_trainable();
    std::map<std::string, Tensor> by_name(named.begin(), named.end());
    if (by_name.size() != named.size())
        throw std::logic_error("save_checkpoint: duplicate parameter names");

    nlohmann::json manifest;
    manifest["format"] = "ckpt-v1";
    manifest["config"] = config_to_map(model.cfg);
    nlohmann::json tensors = nlohmann::json::object();
    std::size_t idx = 0;
    for (const auto& [name, t] : by_name) {
        char file[32];
        std::snprintf(file, sizeof(file), "t%04zu.pvtd", idx++);
        write_tensor_file(dir / file, t);
        tensors[name] = {{"file", file}, {"dims", t.dims()}};
    }
    manifest["tensors"] = std::move(tensors);
    atomic_write_file(dir / "manifest.json", manifest.dump(2) + "\n");
}

ToyDenoiser load_checkpoint(const std::filesystem::path& dir) {
    std::ifstream f(dir / "manifest.json");
    if (!f) throw std::runtime_error("cannot open checkpoint manifest: " + dir.string());
    nlohmann::json manifest = nlohmann::json::parse(f);
    if (manifest.value("format", "") != "ckpt-v1")
        throw std::runtime_error("checkpoint: unsupported format");

    std::map<std::string, std::string> kv =
        manifest.at("config").get<std::map<std::string, std::string>>();
    ToyDenoiser model = ToyDenoiser::init(config_from_map(kv));

    auto named = model.named_trainable();
    std::map<std::string, Tensor> by_name(named.begin(), named.end());
    const auto& tensors = manifest.at("tensors");
    if (tensors.size() != by_name.size())
        throw std::runtime_error("checkpoint: parameter count mismatch");
    for (const auto& [name, meta] : tensors.items()) {
        auto it = by_name.find(name);
        if (it == by_name.end()) throw std::runtime_error("checkpoint: unknown tensor " + name);
        Tensor loaded = read_tensor_file(dir / meta.at("file").get<std::string>());
        if (loaded.dims() != it->second.dims())
            throw std::runtime_error("checkpoint: shape mismatch for " + name);
        it->second.mutable_data() = std::vector<double>(loaded.data().begin(),
                                                        loaded.data().end());
    }
    return model;
}

}  // namespace mmc
