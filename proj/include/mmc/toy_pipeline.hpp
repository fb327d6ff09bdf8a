#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "mmc/identity_injection.hpp"
#include "mmc/mm_attention.hpp"
#include "mmc/token_layout.hpp"

namespace mmc {

// Sub-seed derivation: every purpose draws from config.seed XOR a fixed tag.
namespace subseed {
inline constexpr uint64_t kEncoders = 0x656e636f64657273ull;  // "encoders"
inline constexpr uint64_t kBase = 0x626173652d777473ull;      // "base-wts"
inline constexpr uint64_t kAdapters = 0x6164617074657273ull;  // "adapters"
inline constexpr uint64_t kDataset = 0x646174617365742eull;   // "dataset."
inline constexpr uint64_t kTrain = 0x747261696e2e2e2eull;     // "train..."
inline constexpr uint64_t kNoise = 0x6e6f6973652e2e2eull;     // "noise..."
inline constexpr uint64_t kEvalSet = 0x6576616c2d736574ull;   // "eval-set"
inline constexpr uint64_t kProbe = 0x70726f62652e2e2eull;     // "probe..."
}  // namespace subseed

struct PipelineConfig {
    uint64_t seed = 0;
    std::size_t d = 32;
    std::size_t heads = 4;
    std::size_t blocks = 2;
    std::size_t ffn_hidden = 128;
    std::size_t frames = 4;
    std::size_t latent_h = 8;
    std::size_t latent_w = 8;
    std::size_t sem_w = 2, sem_h = 2;
    std::size_t vae_w = 2, vae_h = 2;
    std::size_t patch_dim = 4;
    std::size_t lora_rank = 8;
    double lora_alpha = 16.0;
    InjectionMode mode = InjectionMode::ATTENTION_INHERITED;
    bool train_injection = true;
    std::size_t train_steps = 500;
    std::size_t sample_steps = 16;
    double lr = 0.01;
    std::size_t dataset_size = 32;

    std::size_t head_dim() const { return d / heads; }
    std::size_t video_tokens() const { return frames * latent_h * latent_w; }
    void validate() const;
};

// Subject reference image: w x h cells, patch_dim pixels per cell.
struct SubjectImage {
    std::size_t w = 2, h = 2, patch_dim = 4;
    std::vector<double> pixels;  // row-major cells, then pixels

    std::span<const double> cell(std::size_t i) const {
        return {pixels.data() + i * patch_dim, patch_dim};
    }
};

// Ground-truth scene: subject blocks translate along a prompt-selected
// direction over an otherwise empty latent grid. Placements depend only on
// (direction, subject slot), so they are recoverable from the conditioning.
struct SyntheticScene {
    std::string prompt;
    std::vector<SubjectSpec> subjects;
    std::vector<SubjectImage> images;
    std::size_t direction = 0;  // 0 right, 1 left, 2 down, 3 up
    std::vector<std::pair<int, int>> starts;
    Tensor video;  // [frames*latent_h*latent_w x patch_dim]

    // top-left cell of subject s in frame f
    std::pair<int, int> position(std::size_t s, std::size_t f) const;
};

std::vector<SyntheticScene> make_dataset(const PipelineConfig& cfg, uint64_t seed,
                                         std::size_t count);

// Deterministic stand-ins for the pretrained encoders. vae_decode is the
// transpose of the orthonormal-column vae_encode, so decode(encode(p)) == p
// on the patch subspace.
struct MockEncoders {
    std::size_t d = 32, patch_dim = 4;
    std::size_t vocab = 509;
    Tensor embed_table;  // [vocab x d]
    Tensor sem_proj;     // [sem_count*d x vae_cells*patch_dim]
    Tensor vae_basis;    // [d x patch_dim], orthonormal columns
    std::size_t sem_count = 4;

    static MockEncoders init(uint64_t seed, const PipelineConfig& cfg);
    std::size_t token_id(const std::string& tok) const;
    std::vector<double> embed_token(const std::string& tok) const;
    std::vector<double> vae_encode(std::span<const double> patch) const;  // -> d
    std::vector<double> vae_decode(std::span<const double> z) const;      // -> patch_dim
    Tensor sem_encode(const SubjectImage& img) const;                     // [sem_count x d]
};

// Conditioning bundle fed to the denoiser.
struct Condition {
    Tensor text;  // z_T hat [n_text x d]
    Tensor image;  // z_I hat [n_img x d]
    std::vector<RopeIndex> rope_text, rope_img;
};

struct ToyDenoiser {
    PipelineConfig cfg;
    MockEncoders enc;
    ReparamLinear patchify;    // frozen [d x patch_dim]
    ReparamLinear unpatchify;  // frozen [patch_dim x d]
    ReparamLinear time_proj;   // frozen [d x 16]
    // Frozen positional features. The pretrained backbone this stands in for
    // carries spatial semantics in its latents; a random frozen toy backbone
    // does not, so video/image tokens get explicit sinusoidal cell features.
    ReparamLinear video_pos_proj;  // frozen [d x 42]
    ReparamLinear image_pos_proj;  // frozen [d x 30]
    MmAttentionBlock interaction;
    std::vector<MmAttentionBlock> mm_blocks;
    std::vector<InjectionBlock> inj_blocks;
    std::vector<RopeIndex> rope_video;  // (frame, row, col) grid from t = 0

    Tensor video_pos_features() const;  // [video_tokens x d]

    static ToyDenoiser init(const PipelineConfig& cfg);

    std::vector<Tensor> trainable() const;  // honors cfg.train_injection
    std::vector<std::pair<std::string, Tensor>> named_trainable() const;
    uint64_t base_hash() const;

    Condition encode_condition(const std::string& prompt,
                               const std::vector<SubjectSpec>& subjects,
                               const std::vector<SubjectImage>& images) const;

    // Final video-token representations; use_image toggles only the image
    // conditioning route (text stream always present).
    Tensor forward_tokens(const Tensor& x_patches, double t, const Condition& cond,
                          bool use_image) const;
    // Predicted velocity [n_vid x patch_dim].
    Tensor forward(const Tensor& x_patches, double t, const Condition& cond,
                   bool use_image = true) const;
};

struct TrainResult {
    ToyDenoiser model;
    std::vector<double> losses;
};

TrainResult train(const PipelineConfig& cfg);

Tensor generate(const ToyDenoiser& model, const SyntheticScene& scene, std::size_t steps,
                uint64_t noise_seed);

// Mean vae-embedding cosine between generated subject-region patches and the
// reference subject cells, over all frames/cells/subjects.
double subject_region_identity(const ToyDenoiser& model, const Tensor& video,
                               const SyntheticScene& scene);

// Mean norm of the image-conditioning delta on final video tokens, per frame.
std::vector<double> per_frame_identity_profile(const ToyDenoiser& model,
                                               const std::vector<SyntheticScene>& probes);

double coefficient_of_variation(const std::vector<double>& xs);

// Checkpoints: a directory of TensorFile blobs plus a key-sorted manifest.
void save_checkpoint(const std::filesystem::path& dir, const ToyDenoiser& model);
ToyDenoiser load_checkpoint(const std::filesystem::path& dir);

std::map<std::string, std::string> config_to_map(const PipelineConfig& cfg);
PipelineConfig config_from_map(const std::map<std::string, std::string>& kv);

}  // namespace mmc
