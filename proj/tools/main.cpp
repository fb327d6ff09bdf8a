#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>

#include "CLI11.hpp"
#include "json.hpp"
#include "mmc/config.hpp"
#include "mmc/consolidation.hpp"
#include "mmc/metrics.hpp"
#include "mmc/rope3d.hpp"
#include "mmc/tensor_file.hpp"
#include "mmc/token_layout.hpp"
#include "mmc/toy_pipeline.hpp"

namespace {

using namespace mmc;

struct ConfigFlags {
    std::string file;
    std::map<std::string, std::string> overrides;
};

void add_config_flags(CLI::App* cmd, ConfigFlags& cf) {
    cmd->add_option("--config", cf.file, "key = value config file");
    auto override_opt = [cmd, &cf](const std::string& flag, const std::string& key,
                                   const std::string& help) {
        cmd->add_option_function<std::string>(
            flag, [&cf, key](const std::string& v) { cf.overrides[key] = v; }, help);
    };
    override_opt("--seed", "seed", "PRNG seed");
    override_opt("--mode", "mode", "attention_inherited | token_concat | adapter");
    override_opt("--steps", "train_steps", "training steps");
    override_opt("--sample-steps", "sample_steps", "sampler steps");
    override_opt("--lr", "lr", "learning rate");
    override_opt("--train-injection", "train_injection", "true | false");
    override_opt("--dataset-size", "dataset_size", "synthetic scenes in the train set");
    override_opt("--frames", "frames", "video frames");
    override_opt("--latent-h", "latent_h", "latent grid rows");
    override_opt("--latent-w", "latent_w", "latent grid cols");
}

PipelineConfig config_of(const ConfigFlags& cf) {
    std::optional<std::filesystem::path> file;
    if (!cf.file.empty()) file = cf.file;
    return resolve_config(file, cf.overrides);
}

void emit(const std::string& out_path, const std::string& text) {
    if (out_path.empty()) std::cout << text;
    else atomic_write_file(out_path, text);
}

std::vector<SubjectSpec> subjects_from_words(const std::vector<std::string>& words,
                                             const PipelineConfig& cfg) {
    std::vector<SubjectSpec> subjects;
    for (const std::string& w : words)
        subjects.push_back(SubjectSpec{w, cfg.sem_w, cfg.sem_h, cfg.vae_w, cfg.vae_h});
    return subjects;
}

std::string format_stream(const TokenStream& stream) {
    std::ostringstream os;
    for (const TokenEntry& e : stream.entries) {
        os << "kind=" << token_kind_name(e.kind) << " seq_pos=" << e.seq_pos << " subject_id=";
        if (e.subject_id) os << *e.subject_id;
        else os << "none";
        os << "\n";
    }
    os << "boundaries =";
    for (std::size_t b : stream.boundaries()) os << " " << b;
    os << "\n";
    return os.str();
}

std::string format_rope_dump(const TokenStream& stream, const std::vector<RopeIndex>& idx) {
    std::ostringstream os;
    os << "# seq_pos kind subject_id t y x\n";
    for (const TokenEntry& e : stream.entries) {
        os << e.seq_pos << " " << token_kind_name(e.kind) << " ";
        if (e.subject_id) os << *e.subject_id;
        else os << "-";
        const RopeIndex& r = idx[e.seq_pos];
        os << " " << r.t << " " << r.y << " " << r.x << "\n";
    }
    return os.str();
}

std::string format_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.12g", v);
    return buf;
}

int run_layout(const ConfigFlags& cf, const std::string& prompt,
               const std::vector<std::string>& words, const std::string& out_path) {
    const PipelineConfig cfg = config_of(cf);
    TemplateLayout lay = layout_template(prompt, subjects_from_words(words, cfg));
    emit(out_path, format_stream(lay.stream));
    return 0;
}

int run_rope_dump(const ConfigFlags& cf, const std::string& prompt,
                  const std::vector<std::string>& words, const std::string& out_path) {
    const PipelineConfig cfg = config_of(cf);
    auto subjects = subjects_from_words(words, cfg);
    TemplateLayout lay = layout_template(prompt, subjects);
    std::vector<SubjectGrids> grids;
    for (const auto& s : subjects)
        grids.push_back(SubjectGrids{s.sem_w, s.sem_h, s.vae_w, s.vae_h});
    emit(out_path, format_rope_dump(lay.stream, assign_stream(lay.stream, grids)));
    return 0;
}

int run_demo_train(const ConfigFlags& cf, const std::string& out_dir) {
    const PipelineConfig cfg = config_of(cf);
    TrainResult result = train(cfg);
    save_checkpoint(out_dir, result.model);
    std::cout << "steps = " << result.losses.size() << "\n";
    if (!result.losses.empty()) {
        std::cout << "loss_first = " << format_double(result.losses.front()) << "\n";
        std::cout << "loss_last = " << format_double(result.losses.back()) << "\n";
    }
    std::cout << "checkpoint = " << out_dir << "\n";
    return 0;
}

int run_demo_generate(const std::string& ckpt_dir, std::size_t scene_idx, std::size_t steps,
                      const std::string& out_path) {
    ToyDenoiser model = load_checkpoint(ckpt_dir);
    const PipelineConfig& cfg = model.cfg;
    auto scenes = make_dataset(cfg, cfg.seed ^ subseed::kEvalSet, scene_idx + 1);
    const std::size_t n = steps ? steps : cfg.sample_steps;
    Tensor video = generate(model, scenes[scene_idx], n, cfg.seed + scene_idx);
    write_tensor_file(out_path, video);
    std::cout << "video = " << out_path << "\n";
    return 0;
}

int run_demo_eval(const std::string& ckpt_dir, std::size_t n_scenes, std::size_t steps,
                  const std::string& out_path) {
    ToyDenoiser model = load_checkpoint(ckpt_dir);
    const PipelineConfig& cfg = model.cfg;
    auto scenes = make_dataset(cfg, cfg.seed ^ subseed::kEvalSet, n_scenes);
    const std::size_t n = steps ? steps : cfg.sample_steps;

    double identity = 0.0;
    for (std::size_t i = 0; i < scenes.size(); ++i) {
        Tensor video = generate(model, scenes[i], n, cfg.seed + i);
        identity += subject_region_identity(model, video, scenes[i]);
    }
    identity /= static_cast<double>(scenes.size());
    std::vector<double> profile = per_frame_identity_profile(model, scenes);

    std::map<std::string, std::string> report;
    report["identity_cosine"] = format_double(identity);
    report["mode"] = injection_mode_name(cfg.mode);
    report["profile_cv"] = format_double(coefficient_of_variation(profile));
    for (std::size_t f = 0; f < profile.size(); ++f)
        report["profile_frame_" + std::to_string(f)] = format_double(profile[f]);
    report["scenes"] = std::to_string(scenes.size());
    std::string text;
    for (const auto& [k, v] : report) text += k + " = " + v + "\n";
    emit(out_path, text);
    return 0;
}

int run_consolidate(const std::string& in_path, const std::string& out_path, double tau_dist,
                    double tau_clip, std::size_t total_frames) {
    auto records = read_observations_jsonl(in_path);
    auto kept = validate_segmentation(std::move(records), tau_clip);
    SubjectGraph graph = build_graph(std::move(kept), tau_dist);
    std::vector<Clique> cliques = consolidate(graph, total_frames);

    nlohmann::json manifest;
    manifest["node_count"] = graph.size();
    manifest["tau_clip"] = tau_clip;
    manifest["tau_dist"] = tau_dist;
    manifest["total_frames"] = total_frames;
    nlohmann::json out = nlohmann::json::array();
    for (const Clique& c : cliques) {
        nlohmann::json jc;
        jc["size"] = c.members.size();
        jc["representative"] = graph.nodes[c.representative].crop_ref;
        nlohmann::json members = nlohmann::json::array();
        for (std::size_t m : c.members)
            members.push_back({{"crop_ref", graph.nodes[m].crop_ref},
                               {"frame", graph.nodes[m].frame_idx}});
        jc["members"] = std::move(members);
        out.push_back(std::move(jc));
    }
    manifest["cliques"] = std::move(out);
    emit(out_path, manifest.dump(2) + "\n");
    return 0;
}

FeatureSet feature_set_from_file(const std::string& path, const std::string& label) {
    Tensor t = read_tensor_file(path);
    if (t.dims().size() != 2)
        throw std::invalid_argument("metrics: " + path + " must be a rank-2 feature matrix");
    FeatureSet s;
    s.label = label;
    for (std::size_t i = 0; i < t.dims()[0]; ++i) {
        std::vector<double> row(t.dims()[1]);
        for (std::size_t j = 0; j < t.dims()[1]; ++j) row[j] = t.at(i, j);
        s.vectors.push_back(std::move(row));
    }
    return s;
}

int run_metrics(const std::string& ref_path, const std::string& frames_path,
                const std::string& a_path, const std::string& b_path,
                const std::string& out_path) {
    std::map<std::string, std::string> report;
    std::optional<FeatureSet> frames;
    if (!frames_path.empty()) frames = feature_set_from_file(frames_path, "frames");

    if (!ref_path.empty()) {
        if (!frames) throw std::invalid_argument("metrics: --ref requires --frames");
        Tensor ref = read_tensor_file(ref_path);
        std::vector<double> rv(ref.data().begin(), ref.data().end());
        report["identity_similarity"] = format_double(identity_similarity(rv, *frames));
    }
    if (frames && frames->count() >= 2)
        report["temporal_consistency"] = format_double(temporal_consistency(*frames));
    if (!a_path.empty() || !b_path.empty()) {
        if (a_path.empty() || b_path.empty())
            throw std::invalid_argument("metrics: need both --set-a and --set-b");
        FeatureSet a = feature_set_from_file(a_path, "a");
        FeatureSet b = feature_set_from_file(b_path, "b");
        report["frechet_distance"] = format_double(frechet_distance(a, b));
    }
    if (report.empty()) throw std::invalid_argument("metrics: no inputs given");
    std::string text;
    for (const auto& [k, v] : report) text += k + " = " + v + "\n";
    emit(out_path, text);
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"multi-subject conditioning toolkit"};
    app.require_subcommand(1);

    ConfigFlags layout_cf, rope_cf, train_cf;
    std::string prompt, out_path;
    std::vector<std::string> subject_words;

    auto* layout_cmd = app.add_subcommand("layout", "emit the token stream for a template");
    add_config_flags(layout_cmd, layout_cf);
    layout_cmd->add_option("--prompt", prompt, "text prompt")->required();
    layout_cmd->add_option("--subject", subject_words, "subject entity word (repeatable)");
    layout_cmd->add_option("--out", out_path, "output file (default stdout)");

    auto* rope_cmd = app.add_subcommand("rope-dump", "emit rope indices for a template");
    add_config_flags(rope_cmd, rope_cf);
    rope_cmd->add_option("--prompt", prompt, "text prompt")->required();
    rope_cmd->add_option("--subject", subject_words, "subject entity word (repeatable)");
    rope_cmd->add_option("--out", out_path, "output file (default stdout)");

    std::string ckpt_dir;
    auto* train_cmd = app.add_subcommand("demo-train", "train the toy denoiser");
    add_config_flags(train_cmd, train_cf);
    train_cmd->add_option("--out", ckpt_dir, "checkpoint directory")->required();

    std::size_t scene_idx = 0, eval_scenes = 4, gen_steps = 0;
    auto* gen_cmd = app.add_subcommand("demo-generate", "sample a video from a checkpoint");
    gen_cmd->add_option("--checkpoint", ckpt_dir, "checkpoint directory")->required();
    gen_cmd->add_option("--scene", scene_idx, "eval-scene index");
    gen_cmd->add_option("--sample-steps", gen_steps, "integration steps (default from config)");
    gen_cmd->add_option("--out", out_path, "output video tensor")->required();

    auto* eval_cmd = app.add_subcommand("demo-eval", "identity metrics for a checkpoint");
    eval_cmd->add_option("--checkpoint", ckpt_dir, "checkpoint directory")->required();
    eval_cmd->add_option("--scenes", eval_scenes, "number of eval scenes");
    eval_cmd->add_option("--sample-steps", gen_steps, "integration steps (default from config)");
    eval_cmd->add_option("--out", out_path, "report file (default stdout)");

    std::string in_path;
    double tau_dist = 0.3, tau_clip = 0.25;
    std::size_t total_frames = 0;
    auto* cons_cmd = app.add_subcommand("consolidate", "clique-based subject consolidation");
    cons_cmd->add_option("--in", in_path, "observations JSONL")->required();
    cons_cmd->add_option("--out", out_path, "manifest JSON (default stdout)");
    cons_cmd->add_option("--tau-dist", tau_dist, "cosine-distance edge threshold");
    cons_cmd->add_option("--tau-clip", tau_clip, "segmentation-validation threshold");
    cons_cmd->add_option("--total-frames", total_frames, "total detected frames")->required();

    std::string ref_path, frames_path, a_path, b_path;
    auto* met_cmd = app.add_subcommand("metrics", "similarity / consistency / frechet");
    met_cmd->add_option("--ref", ref_path, "reference feature vector (TensorFile)");
    met_cmd->add_option("--frames", frames_path, "per-frame feature matrix (TensorFile)");
    met_cmd->add_option("--set-a", a_path, "feature matrix A (TensorFile)");
    met_cmd->add_option("--set-b", b_path, "feature matrix B (TensorFile)");
    met_cmd->add_option("--out", out_path, "report file (default stdout)");

    try {
        app.parse(argc, argv);
        if (layout_cmd->parsed()) return run_layout(layout_cf, prompt, subject_words, out_path);
        if (rope_cmd->parsed()) return run_rope_dump(rope_cf, prompt, subject_words, out_path);
        if (train_cmd->parsed()) return run_demo_train(train_cf, ckpt_dir);
        if (gen_cmd->parsed()) return run_demo_generate(ckpt_dir, scene_idx, gen_steps, out_path);
        if (eval_cmd->parsed())
            return run_demo_eval(ckpt_dir, eval_scenes, gen_steps, out_path);
        if (cons_cmd->parsed())
            return run_consolidate(in_path, out_path, tau_dist, tau_clip, total_frames);
        if (met_cmd->parsed())
            return run_metrics(ref_path, frames_path, a_path, b_path, out_path);
        return 2;
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return app.exit(e);  // --help
        std::cerr << "usage error: " << e.what() << "\n";
        return 2;
    } catch (const std::invalid_argument& e) {
        std::cerr << "usage error: " << e.what() << "\n";
        return 2;
    } catch (const mmc::ComputeError& e) {
        std::cerr << "computation failed: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
