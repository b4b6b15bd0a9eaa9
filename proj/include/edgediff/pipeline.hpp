#pragma once

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "edgediff/diffusion.hpp"
#include "edgediff/edgedb.hpp"
#include "edgediff/eval.hpp"
#include "edgediff/model_io.hpp"
#include "edgediff/synthdata.hpp"

namespace edgediff {

// Config-file schema shared by the CLI subcommands. Every field has a
// default; CLI options override file values. The flags block carries the
// ablation axes (any combination is runnable).
struct RunConfig {
    uint64_t seed = 0;

    std::string dataset_dir = "data";
    std::string edgedb_dir;  // defaults to dataset_dir when empty
    std::string base_weights = "weights/base";
    std::string branch_weights = "weights/branch";
    std::string edge_weights = "weights/edgemodel";
    std::string out_dir = "out";

    DenoiserConfig model;

    int steps = 20;
    double guided_frac = 0.3;
    double strength = 0.6;
    int grad_updates = 1;
    double lambda_start = 8.0, lambda_end = 2.0;
    bool ancestral = true;

    HighPassSpec highpass_spec;

    int train_steps = 3000;
    int train_batch = 4;
    double lr = 0.02;
    double token_dropout = 0.1;
    bool train_masked_attention = true;  // layout conditioning during training

    bool detector_oriented = false;
    double band_slack = -1.0;
    int min_pixels = 3;

    bool flag_guidance = true;
    bool flag_masked_attention = true;
    bool flag_fgcontrol = true;
    bool flag_spatial_gate = true;
    bool flag_highpass = true;

    SamplerConfig sampler(uint64_t sample_seed) const {
        SamplerConfig sc;
        sc.steps = steps;
        sc.guided_frac = guided_frac;
        sc.guidance = flag_guidance;
        sc.masked_attention = flag_masked_attention;
        sc.strength = strength;
        sc.seed = sample_seed;
        sc.ancestral = ancestral;
        sc.guidance_sched.lambda_start = lambda_start;
        sc.guidance_sched.lambda_end = lambda_end;
        sc.guidance_sched.grad_updates = grad_updates;
        sc.control.spatial_gate = flag_spatial_gate;
        sc.control.highpass = flag_highpass;
        return sc;
    }

    ClassPalette palette() const { return ClassPalette::standard(model.n_classes); }

    DetectorConfig detector() const { return {detector_oriented, band_slack, min_pixels}; }
};

inline RunConfig run_config_from_json(const nlohmann::json& j) {
    RunConfig c;
    c.seed = j.value("seed", (uint64_t)0);
    if (j.contains("paths")) {
        const auto& p = j.at("paths");
        c.dataset_dir = p.value("dataset", c.dataset_dir);
        c.edgedb_dir = p.value("edgedb", c.edgedb_dir);
        c.base_weights = p.value("base_weights", c.base_weights);
        c.branch_weights = p.value("branch_weights", c.branch_weights);
        c.edge_weights = p.value("edge_weights", c.edge_weights);
        c.out_dir = p.value("out", c.out_dir);
    }
    if (j.contains("model")) {
        const auto& m = j.at("model");
        c.model.latent = m.value("latent", c.model.latent);
        c.model.channels = m.value("channels", c.model.channels);
        c.model.attn_dim = m.value("attn_dim", c.model.attn_dim);
        c.model.n_classes = m.value("classes", c.model.n_classes);
    }
    if (j.contains("sampler")) {
        const auto& s = j.at("sampler");
        c.steps = s.value("steps", c.steps);
        c.guided_frac = s.value("guided_frac", c.guided_frac);
        c.strength = s.value("strength", c.strength);
        c.grad_updates = s.value("grad_updates", c.grad_updates);
        c.lambda_start = s.value("lambda_start", c.lambda_start);
        c.lambda_end = s.value("lambda_end", c.lambda_end);
        c.ancestral = s.value("ancestral", c.ancestral);
    }
    if (j.contains("highpass")) {
        const auto& h = j.at("highpass");
        c.highpass_spec.divisor = h.value("divisor", c.highpass_spec.divisor);
        c.highpass_spec.tau = h.value("tau", c.highpass_spec.tau);
    }
    if (j.contains("train")) {
        const auto& t = j.at("train");
        c.train_steps = t.value("steps", c.train_steps);
        c.train_batch = t.value("batch", c.train_batch);
        c.lr = t.value("lr", c.lr);
        c.token_dropout = t.value("token_dropout", c.token_dropout);
        c.train_masked_attention = t.value("masked_attention", c.train_masked_attention);
    }
    if (j.contains("detector")) {
        const auto& d = j.at("detector");
        const std::string mode = d.value("mode", std::string("hbb"));
        if (mode != "hbb" && mode != "obb") throw UsageError("config: detector.mode must be hbb or obb");
        c.detector_oriented = mode == "obb";
        c.band_slack = d.value("band_slack", c.band_slack);
        c.min_pixels = d.value("min_pixels", c.min_pixels);
    }
    if (j.contains("flags")) {
        const auto& f = j.at("flags");
        c.flag_guidance = f.value("guidance", c.flag_guidance);
        c.flag_masked_attention = f.value("masked_attention", c.flag_masked_attention);
        c.flag_fgcontrol = f.value("fgcontrol", c.flag_fgcontrol);
        c.flag_spatial_gate = f.value("spatial_gate", c.flag_spatial_gate);
        c.flag_highpass = f.value("highpass", c.flag_highpass);
    }
    return c;
}

inline RunConfig load_run_config(const std::string& path) {
    if (path.empty()) return RunConfig{};
    std::ifstream in(path);
    if (!in) throw DataError("config: cannot open " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw DataError("config: parse error in " + path + ": " + e.what());
    }
    return run_config_from_json(j);
}

inline nlohmann::ordered_json run_config_to_json(const RunConfig& c) {
    nlohmann::ordered_json j;
    j["seed"] = c.seed;
    j["paths"] = {{"dataset", c.dataset_dir}, {"edgedb", c.edgedb_dir},   {"base_weights", c.base_weights},
                  {"branch_weights", c.branch_weights}, {"edge_weights", c.edge_weights}, {"out", c.out_dir}};
    j["model"] = {{"latent", c.model.latent},
                  {"channels", c.model.channels},
                  {"attn_dim", c.model.attn_dim},
                  {"classes", c.model.n_classes}};
    j["sampler"] = {{"steps", c.steps},
                    {"guided_frac", c.guided_frac},
                    {"strength", c.strength},
                    {"grad_updates", c.grad_updates},
                    {"lambda_start", c.lambda_start},
                    {"lambda_end", c.lambda_end},
                    {"ancestral", c.ancestral}};
    j["highpass"] = {{"divisor", c.highpass_spec.divisor}, {"tau", c.highpass_spec.tau}};
    j["train"] = {{"steps", c.train_steps},
                  {"batch", c.train_batch},
                  {"lr", c.lr},
                  {"token_dropout", c.token_dropout},
                  {"masked_attention", c.train_masked_attention}};
    j["detector"] = {{"mode", c.detector_oriented ? "obb" : "hbb"},
                     {"band_slack", c.band_slack},
                     {"min_pixels", c.min_pixels}};
    j["flags"] = {{"guidance", c.flag_guidance},
                  {"masked_attention", c.flag_masked_attention},
                  {"fgcontrol", c.flag_fgcontrol},
                  {"spatial_gate", c.flag_spatial_gate},
                  {"highpass", c.flag_highpass}};
    return j;
}

// ---- datasets ------------------------------------------------------------------

inline TrainSample sample_from_scene(const SceneSample& scene) {
    TrainSample ts;
    ts.z0 = scene.image;
    for (auto& v : ts.z0.data) v = 2.0 * v - 1.0;
    ts.layout = scene.layout;
    for (const auto& inst : scene.layout.instances) ts.classes.push_back(inst.class_id);
    ts.edge = scene.edge;
    return ts;
}

// In-memory training set, same generator as gen_dataset.
inline std::vector<TrainSample> make_training_set(int n, uint64_t seed, const ClassPalette& palette,
                                                  const SceneConfig& cfg) {
    std::vector<TrainSample> out;
    out.reserve((size_t)n);
    for (int i = 0; i < n; ++i) out.push_back(sample_from_scene(gen_scene(mix_seed(seed, (uint64_t)i), palette, cfg)));
    return out;
}

// Load a gen_dataset directory back into training samples.
inline std::vector<TrainSample> load_training_set(const std::string& dir) {
    namespace fs = std::filesystem;
    std::vector<TrainSample> out;
    for (int i = 0;; ++i) {
        char name[16];
        std::snprintf(name, sizeof name, "%04d", i);
        const fs::path scene = fs::path(dir) / "scenes" / (std::string(name) + ".png");
        if (!fs::exists(scene)) break;
        TrainSample ts;
        Tensor img = read_image(scene.string());
        ts.z0 = Tensor::of({1, img.dim(0), img.dim(1)}, img.data);
        for (auto& v : ts.z0.data) v = 2.0 * v - 1.0;
        ts.layout = load_layout((fs::path(dir) / "layouts" / (std::string(name) + ".json")).string());
        for (const auto& inst : ts.layout.instances) ts.classes.push_back(inst.class_id);
        ts.edge = read_image((fs::path(dir) / "edges" / (std::string(name) + ".png")).string());
        out.push_back(std::move(ts));
    }
    if (out.empty()) throw DataError("dataset: no scenes under " + dir);
    return out;
}

// Swap the target signal to the edge maps (the edge-diversification model
// denoises edge images rather than scenes).
inline std::vector<TrainSample> to_edge_targets(std::vector<TrainSample> data) {
    for (auto& ts : data) {
        ts.z0 = Tensor::of({1, ts.edge.dim(0), ts.edge.dim(1)}, ts.edge.data);
        for (auto& v : ts.z0.data) v = 2.0 * v - 1.0;
    }
    return data;
}

// ---- training loop ---------------------------------------------------------------

struct TrainRun {
    std::vector<double> losses;  // one entry per step
};

inline TrainRun run_training(Denoiser& model, ControlBranch* branch, const std::vector<TrainSample>& data,
                             const RunConfig& cfg, bool train_branch) {
    require_dims(!data.empty(), "training: empty dataset");
    const NoiseSchedule sched = NoiseSchedule::cosine(cfg.steps);
    Rng rng(mix_seed(cfg.seed, 0x7121aULL));
    TrainOptions opt;
    opt.token_dropout = cfg.token_dropout;
    opt.train_branch = train_branch;
    opt.masked_attention = cfg.train_masked_attention;
    opt.control.spatial_gate = cfg.flag_spatial_gate;
    opt.control.highpass = cfg.flag_highpass;
    TrainRun run;
    run.losses.reserve((size_t)cfg.train_steps);
    for (int s = 0; s < cfg.train_steps; ++s) {
        std::vector<TrainSample> batch;
        batch.reserve((size_t)cfg.train_batch);
        for (int b = 0; b < cfg.train_batch; ++b)
            batch.push_back(data[(size_t)rng.uniform_int((int)data.size())]);
        run.losses.push_back(train_step(model, branch, batch, sched, cfg.lr, rng, opt));
    }
    return run;
}

inline void write_loss_csv(const std::string& path, const std::vector<double>& losses) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("training: cannot write " + path);
    out << "step,loss\n";
    char line[64];
    for (size_t i = 0; i < losses.size(); ++i) {
        std::snprintf(line, sizeof line, "%zu,%.17g\n", i, losses[i]);
        out << line;
    }
}

// ---- evaluation ------------------------------------------------------------------

struct EvalInputs {
    std::vector<Tensor> generated;  // HxW images in [0,1]
    std::vector<Layout> layouts;
    std::vector<Tensor> reference;  // real scenes for the Frechet side
};

inline nlohmann::ordered_json evaluate(const EvalInputs& in, const ClassPalette& palette,
                                       const DetectorConfig& dcfg) {
    if (in.generated.size() != in.layouts.size()) throw DataError("eval: scene count mismatch");
    if (in.generated.empty()) throw DataError("eval: nothing to evaluate");
    std::vector<std::vector<Detection>> dets;
    std::vector<std::vector<double>> gen_feats, ref_feats;
    for (const auto& img : in.generated) {
        dets.push_back(detect(img, palette, dcfg));
        gen_feats.push_back(features(img));
    }
    const ApReport ap = layout_score(dets, in.layouts);
    nlohmann::ordered_json rep;
    rep["ap50"] = ap.ap50;
    rep["ap50_95"] = ap.ap50_95;
    if (!in.reference.empty()) {
        for (const auto& img : in.reference) ref_feats.push_back(features(img));
        rep["frechet"] = frechet(fit_gaussian(gen_feats), fit_gaussian(ref_feats));
    } else {
        rep["frechet"] = nullptr;
    }
    rep["n_scenes"] = in.generated.size();
    return rep;
}

}  // namespace edgediff
