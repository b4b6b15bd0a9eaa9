// edgediff: layout-conditioned toy diffusion with edge guidance.
//
// Subcommands: synth, edb build/query, compose, generate, train, eval,
// demo-filter. Every command is a pure function of its arguments and input
// files; re-runs produce byte-identical outputs.

#include <CLI11.hpp>

#include <cinttypes>
#include <cstdio>
#include <filesystem>
#include <iostream>

#include "edgediff/pipeline.hpp"

namespace fs = std::filesystem;
using namespace edgediff;

namespace {

struct FlagOverrides {
    int guidance = -1, masked = -1, fgcontrol = -1, gate = -1, highpass = -1;

    void apply(RunConfig& cfg) const {
        if (guidance >= 0) cfg.flag_guidance = guidance;
        if (masked >= 0) cfg.flag_masked_attention = masked;
        if (fgcontrol >= 0) cfg.flag_fgcontrol = fgcontrol;
        if (gate >= 0) cfg.flag_spatial_gate = gate;
        if (highpass >= 0) cfg.flag_highpass = highpass;
    }
};

void add_flag_overrides(CLI::App* cmd, FlagOverrides& fo) {
    cmd->add_flag("--guidance,!--no-guidance", fo.guidance, "latent guidance phase");
    cmd->add_flag("--masked-attention,!--no-masked-attention", fo.masked, "region-masked attention phase");
    cmd->add_flag("--fgcontrol,!--no-fgcontrol", fo.fgcontrol, "attach the control branch");
    cmd->add_flag("--spatial-gate,!--no-spatial-gate", fo.gate, "spatially gate injected residuals");
    cmd->add_flag("--highpass,!--no-highpass", fo.highpass, "frequency-gate injected residuals");
}

std::string hex64(uint64_t v) {
    char buf[24];
    std::snprintf(buf, sizeof buf, "%016" PRIx64, v);
    return buf;
}

nlohmann::ordered_json weights_record(const std::string& prefix) {
    nlohmann::ordered_json j;
    j["path"] = prefix;
    j["fnv1a64"] = hex64(fnv1a64_file(prefix + ".bin"));
    return j;
}

void write_json(const std::string& path, const nlohmann::ordered_json& j) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write " + path);
    out << j.dump(2) << "\n";
}

Tensor to_plane(const Tensor& img) {
    if (img.rank() == 2) return img;
    return Tensor::of({img.dim(1), img.dim(2)}, img.data);
}

// ---- synth ------------------------------------------------------------------

int cmd_synth(int n, uint64_t seed, const std::string& out, int canvas, int classes, bool oriented,
              int n_min, int n_max) {
    ClassPalette palette = ClassPalette::standard(classes);
    SceneConfig cfg;
    cfg.canvas = canvas;
    cfg.oriented = oriented;
    cfg.n_min = n_min;
    cfg.n_max = n_max;
    const std::string manifest = gen_dataset(n, seed, out, palette, cfg);
    std::printf("%s\n", manifest.c_str());
    return 0;
}

// ---- edb --------------------------------------------------------------------

int cmd_edb_build(const std::string& dir) {
    const EdgeIndex index = build_index(dir);
    if (index.size() == 0) {
        std::fprintf(stderr, "warning: empty edge database at %s\n", dir.c_str());
    }
    std::printf("records: %zu\n", index.size());
    for (const auto& [cls, lst] : index.by_class) std::printf("class %d: %zu\n", cls, lst.size());
    return 0;
}

int cmd_edb_query(const std::string& dir, int cls, double ar) {
    const EdgeIndex index = build_index(dir);
    const EdgeRecord& rec = retrieve(index, cls, ar);
    std::printf("id %d aspect_ratio %.6f\n", rec.id, rec.aspect_ratio);
    return 0;
}

// ---- compose ------------------------------------------------------------------

int cmd_compose(const std::string& layout_path, const std::string& edb_dir, const std::string& out_path) {
    const Layout layout = load_layout(layout_path);
    const EdgeIndex index = build_index(edb_dir);
    const Tensor canvas = compose(layout, index);
    write_png_gray(out_path, canvas);
    std::printf("%s\n", out_path.c_str());
    return 0;
}

// ---- generate ------------------------------------------------------------------

int cmd_generate(const std::string& mode, const std::string& layout_path, RunConfig cfg,
                 std::vector<uint64_t> seeds, const std::string& edge_path) {
    if (mode != "scene" && mode != "edges") throw UsageError("generate: mode must be scene or edges");
    if (seeds.empty()) seeds = {cfg.seed};
    const Layout layout = load_layout(layout_path);
    fs::create_directories(cfg.out_dir);
    const std::string edb_dir = cfg.edgedb_dir.empty() ? cfg.dataset_dir : cfg.edgedb_dir;

    nlohmann::ordered_json prov;
    prov["command"] = "generate";
    prov["mode"] = mode;
    prov["layout"] = layout_path;
    prov["config"] = run_config_to_json(cfg);
    prov["seeds"] = seeds;
    prov["weights"] = nlohmann::ordered_json::object();
    prov["outputs"] = nlohmann::ordered_json::array();

    if (mode == "scene") {
        Denoiser model = load_denoiser(cfg.base_weights);
        prov["weights"]["base"] = weights_record(cfg.base_weights);
        ControlBranch branch;
        bool have_branch = false;
        if (cfg.flag_fgcontrol) {
            branch = load_branch(cfg.branch_weights);
            prov["weights"]["branch"] = weights_record(cfg.branch_weights);
            have_branch = true;
        }
        Tensor edge;
        bool have_edge = false;
        if (!edge_path.empty()) {
            edge = read_image(edge_path);
            have_edge = true;
            prov["edge_source"] = edge_path;
        } else if (have_branch) {
            edge = compose(layout, build_index(edb_dir));
            have_edge = true;
            prov["edge_source"] = "composed:" + edb_dir;
        } else {
            prov["edge_source"] = nullptr;
        }
        for (uint64_t s : seeds) {
            const Tensor img = sample(model, layout, cfg.sampler(s), have_branch ? &branch : nullptr,
                                      have_edge ? &edge : nullptr);
            char name[48];
            std::snprintf(name, sizeof name, "scene_%" PRIu64 ".png", s);
            const std::string path = (fs::path(cfg.out_dir) / name).string();
            write_png_gray(path, to_plane(img));
            prov["outputs"].push_back(path);
        }
    } else {
        Denoiser model = load_denoiser(cfg.edge_weights);
        prov["weights"]["edgemodel"] = weights_record(cfg.edge_weights);
        Tensor composite;
        if (!edge_path.empty()) {
            composite = read_image(edge_path);
            prov["edge_source"] = edge_path;
        } else {
            composite = compose(layout, build_index(edb_dir));
            prov["edge_source"] = "composed:" + edb_dir;
        }
        const std::string cpath = (fs::path(cfg.out_dir) / "composite.png").string();
        write_png_gray(cpath, composite);
        prov["outputs"].push_back(cpath);
        for (uint64_t s : seeds) {
            const Tensor img = img2img(model, composite, cfg.strength, layout, cfg.sampler(s));
            char name[48];
            std::snprintf(name, sizeof name, "edges_%" PRIu64 ".png", s);
            const std::string path = (fs::path(cfg.out_dir) / name).string();
            write_png_gray(path, to_plane(img));
            prov["outputs"].push_back(path);
        }
    }
    const std::string prov_path = (fs::path(cfg.out_dir) / "provenance.json").string();
    write_json(prov_path, prov);
    std::printf("%s\n", prov_path.c_str());
    return 0;
}

// ---- train ------------------------------------------------------------------

int cmd_train(const std::string& target, RunConfig cfg) {
    const std::vector<TrainSample> data = load_training_set(cfg.dataset_dir);
    std::string prefix;
    TrainRun run;
    if (target == "base") {
        Rng rng(mix_seed(cfg.seed, 0xba5eULL));
        Denoiser model = Denoiser::init(cfg.model, rng);
        run = run_training(model, nullptr, data, cfg, false);
        prefix = cfg.base_weights;
        if (!fs::path(prefix).parent_path().empty()) fs::create_directories(fs::path(prefix).parent_path());
        save_denoiser(prefix, model);
    } else if (target == "branch") {
        Denoiser model = load_denoiser(cfg.base_weights);
        Rng rng(mix_seed(cfg.seed, 0xb7a9cULL));
        ControlBranch branch = ControlBranch::init(model.cfg, rng, cfg.highpass_spec);
        run = run_training(model, &branch, data, cfg, true);
        prefix = cfg.branch_weights;
        if (!fs::path(prefix).parent_path().empty()) fs::create_directories(fs::path(prefix).parent_path());
        save_branch(prefix, branch);
    } else if (target == "edgemodel") {
        Rng rng(mix_seed(cfg.seed, 0xed9eULL));
        Denoiser model = Denoiser::init(cfg.model, rng);
        const std::vector<TrainSample> edges = to_edge_targets(data);
        // region attention is an inference-time intervention on the edge
        // model; it trains without layout conditioning
        cfg.train_masked_attention = false;
        run = run_training(model, nullptr, edges, cfg, false);
        prefix = cfg.edge_weights;
        if (!fs::path(prefix).parent_path().empty()) fs::create_directories(fs::path(prefix).parent_path());
        save_denoiser(prefix, model);
    } else {
        throw UsageError("train: target must be base, branch or edgemodel");
    }
    write_loss_csv(prefix + "_loss.csv", run.losses);
    std::printf("%s.bin\n", prefix.c_str());
    if (!run.losses.empty())
        std::printf("loss %0.6f -> %0.6f over %zu steps\n", run.losses.front(), run.losses.back(),
                    run.losses.size());
    return 0;
}

// ---- eval ------------------------------------------------------------------

int cmd_eval(const std::string& generated_dir, const std::string& gt_dir, RunConfig cfg,
             const std::string& report_path) {
    EvalInputs in;
    std::vector<std::string> files;
    if (!fs::is_directory(generated_dir)) throw DataError("eval: no such directory " + generated_dir);
    for (const auto& e : fs::directory_iterator(generated_dir))
        if (e.is_regular_file() && e.path().extension() == ".png") files.push_back(e.path().string());
    std::sort(files.begin(), files.end());
    for (const auto& f : files) in.generated.push_back(read_image(f));

    for (int i = 0;; ++i) {
        char name[16];
        std::snprintf(name, sizeof name, "%04d", i);
        const fs::path lp = fs::path(gt_dir) / "layouts" / (std::string(name) + ".json");
        if (!fs::exists(lp)) break;
        in.layouts.push_back(load_layout(lp.string()));
        const fs::path sp = fs::path(gt_dir) / "scenes" / (std::string(name) + ".png");
        if (fs::exists(sp)) in.reference.push_back(read_image(sp.string()));
    }
    if (in.generated.size() != in.layouts.size())
        throw DataError("eval: generated/ground-truth counts disagree (" +
                        std::to_string(in.generated.size()) + " vs " + std::to_string(in.layouts.size()) + ")");

    const nlohmann::ordered_json rep = evaluate(in, cfg.palette(), cfg.detector());
    std::printf("%s\n", rep.dump(2).c_str());
    if (!report_path.empty()) write_json(report_path, rep);
    return 0;
}

// ---- demo-filter ------------------------------------------------------------------

int cmd_demo_filter(const std::string& input, const std::string& out_dir, const HighPassSpec& spec) {
    const Tensor img = read_image(input);
    fs::create_directories(out_dir);
    auto normalized_abs = [](const Tensor& t) {
        Tensor out = t;
        const double mx = max_abs(t);
        for (auto& v : out.data) v = mx > 0.0 ? std::fabs(v) / mx : 0.0;
        return out;
    };
    write_png_gray((fs::path(out_dir) / "before.png").string(), img);
    write_png_gray((fs::path(out_dir) / "highpass.png").string(),
                   normalized_abs(highpass_filter(img, spec.divisor)));
    write_png_gray((fs::path(out_dir) / "purified.png").string(), normalized_abs(freq_gate(img, spec)));
    std::printf("%s\n", out_dir.c_str());
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"layout-to-image toy diffusion with edge guidance"};
    app.require_subcommand(1);

    // synth
    auto* synth = app.add_subcommand("synth", "generate a synthetic dataset");
    int synth_n = 0;
    uint64_t synth_seed = 0;
    std::string synth_out = "data";
    int synth_canvas = 32, synth_classes = 3, synth_nmin = 1, synth_nmax = 3;
    bool synth_oriented = false;
    synth->add_option("--n", synth_n, "number of scenes")->required();
    synth->add_option("--seed", synth_seed, "generator seed");
    synth->add_option("--out", synth_out, "output directory");
    synth->add_option("--canvas", synth_canvas, "canvas side in pixels");
    synth->add_option("--classes", synth_classes, "number of classes");
    synth->add_option("--nmin", synth_nmin, "min instances per scene");
    synth->add_option("--nmax", synth_nmax, "max instances per scene");
    synth->add_flag("--oriented", synth_oriented, "rotated boxes");

    // edb
    auto* edb = app.add_subcommand("edb", "edge database");
    edb->require_subcommand(1);
    auto* edb_build = edb->add_subcommand("build", "build and validate an index");
    std::string edb_dir;
    edb_build->add_option("dir", edb_dir, "database directory")->required();
    auto* edb_query = edb->add_subcommand("query", "nearest record by class and aspect ratio");
    std::string edbq_dir;
    int edbq_class = 0;
    double edbq_ar = 1.0;
    edb_query->add_option("dir", edbq_dir, "database directory")->required();
    edb_query->add_option("--class", edbq_class, "class id")->required();
    edb_query->add_option("--ar", edbq_ar, "query aspect ratio")->required();

    // compose
    auto* comp = app.add_subcommand("compose", "assemble a composite edge map for a layout");
    std::string comp_layout, comp_edb, comp_out = "composite.png";
    comp->add_option("--layout", comp_layout, "layout JSON")->required();
    comp->add_option("--edb", comp_edb, "edge database directory")->required();
    comp->add_option("--out", comp_out, "output image path");

    // generate
    auto* gen = app.add_subcommand("generate", "sample scenes or diversified edges");
    std::string gen_mode, gen_layout, gen_config, gen_edge, gen_out;
    std::vector<uint64_t> gen_seeds;
    FlagOverrides gen_flags;
    gen->add_option("--mode", gen_mode, "scene or edges")->required();
    gen->add_option("--layout", gen_layout, "layout JSON")->required();
    gen->add_option("--config", gen_config, "run config JSON");
    gen->add_option("--seeds", gen_seeds, "sampling seeds")->delimiter(',');
    gen->add_option("--edge", gen_edge, "explicit edge-condition image");
    gen->add_option("--out", gen_out, "output directory override");
    add_flag_overrides(gen, gen_flags);

    // train
    auto* train = app.add_subcommand("train", "train the base model, control branch or edge model");
    std::string train_target, train_config, train_dataset, train_out;
    int train_steps_opt = -1;
    double train_lr_opt = -1.0;
    uint64_t train_seed = (uint64_t)-1;
    train->add_option("--target", train_target, "base | branch | edgemodel")->required();
    train->add_option("--config", train_config, "run config JSON");
    train->add_option("--dataset", train_dataset, "dataset directory override");
    train->add_option("--steps", train_steps_opt, "training steps override");
    train->add_option("--lr", train_lr_opt, "learning rate override");
    train->add_option("--seed", train_seed, "seed override");
    train->add_option("--out", train_out, "weights prefix override");

    // eval
    auto* ev = app.add_subcommand("eval", "layout adherence + Frechet report");
    std::string ev_gen, ev_gt, ev_mode = "hbb", ev_config, ev_out;
    ev->add_option("--generated", ev_gen, "directory of generated PNGs")->required();
    ev->add_option("--gt", ev_gt, "ground-truth dataset directory")->required();
    ev->add_option("--mode", ev_mode, "hbb or obb");
    ev->add_option("--config", ev_config, "run config JSON");
    ev->add_option("--out", ev_out, "report JSON path");

    // demo-filter
    auto* demo = app.add_subcommand("demo-filter", "write before/after images of the frequency gate");
    std::string demo_in, demo_out = "filter_demo";
    HighPassSpec demo_spec;
    demo->add_option("--input", demo_in, "input image")->required();
    demo->add_option("--out", demo_out, "output directory");
    demo->add_option("--divisor", demo_spec.divisor, "low band divisor");
    demo->add_option("--tau", demo_spec.tau, "soft threshold");

    try {
        app.parse(argc, argv);

        if (*synth) {
            if (synth_n < 1) throw UsageError("synth: --n must be >= 1");
            return cmd_synth(synth_n, synth_seed, synth_out, synth_canvas, synth_classes, synth_oriented,
                             synth_nmin, synth_nmax);
        }
        if (*edb_build) return cmd_edb_build(edb_dir);
        if (*edb_query) return cmd_edb_query(edbq_dir, edbq_class, edbq_ar);
        if (*comp) return cmd_compose(comp_layout, comp_edb, comp_out);
        if (*gen) {
            RunConfig cfg = load_run_config(gen_config);
            gen_flags.apply(cfg);
            if (!gen_out.empty()) cfg.out_dir = gen_out;
            return cmd_generate(gen_mode, gen_layout, cfg, gen_seeds, gen_edge);
        }
        if (*train) {
            RunConfig cfg = load_run_config(train_config);
            if (!train_dataset.empty()) cfg.dataset_dir = train_dataset;
            if (train_steps_opt >= 0) cfg.train_steps = train_steps_opt;
            if (train_lr_opt >= 0.0) cfg.lr = train_lr_opt;
            if (train_seed != (uint64_t)-1) cfg.seed = train_seed;
            if (!train_out.empty()) {
                if (train_target == "base") cfg.base_weights = train_out;
                if (train_target == "branch") cfg.branch_weights = train_out;
                if (train_target == "edgemodel") cfg.edge_weights = train_out;
            }
            return cmd_train(train_target, cfg);
        }
        if (*ev) {
            RunConfig cfg = load_run_config(ev_config);
            if (ev_mode != "hbb" && ev_mode != "obb") throw UsageError("eval: mode must be hbb or obb");
            cfg.detector_oriented = ev_mode == "obb";
            return cmd_eval(ev_gen, ev_gt, cfg, ev_out);
        }
        if (*demo) return cmd_demo_filter(demo_in, demo_out, demo_spec);
        throw UsageError("no subcommand");
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 1;
    } catch (const UsageError& e) {
        std::fprintf(stderr, "usage error: %s\n", e.what());
        return 1;
    } catch (const DataError& e) {
        std::fprintf(stderr, "data error: %s\n", e.what());
        return 2;
    } catch (const NumericError& e) {
        std::fprintf(stderr, "numeric error: %s\n", e.what());
        return 3;
    }
}
