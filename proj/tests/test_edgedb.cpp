#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "edgediff/edgedb.hpp"

using namespace edgediff;
namespace fs = std::filesystem;

namespace {

struct TempDb {
    fs::path root;
    std::ofstream manifest;

    TempDb() {
        root = fs::temp_directory_path() / ("edgediff_edb_" + std::to_string(::getpid()));
        fs::remove_all(root);
        fs::create_directories(root);
        manifest.open(root / "index.jsonl");
    }
    ~TempDb() { fs::remove_all(root); }

    void add(int id, int cls, double ar, const Tensor& edge) {
        const std::string file = "e" + std::to_string(id) + ".png";
        write_png_gray((root / file).string(), edge);
        manifest << "{\"id\": " << id << ", \"class\": " << cls << ", \"aspect_ratio\": " << ar
                 << ", \"file\": \"" << file << "\"}\n";
        manifest.flush();
    }
};

Tensor const_edge(int h, int w, double v) { return Tensor({h, w}, v); }

}  // namespace

TEST_CASE("build_index: empty dir, per-class bookkeeping, duplicate ids") {
    {
        const fs::path dir = fs::temp_directory_path() / "edgediff_edb_empty";
        fs::create_directories(dir);
        EdgeIndex idx = build_index(dir.string());
        CHECK(idx.size() == 0);
        fs::remove_all(dir);
    }
    {
        TempDb db;
        db.add(0, 0, 1.0, const_edge(4, 4, 1.0));
        db.add(1, 0, 2.0, const_edge(4, 8, 1.0));
        db.add(2, 1, 0.5, const_edge(8, 4, 1.0));
        EdgeIndex idx = build_index(db.root.string());
        CHECK(idx.size() == 3);
        CHECK(idx.by_class.at(0).size() == 2);
        CHECK(idx.by_class.at(1).size() == 1);
    }
    {
        TempDb db;
        db.add(5, 0, 1.0, const_edge(4, 4, 1.0));
        db.add(5, 1, 2.0, const_edge(4, 4, 1.0));
        try {
            build_index(db.root.string());
            FAIL("expected duplicate-id error");
        } catch (const DataError& e) {
            CHECK(std::string(e.what()).find("5") != std::string::npos);
        }
    }
}

TEST_CASE("retrieve: log-space nearest, exact match, tie to lower id") {
    TempDb db;
    db.add(0, 0, 1.0, const_edge(4, 4, 0.5));
    db.add(1, 0, 2.0, const_edge(4, 8, 0.9));
    EdgeIndex idx = build_index(db.root.string());

    // |log 1.8/2.0| < |log 1.8/1.0| so the AR 2.0 record wins
    CHECK(retrieve(idx, 0, 1.8).id == 1);
    CHECK(retrieve(idx, 0, 2.0).id == 1);
    CHECK(retrieve(idx, 0, 1.0).id == 0);
    // equal log distance: sqrt(2) sits exactly between 1 and 2
    CHECK(retrieve(idx, 0, std::sqrt(2.0)).id == 0);

    // querying a stored record's own AR hits at log distance exactly 0
    for (const auto& [id, rec] : idx.records) {
        const EdgeRecord& hit = retrieve(idx, rec.class_id, rec.aspect_ratio);
        CHECK(std::fabs(std::log(hit.aspect_ratio) - std::log(rec.aspect_ratio)) == 0.0);
    }

    CHECK_THROWS_AS(retrieve(idx, 9, 1.0), DataError);
    CHECK_THROWS_AS(retrieve(idx, 0, -1.0), DataError);
}

TEST_CASE("compose: full-canvas box equals the resized record") {
    TempDb db;
    Rng rng(4);
    Tensor edge = rand_uniform({6, 6}, rng);
    // store what the quantized PNG round trip keeps
    for (auto& v : edge.data) v = quantize_byte(v) / 255.0;
    db.add(0, 0, 1.0, edge);
    EdgeIndex idx = build_index(db.root.string());

    Layout layout{16, 16, {Instance::hbb(0, 0, 0, 16, 16)}};
    Tensor canvas = compose(layout, idx);
    Tensor resized = resize_bilinear(edge, 16, 16);
    for (size_t i = 0; i < canvas.data.size(); ++i)
        CHECK(canvas.data[i] == doctest::Approx(resized.data[i]).epsilon(1e-12));
}

TEST_CASE("compose: max compositing, empty layout, zero outside union, order invariance") {
    TempDb db;
    db.add(0, 0, 1.0, const_edge(4, 4, 0.3));
    db.add(1, 1, 1.0, const_edge(4, 4, 0.8));
    EdgeIndex idx = build_index(db.root.string());

    Layout empty{8, 8, {}};
    CHECK(max_abs(compose(empty, idx)) == 0.0);

    Layout overlap{16, 16,
                   {Instance::hbb(0, 2, 2, 8, 8), Instance::hbb(1, 6, 6, 8, 8)}};
    Tensor canvas = compose(overlap, idx);
    CHECK(canvas.at(8, 8) == doctest::Approx(0.8).epsilon(0.01));  // overlap keeps the brighter edge
    CHECK(canvas.at(3, 3) == doctest::Approx(0.3).epsilon(0.01));

    Layout swapped = overlap;
    std::swap(swapped.instances[0], swapped.instances[1]);
    Tensor canvas2 = compose(swapped, idx);
    for (size_t i = 0; i < canvas.data.size(); ++i) CHECK(canvas.data[i] == canvas2.data[i]);

    const Tensor bg = rasterize(overlap, 16, 16).bg;
    for (size_t p = 0; p < bg.data.size(); ++p)
        if (bg.data[p] == 1.0) CHECK(canvas.data[p] == 0.0);

    // rotated instance stays inside its mask too
    Layout rot{16, 16, {Instance::obb(1, 8, 8, 8, 4, 0.6)}};
    Tensor rc = compose(rot, idx);
    const Tensor rbg = rasterize(rot, 16, 16).bg;
    for (size_t p = 0; p < rbg.data.size(); ++p)
        if (rbg.data[p] == 1.0) CHECK(rc.data[p] == 0.0);

    // missing class propagates with instance index
    Layout bad{8, 8, {Instance::hbb(7, 0, 0, 4, 4)}};
    try {
        compose(bad, idx);
        FAIL("expected retrieval error");
    } catch (const DataError& e) {
        CHECK(std::string(e.what()).find("instance 0") != std::string::npos);
    }
}
