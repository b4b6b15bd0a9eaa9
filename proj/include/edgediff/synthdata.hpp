#pragma once

#include <cmath>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "edgediff/image_io.hpp"
#include "edgediff/layout.hpp"
#include "edgediff/rng.hpp"
#include "edgediff/tensor.hpp"

namespace edgediff {

enum class ShapeKind { Rectangle, Ellipse, Triangle };

struct ClassSpec {
    ShapeKind shape = ShapeKind::Rectangle;
    double band_lo = 0.3, band_hi = 0.4;  // intensity band, disjoint across classes
    double size_min = 10, size_max = 16;  // box side range in pixels
};

// Disjoint intensity bands are what make the oracle detector exact: a pixel's
// value identifies its class.
struct ClassPalette {
    double bg_lo = 0.02, bg_hi = 0.12;
    std::vector<ClassSpec> classes;

    static ClassPalette standard(int n_classes = 3) {
        ClassPalette p;
        const ShapeKind shapes[3] = {ShapeKind::Rectangle, ShapeKind::Ellipse, ShapeKind::Triangle};
        for (int i = 0; i < n_classes; ++i) {
            ClassSpec spec;
            spec.shape = shapes[i % 3];
            spec.band_lo = 0.30 + 0.22 * i;
            spec.band_hi = spec.band_lo + 0.10;
            p.classes.push_back(spec);
        }
        if (!p.classes.empty() && p.classes.back().band_hi > 0.98)
            throw UsageError("palette: too many classes for disjoint bands");
        return p;
    }

    void validate() const {
        double prev_hi = bg_hi;
        for (const auto& c : classes) {
            if (c.band_lo <= prev_hi) throw UsageError("palette: intensity bands must be disjoint");
            if (c.band_hi <= c.band_lo) throw UsageError("palette: empty intensity band");
            prev_hi = c.band_hi;
        }
    }
};

struct SceneConfig {
    int canvas = 32;
    int n_min = 1, n_max = 3;
    bool oriented = false;
    int placement_tries = 60;
};

struct SceneSample {
    Tensor image;  // 1xHxW in [0,1]
    Layout layout;
    Tensor edge;  // HxW in [0,1]
    uint64_t seed = 0;
};

namespace synth_detail {

inline bool inside_shape(const Instance& inst, ShapeKind shape, double px, double py) {
    const double dx = px - inst.cx(), dy = py - inst.cy();
    const double c = std::cos(inst.theta), s = std::sin(inst.theta);
    const double lx = dx * c + dy * s;
    const double ly = -dx * s + dy * c;
    const double hw = inst.w / 2.0, hh = inst.h / 2.0;
    switch (shape) {
        case ShapeKind::Rectangle:
            return std::fabs(lx) <= hw && std::fabs(ly) <= hh;
        case ShapeKind::Ellipse:
            return (lx * lx) / (hw * hw) + (ly * ly) / (hh * hh) <= 1.0;
        case ShapeKind::Triangle: {
            // Apex at the top edge midpoint, base along the bottom edge.
            if (ly < -hh || ly > hh) return false;
            const double half_width = hw * (ly + hh) / (2.0 * hh);
            return std::fabs(lx) <= half_width;
        }
    }
    return false;
}

inline bool aabb_overlap(const Instance& a, const Instance& b, double margin) {
    auto aabb = [](const Instance& i) {
        const auto cs = i.corners();
        double x0 = cs[0][0], x1 = cs[0][0], y0 = cs[0][1], y1 = cs[0][1];
        for (const auto& c : cs) {
            x0 = std::min(x0, c[0]);
            x1 = std::max(x1, c[0]);
            y0 = std::min(y0, c[1]);
            y1 = std::max(y1, c[1]);
        }
        return std::array<double, 4>{x0, y0, x1, y1};
    };
    const auto ba = aabb(a), bb = aabb(b);
    return ba[0] - margin < bb[2] && bb[0] - margin < ba[2] && ba[1] - margin < bb[3] && bb[1] - margin < ba[3];
}

}  // namespace synth_detail

// Deterministic scene: low-amplitude background noise plus non-overlapping
// class shapes rendered strictly inside their boxes.
inline SceneSample gen_scene(uint64_t seed, const ClassPalette& palette, const SceneConfig& cfg);

// Gradient magnitude via 3x3 central differences (replicated border),
// normalized to [0,1], zeroed below `thresh_frac` of the max.
inline Tensor gen_edge(const Tensor& image, double thresh_frac = 0.2) {
    const bool chw = image.rank() == 3;
    require_dims(chw || image.rank() == 2, "gen_edge: HxW or 1xHxW image required");
    const int H = chw ? image.dim(1) : image.dim(0);
    const int W = chw ? image.dim(2) : image.dim(1);
    const double* src = chw ? &image.data[0] : image.data.data();
    Tensor mag({H, W});
    for (int r = 0; r < H; ++r) {
        for (int c = 0; c < W; ++c) {
            const int rl = std::max(0, r - 1), rh = std::min(H - 1, r + 1);
            const int cl = std::max(0, c - 1), ch = std::min(W - 1, c + 1);
            const double gx = 0.5 * (src[(size_t)r * W + ch] - src[(size_t)r * W + cl]);
            const double gy = 0.5 * (src[(size_t)rh * W + c] - src[(size_t)rl * W + c]);
            mag.at(r, c) = std::sqrt(gx * gx + gy * gy);
        }
    }
    const double mx = max_abs(mag);
    if (mx <= 0.0) return mag;
    for (auto& v : mag.data) {
        v /= mx;
        if (v < thresh_frac) v = 0.0;
    }
    return mag;
}

inline SceneSample gen_scene(uint64_t seed, const ClassPalette& palette, const SceneConfig& cfg) {
    palette.validate();
    require_dims(cfg.canvas >= 16, "gen_scene: canvas must be >= 16");
    require_dims(cfg.n_min >= 0 && cfg.n_max <= 8 && cfg.n_min <= cfg.n_max, "gen_scene: n range within [0,8]");
    Rng rng(mix_seed(seed, 0xeddeULL));
    SceneSample sample;
    sample.seed = seed;
    sample.layout.canvas_w = cfg.canvas;
    sample.layout.canvas_h = cfg.canvas;

    const int n_want = cfg.n_min + rng.uniform_int(cfg.n_max - cfg.n_min + 1);
    for (int k = 0; k < n_want; ++k) {
        const int cls = rng.uniform_int((int)palette.classes.size());
        const ClassSpec& spec = palette.classes[(size_t)cls];
        bool placed = false;
        for (int attempt = 0; attempt < cfg.placement_tries && !placed; ++attempt) {
            int w = (int)std::lround(rng.uniform(spec.size_min, spec.size_max));
            int h = (int)std::lround(rng.uniform(spec.size_min, spec.size_max));
            // tall skinny triangles shed their apex rows under pixel-center
            // rasterization; keep the long side as the base
            if (spec.shape == ShapeKind::Triangle && h > w) std::swap(w, h);
            Instance inst;
            if (cfg.oriented) {
                const double theta = rng.uniform(-M_PI, M_PI);
                // Keep the rotated box inside the canvas with 1 px slack.
                const double ex = (std::fabs(std::cos(theta)) * w + std::fabs(std::sin(theta)) * h) / 2.0;
                const double ey = (std::fabs(std::sin(theta)) * w + std::fabs(std::cos(theta)) * h) / 2.0;
                if (2 * ex + 2 > cfg.canvas || 2 * ey + 2 > cfg.canvas) continue;
                const double cx = rng.uniform(ex + 1, cfg.canvas - ex - 1);
                const double cy = rng.uniform(ey + 1, cfg.canvas - ey - 1);
                inst = Instance::obb(cls, cx, cy, w, h, theta);
            } else {
                if (w + 2 > cfg.canvas || h + 2 > cfg.canvas) continue;
                const int x = 1 + rng.uniform_int(cfg.canvas - w - 1);
                const int y = 1 + rng.uniform_int(cfg.canvas - h - 1);
                inst = Instance::hbb(cls, x, y, w, h);
            }
            bool clash = false;
            for (const auto& other : sample.layout.instances)
                if (synth_detail::aabb_overlap(inst, other, 2.0)) {
                    clash = true;
                    break;
                }
            if (!clash) {
                sample.layout.instances.push_back(inst);
                placed = true;
            }
        }
    }

    const int H = cfg.canvas, W = cfg.canvas;
    sample.image = Tensor({1, H, W});
    for (auto& v : sample.image.data) v = rng.uniform(palette.bg_lo, palette.bg_hi);
    for (const auto& inst : sample.layout.instances) {
        const ClassSpec& spec = palette.classes[(size_t)inst.class_id];
        const double intensity = rng.uniform(spec.band_lo + 0.1 * (spec.band_hi - spec.band_lo),
                                             spec.band_hi - 0.1 * (spec.band_hi - spec.band_lo));
        for (int r = 0; r < H; ++r)
            for (int c = 0; c < W; ++c)
                if (synth_detail::inside_shape(inst, spec.shape, c + 0.5, r + 0.5))
                    sample.image.at(0, r, c) = intensity;
    }
    sample.edge = gen_edge(sample.image);
    return sample;
}

// Writes scenes/NNNN.png, edges/NNNN.png, layouts/NNNN.json, per-instance edge
// crops under crops/, and the edgedb manifest index.jsonl. Returns the
// manifest path.
inline std::string gen_dataset(int n, uint64_t seed, const std::string& out_dir, const ClassPalette& palette,
                               const SceneConfig& cfg) {
    if (n < 1) throw UsageError("gen_dataset: n must be >= 1");
    namespace fs = std::filesystem;
    fs::create_directories(fs::path(out_dir) / "scenes");
    fs::create_directories(fs::path(out_dir) / "edges");
    fs::create_directories(fs::path(out_dir) / "layouts");
    fs::create_directories(fs::path(out_dir) / "crops");
    std::ofstream manifest(fs::path(out_dir) / "index.jsonl", std::ios::binary);
    if (!manifest) throw DataError("gen_dataset: cannot write manifest in " + out_dir);

    int next_id = 0;
    char name[32];
    for (int i = 0; i < n; ++i) {
        const SceneSample sample = gen_scene(mix_seed(seed, (uint64_t)i), palette, cfg);
        std::snprintf(name, sizeof name, "%04d", i);
        Tensor plane({cfg.canvas, cfg.canvas});
        std::copy(sample.image.data.begin(), sample.image.data.end(), plane.data.begin());
        write_png_gray((fs::path(out_dir) / "scenes" / (std::string(name) + ".png")).string(), plane);
        write_png_gray((fs::path(out_dir) / "edges" / (std::string(name) + ".png")).string(), sample.edge);
        save_layout((fs::path(out_dir) / "layouts" / (std::string(name) + ".json")).string(), sample.layout);

        for (size_t k = 0; k < sample.layout.instances.size(); ++k) {
            const Instance& inst = sample.layout.instances[k];
            const int ch = std::max(1, (int)std::lround(inst.h));
            const int cw = std::max(1, (int)std::lround(inst.w));
            Tensor crop({ch, cw});
            // Sample the edge map over the instance's local grid (unrotates
            // OBBs); outside-canvas reads 0.
            const double c = std::cos(inst.theta), s = std::sin(inst.theta);
            for (int r = 0; r < ch; ++r)
                for (int q = 0; q < cw; ++q) {
                    const double lx = (q + 0.5) / cw * inst.w - inst.w / 2.0;
                    const double ly = (r + 0.5) / ch * inst.h - inst.h / 2.0;
                    const double px = inst.cx() + lx * c - ly * s;
                    const double py = inst.cy() + lx * s + ly * c;
                    const int ix = (int)std::floor(px), iy = (int)std::floor(py);
                    crop.at(r, q) = (ix >= 0 && ix < cfg.canvas && iy >= 0 && iy < cfg.canvas)
                                        ? sample.edge.at(iy, ix)
                                        : 0.0;
                }
            char cropname[48];
            std::snprintf(cropname, sizeof cropname, "crops/%04d_%02d.png", i, (int)k);
            write_png_gray((fs::path(out_dir) / cropname).string(), crop);
            nlohmann::ordered_json je;
            je["id"] = next_id++;
            je["class"] = inst.class_id;
            je["aspect_ratio"] = inst.aspect_ratio();
            je["file"] = cropname;
            manifest << je.dump() << "\n";
        }
    }
    return (fs::path(out_dir) / "index.jsonl").string();
}

}  // namespace edgediff
