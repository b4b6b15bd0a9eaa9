#pragma once

#include <algorithm>
#include <climits>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "edgediff/image_io.hpp"
#include "edgediff/layout.hpp"
#include "edgediff/tensor.hpp"

namespace edgediff {

// One reference edge crop: grayscale in [0,1], edges bright on dark, keyed by
// the class and the aspect ratio of its source box.
struct EdgeRecord {
    int id = 0;
    int class_id = 0;
    double aspect_ratio = 1.0;
    Tensor edge;  // HxW
};

// Per-class lists of (log aspect ratio, record id), sorted for nearest lookup.
struct EdgeIndex {
    std::map<int, std::vector<std::pair<double, int>>> by_class;
    std::map<int, EdgeRecord> records;

    size_t size() const { return records.size(); }
};

// Reads index.jsonl (one {"id","class","aspect_ratio","file"} object per line)
// plus the referenced grayscale images.
inline EdgeIndex build_index(const std::string& root_dir) {
    namespace fs = std::filesystem;
    EdgeIndex index;
    const fs::path manifest = fs::path(root_dir) / "index.jsonl";
    if (!fs::exists(manifest)) {
        if (!fs::exists(root_dir)) throw DataError("edgedb: no such directory " + root_dir);
        return index;  // empty database
    }
    std::ifstream in(manifest);
    if (!in) throw DataError("edgedb: cannot open " + manifest.string());
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            throw DataError("edgedb: bad manifest line " + std::to_string(lineno) + ": " + e.what());
        }
        EdgeRecord rec;
        try {
            rec.id = j.at("id").get<int>();
            rec.class_id = class_from_json(j.at("class"), {});
            rec.aspect_ratio = j.at("aspect_ratio").get<double>();
            const std::string file = j.at("file").get<std::string>();
            rec.edge = read_image((fs::path(root_dir) / file).string());
        } catch (const nlohmann::json::exception& e) {
            throw DataError("edgedb: manifest line " + std::to_string(lineno) + " missing field: " + e.what());
        }
        if (rec.aspect_ratio <= 0.0)
            throw DataError("edgedb: record " + std::to_string(rec.id) + " has non-positive aspect ratio");
        for (auto& v : rec.edge.data) v = std::clamp(v, 0.0, 1.0);
        if (index.records.count(rec.id))
            throw DataError("edgedb: duplicate record id " + std::to_string(rec.id));
        index.by_class[rec.class_id].emplace_back(std::log(rec.aspect_ratio), rec.id);
        index.records[rec.id] = std::move(rec);
    }
    for (auto& [cls, lst] : index.by_class) std::sort(lst.begin(), lst.end());
    return index;
}

// Nearest record of the class in |log AR| distance; ties broken by lowest id.
inline const EdgeRecord& retrieve(const EdgeIndex& index, int class_id, double aspect_ratio) {
    auto it = index.by_class.find(class_id);
    if (it == index.by_class.end() || it->second.empty())
        throw DataError("edgedb: no records for class " + std::to_string(class_id));
    if (aspect_ratio <= 0.0) throw DataError("edgedb: query aspect ratio must be positive");
    const double q = std::log(aspect_ratio);
    const auto& lst = it->second;
    auto lo = std::lower_bound(lst.begin(), lst.end(), std::make_pair(q, INT_MIN));
    double best_d = 0.0;
    int best_id = -1;
    auto consider = [&](const std::pair<double, int>& e) {
        const double d = std::fabs(e.first - q);
        if (best_id < 0 || d < best_d - 1e-15 || (std::fabs(d - best_d) <= 1e-15 && e.second < best_id)) {
            best_d = d;
            best_id = e.second;
        }
    };
    // Scan outward from the insertion point; equal keys are adjacent.
    for (auto itf = lo; itf != lst.end(); ++itf) {
        if (best_id >= 0 && itf->first - q > best_d + 1e-15) break;
        consider(*itf);
    }
    for (auto itb = lo; itb != lst.begin();) {
        --itb;
        if (best_id >= 0 && q - itb->first > best_d + 1e-15) break;
        consider(*itb);
    }
    return index.records.at(best_id);
}

namespace edgedb_detail {

// Paste `stamp` into `canvas` across the pixels owned by instance mask `fg`,
// sampling the stamp in the instance's local frame (corner-aligned bilinear,
// outside-source reads 0). Max compositing.
inline void paste_instance(Tensor& canvas, const Tensor& fg, const Instance& inst, const Tensor& stamp) {
    const int H = canvas.dim(0), W = canvas.dim(1);
    const int sh = stamp.dim(0), sw = stamp.dim(1);
    const double c = std::cos(inst.theta), s = std::sin(inst.theta);
    for (int r = 0; r < H; ++r) {
        for (int col = 0; col < W; ++col) {
            if (fg.at(r, col) == 0.0) continue;
            const double px = col + 0.5, py = r + 0.5;
            const double dx = px - inst.cx(), dy = py - inst.cy();
            const double lx = dx * c + dy * s;
            const double ly = -dx * s + dy * c;
            const double u = (lx + inst.w / 2.0) / inst.w;  // [0,1] across the box
            const double v = (ly + inst.h / 2.0) / inst.h;
            if (u < 0.0 || u > 1.0 || v < 0.0 || v > 1.0) continue;
            const double fx = u * (sw - 1);
            const double fy = v * (sh - 1);
            const int x0 = std::min((int)fx, sw - 1), x1 = std::min(x0 + 1, sw - 1);
            const int y0 = std::min((int)fy, sh - 1), y1 = std::min(y0 + 1, sh - 1);
            const double tx = fx - x0, ty = fy - y0;
            const double val = (stamp.at(y0, x0) * (1 - tx) + stamp.at(y0, x1) * tx) * (1 - ty) +
                               (stamp.at(y1, x0) * (1 - tx) + stamp.at(y1, x1) * tx) * ty;
            canvas.at(r, col) = std::max(canvas.at(r, col), val);
        }
    }
}

}  // namespace edgedb_detail

// Assemble the composite edge map for a layout: retrieve per instance by
// (class, aspect ratio), resize/rotate into the box, max-composite. Output is
// exactly 0 outside the union of instance boxes.
inline Tensor compose(const Layout& layout, const EdgeIndex& index) {
    require_dims(layout.canvas_w > 0 && layout.canvas_h > 0, "compose: empty canvas");
    Tensor canvas({layout.canvas_h, layout.canvas_w});
    if (layout.instances.empty()) return canvas;
    const MaskSet masks = rasterize(layout, layout.canvas_h, layout.canvas_w);
    for (size_t i = 0; i < layout.instances.size(); ++i) {
        const Instance& inst = layout.instances[i];
        const EdgeRecord* rec;
        try {
            rec = &retrieve(index, inst.class_id, inst.aspect_ratio());
        } catch (const DataError& e) {
            throw DataError(std::string(e.what()) + " (instance " + std::to_string(i) + ")");
        }
        if (!inst.oriented) {
            // Axis-aligned: resize to the box's pixel dims, then paste, so a
            // full-canvas box reproduces the resized record exactly.
            const int bh = std::max(1, (int)std::lround(inst.h));
            const int bw = std::max(1, (int)std::lround(inst.w));
            const Tensor stamp = resize_bilinear(rec->edge, bh, bw);
            const int ox = (int)std::lround(inst.x), oy = (int)std::lround(inst.y);
            for (int r = 0; r < bh; ++r) {
                const int cr = oy + r;
                if (cr < 0 || cr >= canvas.dim(0)) continue;
                for (int cc = 0; cc < bw; ++cc) {
                    const int col = ox + cc;
                    if (col < 0 || col >= canvas.dim(1)) continue;
                    if (masks.fg[i].at(cr, col) == 0.0) continue;
                    canvas.at(cr, col) = std::max(canvas.at(cr, col), stamp.at(r, cc));
                }
            }
        } else {
            edgedb_detail::paste_instance(canvas, masks.fg[i], inst, rec->edge);
        }
    }
    return canvas;
}

}  // namespace edgediff
