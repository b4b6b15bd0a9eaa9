#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "edgediff/tensor.hpp"

namespace edgediff {

inline double wrap_angle(double a) {
    while (a < -M_PI) a += 2.0 * M_PI;
    while (a >= M_PI) a -= 2.0 * M_PI;
    return a;
}

// One box. For HBB, (x, y) is the top-left corner; for OBB, (x, y) is the
// center and theta is in radians, [-pi, pi).
struct Instance {
    int class_id = 0;
    bool oriented = false;
    double x = 0, y = 0, w = 0, h = 0, theta = 0;

    static Instance hbb(int cls, double x, double y, double w, double h) {
        return Instance{cls, false, x, y, w, h, 0.0};
    }
    static Instance obb(int cls, double cx, double cy, double w, double h, double theta) {
        return Instance{cls, true, cx, cy, w, h, wrap_angle(theta)};
    }

    double cx() const { return oriented ? x : x + w / 2.0; }
    double cy() const { return oriented ? y : y + h / 2.0; }
    double area() const { return w * h; }
    double aspect_ratio() const { return w / h; }

    // Local frame: +lx along the width axis, +ly along the height axis.
    bool contains(double px, double py) const {
        const double dx = px - cx(), dy = py - cy();
        const double c = std::cos(theta), s = std::sin(theta);
        const double lx = dx * c + dy * s;
        const double ly = -dx * s + dy * c;
        return std::fabs(lx) <= w / 2.0 && std::fabs(ly) <= h / 2.0;
    }

    std::array<std::array<double, 2>, 4> corners() const {
        const double c = std::cos(theta), s = std::sin(theta);
        const double hx = w / 2.0, hy = h / 2.0;
        const double ux = c * hx, uy = s * hx;   // half width axis
        const double vx = -s * hy, vy = c * hy;  // half height axis
        const double px = cx(), py = cy();
        return {{{px - ux - vx, py - uy - vy},
                 {px + ux - vx, py + uy - vy},
                 {px + ux + vx, py + uy + vy},
                 {px - ux + vx, py - uy + vy}}};
    }
};

struct Layout {
    int canvas_w = 0, canvas_h = 0;
    std::vector<Instance> instances;
};

// Rasterized binary masks at one feature resolution. label assigns each pixel
// to the smallest-area covering instance (ties to the lower index), -1 for
// background.
struct MaskSet {
    int h = 0, w = 0;
    std::vector<Tensor> fg;  // one HxW {0,1} plane per instance
    Tensor bg;               // HxW, 1 - max_i fg_i
    std::vector<int> label;  // h*w entries

    Tensor union_fg() const {
        Tensor u({h, w});
        for (const auto& m : fg)
            for (size_t i = 0; i < u.data.size(); ++i) u.data[i] = std::max(u.data[i], m.data[i]);
        return u;
    }
};

// Pixel-center inclusion at an arbitrary resolution: pixel (r, c) of the HxW
// grid maps to canvas point ((c+.5)*cw/W, (r+.5)*ch/H).
inline MaskSet rasterize(const Layout& layout, int H, int W) {
    require_dims(H >= 1 && W >= 1, "rasterize: resolution must be >= 1");
    require_dims(layout.canvas_w > 0 && layout.canvas_h > 0, "rasterize: empty canvas");
    MaskSet ms;
    ms.h = H;
    ms.w = W;
    ms.bg = Tensor({H, W}, 1.0);
    ms.label.assign((size_t)H * W, -1);
    ms.fg.reserve(layout.instances.size());
    for (const auto& inst : layout.instances) ms.fg.emplace_back(std::vector<int>{H, W});
    const double sx = double(layout.canvas_w) / W;
    const double sy = double(layout.canvas_h) / H;
    for (int r = 0; r < H; ++r) {
        const double py = (r + 0.5) * sy;
        for (int c = 0; c < W; ++c) {
            const double px = (c + 0.5) * sx;
            const size_t p = (size_t)r * W + c;
            int best = -1;
            double best_area = 0.0;
            for (size_t i = 0; i < layout.instances.size(); ++i) {
                if (!layout.instances[i].contains(px, py)) continue;
                ms.fg[i].data[p] = 1.0;
                const double a = layout.instances[i].area();
                if (best < 0 || a < best_area) {
                    best = (int)i;
                    best_area = a;
                }
            }
            ms.label[p] = best;
            if (best >= 0) ms.bg.data[p] = 0.0;
        }
    }
    return ms;
}

// ---- oriented IoU ------------------------------------------------------------

namespace geom_detail {

using Pt = std::array<double, 2>;

inline double cross(const Pt& o, const Pt& a, const Pt& b) {
    return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0]);
}

inline double shoelace(const std::vector<Pt>& poly) {
    double s = 0.0;
    for (size_t i = 0; i < poly.size(); ++i) {
        const Pt& a = poly[i];
        const Pt& b = poly[(i + 1) % poly.size()];
        s += a[0] * b[1] - a[1] * b[0];
    }
    return 0.5 * s;
}

// Sutherland-Hodgman: clip subject polygon by the half-plane left of (a, b).
inline std::vector<Pt> clip_halfplane(const std::vector<Pt>& subject, const Pt& a, const Pt& b) {
    std::vector<Pt> out;
    const size_t n = subject.size();
    for (size_t i = 0; i < n; ++i) {
        const Pt& cur = subject[i];
        const Pt& nxt = subject[(i + 1) % n];
        const double dc = cross(a, b, cur);
        const double dn = cross(a, b, nxt);
        if (dc >= 0.0) out.push_back(cur);
        if ((dc > 0.0 && dn < 0.0) || (dc < 0.0 && dn > 0.0)) {
            const double t = dc / (dc - dn);
            out.push_back({cur[0] + t * (nxt[0] - cur[0]), cur[1] + t * (nxt[1] - cur[1])});
        }
    }
    return out;
}

inline std::vector<Pt> ccw(std::vector<Pt> poly) {
    if (shoelace(poly) < 0.0) std::reverse(poly.begin(), poly.end());
    return poly;
}

inline double intersect_area(const std::vector<Pt>& pa, const std::vector<Pt>& pb) {
    std::vector<Pt> clipped = ccw(pa);
    std::vector<Pt> clipper = ccw(pb);
    for (size_t i = 0; i < clipper.size() && clipped.size() >= 3; ++i) {
        clipped = clip_halfplane(clipped, clipper[i], clipper[(i + 1) % clipper.size()]);
    }
    if (clipped.size() < 3) return 0.0;
    return std::fabs(shoelace(clipped));
}

}  // namespace geom_detail

// Convex polygon clipping + shoelace. Degenerate boxes have IoU 0.
inline double obb_iou(const Instance& a, const Instance& b) {
    if (a.w <= 0.0 || a.h <= 0.0 || b.w <= 0.0 || b.h <= 0.0) return 0.0;
    const auto ca = a.corners();
    const auto cb = b.corners();
    std::vector<geom_detail::Pt> pa(ca.begin(), ca.end());
    std::vector<geom_detail::Pt> pb(cb.begin(), cb.end());
    const double inter = geom_detail::intersect_area(pa, pb);
    const double uni = a.area() + b.area() - inter;
    if (uni <= 0.0) return 0.0;
    return std::min(1.0, inter / uni);
}

// ---- JSON schema ---------------------------------------------------------------
// {"canvas":[W,H],"instances":[{"class":..,"hbb":[x,y,w,h]} | {"class":..,"obb":[cx,cy,w,h,theta]}]}

inline int class_from_json(const nlohmann::json& j, const std::vector<std::string>& class_names) {
    if (j.is_number_integer()) return j.get<int>();
    if (j.is_string()) {
        const std::string s = j.get<std::string>();
        for (size_t i = 0; i < class_names.size(); ++i)
            if (class_names[i] == s) return (int)i;
        try {
            size_t pos = 0;
            const int v = std::stoi(s, &pos);
            if (pos == s.size()) return v;
        } catch (...) {
        }
        throw DataError("layout: unknown class name '" + s + "'");
    }
    throw DataError("layout: class must be a string or integer");
}

inline Layout layout_from_json(const nlohmann::json& j, const std::vector<std::string>& class_names = {}) {
    Layout layout;
    try {
        const auto& canvas = j.at("canvas");
        layout.canvas_w = canvas.at(0).get<int>();
        layout.canvas_h = canvas.at(1).get<int>();
        if (layout.canvas_w <= 0 || layout.canvas_h <= 0) throw DataError("layout: canvas must be positive");
        for (const auto& je : j.value("instances", nlohmann::json::array())) {
            const int cls = class_from_json(je.at("class"), class_names);
            if (je.contains("hbb")) {
                const auto& b = je.at("hbb");
                layout.instances.push_back(
                    Instance::hbb(cls, b.at(0).get<double>(), b.at(1).get<double>(), b.at(2).get<double>(),
                                  b.at(3).get<double>()));
            } else if (je.contains("obb")) {
                const auto& b = je.at("obb");
                layout.instances.push_back(Instance::obb(cls, b.at(0).get<double>(), b.at(1).get<double>(),
                                                         b.at(2).get<double>(), b.at(3).get<double>(),
                                                         b.at(4).get<double>()));
            } else {
                throw DataError("layout: instance needs an 'hbb' or 'obb' field");
            }
            const Instance& inst = layout.instances.back();
            if (inst.w <= 0.0 || inst.h <= 0.0) throw DataError("layout: box sides must be positive");
        }
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("layout: malformed JSON: ") + e.what());
    }
    return layout;
}

inline nlohmann::ordered_json layout_to_json(const Layout& layout) {
    nlohmann::ordered_json j;
    j["canvas"] = {layout.canvas_w, layout.canvas_h};
    j["instances"] = nlohmann::ordered_json::array();
    for (const auto& inst : layout.instances) {
        nlohmann::ordered_json je;
        je["class"] = inst.class_id;
        if (inst.oriented)
            je["obb"] = {inst.x, inst.y, inst.w, inst.h, inst.theta};
        else
            je["hbb"] = {inst.x, inst.y, inst.w, inst.h};
        j["instances"].push_back(je);
    }
    return j;
}

inline Layout load_layout(const std::string& path, const std::vector<std::string>& class_names = {}) {
    std::ifstream in(path);
    if (!in) throw DataError("layout: cannot open " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw DataError("layout: parse error in " + path + ": " + e.what());
    }
    return layout_from_json(j, class_names);
}

inline void save_layout(const std::string& path, const Layout& layout) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("layout: cannot write " + path);
    out << layout_to_json(layout).dump(2) << "\n";
}

}  // namespace edgediff
