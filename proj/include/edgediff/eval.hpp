#pragma once

#include <algorithm>
#include <cmath>
#include <queue>
#include <vector>

#include "edgediff/layout.hpp"
#include "edgediff/linalg.hpp"
#include "edgediff/synthdata.hpp"
#include "edgediff/tensor.hpp"

namespace edgediff {

struct Detection {
    int class_id = 0;
    Instance box;
    double score = 1.0;
};

namespace eval_detail {

using Pt = std::array<double, 2>;

inline std::vector<Pt> convex_hull(std::vector<Pt> pts) {
    std::sort(pts.begin(), pts.end());
    pts.erase(std::unique(pts.begin(), pts.end()), pts.end());
    const size_t n = pts.size();
    if (n < 3) return pts;
    auto cross = [](const Pt& o, const Pt& a, const Pt& b) {
        return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0]);
    };
    std::vector<Pt> hull(2 * n);
    size_t k = 0;
    for (size_t i = 0; i < n; ++i) {
        while (k >= 2 && cross(hull[k - 2], hull[k - 1], pts[i]) <= 0) --k;
        hull[k++] = pts[i];
    }
    const size_t lower = k + 1;
    for (size_t i = n - 1; i-- > 0;) {
        while (k >= lower && cross(hull[k - 2], hull[k - 1], pts[i]) <= 0) --k;
        hull[k++] = pts[i];
    }
    hull.resize(k - 1);
    return hull;
}

// Rotating calipers: minimum-area rectangle over a point set.
inline Instance min_area_rect(const std::vector<Pt>& pts, int cls) {
    const std::vector<Pt> hull = convex_hull(pts);
    if (hull.size() == 1)
        return Instance::obb(cls, hull[0][0], hull[0][1], 0.0, 0.0, 0.0);
    double best_area = -1.0;
    Instance best;
    const size_t n = hull.size();
    const size_t edges = n == 2 ? 1 : n;
    for (size_t e = 0; e < edges; ++e) {
        const Pt& a = hull[e];
        const Pt& b = hull[(e + 1) % n];
        double dx = b[0] - a[0], dy = b[1] - a[1];
        const double len = std::hypot(dx, dy);
        if (len == 0.0) continue;
        dx /= len;
        dy /= len;
        double lo_d = 1e300, hi_d = -1e300, lo_n = 1e300, hi_n = -1e300;
        for (const auto& p : hull) {
            const double pd = p[0] * dx + p[1] * dy;
            const double pn = -p[0] * dy + p[1] * dx;
            lo_d = std::min(lo_d, pd);
            hi_d = std::max(hi_d, pd);
            lo_n = std::min(lo_n, pn);
            hi_n = std::max(hi_n, pn);
        }
        const double area = (hi_d - lo_d) * (hi_n - lo_n);
        if (best_area < 0.0 || area < best_area) {
            best_area = area;
            const double cd = 0.5 * (lo_d + hi_d), cn = 0.5 * (lo_n + hi_n);
            best = Instance::obb(cls, cd * dx - cn * dy, cd * dy + cn * dx, hi_d - lo_d, hi_n - lo_n,
                                 std::atan2(dy, dx));
        }
    }
    return best;
}

}  // namespace eval_detail

struct DetectorConfig {
    bool oriented = false;
    double band_slack = -1.0;  // < 0: auto, 0.45 * smallest inter-band gap
    int min_pixels = 3;
};

inline double auto_band_slack(const ClassPalette& palette) {
    double gap = 1e300;
    double prev_hi = palette.bg_hi;
    for (const auto& c : palette.classes) {
        gap = std::min(gap, c.band_lo - prev_hi);
        prev_hi = c.band_hi;
    }
    return 0.45 * std::max(gap, 0.0);
}

// Oracle detector: per class band thresholding, 8-connected components,
// minimum-area box per component. Detected boxes are grown by one pixel per
// axis to undo the half-pixel erosion of sampling component pixel centers.
// Score is the component's fill ratio of its box.
inline std::vector<Detection> detect(const Tensor& image, const ClassPalette& palette,
                                     const DetectorConfig& cfg = {}) {
    palette.validate();
    const bool chw = image.rank() == 3;
    require_dims(chw || image.rank() == 2, "detect: HxW or 1xHxW image required");
    const int H = chw ? image.dim(1) : image.dim(0);
    const int W = chw ? image.dim(2) : image.dim(1);
    const double* px = chw ? &image.data[0] : image.data.data();
    const double slack = cfg.band_slack >= 0.0 ? cfg.band_slack : auto_band_slack(palette);

    std::vector<Detection> dets;
    std::vector<char> in_band((size_t)H * W);
    std::vector<int> comp((size_t)H * W);
    for (size_t cls = 0; cls < palette.classes.size(); ++cls) {
        const ClassSpec& spec = palette.classes[cls];
        const double lo = spec.band_lo - slack, hi = spec.band_hi + slack;
        for (size_t i = 0; i < in_band.size(); ++i) in_band[i] = (px[i] >= lo && px[i] <= hi) ? 1 : 0;
        std::fill(comp.begin(), comp.end(), -1);
        int n_comp = 0;
        for (int r = 0; r < H; ++r) {
            for (int c = 0; c < W; ++c) {
                const size_t p = (size_t)r * W + c;
                if (!in_band[p] || comp[p] >= 0) continue;
                // BFS flood fill, 8-connectivity
                std::vector<std::pair<int, int>> pixels;
                std::queue<std::pair<int, int>> bfs;
                bfs.push({r, c});
                comp[p] = n_comp;
                while (!bfs.empty()) {
                    auto [cr, cc] = bfs.front();
                    bfs.pop();
                    pixels.push_back({cr, cc});
                    for (int dr = -1; dr <= 1; ++dr)
                        for (int dc = -1; dc <= 1; ++dc) {
                            const int nr = cr + dr, nc = cc + dc;
                            if (nr < 0 || nr >= H || nc < 0 || nc >= W) continue;
                            const size_t np = (size_t)nr * W + nc;
                            if (in_band[np] && comp[np] < 0) {
                                comp[np] = n_comp;
                                bfs.push({nr, nc});
                            }
                        }
                }
                ++n_comp;
                if ((int)pixels.size() < cfg.min_pixels) continue;
                Detection det;
                det.class_id = (int)cls;
                if (!cfg.oriented) {
                    int r0 = H, r1 = -1, c0 = W, c1 = -1;
                    for (auto& [rr, cc] : pixels) {
                        r0 = std::min(r0, rr);
                        r1 = std::max(r1, rr);
                        c0 = std::min(c0, cc);
                        c1 = std::max(c1, cc);
                    }
                    det.box = Instance::hbb((int)cls, c0, r0, c1 - c0 + 1, r1 - r0 + 1);
                } else {
                    std::vector<eval_detail::Pt> pts;
                    pts.reserve(pixels.size());
                    for (auto& [rr, cc] : pixels) pts.push_back({cc + 0.5, rr + 0.5});
                    Instance rect = eval_detail::min_area_rect(pts, (int)cls);
                    // Center sampling erodes rotated support by about half a
                    // pixel per axis (a full pixel only at axis-aligned
                    // angles); +0.5 splits the difference.
                    rect.w += 0.5;
                    rect.h += 0.5;
                    det.box = rect;
                }
                det.score = std::min(1.0, (double)pixels.size() / std::max(1.0, det.box.area()));
                dets.push_back(det);
            }
        }
    }
    return dets;
}

struct ApReport {
    double ap50 = 0.0;
    double ap50_95 = 0.0;
    std::vector<double> thresholds;
    std::vector<double> per_threshold;
};

inline std::vector<double> coco_thresholds() {
    std::vector<double> t;
    for (int i = 0; i < 10; ++i) t.push_back(0.5 + 0.05 * i);
    return t;
}

// Class-pooled AP with greedy score-descending matching and all-point
// precision interpolation. Detection-order ties break by (scene, index).
inline ApReport layout_score(const std::vector<std::vector<Detection>>& dets_per_scene,
                             const std::vector<Layout>& gts, std::vector<double> thresholds = {}) {
    if (dets_per_scene.size() != gts.size()) throw DataError("layout_score: scene counts disagree");
    if (thresholds.empty()) thresholds = coco_thresholds();
    for (double t : thresholds)
        if (!(t > 0.0 && t <= 1.0)) throw UsageError("layout_score: thresholds must lie in (0,1]");

    struct Ref {
        int scene, index;
        double score;
    };
    std::vector<Ref> order;
    size_t total_gt = 0;
    for (size_t s = 0; s < gts.size(); ++s) {
        total_gt += gts[s].instances.size();
        for (size_t i = 0; i < dets_per_scene[s].size(); ++i)
            order.push_back({(int)s, (int)i, dets_per_scene[s][i].score});
    }
    std::sort(order.begin(), order.end(), [](const Ref& a, const Ref& b) {
        if (a.score != b.score) return a.score > b.score;
        if (a.scene != b.scene) return a.scene < b.scene;
        return a.index < b.index;
    });

    ApReport rep;
    rep.thresholds = thresholds;
    for (double thr : thresholds) {
        double ap;
        if (total_gt == 0) {
            ap = order.empty() ? 1.0 : 0.0;
        } else {
            std::vector<std::vector<char>> matched(gts.size());
            for (size_t s = 0; s < gts.size(); ++s) matched[s].assign(gts[s].instances.size(), 0);
            std::vector<char> is_tp(order.size(), 0);
            for (size_t k = 0; k < order.size(); ++k) {
                const Detection& det = dets_per_scene[(size_t)order[k].scene][(size_t)order[k].index];
                const Layout& gt = gts[(size_t)order[k].scene];
                int best = -1;
                double best_iou = 0.0;
                for (size_t gi = 0; gi < gt.instances.size(); ++gi) {
                    if (matched[(size_t)order[k].scene][gi]) continue;
                    if (gt.instances[gi].class_id != det.class_id) continue;
                    const double iou = obb_iou(det.box, gt.instances[gi]);
                    if (iou >= thr && iou > best_iou) {
                        best_iou = iou;
                        best = (int)gi;
                    }
                }
                if (best >= 0) {
                    matched[(size_t)order[k].scene][(size_t)best] = 1;
                    is_tp[k] = 1;
                }
            }
            // all-point interpolated PR area
            std::vector<double> recall, precision;
            double tp = 0, fp = 0;
            for (size_t k = 0; k < order.size(); ++k) {
                if (is_tp[k])
                    ++tp;
                else
                    ++fp;
                recall.push_back(tp / (double)total_gt);
                precision.push_back(tp / (tp + fp));
            }
            ap = 0.0;
            double run_max = 0.0, prev_r = 1e300;
            for (size_t k = order.size(); k-- > 0;) {
                run_max = std::max(run_max, precision[k]);
                const double r_lo = k == 0 ? 0.0 : recall[k - 1];
                if (recall[k] > r_lo) ap += (recall[k] - r_lo) * run_max;
                prev_r = recall[k];
            }
            (void)prev_r;
        }
        rep.per_threshold.push_back(ap);
    }
    double sum = 0.0;
    for (size_t i = 0; i < thresholds.size(); ++i) {
        if (std::fabs(thresholds[i] - 0.5) < 1e-12) rep.ap50 = rep.per_threshold[i];
        sum += rep.per_threshold[i];
    }
    rep.ap50_95 = sum / (double)thresholds.size();
    return rep;
}

// Handcrafted 24-dim features: 4x4 grid-cell means then an 8-bin gradient
// magnitude histogram (mass-normalized). Deterministic by construction; only
// relative comparisons between configurations are meaningful.
inline std::vector<double> features(const Tensor& image) {
    const bool chw = image.rank() == 3;
    require_dims(chw || image.rank() == 2, "features: HxW or 1xHxW image required");
    const int H = chw ? image.dim(1) : image.dim(0);
    const int W = chw ? image.dim(2) : image.dim(1);
    const double* px = chw ? &image.data[0] : image.data.data();
    std::vector<double> f;
    f.reserve(24);
    for (int gi = 0; gi < 4; ++gi) {
        const int r0 = gi * H / 4, r1 = (gi + 1) * H / 4;
        for (int gj = 0; gj < 4; ++gj) {
            const int c0 = gj * W / 4, c1 = (gj + 1) * W / 4;
            double s = 0.0;
            int n = 0;
            for (int r = r0; r < r1; ++r)
                for (int c = c0; c < c1; ++c) {
                    s += px[(size_t)r * W + c];
                    ++n;
                }
            f.push_back(n > 0 ? s / n : 0.0);
        }
    }
    const double max_mag = std::sqrt(0.5);
    std::array<double, 8> hist{};
    for (int r = 0; r < H; ++r)
        for (int c = 0; c < W; ++c) {
            const int rl = std::max(0, r - 1), rh = std::min(H - 1, r + 1);
            const int cl = std::max(0, c - 1), ch = std::min(W - 1, c + 1);
            const double gx = 0.5 * (px[(size_t)r * W + ch] - px[(size_t)r * W + cl]);
            const double gy = 0.5 * (px[(size_t)rh * W + c] - px[(size_t)rl * W + c]);
            const double mag = std::sqrt(gx * gx + gy * gy);
            const int bin = std::min(7, (int)(mag / max_mag * 8.0));
            hist[(size_t)bin] += 1.0;
        }
    for (double& hv : hist) f.push_back(hv / ((double)H * W));
    f.resize(24);
    return f;
}

struct Gaussian {
    Tensor mu;   // n
    Tensor cov;  // n x n
};

inline Gaussian fit_gaussian(const std::vector<std::vector<double>>& feats) {
    require_dims(!feats.empty(), "fit_gaussian: no samples");
    const int n = (int)feats[0].size();
    Gaussian g{Tensor({n}), Tensor({n, n})};
    for (const auto& f : feats)
        for (int i = 0; i < n; ++i) g.mu[(size_t)i] += f[(size_t)i];
    for (int i = 0; i < n; ++i) g.mu[(size_t)i] /= (double)feats.size();
    if (feats.size() > 1) {
        for (const auto& f : feats)
            for (int i = 0; i < n; ++i)
                for (int j = 0; j < n; ++j)
                    g.cov.at(i, j) += (f[(size_t)i] - g.mu[(size_t)i]) * (f[(size_t)j] - g.mu[(size_t)j]);
        const double inv = 1.0 / ((double)feats.size() - 1.0);
        for (auto& v : g.cov.data) v *= inv;
    }
    return g;
}

// ||mu_a - mu_b||^2 + tr(Sa + Sb - 2 (Sa^1/2 Sb Sa^1/2)^1/2).
inline double frechet(const Tensor& mu_a, const Tensor& cov_a, const Tensor& mu_b, const Tensor& cov_b) {
    require_dims(mu_a.same_shape(mu_b) && cov_a.same_shape(cov_b), "frechet: dimension mismatch");
    require_dims(cov_a.rank() == 2 && cov_a.dim(0) == mu_a.dim(0), "frechet: covariance shape mismatch");
    double d2 = 0.0;
    for (size_t i = 0; i < mu_a.data.size(); ++i) {
        const double d = mu_a.data[i] - mu_b.data[i];
        d2 += d * d;
    }
    auto symmetrize = [](Tensor m) {
        for (int i = 0; i < m.dim(0); ++i)
            for (int j = i + 1; j < m.dim(1); ++j) {
                const double v = 0.5 * (m.at(i, j) + m.at(j, i));
                m.at(i, j) = v;
                m.at(j, i) = v;
            }
        return m;
    };
    const Tensor sa = sqrt_psd(symmetrize(cov_a));
    const Tensor inner = symmetrize(matmul(matmul(sa, symmetrize(cov_b)), sa));
    const Tensor cross_sqrt = sqrt_psd(inner);
    double dist = d2 + trace(symmetrize(cov_a)) + trace(symmetrize(cov_b)) - 2.0 * trace(cross_sqrt);
    if (dist < -1e-6) throw NumericError("frechet: distance " + std::to_string(dist) + " < 0");
    return std::max(dist, 0.0);
}

inline double frechet(const Gaussian& a, const Gaussian& b) { return frechet(a.mu, a.cov, b.mu, b.cov); }

}  // namespace edgediff
