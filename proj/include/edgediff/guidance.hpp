#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "edgediff/attention.hpp"
#include "edgediff/denoiser.hpp"
#include "edgediff/layout.hpp"
#include "edgediff/tensor.hpp"

namespace edgediff {

inline constexpr double kRegionEps = 1e-6;

struct RegionStats {
    double fg = 0.0;  // mean foreground activation
    double bg = 0.0;  // mean background leakage
};

// Per-instance loss terms (1 - fg/(fg + N*bg))^2 and their sum. Background
// leakage is scaled by the instance count N.
struct RegionLossReport {
    std::vector<RegionStats> stats;
    std::vector<double> terms;
    double total = 0.0;
};

inline RegionStats region_stats(const Tensor& a, const MaskSet& masks, int instance) {
    require_dims(a.rank() == 2 && a.dim(0) == masks.h && a.dim(1) == masks.w,
                 "region_stats: map/mask resolution mismatch");
    require_dims(instance >= 0 && instance < (int)masks.fg.size(), "region_stats: instance out of range");
    const Tensor& fg_mask = masks.fg[(size_t)instance];
    double fg_sum = 0.0, fg_area = 0.0, bg_sum = 0.0, bg_area = 0.0;
    for (size_t p = 0; p < a.data.size(); ++p) {
        fg_sum += a.data[p] * fg_mask.data[p];
        fg_area += fg_mask.data[p];
        bg_sum += a.data[p] * masks.bg.data[p];
        bg_area += masks.bg.data[p];
    }
    return {fg_sum / (fg_area + kRegionEps), bg_sum / (bg_area + kRegionEps)};
}

inline RegionLossReport region_loss(const std::vector<RegionStats>& stats, int n) {
    require_dims(n == (int)stats.size(), "region_loss: N must equal the number of stats");
    RegionLossReport rep;
    rep.stats = stats;
    for (const auto& s : stats) {
        const double denom = std::max(s.fg + n * s.bg, kRegionEps);
        const double term = (1.0 - s.fg / denom) * (1.0 - s.fg / denom);
        rep.terms.push_back(term);
        rep.total += term;
    }
    return rep;
}

// d total / d (fg_i, bg_i).
inline std::vector<RegionStats> region_loss_backward(const std::vector<RegionStats>& stats, int n) {
    std::vector<RegionStats> grads(stats.size());
    for (size_t i = 0; i < stats.size(); ++i) {
        const double fg = stats[i].fg, bg = stats[i].bg;
        const double denom = fg + n * bg;
        if (denom <= kRegionEps) {
            const double r = fg / kRegionEps;
            grads[i].fg = -2.0 * (1.0 - r) / kRegionEps;
            grads[i].bg = 0.0;
        } else {
            const double r = fg / denom;
            grads[i].fg = -2.0 * (1.0 - r) * (n * bg) / (denom * denom);
            grads[i].bg = 2.0 * (1.0 - r) * (fg * n) / (denom * denom);
        }
    }
    return grads;
}

struct GuidanceSchedule {
    double lambda_start = 8.0;
    double lambda_end = 2.0;
    int guided_steps = 0;  // G
    bool use_cross = true;
    bool use_self = true;
    int grad_updates = 1;  // latent updates per sampling step
};

// Linear decay over the guided phase; G = 1 pins lambda_start.
inline double lambda_at(int step, const GuidanceSchedule& s) {
    if (step < 0 || step >= s.guided_steps) throw UsageError("lambda_at: step outside the guided phase");
    if (s.guided_steps == 1) return s.lambda_start;
    return s.lambda_start + (s.lambda_end - s.lambda_start) * double(step) / double(s.guided_steps - 1);
}

struct RegionLossEval {
    double loss = 0.0;                      // averaged across targeted layers
    std::vector<RegionLossReport> reports;  // cross first (if used), then self
    DenoiserTrace trace;
    MaskSet masks;
};

// Forward the denoiser, aggregate attention maps at the attention stage, and
// evaluate the region loss per targeted layer.
inline RegionLossEval eval_region_loss(const Denoiser& d, const Tensor& z, int t, const Layout& layout,
                                       const PromptSpec& prompt, const GuidanceSchedule& sched) {
    RegionLossEval ev;
    const TokenBatch tok = d.assemble_tokens(prompt);
    ev.trace = d.forward(z, t, tok);
    const int side = d.cfg.attn_side();
    if (layout.instances.empty()) return ev;
    ev.masks = rasterize(layout, side, side);
    const int n = (int)layout.instances.size();
    int layers = 0;
    double total = 0.0;
    if (sched.use_cross) {
        Tensor w3 = Tensor::of({1, ev.trace.ca.weights.dim(0), ev.trace.ca.weights.dim(1)},
                               ev.trace.ca.weights.data);
        const auto maps = aggregate_maps(w3, prompt.tokens, side, side);
        std::vector<RegionStats> stats;
        for (int i = 0; i < n; ++i) stats.push_back(region_stats(maps[(size_t)i], ev.masks, i));
        ev.reports.push_back(region_loss(stats, n));
        total += ev.reports.back().total;
        ++layers;
    }
    if (sched.use_self) {
        Tensor w3 = Tensor::of({1, ev.trace.sa.weights.dim(0), ev.trace.sa.weights.dim(1)},
                               ev.trace.sa.weights.data);
        const auto maps = aggregate_self_maps(w3, ev.masks.label, n, side, side);
        std::vector<RegionStats> stats;
        for (int i = 0; i < n; ++i) stats.push_back(region_stats(maps[(size_t)i], ev.masks, i));
        ev.reports.push_back(region_loss(stats, n));
        total += ev.reports.back().total;
        ++layers;
    }
    ev.loss = layers > 0 ? total / layers : 0.0;
    return ev;
}

// Analytic d loss / d z_t, composed through the attention-weight cotangents.
inline Tensor region_loss_grad_z(const Denoiser& d, const Tensor& z, int t, const Layout& layout,
                                 const PromptSpec& prompt, const GuidanceSchedule& sched,
                                 double* loss_out = nullptr) {
    RegionLossEval ev = eval_region_loss(d, z, t, layout, prompt, sched);
    if (loss_out) *loss_out = ev.loss;
    if (layout.instances.empty()) return z.zeros_like();
    const int side = d.cfg.attn_side();
    const int P = side * side;
    const int n = (int)layout.instances.size();
    const int layers = (sched.use_cross ? 1 : 0) + (sched.use_self ? 1 : 0);
    if (layers == 0) return z.zeros_like();
    const double layer_scale = 1.0 / layers;

    // Per-instance dL/dA_i -> cotangents on the raw attention weights.
    auto stats_to_map_grads = [&](const RegionLossReport& rep, const MaskSet& masks) {
        std::vector<Tensor> dmaps;
        const auto g = region_loss_backward(rep.stats, n);
        for (int i = 0; i < n; ++i) {
            Tensor dm({side, side});
            const Tensor& fg_mask = masks.fg[(size_t)i];
            double fg_area = 0.0, bg_area = 0.0;
            for (size_t p = 0; p < fg_mask.data.size(); ++p) {
                fg_area += fg_mask.data[p];
                bg_area += masks.bg.data[p];
            }
            const double cf = g[(size_t)i].fg / (fg_area + kRegionEps) * layer_scale;
            const double cb = g[(size_t)i].bg / (bg_area + kRegionEps) * layer_scale;
            for (size_t p = 0; p < dm.data.size(); ++p)
                dm.data[p] = cf * fg_mask.data[p] + cb * masks.bg.data[p];
            dmaps.push_back(std::move(dm));
        }
        return dmaps;
    };

    size_t rep_idx = 0;
    Tensor d_cross, d_self;
    if (sched.use_cross) {
        const auto dmaps = stats_to_map_grads(ev.reports[rep_idx++], ev.masks);
        d_cross = Tensor({P, prompt.tokens.num_tokens});
        for (int i = 0; i < n; ++i)
            for (int p = 0; p < P; ++p)
                for (int tk : prompt.tokens.per_instance[(size_t)i])
                    d_cross.at(p, tk) += dmaps[(size_t)i].data[(size_t)p];
    }
    if (sched.use_self) {
        const auto dmaps = stats_to_map_grads(ev.reports[rep_idx++], ev.masks);
        d_self = Tensor({P, P});
        for (int p = 0; p < P; ++p)
            for (int q = 0; q < P; ++q) {
                const int i = ev.masks.label[(size_t)q];
                if (i >= 0) d_self.at(p, q) += dmaps[(size_t)i].data[(size_t)p];
            }
    }

    const TokenBatch tok = d.assemble_tokens(prompt);
    BackwardRequest req;
    req.d_cross_weights = sched.use_cross ? &d_cross : nullptr;
    req.d_self_weights = sched.use_self ? &d_self : nullptr;
    req.want_dz = true;
    BackwardResult back = denoiser_backward(d, ev.trace, tok, req);
    return std::move(back.dz);
}

// One latent update: z <- z - lambda * grad(L_reg). Control residuals, if any,
// are held fixed; the gradient runs through the base network only.
inline Tensor guidance_step(const Denoiser& d, const Tensor& z, int t, const Layout& layout,
                            const PromptSpec& prompt, const GuidanceSchedule& sched, int step,
                            double* loss_out = nullptr) {
    if (layout.instances.empty()) {
        if (loss_out) *loss_out = 0.0;
        return z;
    }
    const double lambda = lambda_at(step, sched);
    double loss = 0.0;
    Tensor grad = region_loss_grad_z(d, z, t, layout, prompt, sched, &loss);
    if (loss_out) *loss_out = loss;
    if (!all_finite(grad))
        throw NumericError("guidance: non-finite gradient at t=" + std::to_string(t) + ", step=" +
                           std::to_string(step) + ", loss=" + std::to_string(loss));
    if (lambda == 0.0) return z;
    Tensor out = z;
    axpy(out, -lambda, grad);
    return out;
}

}  // namespace edgediff
