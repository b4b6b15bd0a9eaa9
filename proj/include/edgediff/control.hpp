#pragma once

#include <vector>

#include "edgediff/denoiser.hpp"
#include "edgediff/layout.hpp"
#include "edgediff/spectral.hpp"
#include "edgediff/tensor.hpp"

namespace edgediff {

// Per-site pipeline state of the control path:
// h_res -> dh (zero conv) -> dh_high (high-pass) -> dh_str (shrinkage)
// -> dh_final (spatial gate).
struct ControlResidual {
    Tensor h_res, dh, dh_high, dh_str, dh_final;
};

struct ControlOptions {
    bool spatial_gate = true;
    bool highpass = true;
    // Training runs the high-pass with tau = 0: at zero-conv init the
    // shrinkage subgradient is 0 everywhere and would freeze the branch.
    bool train_mode = false;
};

// Control branch: a reduced copy of the base down-path running on
// (edge map, z_t), with one zero-initialized 1x1 projection per injection
// site. Site 0 taps the half-res features, site 1 the full-res features.
struct ControlBranch {
    DenoiserConfig cfg;  // must match the base model
    HighPassSpec spec;

    Tensor conv_in_w, conv_in_b;
    Tensor time_w, time_b;
    Tensor r1c1_w, r1c1_b, r1c2_w, r1c2_b;
    Tensor sa_wq, sa_wk, sa_wv, sa_wo;
    Tensor r2c1_w, r2c1_b, r2c2_w, r2c2_b;
    Tensor zc0_w, zc0_b, zc1_w, zc1_b;

    static ControlBranch zeros(const DenoiserConfig& cfg, const HighPassSpec& spec = {}) {
        ControlBranch b;
        b.cfg = cfg;
        b.spec = spec;
        const int C = cfg.channels, A = cfg.attn_dim;
        b.conv_in_w = Tensor({C, 2, 3, 3});
        b.conv_in_b = Tensor({C});
        b.time_w = Tensor({C, C});
        b.time_b = Tensor({C});
        b.r1c1_w = Tensor({C, C, 3, 3});
        b.r1c1_b = Tensor({C});
        b.r1c2_w = Tensor({C, C, 3, 3});
        b.r1c2_b = Tensor({C});
        b.sa_wq = Tensor({C, A});
        b.sa_wk = Tensor({C, A});
        b.sa_wv = Tensor({C, A});
        b.sa_wo = Tensor({A, C});
        b.r2c1_w = Tensor({C, C, 3, 3});
        b.r2c1_b = Tensor({C});
        b.r2c2_w = Tensor({C, C, 3, 3});
        b.r2c2_b = Tensor({C});
        b.zc0_w = Tensor({C, C, 1, 1});
        b.zc0_b = Tensor({C});
        b.zc1_w = Tensor({C, C, 1, 1});
        b.zc1_b = Tensor({C});
        return b;
    }

    // Encoder weights random, zero-convs exactly zero: the attached branch is
    // a no-op until trained.
    static ControlBranch init(const DenoiserConfig& cfg, Rng& rng, const HighPassSpec& spec = {}) {
        ControlBranch b = zeros(cfg, spec);
        const int C = cfg.channels;
        auto fill = [&rng](Tensor& t, double std) {
            for (auto& v : t.data) v = std * rng.normal();
        };
        fill(b.conv_in_w, 1.0 / std::sqrt(18.0));
        fill(b.time_w, 1.0 / std::sqrt((double)C));
        fill(b.r1c1_w, 1.0 / std::sqrt(9.0 * C));
        fill(b.r1c2_w, 1.0 / std::sqrt(9.0 * C));
        fill(b.r2c1_w, 1.0 / std::sqrt(9.0 * C));
        fill(b.r2c2_w, 1.0 / std::sqrt(9.0 * C));
        const double pstd = 1.0 / std::sqrt((double)C);
        fill(b.sa_wq, pstd);
        fill(b.sa_wk, pstd);
        fill(b.sa_wv, pstd);
        fill(b.sa_wo, 1.0 / std::sqrt((double)cfg.attn_dim));
        return b;
    }

    std::vector<NamedTensor> params() {
        return {
            {"conv_in_w", &conv_in_w}, {"conv_in_b", &conv_in_b}, {"time_w", &time_w},
            {"time_b", &time_b},       {"r1c1_w", &r1c1_w},       {"r1c1_b", &r1c1_b},
            {"r1c2_w", &r1c2_w},       {"r1c2_b", &r1c2_b},       {"sa_wq", &sa_wq},
            {"sa_wk", &sa_wk},         {"sa_wv", &sa_wv},         {"sa_wo", &sa_wo},
            {"r2c1_w", &r2c1_w},       {"r2c1_b", &r2c1_b},       {"r2c2_w", &r2c2_w},
            {"r2c2_b", &r2c2_b},       {"zc0_w", &zc0_w},         {"zc0_b", &zc0_b},
            {"zc1_w", &zc1_w},         {"zc1_b", &zc1_b},
        };
    }

    bool zero_convs_are_zero() const {
        return max_abs(zc0_w) == 0.0 && max_abs(zc0_b) == 0.0 && max_abs(zc1_w) == 0.0 && max_abs(zc1_b) == 0.0;
    }
};

// Eqs.-style purification: frequency gate the residual map.
inline Tensor purify(const Tensor& dh, const HighPassSpec& spec) { return freq_gate(dh, spec); }

// Spatial gating: resize the union foreground mask to the residual's
// resolution and multiply. Background positions become exactly 0.
inline Tensor gate(const Tensor& dh_str, const Layout& layout) {
    require_dims(dh_str.rank() == 3, "gate: CxHxW residual required");
    const int h = dh_str.dim(1), w = dh_str.dim(2);
    if (layout.instances.empty()) return dh_str.zeros_like();
    const Tensor mask = rasterize(layout, h, w).union_fg();
    Tensor out = dh_str;
    const int C = dh_str.dim(0);
    for (int c = 0; c < C; ++c)
        for (size_t p = 0; p < mask.data.size(); ++p) out.data[(size_t)c * mask.data.size() + p] *= mask.data[p];
    return out;
}

struct ControlTrace {
    Tensor input;  // 2xHxW (edge, z_t)
    Tensor temb_sin, temb;
    Tensor y0, y1;
    Tensor r1h1, r1a1, y2;
    Tensor y3;
    AttnTrace sa;
    Tensor y4;  // h_res for site 0
    Tensor y5;
    Tensor r2h1, r2a1, y6;  // y6 = h_res for site 1
    ControlResidual site0, site1;
    Tensor mask0, mask1;  // gating masks actually applied (empty if ungated)
};

// Run the control encoder on (edge, z_t, t) and produce the per-site final
// residuals for additive injection.
inline ControlTrace control_forward(const ControlBranch& b, const Tensor& edge, const Tensor& z, int t,
                                    const Layout& layout, const ControlOptions& opt = {}) {
    using namespace denoiser_detail;
    const int C = b.cfg.channels, H = b.cfg.latent, W = b.cfg.latent;
    require_dims(z.rank() == 3 && z.dim(0) == 1 && z.dim(1) == H && z.dim(2) == W,
                 "control: latent shape mismatch");
    ControlTrace tr;
    Tensor edge_plane = edge;
    if (edge_plane.rank() == 3) {
        require_dims(edge_plane.dim(0) == 1, "control: edge map must be single channel");
        edge_plane = Tensor::of({edge_plane.dim(1), edge_plane.dim(2)}, edge_plane.data);
    }
    if (edge_plane.dim(0) != H || edge_plane.dim(1) != W) edge_plane = resize_bilinear(edge_plane, H, W);
    tr.input = Tensor({2, H, W});
    std::copy(edge_plane.data.begin(), edge_plane.data.end(), tr.input.data.begin());
    std::copy(z.data.begin(), z.data.end(), tr.input.data.begin() + (size_t)H * W);

    tr.y0 = conv2d(tr.input, b.conv_in_w, b.conv_in_b);
    tr.temb_sin = sinusoid_embedding((double)t, C);
    tr.temb = affine(b.time_w, tr.temb_sin, b.time_b);
    tr.y1 = tr.y0;
    for (int c = 0; c < C; ++c) {
        double* plane = &tr.y1.data[(size_t)c * H * W];
        for (int p = 0; p < H * W; ++p) plane[p] += tr.temb[(size_t)c];
    }
    tr.r1h1 = conv2d(tr.y1, b.r1c1_w, b.r1c1_b);
    tr.r1a1 = silu(tr.r1h1);
    tr.y2 = add(tr.y1, conv2d(tr.r1a1, b.r1c2_w, b.r1c2_b));
    tr.y3 = avgpool2(tr.y2);

    tr.sa.xf = flatten_pc(tr.y3);
    tr.sa.q = matmul(tr.sa.xf, b.sa_wq);
    tr.sa.k = matmul(tr.sa.xf, b.sa_wk);
    tr.sa.v = matmul(tr.sa.xf, b.sa_wv);
    {
        SdpaResult r = sdpa(tr.sa.q, tr.sa.k, tr.sa.v, nullptr);
        tr.sa.weights = std::move(r.weights);
        tr.sa.attn_out = std::move(r.output);
    }
    tr.sa.y = matmul(tr.sa.attn_out, b.sa_wo);
    tr.y4 = add(tr.y3, unflatten_pc(tr.sa.y, C, H / 2, W / 2));

    tr.y5 = upsample_nearest2(tr.y4);
    tr.r2h1 = conv2d(tr.y5, b.r2c1_w, b.r2c1_b);
    tr.r2a1 = silu(tr.r2h1);
    tr.y6 = add(tr.y5, conv2d(tr.r2a1, b.r2c2_w, b.r2c2_b));

    auto run_site = [&](const Tensor& h_res, const Tensor& zc_w, const Tensor& zc_b, Tensor& mask_out) {
        ControlResidual r;
        r.h_res = h_res;
        r.dh = conv2d(h_res, zc_w, zc_b);
        if (opt.highpass) {
            r.dh_high = highpass_filter(r.dh, b.spec.divisor);
            r.dh_str = opt.train_mode ? r.dh_high : soft_threshold(r.dh_high, b.spec.tau);
        } else {
            r.dh_high = r.dh;
            r.dh_str = r.dh;
        }
        if (opt.spatial_gate) {
            if (layout.instances.empty()) {
                mask_out = Tensor({r.dh_str.dim(1), r.dh_str.dim(2)});
            } else {
                mask_out = rasterize(layout, r.dh_str.dim(1), r.dh_str.dim(2)).union_fg();
            }
            r.dh_final = r.dh_str;
            const size_t plane = mask_out.data.size();
            for (int c = 0; c < r.dh_final.dim(0); ++c)
                for (size_t p = 0; p < plane; ++p) r.dh_final.data[(size_t)c * plane + p] *= mask_out.data[p];
        } else {
            r.dh_final = r.dh_str;
        }
        return r;
    };
    tr.site0 = run_site(tr.y4, b.zc0_w, b.zc0_b, tr.mask0);
    tr.site1 = run_site(tr.y6, b.zc1_w, b.zc1_b, tr.mask1);
    return tr;
}

// Branch parameter gradients from the base model's site cotangents.
inline ControlBranch control_backward(const ControlBranch& b, const ControlTrace& tr, const Tensor& dsite0,
                                      const Tensor& dsite1, const ControlOptions& opt) {
    using namespace denoiser_detail;
    const int C = b.cfg.channels, H = b.cfg.latent, W = b.cfg.latent;
    ControlBranch g = ControlBranch::zeros(b.cfg, b.spec);

    auto site_back = [&](const ControlResidual& site, const Tensor& mask, const Tensor& dfinal,
                         const Tensor& zc_w, Tensor& dzc_w, Tensor& dzc_b) {
        Tensor dstr = dfinal;
        if (opt.spatial_gate) {
            const size_t plane = mask.data.size();
            for (int c = 0; c < dstr.dim(0); ++c)
                for (size_t p = 0; p < plane; ++p) dstr.data[(size_t)c * plane + p] *= mask.data[p];
        }
        Tensor ddh = dstr;
        if (opt.highpass) {
            if (!opt.train_mode) {
                for (size_t i = 0; i < ddh.data.size(); ++i)
                    if (std::fabs(site.dh_high.data[i]) <= b.spec.tau) ddh.data[i] = 0.0;
            }
            ddh = highpass_filter(ddh, b.spec.divisor);
        }
        Conv2dGrads cg = conv2d_backward(site.h_res, zc_w, ddh);
        dzc_w = std::move(cg.dw);
        dzc_b = std::move(cg.db);
        return std::move(cg.dx);
    };

    Tensor dy6 = site_back(tr.site1, tr.mask1, dsite1, b.zc1_w, g.zc1_w, g.zc1_b);
    Tensor dy4 = site_back(tr.site0, tr.mask0, dsite0, b.zc0_w, g.zc0_w, g.zc0_b);

    // resblock 2 (full res)
    Tensor dy5 = dy6;
    {
        Conv2dGrads g2 = conv2d_backward(tr.r2a1, b.r2c2_w, dy6);
        Tensor dr2h1 = silu_backward(tr.r2h1, g2.dx);
        Conv2dGrads g1 = conv2d_backward(tr.y5, b.r2c1_w, dr2h1);
        for (size_t i = 0; i < dy5.data.size(); ++i) dy5.data[i] += g1.dx.data[i];
        g.r2c2_w = std::move(g2.dw);
        g.r2c2_b = std::move(g2.db);
        g.r2c1_w = std::move(g1.dw);
        g.r2c1_b = std::move(g1.db);
    }
    {
        Tensor up_back = upsample_nearest2_backward(dy5);
        for (size_t i = 0; i < dy4.data.size(); ++i) dy4.data[i] += up_back.data[i];
    }

    // self-attention block
    Tensor dy3 = dy4;
    {
        Tensor dsaY = flatten_pc(dy4);
        Tensor dsaO = matmul(dsaY, transpose(b.sa_wo));
        SdpaGrads sg = sdpa_backward(tr.sa.q, tr.sa.k, tr.sa.v, tr.sa.weights, &dsaO, nullptr);
        Tensor dxf3 = matmul(sg.dq, transpose(b.sa_wq));
        Tensor tmp = matmul(sg.dk, transpose(b.sa_wk));
        for (size_t i = 0; i < dxf3.data.size(); ++i) dxf3.data[i] += tmp.data[i];
        tmp = matmul(sg.dv, transpose(b.sa_wv));
        for (size_t i = 0; i < dxf3.data.size(); ++i) dxf3.data[i] += tmp.data[i];
        Tensor dy3_attn = unflatten_pc(dxf3, C, H / 2, W / 2);
        for (size_t i = 0; i < dy3.data.size(); ++i) dy3.data[i] += dy3_attn.data[i];
        g.sa_wo = matmul(transpose(tr.sa.attn_out), dsaY);
        g.sa_wq = matmul(transpose(tr.sa.xf), sg.dq);
        g.sa_wk = matmul(transpose(tr.sa.xf), sg.dk);
        g.sa_wv = matmul(transpose(tr.sa.xf), sg.dv);
    }

    Tensor dy2 = avgpool2_backward(dy3);

    // resblock 1
    Tensor dy1 = dy2;
    {
        Conv2dGrads g2 = conv2d_backward(tr.r1a1, b.r1c2_w, dy2);
        Tensor dr1h1 = silu_backward(tr.r1h1, g2.dx);
        Conv2dGrads g1 = conv2d_backward(tr.y1, b.r1c1_w, dr1h1);
        for (size_t i = 0; i < dy1.data.size(); ++i) dy1.data[i] += g1.dx.data[i];
        g.r1c2_w = std::move(g2.dw);
        g.r1c2_b = std::move(g2.db);
        g.r1c1_w = std::move(g1.dw);
        g.r1c1_b = std::move(g1.db);
    }

    {
        Tensor dtemb({C});
        for (int c = 0; c < C; ++c) {
            double s = 0.0;
            const double* plane = &dy1.data[(size_t)c * H * W];
            for (int p = 0; p < H * W; ++p) s += plane[p];
            dtemb[(size_t)c] = s;
        }
        g.time_b = dtemb;
        for (int i = 0; i < C; ++i)
            for (int j = 0; j < C; ++j) g.time_w.at(i, j) = dtemb[(size_t)i] * tr.temb_sin[(size_t)j];
    }
    {
        Conv2dGrads cg = conv2d_backward(tr.input, b.conv_in_w, dy1);
        g.conv_in_w = std::move(cg.dw);
        g.conv_in_b = std::move(cg.db);
    }
    return g;
}

}  // namespace edgediff
