#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "edgediff/attention.hpp"
#include "edgediff/tensor.hpp"
#include "edgediff/weights_io.hpp"

namespace edgediff {

// Toy denoiser:
//   conv-in 3x3 -> +time embedding -> residual block -> 2x down ->
//   self-attention -> cross-attention over prompt tokens -> 2x up ->
//   residual block -> conv-out 3x3
// Latents are 1xHxW; attention runs at H/2 x W/2 where layout features
// concentrate. Residual injection sites: site 0 after the cross-attention
// block (half res), site 1 after the second residual block (full res).
struct DenoiserConfig {
    int latent = 32;    // H = W, must be even
    int channels = 8;   // C, must be even (sinusoidal embedding pairs)
    int attn_dim = 16;  // d
    int n_classes = 3;

    int attn_side() const { return latent / 2; }
    int attn_positions() const { return attn_side() * attn_side(); }
    int token_dim() const { return channels; }
    // vocab rows: 0 prefix, 1 null (prompt dropout), 2.. classes
    int vocab() const { return 2 + n_classes; }
};

// Prompt: shared prefix token then one class token per instance, in instance
// order ("edge map. [class 1], [class 2]..." analog without a text encoder).
struct PromptSpec {
    std::vector<int> class_ids;
    TokenMap tokens;
    std::vector<int> vocab_rows;  // embedding-table row per token position

    static PromptSpec for_classes(const std::vector<int>& classes) {
        PromptSpec p;
        p.class_ids = classes;
        p.tokens = TokenMap::for_instances((int)classes.size(), 1);
        p.vocab_rows.push_back(0);
        for (int c : classes) p.vocab_rows.push_back(2 + c);
        return p;
    }
};

// Prompt embeddings assembled from the current (trainable) table.
struct TokenBatch {
    Tensor matrix;  // T x E
    std::vector<int> vocab_rows;
};

namespace denoiser_detail {

inline Tensor flatten_pc(const Tensor& x) {  // CxHxW -> (H*W)xC
    const int C = x.dim(0), P = x.dim(1) * x.dim(2);
    Tensor f({P, C});
    for (int c = 0; c < C; ++c)
        for (int p = 0; p < P; ++p) f.at(p, c) = x.data[(size_t)c * P + p];
    return f;
}

inline Tensor unflatten_pc(const Tensor& f, int C, int h, int w) {
    Tensor x({C, h, w});
    const int P = h * w;
    for (int c = 0; c < C; ++c)
        for (int p = 0; p < P; ++p) x.data[(size_t)c * P + p] = f.at(p, c);
    return x;
}

inline Tensor sinusoid_embedding(double t, int dims) {
    Tensor e({dims});
    const int half = dims / 2;
    for (int i = 0; i < half; ++i) {
        const double freq = std::pow(10000.0, -double(i) / half);
        e[(size_t)(2 * i)] = std::sin(t * freq);
        e[(size_t)(2 * i + 1)] = std::cos(t * freq);
    }
    return e;
}

// y = W x + b for vectors.
inline Tensor affine(const Tensor& w, const Tensor& x, const Tensor& b) {
    const int m = w.dim(0), n = w.dim(1);
    Tensor y({m});
    for (int i = 0; i < m; ++i) {
        double s = b[(size_t)i];
        for (int j = 0; j < n; ++j) s += w.at(i, j) * x[(size_t)j];
        y[(size_t)i] = s;
    }
    return y;
}

}  // namespace denoiser_detail

struct AttnTrace {
    Tensor xf;       // P x C input rows
    Tensor q, k, v;  // projections
    Tensor weights;  // P x nk
    Tensor attn_out; // P x d (weights * v)
    Tensor y;        // P x C after the output projection
};

struct DenoiserTrace {
    Tensor z;
    int t = 0;
    Tensor temb_sin, temb;
    Tensor x0, x1;
    Tensor r1h1, r1a1, x2;
    Tensor x3;
    AttnTrace sa;
    Tensor x4;
    AttnTrace ca;
    Tensor x5, x5i;
    Tensor x6;
    Tensor r2h1, r2a1, x7, x7i;
    Tensor out;
};

struct DenoiserInputs {
    const Tensor* self_mask = nullptr;   // P x P additive {0,-inf}
    const Tensor* cross_mask = nullptr;  // P x T
    const Tensor* site0 = nullptr;       // C x H/2 x W/2
    const Tensor* site1 = nullptr;       // C x H x W
    const Tensor* edge_concat = nullptr; // unused by the base model
};

struct Denoiser {
    DenoiserConfig cfg;

    Tensor conv_in_w, conv_in_b;
    Tensor time_w, time_b;
    Tensor r1c1_w, r1c1_b, r1c2_w, r1c2_b;
    Tensor sa_wq, sa_wk, sa_wv, sa_wo;
    Tensor ca_wq, ca_wk, ca_wv, ca_wo;
    Tensor r2c1_w, r2c1_b, r2c2_w, r2c2_b;
    Tensor conv_out_w, conv_out_b;
    Tensor token_emb;

    static Denoiser zeros(const DenoiserConfig& cfg) {
        Denoiser d;
        d.cfg = cfg;
        const int C = cfg.channels, A = cfg.attn_dim, E = cfg.token_dim();
        d.conv_in_w = Tensor({C, 1, 3, 3});
        d.conv_in_b = Tensor({C});
        d.time_w = Tensor({C, C});
        d.time_b = Tensor({C});
        d.r1c1_w = Tensor({C, C, 3, 3});
        d.r1c1_b = Tensor({C});
        d.r1c2_w = Tensor({C, C, 3, 3});
        d.r1c2_b = Tensor({C});
        d.sa_wq = Tensor({C, A});
        d.sa_wk = Tensor({C, A});
        d.sa_wv = Tensor({C, A});
        d.sa_wo = Tensor({A, C});
        d.ca_wq = Tensor({C, A});
        d.ca_wk = Tensor({E, A});
        d.ca_wv = Tensor({E, A});
        d.ca_wo = Tensor({A, C});
        d.r2c1_w = Tensor({C, C, 3, 3});
        d.r2c1_b = Tensor({C});
        d.r2c2_w = Tensor({C, C, 3, 3});
        d.r2c2_b = Tensor({C});
        d.conv_out_w = Tensor({1, C, 3, 3});
        d.conv_out_b = Tensor({1});
        d.token_emb = Tensor({cfg.vocab(), E});
        return d;
    }

    static Denoiser init(const DenoiserConfig& cfg, Rng& rng) {
        Denoiser d = zeros(cfg);
        const int C = cfg.channels;
        auto fill = [&rng](Tensor& t, double std) {
            for (auto& v : t.data) v = std * rng.normal();
        };
        fill(d.conv_in_w, 1.0 / 3.0);
        fill(d.time_w, 1.0 / std::sqrt((double)C));
        fill(d.r1c1_w, 1.0 / std::sqrt(9.0 * C));
        fill(d.r1c2_w, 1.0 / std::sqrt(9.0 * C));
        fill(d.r2c1_w, 1.0 / std::sqrt(9.0 * C));
        fill(d.r2c2_w, 1.0 / std::sqrt(9.0 * C));
        const double pstd = 1.0 / std::sqrt((double)C);
        fill(d.sa_wq, pstd);
        fill(d.sa_wk, pstd);
        fill(d.sa_wv, pstd);
        fill(d.sa_wo, 1.0 / std::sqrt((double)cfg.attn_dim));
        fill(d.ca_wq, pstd);
        fill(d.ca_wk, 1.0 / std::sqrt((double)cfg.token_dim()));
        fill(d.ca_wv, 1.0 / std::sqrt((double)cfg.token_dim()));
        fill(d.ca_wo, 1.0 / std::sqrt((double)cfg.attn_dim));
        fill(d.token_emb, 1.0);
        // conv-out starts at zero so the initial prediction is 0.
        return d;
    }

    std::vector<NamedTensor> params() {
        return {
            {"conv_in_w", &conv_in_w}, {"conv_in_b", &conv_in_b}, {"time_w", &time_w},
            {"time_b", &time_b},       {"r1c1_w", &r1c1_w},       {"r1c1_b", &r1c1_b},
            {"r1c2_w", &r1c2_w},       {"r1c2_b", &r1c2_b},       {"sa_wq", &sa_wq},
            {"sa_wk", &sa_wk},         {"sa_wv", &sa_wv},         {"sa_wo", &sa_wo},
            {"ca_wq", &ca_wq},         {"ca_wk", &ca_wk},         {"ca_wv", &ca_wv},
            {"ca_wo", &ca_wo},         {"r2c1_w", &r2c1_w},       {"r2c1_b", &r2c1_b},
            {"r2c2_w", &r2c2_w},       {"r2c2_b", &r2c2_b},       {"conv_out_w", &conv_out_w},
            {"conv_out_b", &conv_out_b}, {"token_emb", &token_emb},
        };
    }

    TokenBatch assemble_tokens(const PromptSpec& prompt) const {
        TokenBatch tb;
        tb.vocab_rows = prompt.vocab_rows;
        const int T = (int)prompt.vocab_rows.size();
        const int E = cfg.token_dim();
        tb.matrix = Tensor({T, E});
        for (int r = 0; r < T; ++r) {
            const int row = prompt.vocab_rows[(size_t)r];
            require_dims(row >= 0 && row < cfg.vocab(), "prompt: vocab row out of range");
            for (int e = 0; e < E; ++e) tb.matrix.at(r, e) = token_emb.at(row, e);
        }
        return tb;
    }

    DenoiserTrace forward(const Tensor& z, int t, const TokenBatch& tok, const DenoiserInputs& in = {}) const {
        using namespace denoiser_detail;
        require_dims(z.rank() == 3 && z.dim(0) == 1 && z.dim(1) == cfg.latent && z.dim(2) == cfg.latent,
                     "denoiser: latent shape mismatch");
        const int C = cfg.channels, H = cfg.latent, W = cfg.latent;
        DenoiserTrace tr;
        tr.z = z;
        tr.t = t;
        tr.x0 = conv2d(z, conv_in_w, conv_in_b);
        tr.temb_sin = sinusoid_embedding((double)t, C);
        tr.temb = affine(time_w, tr.temb_sin, time_b);
        tr.x1 = tr.x0;
        for (int c = 0; c < C; ++c) {
            double* plane = &tr.x1.data[(size_t)c * H * W];
            for (int p = 0; p < H * W; ++p) plane[p] += tr.temb[(size_t)c];
        }
        tr.r1h1 = conv2d(tr.x1, r1c1_w, r1c1_b);
        tr.r1a1 = silu(tr.r1h1);
        tr.x2 = add(tr.x1, conv2d(tr.r1a1, r1c2_w, r1c2_b));
        tr.x3 = avgpool2(tr.x2);

        tr.sa.xf = flatten_pc(tr.x3);
        tr.sa.q = matmul(tr.sa.xf, sa_wq);
        tr.sa.k = matmul(tr.sa.xf, sa_wk);
        tr.sa.v = matmul(tr.sa.xf, sa_wv);
        {
            SdpaResult r = sdpa(tr.sa.q, tr.sa.k, tr.sa.v, in.self_mask);
            tr.sa.weights = std::move(r.weights);
            tr.sa.attn_out = std::move(r.output);
        }
        tr.sa.y = matmul(tr.sa.attn_out, sa_wo);
        tr.x4 = add(tr.x3, unflatten_pc(tr.sa.y, C, H / 2, W / 2));

        tr.ca.xf = flatten_pc(tr.x4);
        tr.ca.q = matmul(tr.ca.xf, ca_wq);
        tr.ca.k = matmul(tok.matrix, ca_wk);
        tr.ca.v = matmul(tok.matrix, ca_wv);
        {
            SdpaResult r = sdpa(tr.ca.q, tr.ca.k, tr.ca.v, in.cross_mask);
            tr.ca.weights = std::move(r.weights);
            tr.ca.attn_out = std::move(r.output);
        }
        tr.ca.y = matmul(tr.ca.attn_out, ca_wo);
        tr.x5 = add(tr.x4, unflatten_pc(tr.ca.y, C, H / 2, W / 2));
        tr.x5i = in.site0 ? add(tr.x5, *in.site0) : tr.x5;
        tr.x6 = upsample_nearest2(tr.x5i);

        tr.r2h1 = conv2d(tr.x6, r2c1_w, r2c1_b);
        tr.r2a1 = silu(tr.r2h1);
        tr.x7 = add(tr.x6, conv2d(tr.r2a1, r2c2_w, r2c2_b));
        tr.x7i = in.site1 ? add(tr.x7, *in.site1) : tr.x7;
        // Global skip: the head learns the deviation from identity. At high
        // noise the optimal prediction is close to z itself; without the skip
        // that near-identity has to be carried through every layer.
        tr.out = add(conv2d(tr.x7i, conv_out_w, conv_out_b), z);
        return tr;
    }
};

struct BackwardRequest {
    const Tensor* d_out = nullptr;            // 1xHxW
    const Tensor* d_self_weights = nullptr;   // PxP cotangent on the self-attn weights
    const Tensor* d_cross_weights = nullptr;  // PxT cotangent on the cross-attn weights
    bool want_dz = false;
    bool want_param_grads = false;
    bool want_site_grads = false;
};

struct BackwardResult {
    Tensor dz;
    Tensor dsite0, dsite1;
    Denoiser grads;
};

// Reverse pass composed by hand in reverse call order; serves training
// (d_out), branch training (d_out + site cotangents) and latent guidance
// (attention-weight cotangents -> dz).
inline BackwardResult denoiser_backward(const Denoiser& d, const DenoiserTrace& tr, const TokenBatch& tok,
                                        const BackwardRequest& req) {
    using namespace denoiser_detail;
    const int C = d.cfg.channels, H = d.cfg.latent, W = d.cfg.latent;
    const int h = H / 2, w = W / 2;
    BackwardResult res;
    if (req.want_param_grads) res.grads = Denoiser::zeros(d.cfg);

    Tensor dx7i({C, H, W});
    if (req.d_out) {
        Conv2dGrads g = conv2d_backward(tr.x7i, d.conv_out_w, *req.d_out);
        dx7i = std::move(g.dx);
        if (req.want_param_grads) {
            res.grads.conv_out_w = std::move(g.dw);
            res.grads.conv_out_b = std::move(g.db);
        }
    }
    if (req.want_site_grads) res.dsite1 = dx7i;

    // resblock 2
    Tensor dx6 = dx7i;
    {
        Conv2dGrads g2 = conv2d_backward(tr.r2a1, d.r2c2_w, dx7i);
        Tensor dr2h1 = silu_backward(tr.r2h1, g2.dx);
        Conv2dGrads g1 = conv2d_backward(tr.x6, d.r2c1_w, dr2h1);
        for (size_t i = 0; i < dx6.data.size(); ++i) dx6.data[i] += g1.dx.data[i];
        if (req.want_param_grads) {
            res.grads.r2c2_w = std::move(g2.dw);
            res.grads.r2c2_b = std::move(g2.db);
            res.grads.r2c1_w = std::move(g1.dw);
            res.grads.r2c1_b = std::move(g1.db);
        }
    }
    Tensor dx5i = upsample_nearest2_backward(dx6);
    if (req.want_site_grads) res.dsite0 = dx5i;
    const Tensor& dx5 = dx5i;

    // cross-attention block
    Tensor dx4 = dx5;
    Tensor dtok({tok.matrix.dim(0), tok.matrix.dim(1)});
    {
        Tensor dcaY = flatten_pc(dx5);
        Tensor dcaO = matmul(dcaY, transpose(d.ca_wo));
        SdpaGrads sg = sdpa_backward(tr.ca.q, tr.ca.k, tr.ca.v, tr.ca.weights, &dcaO, req.d_cross_weights);
        Tensor dxf4 = matmul(sg.dq, transpose(d.ca_wq));
        Tensor dx4_attn = unflatten_pc(dxf4, C, h, w);
        for (size_t i = 0; i < dx4.data.size(); ++i) dx4.data[i] += dx4_attn.data[i];
        Tensor dk_tok = matmul(sg.dk, transpose(d.ca_wk));
        Tensor dv_tok = matmul(sg.dv, transpose(d.ca_wv));
        for (size_t i = 0; i < dtok.data.size(); ++i) dtok.data[i] = dk_tok.data[i] + dv_tok.data[i];
        if (req.want_param_grads) {
            res.grads.ca_wo = matmul(transpose(tr.ca.attn_out), dcaY);
            res.grads.ca_wq = matmul(transpose(tr.ca.xf), sg.dq);
            res.grads.ca_wk = matmul(transpose(tok.matrix), sg.dk);
            res.grads.ca_wv = matmul(transpose(tok.matrix), sg.dv);
        }
    }

    // self-attention block
    Tensor dx3 = dx4;
    {
        Tensor dsaY = flatten_pc(dx4);
        Tensor dsaO = matmul(dsaY, transpose(d.sa_wo));
        SdpaGrads sg = sdpa_backward(tr.sa.q, tr.sa.k, tr.sa.v, tr.sa.weights, &dsaO, req.d_self_weights);
        Tensor dxf3 = matmul(sg.dq, transpose(d.sa_wq));
        Tensor tmp = matmul(sg.dk, transpose(d.sa_wk));
        for (size_t i = 0; i < dxf3.data.size(); ++i) dxf3.data[i] += tmp.data[i];
        tmp = matmul(sg.dv, transpose(d.sa_wv));
        for (size_t i = 0; i < dxf3.data.size(); ++i) dxf3.data[i] += tmp.data[i];
        Tensor dx3_attn = unflatten_pc(dxf3, C, h, w);
        for (size_t i = 0; i < dx3.data.size(); ++i) dx3.data[i] += dx3_attn.data[i];
        if (req.want_param_grads) {
            res.grads.sa_wo = matmul(transpose(tr.sa.attn_out), dsaY);
            res.grads.sa_wq = matmul(transpose(tr.sa.xf), sg.dq);
            res.grads.sa_wk = matmul(transpose(tr.sa.xf), sg.dk);
            res.grads.sa_wv = matmul(transpose(tr.sa.xf), sg.dv);
        }
    }

    Tensor dx2 = avgpool2_backward(dx3);

    // resblock 1
    Tensor dx1 = dx2;
    {
        Conv2dGrads g2 = conv2d_backward(tr.r1a1, d.r1c2_w, dx2);
        Tensor dr1h1 = silu_backward(tr.r1h1, g2.dx);
        Conv2dGrads g1 = conv2d_backward(tr.x1, d.r1c1_w, dr1h1);
        for (size_t i = 0; i < dx1.data.size(); ++i) dx1.data[i] += g1.dx.data[i];
        if (req.want_param_grads) {
            res.grads.r1c2_w = std::move(g2.dw);
            res.grads.r1c2_b = std::move(g2.db);
            res.grads.r1c1_w = std::move(g1.dw);
            res.grads.r1c1_b = std::move(g1.db);
        }
    }

    // time embedding broadcast
    if (req.want_param_grads) {
        Tensor dtemb({C});
        for (int c = 0; c < C; ++c) {
            double s = 0.0;
            const double* plane = &dx1.data[(size_t)c * H * W];
            for (int p = 0; p < H * W; ++p) s += plane[p];
            dtemb[(size_t)c] = s;
        }
        res.grads.time_b = dtemb;
        for (int i = 0; i < C; ++i)
            for (int j = 0; j < C; ++j) res.grads.time_w.at(i, j) = dtemb[(size_t)i] * tr.temb_sin[(size_t)j];
    }

    // conv-in
    {
        Conv2dGrads g = conv2d_backward(tr.z, d.conv_in_w, dx1);
        if (req.want_dz) {
            res.dz = std::move(g.dx);
            if (req.d_out) axpy(res.dz, 1.0, *req.d_out);  // global skip
        }
        if (req.want_param_grads) {
            res.grads.conv_in_w = std::move(g.dw);
            res.grads.conv_in_b = std::move(g.db);
        }
    }

    // scatter token cotangents into the embedding table
    if (req.want_param_grads) {
        const int E = d.cfg.token_dim();
        for (size_t r = 0; r < tok.vocab_rows.size(); ++r) {
            const int row = tok.vocab_rows[r];
            for (int e = 0; e < E; ++e) res.grads.token_emb.at(row, e) += dtok.at((int)r, e);
        }
    }
    return res;
}

}  // namespace edgediff
