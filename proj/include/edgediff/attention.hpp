#pragma once

#include <cmath>
#include <vector>

#include "edgediff/tensor.hpp"

namespace edgediff {

// Additive attention mask: entries are 0 (pass) or -inf (block). Thin wrapper
// so the {0, -inf} contract has a name and a validator.
struct AttnMask {
    Tensor m;  // rows x cols

    int rows() const { return m.dim(0); }
    int cols() const { return m.dim(1); }

    void validate() const {
        require_dims(m.rank() == 2, "attn mask must be rank 2");
        for (int i = 0; i < rows(); ++i) {
            bool open = false;
            for (int j = 0; j < cols(); ++j) {
                const double v = m.at(i, j);
                if (v == 0.0) {
                    open = true;
                } else if (v != kNegInf) {
                    throw DataError("attn mask entries must be 0 or -inf");
                }
            }
            if (!open) throw DataError("attn mask has a fully blocked row");
        }
    }
};

// Prompt token layout: the shared prefix (scene tokens) plus the per-instance
// class-token index sets K_i, all disjoint.
struct TokenMap {
    std::vector<int> shared_prefix;
    std::vector<std::vector<int>> per_instance;
    int num_tokens = 0;

    static TokenMap for_instances(int n, int prefix_len = 1) {
        TokenMap tm;
        tm.num_tokens = prefix_len + n;
        for (int i = 0; i < prefix_len; ++i) tm.shared_prefix.push_back(i);
        tm.per_instance.resize(n);
        for (int i = 0; i < n; ++i) tm.per_instance[i] = {prefix_len + i};
        return tm;
    }
};

struct SdpaResult {
    Tensor output;   // nq x dv
    Tensor weights;  // nq x nk
};

// Softmax(Q K^T / sqrt(d) + M) V. Blocked pairs get weight exactly 0.
inline SdpaResult sdpa(const Tensor& q, const Tensor& k, const Tensor& v, const Tensor* mask = nullptr) {
    require_dims(q.rank() == 2 && k.rank() == 2 && v.rank() == 2, "sdpa: rank-2 tensors required");
    require_dims(q.dim(1) == k.dim(1), "sdpa: Q/K feature dims disagree");
    require_dims(k.dim(0) == v.dim(0), "sdpa: K/V row counts disagree");
    const double inv_sqrt_d = 1.0 / std::sqrt((double)q.dim(1));
    Tensor scores = matmul(q, transpose(k));
    for (auto& s : scores.data) s *= inv_sqrt_d;
    if (mask) {
        require_dims(mask->rank() == 2 && mask->dim(0) == scores.dim(0) && mask->dim(1) == scores.dim(1),
                     "sdpa: mask shape mismatch");
        for (size_t i = 0; i < scores.data.size(); ++i) scores.data[i] += mask->data[i];
    }
    SdpaResult r;
    r.weights = softmax_lastdim(scores);
    r.output = matmul(r.weights, v);
    return r;
}

struct SdpaGrads {
    Tensor dq, dk, dv;
};

// Adjoint of sdpa. Either cotangent may be null: d_out feeds the value path,
// d_weights is an extra cotangent directly on the softmax weights (used by the
// region-loss gradient, which reads the weights).
inline SdpaGrads sdpa_backward(const Tensor& q, const Tensor& k, const Tensor& v, const Tensor& weights,
                               const Tensor* d_out, const Tensor* d_weights) {
    const double inv_sqrt_d = 1.0 / std::sqrt((double)q.dim(1));
    Tensor dw(weights.shape);
    if (d_weights) dw = *d_weights;
    SdpaGrads g;
    if (d_out) {
        // output = weights * v
        Tensor dw_out = matmul(*d_out, transpose(v));
        for (size_t i = 0; i < dw.data.size(); ++i) dw.data[i] += dw_out.data[i];
        g.dv = matmul(transpose(weights), *d_out);
    } else {
        g.dv = Tensor({v.dim(0), v.dim(1)});
    }
    Tensor dscores = softmax_lastdim_backward(weights, dw);
    for (auto& s : dscores.data) s *= inv_sqrt_d;
    g.dq = matmul(dscores, k);
    g.dk = matmul(transpose(dscores), q);
    return g;
}

// Self-attention mask from a rasterized label map: (p, q) passes iff both
// positions carry the same label (background is its own label).
inline AttnMask build_self_mask(const std::vector<int>& label) {
    const int n = (int)label.size();
    AttnMask mask{Tensor({n, n}, kNegInf)};
    for (int p = 0; p < n; ++p)
        for (int q = 0; q < n; ++q)
            if (label[p] == label[q]) mask.m.at(p, q) = 0.0;
    return mask;
}

// Cross-attention mask: position p labeled i attends K_i plus the shared
// prefix; background positions attend the prefix only.
inline AttnMask build_cross_mask(const std::vector<int>& label, const TokenMap& tokens) {
    const int n = (int)label.size();
    if (tokens.shared_prefix.empty()) throw UsageError("cross mask: empty shared prefix");
    AttnMask mask{Tensor({n, tokens.num_tokens}, kNegInf)};
    for (int p = 0; p < n; ++p) {
        for (int t : tokens.shared_prefix) mask.m.at(p, t) = 0.0;
        const int i = label[p];
        if (i < 0) continue;
        if (i >= (int)tokens.per_instance.size() || tokens.per_instance[i].empty())
            throw UsageError("cross mask: instance " + std::to_string(i) + " has no class tokens");
        for (int t : tokens.per_instance[i]) mask.m.at(p, t) = 0.0;
    }
    return mask;
}

// Aggregate cross-attention weights (heads x HW x tokens) into one spatial map
// per instance: sum over the instance's token set, mean over heads.
inline std::vector<Tensor> aggregate_maps(const Tensor& weights, const TokenMap& tokens, int H, int W) {
    require_dims(weights.rank() == 3, "aggregate_maps: heads x HW x tokens required");
    const int heads = weights.dim(0), hw = weights.dim(1);
    require_dims(hw == H * W, "aggregate_maps: spatial size mismatch");
    require_dims(weights.dim(2) == tokens.num_tokens, "aggregate_maps: token count mismatch");
    std::vector<Tensor> maps;
    maps.reserve(tokens.per_instance.size());
    for (const auto& ki : tokens.per_instance) {
        Tensor a({H, W});
        for (int h = 0; h < heads; ++h)
            for (int p = 0; p < hw; ++p) {
                double s = 0.0;
                for (int t : ki) s += weights.at(h, p, t);
                a.data[(size_t)p] += s;
            }
        for (auto& v : a.data) v /= heads;
        maps.push_back(std::move(a));
    }
    return maps;
}

// Self-attention analog: for query p, the attention mass flowing into the
// pixels labeled i, summed over keys and averaged over heads.
inline std::vector<Tensor> aggregate_self_maps(const Tensor& weights, const std::vector<int>& label,
                                               int n_instances, int H, int W) {
    require_dims(weights.rank() == 3, "aggregate_self_maps: heads x HW x HW required");
    const int heads = weights.dim(0), hw = weights.dim(1);
    require_dims(hw == H * W && weights.dim(2) == hw, "aggregate_self_maps: spatial size mismatch");
    require_dims((int)label.size() == hw, "aggregate_self_maps: label size mismatch");
    std::vector<Tensor> maps(n_instances, Tensor({H, W}));
    for (int h = 0; h < heads; ++h)
        for (int p = 0; p < hw; ++p)
            for (int q = 0; q < hw; ++q) {
                const int i = label[q];
                if (i >= 0 && i < n_instances) maps[i].data[(size_t)p] += weights.at(h, p, q);
            }
    for (auto& m : maps)
        for (auto& v : m.data) v /= heads;
    return maps;
}

}  // namespace edgediff
