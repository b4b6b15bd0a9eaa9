#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "edgediff/errors.hpp"
#include "edgediff/rng.hpp"

namespace edgediff {

// Dense row-major array of 64-bit reals. The single numeric carrier for
// latents, features, masks, attention weights and spectra (as re/im planes).
struct Tensor {
    std::vector<int> shape;
    std::vector<double> data;

    Tensor() = default;

    explicit Tensor(std::vector<int> s, double fill = 0.0) : shape(std::move(s)) {
        data.assign((size_t)check_count(shape), fill);
    }

    static Tensor of(std::vector<int> s, std::vector<double> values) {
        Tensor t;
        t.shape = std::move(s);
        if ((long long)values.size() != check_count(t.shape))
            throw DimError("tensor data length does not match shape");
        t.data = std::move(values);
        return t;
    }

    static long long check_count(const std::vector<int>& s) {
        long long n = 1;
        for (int d : s) {
            if (d <= 0) throw DimError("tensor dimensions must be positive");
            n *= d;
        }
        return n;
    }

    long long numel() const { return (long long)data.size(); }
    int rank() const { return (int)shape.size(); }
    int dim(int i) const { return shape[(size_t)i]; }

    double& operator[](size_t i) { return data[i]; }
    double operator[](size_t i) const { return data[i]; }

    double& at(int i, int j) { return data[(size_t)i * shape[1] + j]; }
    double at(int i, int j) const { return data[(size_t)i * shape[1] + j]; }

    double& at(int c, int y, int x) { return data[((size_t)c * shape[1] + y) * shape[2] + x]; }
    double at(int c, int y, int x) const { return data[((size_t)c * shape[1] + y) * shape[2] + x]; }

    double& at(int o, int c, int y, int x) {
        return data[(((size_t)o * shape[1] + c) * shape[2] + y) * shape[3] + x];
    }
    double at(int o, int c, int y, int x) const {
        return data[(((size_t)o * shape[1] + c) * shape[2] + y) * shape[3] + x];
    }

    Tensor zeros_like() const { return Tensor(shape); }

    bool same_shape(const Tensor& o) const { return shape == o.shape; }
};

inline constexpr double kNegInf = -std::numeric_limits<double>::infinity();

inline bool all_finite(const Tensor& t) {
    for (double v : t.data)
        if (!std::isfinite(v)) return false;
    return true;
}

inline Tensor randn(const std::vector<int>& shape, Rng& rng) {
    Tensor t(shape);
    for (auto& v : t.data) v = rng.normal();
    return t;
}

inline Tensor rand_uniform(const std::vector<int>& shape, Rng& rng, double lo = 0.0, double hi = 1.0) {
    Tensor t(shape);
    for (auto& v : t.data) v = rng.uniform(lo, hi);
    return t;
}

// ---- elementwise -----------------------------------------------------------

inline Tensor add(const Tensor& a, const Tensor& b) {
    require_dims(a.same_shape(b), "add: shape mismatch");
    Tensor r = a;
    for (size_t i = 0; i < r.data.size(); ++i) r.data[i] += b.data[i];
    return r;
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
    require_dims(a.same_shape(b), "sub: shape mismatch");
    Tensor r = a;
    for (size_t i = 0; i < r.data.size(); ++i) r.data[i] -= b.data[i];
    return r;
}

inline Tensor hadamard(const Tensor& a, const Tensor& b) {
    require_dims(a.same_shape(b), "hadamard: shape mismatch");
    Tensor r = a;
    for (size_t i = 0; i < r.data.size(); ++i) r.data[i] *= b.data[i];
    return r;
}

inline Tensor scale(const Tensor& a, double s) {
    Tensor r = a;
    for (auto& v : r.data) v *= s;
    return r;
}

inline void axpy(Tensor& y, double a, const Tensor& x) {
    require_dims(y.same_shape(x), "axpy: shape mismatch");
    for (size_t i = 0; i < y.data.size(); ++i) y.data[i] += a * x.data[i];
}

inline double dot(const Tensor& a, const Tensor& b) {
    require_dims(a.same_shape(b), "dot: shape mismatch");
    double s = 0.0;
    for (size_t i = 0; i < a.data.size(); ++i) s += a.data[i] * b.data[i];
    return s;
}

inline double max_abs(const Tensor& a) {
    double m = 0.0;
    for (double v : a.data) m = std::max(m, std::fabs(v));
    return m;
}

// ---- matmul ----------------------------------------------------------------

inline Tensor matmul(const Tensor& a, const Tensor& b) {
    require_dims(a.rank() == 2 && b.rank() == 2, "matmul: rank-2 tensors required");
    require_dims(a.dim(1) == b.dim(0), "matmul: inner dimensions disagree");
    const int m = a.dim(0), k = a.dim(1), n = b.dim(1);
    Tensor c({m, n});
    for (int i = 0; i < m; ++i) {
        for (int l = 0; l < k; ++l) {
            const double av = a.at(i, l);
            if (av == 0.0) continue;
            const double* brow = &b.data[(size_t)l * n];
            double* crow = &c.data[(size_t)i * n];
            for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
    return c;
}

inline Tensor transpose(const Tensor& a) {
    require_dims(a.rank() == 2, "transpose: rank-2 tensor required");
    Tensor t({a.dim(1), a.dim(0)});
    for (int i = 0; i < a.dim(0); ++i)
        for (int j = 0; j < a.dim(1); ++j) t.at(j, i) = a.at(i, j);
    return t;
}

// d(a·b) w.r.t. a and b given the output cotangent.
inline std::pair<Tensor, Tensor> matmul_backward(const Tensor& a, const Tensor& b, const Tensor& g) {
    return {matmul(g, transpose(b)), matmul(transpose(a), g)};
}

// ---- softmax ----------------------------------------------------------------

// Softmax over the last dimension. -inf entries are the mask sentinel and map
// to exactly 0; a row with no finite entry is an error.
inline Tensor softmax_lastdim(const Tensor& x) {
    require_dims(x.rank() >= 1, "softmax: rank >= 1 required");
    const int n = x.shape.back();
    const size_t rows = (size_t)(x.numel() / n);
    Tensor y(x.shape);
    for (size_t r = 0; r < rows; ++r) {
        const double* xr = &x.data[r * n];
        double* yr = &y.data[r * n];
        double mx = kNegInf;
        for (int j = 0; j < n; ++j) {
            if (std::isnan(xr[j])) throw NumericError("softmax: non-finite input");
            if (xr[j] > mx) mx = xr[j];
        }
        if (mx == kNegInf) throw NumericError("softmax: fully masked row");
        double sum = 0.0;
        for (int j = 0; j < n; ++j) {
            yr[j] = (xr[j] == kNegInf) ? 0.0 : std::exp(xr[j] - mx);
            sum += yr[j];
        }
        for (int j = 0; j < n; ++j) yr[j] /= sum;
    }
    return y;
}

// gx_i = y_i * (g_i - sum_j g_j y_j), computed per row from the forward output.
inline Tensor softmax_lastdim_backward(const Tensor& y, const Tensor& g) {
    require_dims(y.same_shape(g), "softmax_backward: shape mismatch");
    const int n = y.shape.back();
    const size_t rows = (size_t)(y.numel() / n);
    Tensor gx(y.shape);
    for (size_t r = 0; r < rows; ++r) {
        const double* yr = &y.data[r * n];
        const double* gr = &g.data[r * n];
        double* or_ = &gx.data[r * n];
        double s = 0.0;
        for (int j = 0; j < n; ++j) s += gr[j] * yr[j];
        for (int j = 0; j < n; ++j) or_[j] = yr[j] * (gr[j] - s);
    }
    return gx;
}

// ---- conv2d -----------------------------------------------------------------

// Cross-correlation with bias, kernel 1x1 or 3x3 (same padding for 3x3).
inline Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b) {
    require_dims(x.rank() == 3 && w.rank() == 4 && b.rank() == 1, "conv2d: ranks must be 3/4/1");
    const int C = x.dim(0), H = x.dim(1), W = x.dim(2);
    const int O = w.dim(0), k = w.dim(2);
    require_dims(w.dim(1) == C, "conv2d: channel mismatch");
    require_dims(w.dim(3) == k && (k == 1 || k == 3), "conv2d: kernel must be 1x1 or 3x3");
    require_dims(b.dim(0) == O, "conv2d: bias length mismatch");
    const int r = k / 2;
    Tensor y({O, H, W});
    for (int o = 0; o < O; ++o) {
        for (int yy = 0; yy < H; ++yy)
            for (int xx = 0; xx < W; ++xx) y.at(o, yy, xx) = b[(size_t)o];
        for (int c = 0; c < C; ++c) {
            for (int dy = 0; dy < k; ++dy) {
                for (int dx = 0; dx < k; ++dx) {
                    const double wv = w.at(o, c, dy, dx);
                    if (wv == 0.0) continue;
                    const int oy = dy - r, ox = dx - r;
                    const int y0 = std::max(0, -oy), y1 = std::min(H, H - oy);
                    const int x0 = std::max(0, -ox), x1 = std::min(W, W - ox);
                    for (int yy = y0; yy < y1; ++yy) {
                        const double* xrow = &x.data[((size_t)c * H + (yy + oy)) * W];
                        double* yrow = &y.data[((size_t)o * H + yy) * W];
                        for (int xx = x0; xx < x1; ++xx) yrow[xx] += wv * xrow[xx + ox];
                    }
                }
            }
        }
    }
    return y;
}

struct Conv2dGrads {
    Tensor dx, dw, db;
};

inline Conv2dGrads conv2d_backward(const Tensor& x, const Tensor& w, const Tensor& g) {
    const int C = x.dim(0), H = x.dim(1), W = x.dim(2);
    const int O = w.dim(0), k = w.dim(2);
    require_dims(g.rank() == 3 && g.dim(0) == O && g.dim(1) == H && g.dim(2) == W,
                 "conv2d_backward: cotangent shape mismatch");
    const int r = k / 2;
    Conv2dGrads out{Tensor({C, H, W}), Tensor(w.shape), Tensor(std::vector<int>{O})};
    for (int o = 0; o < O; ++o) {
        double db = 0.0;
        for (int yy = 0; yy < H; ++yy)
            for (int xx = 0; xx < W; ++xx) db += g.at(o, yy, xx);
        out.db[(size_t)o] = db;
        for (int c = 0; c < C; ++c) {
            for (int dy = 0; dy < k; ++dy) {
                for (int dx = 0; dx < k; ++dx) {
                    const int oy = dy - r, ox = dx - r;
                    const int y0 = std::max(0, -oy), y1 = std::min(H, H - oy);
                    const int x0 = std::max(0, -ox), x1 = std::min(W, W - ox);
                    double dw = 0.0;
                    const double wv = w.at(o, c, dy, dx);
                    for (int yy = y0; yy < y1; ++yy) {
                        const double* grow = &g.data[((size_t)o * H + yy) * W];
                        const double* xrow = &x.data[((size_t)c * H + (yy + oy)) * W];
                        double* dxrow = &out.dx.data[((size_t)c * H + (yy + oy)) * W];
                        for (int xx = x0; xx < x1; ++xx) {
                            dw += grow[xx] * xrow[xx + ox];
                            dxrow[xx + ox] += wv * grow[xx];
                        }
                    }
                    out.dw.at(o, c, dy, dx) = dw;
                }
            }
        }
    }
    return out;
}

// ---- resize -----------------------------------------------------------------

// Corner-aligned bilinear interpolation; accepts HxW or CxHxW.
inline Tensor resize_bilinear(const Tensor& x, int oh, int ow) {
    require_dims(oh >= 1 && ow >= 1, "resize_bilinear: output dims must be >= 1");
    const bool chw = x.rank() == 3;
    require_dims(chw || x.rank() == 2, "resize_bilinear: rank-2 or rank-3 tensor required");
    const int C = chw ? x.dim(0) : 1;
    const int H = chw ? x.dim(1) : x.dim(0);
    const int W = chw ? x.dim(2) : x.dim(1);
    Tensor y(chw ? std::vector<int>{C, oh, ow} : std::vector<int>{oh, ow});
    const double sy = oh > 1 ? double(H - 1) / (oh - 1) : 0.0;
    const double sx = ow > 1 ? double(W - 1) / (ow - 1) : 0.0;
    const double cy0 = oh > 1 ? 0.0 : (H - 1) / 2.0;
    const double cx0 = ow > 1 ? 0.0 : (W - 1) / 2.0;
    for (int c = 0; c < C; ++c) {
        const double* src = &x.data[(size_t)c * H * W];
        double* dst = &y.data[(size_t)c * oh * ow];
        for (int i = 0; i < oh; ++i) {
            const double fy = cy0 + sy * i;
            const int y0 = std::min((int)fy, H - 1);
            const int y1 = std::min(y0 + 1, H - 1);
            const double ty = fy - y0;
            for (int j = 0; j < ow; ++j) {
                const double fx = cx0 + sx * j;
                const int x0 = std::min((int)fx, W - 1);
                const int x1 = std::min(x0 + 1, W - 1);
                const double tx = fx - x0;
                const double v0 = src[(size_t)y0 * W + x0] * (1 - tx) + src[(size_t)y0 * W + x1] * tx;
                const double v1 = src[(size_t)y1 * W + x0] * (1 - tx) + src[(size_t)y1 * W + x1] * tx;
                dst[(size_t)i * ow + j] = v0 * (1 - ty) + v1 * ty;
            }
        }
    }
    return y;
}

// ---- activations / resampling for the denoiser ------------------------------

inline double sigmoid(double v) { return 1.0 / (1.0 + std::exp(-v)); }

inline Tensor silu(const Tensor& x) {
    Tensor y = x;
    for (auto& v : y.data) v = v * sigmoid(v);
    return y;
}

inline Tensor silu_backward(const Tensor& x, const Tensor& g) {
    require_dims(x.same_shape(g), "silu_backward: shape mismatch");
    Tensor gx(x.shape);
    for (size_t i = 0; i < x.data.size(); ++i) {
        const double s = sigmoid(x.data[i]);
        gx.data[i] = g.data[i] * (s + x.data[i] * s * (1.0 - s));
    }
    return gx;
}

// 2x average pooling; H and W must be even.
inline Tensor avgpool2(const Tensor& x) {
    require_dims(x.rank() == 3, "avgpool2: CxHxW required");
    const int C = x.dim(0), H = x.dim(1), W = x.dim(2);
    require_dims(H % 2 == 0 && W % 2 == 0, "avgpool2: even spatial dims required");
    Tensor y({C, H / 2, W / 2});
    for (int c = 0; c < C; ++c)
        for (int i = 0; i < H / 2; ++i)
            for (int j = 0; j < W / 2; ++j)
                y.at(c, i, j) = 0.25 * (x.at(c, 2 * i, 2 * j) + x.at(c, 2 * i, 2 * j + 1) +
                                        x.at(c, 2 * i + 1, 2 * j) + x.at(c, 2 * i + 1, 2 * j + 1));
    return y;
}

inline Tensor avgpool2_backward(const Tensor& g) {
    const int C = g.dim(0), h = g.dim(1), w = g.dim(2);
    Tensor dx({C, h * 2, w * 2});
    for (int c = 0; c < C; ++c)
        for (int i = 0; i < h; ++i)
            for (int j = 0; j < w; ++j) {
                const double v = 0.25 * g.at(c, i, j);
                dx.at(c, 2 * i, 2 * j) = v;
                dx.at(c, 2 * i, 2 * j + 1) = v;
                dx.at(c, 2 * i + 1, 2 * j) = v;
                dx.at(c, 2 * i + 1, 2 * j + 1) = v;
            }
    return dx;
}

inline Tensor upsample_nearest2(const Tensor& x) {
    require_dims(x.rank() == 3, "upsample_nearest2: CxHxW required");
    const int C = x.dim(0), H = x.dim(1), W = x.dim(2);
    Tensor y({C, H * 2, W * 2});
    for (int c = 0; c < C; ++c)
        for (int i = 0; i < H * 2; ++i)
            for (int j = 0; j < W * 2; ++j) y.at(c, i, j) = x.at(c, i / 2, j / 2);
    return y;
}

inline Tensor upsample_nearest2_backward(const Tensor& g) {
    const int C = g.dim(0), H2 = g.dim(1), W2 = g.dim(2);
    Tensor dx({C, H2 / 2, W2 / 2});
    for (int c = 0; c < C; ++c)
        for (int i = 0; i < H2; ++i)
            for (int j = 0; j < W2; ++j) dx.at(c, i / 2, j / 2) += g.at(c, i, j);
    return dx;
}

// ---- adjoint pairs -----------------------------------------------------------

// A forward op together with its vector-Jacobian companion. Consumers compose
// adjoints by hand in reverse call order; this struct exists so the pairing is
// a named, testable object (finite-difference consistency in the test suite).
struct AdjointPair {
    std::string name;
    // inputs -> output
    std::function<Tensor(const std::vector<Tensor>&)> forward;
    // (inputs, output cotangent) -> one cotangent per input
    std::function<std::vector<Tensor>(const std::vector<Tensor>&, const Tensor&)> adjoint;
};

inline std::vector<AdjointPair> standard_adjoint_pairs() {
    std::vector<AdjointPair> pairs;
    pairs.push_back({"matmul",
                     [](const std::vector<Tensor>& in) { return matmul(in[0], in[1]); },
                     [](const std::vector<Tensor>& in, const Tensor& g) {
                         auto [da, db] = matmul_backward(in[0], in[1], g);
                         return std::vector<Tensor>{da, db};
                     }});
    pairs.push_back({"softmax_lastdim",
                     [](const std::vector<Tensor>& in) { return softmax_lastdim(in[0]); },
                     [](const std::vector<Tensor>& in, const Tensor& g) {
                         return std::vector<Tensor>{softmax_lastdim_backward(softmax_lastdim(in[0]), g)};
                     }});
    pairs.push_back({"conv2d_k3",
                     [](const std::vector<Tensor>& in) { return conv2d(in[0], in[1], in[2]); },
                     [](const std::vector<Tensor>& in, const Tensor& g) {
                         auto gr = conv2d_backward(in[0], in[1], g);
                         return std::vector<Tensor>{gr.dx, gr.dw, gr.db};
                     }});
    pairs.push_back({"conv2d_k1",
                     [](const std::vector<Tensor>& in) { return conv2d(in[0], in[1], in[2]); },
                     [](const std::vector<Tensor>& in, const Tensor& g) {
                         auto gr = conv2d_backward(in[0], in[1], g);
                         return std::vector<Tensor>{gr.dx, gr.dw, gr.db};
                     }});
    pairs.push_back({"silu",
                     [](const std::vector<Tensor>& in) { return silu(in[0]); },
                     [](const std::vector<Tensor>& in, const Tensor& g) {
                         return std::vector<Tensor>{silu_backward(in[0], g)};
                     }});
    pairs.push_back({"avgpool2",
                     [](const std::vector<Tensor>& in) { return avgpool2(in[0]); },
                     [](const std::vector<Tensor>&, const Tensor& g) {
                         return std::vector<Tensor>{avgpool2_backward(g)};
                     }});
    pairs.push_back({"upsample_nearest2",
                     [](const std::vector<Tensor>& in) { return upsample_nearest2(in[0]); },
                     [](const std::vector<Tensor>&, const Tensor& g) {
                         return std::vector<Tensor>{upsample_nearest2_backward(g)};
                     }});
    return pairs;
}

}  // namespace edgediff
