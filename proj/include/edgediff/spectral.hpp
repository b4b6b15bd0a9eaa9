#pragma once

#include <cmath>
#include <map>
#include <vector>

#include "edgediff/tensor.hpp"

namespace edgediff {

// 2-D DFT of an HxW real plane, stored as separate re/im planes.
struct Spectrum {
    int h = 0, w = 0;
    std::vector<double> re, im;

    size_t idx(int u, int v) const { return (size_t)u * w + v; }
};

// High-pass configuration: band divisor d and soft threshold tau.
struct HighPassSpec {
    int divisor = 16;
    double tau = 0.05;
};

namespace spectral_detail {

struct Twiddle {
    std::vector<double> c, s;  // cos/sin(2*pi*j*k/N), N*N entries
};

inline const Twiddle& twiddle(int n) {
    static std::map<int, Twiddle> cache;
    auto it = cache.find(n);
    if (it != cache.end()) return it->second;
    Twiddle t;
    t.c.resize((size_t)n * n);
    t.s.resize((size_t)n * n);
    for (int j = 0; j < n; ++j)
        for (int k = 0; k < n; ++k) {
            const double a = 2.0 * M_PI * double((long long)j * k % n) / n;
            t.c[(size_t)j * n + k] = std::cos(a);
            t.s[(size_t)j * n + k] = std::sin(a);
        }
    return cache.emplace(n, std::move(t)).first->second;
}

// One naive DFT pass along the last axis of an h-by-w complex array.
// sign = -1 forward, +1 inverse (unscaled).
inline void dft_lastaxis(int h, int w, const std::vector<double>& re, const std::vector<double>& im,
                         std::vector<double>& ore, std::vector<double>& oim, int sign) {
    const Twiddle& tw = twiddle(w);
    ore.assign((size_t)h * w, 0.0);
    oim.assign((size_t)h * w, 0.0);
    for (int r = 0; r < h; ++r) {
        const double* xr = &re[(size_t)r * w];
        const double* xi = &im[(size_t)r * w];
        double* yr = &ore[(size_t)r * w];
        double* yi = &oim[(size_t)r * w];
        for (int k = 0; k < w; ++k) {
            const double* cs = &tw.c[(size_t)k * w];
            const double* sn = &tw.s[(size_t)k * w];
            double sr = 0.0, si = 0.0;
            for (int j = 0; j < w; ++j) {
                const double c = cs[j], s = sign * sn[j];
                sr += xr[j] * c - xi[j] * s;
                si += xr[j] * s + xi[j] * c;
            }
            yr[k] = sr;
            yi[k] = si;
        }
    }
}

inline void transpose_cplx(int h, int w, std::vector<double>& re, std::vector<double>& im) {
    std::vector<double> tr((size_t)h * w), ti((size_t)h * w);
    for (int r = 0; r < h; ++r)
        for (int c = 0; c < w; ++c) {
            tr[(size_t)c * h + r] = re[(size_t)r * w + c];
            ti[(size_t)c * h + r] = im[(size_t)r * w + c];
        }
    re.swap(tr);
    im.swap(ti);
}

inline void dft2(int h, int w, std::vector<double>& re, std::vector<double>& im, int sign) {
    std::vector<double> tre, tim;
    dft_lastaxis(h, w, re, im, tre, tim, sign);       // along x
    transpose_cplx(h, w, tre, tim);                   // now w x h
    dft_lastaxis(w, h, tre, tim, re, im, sign);       // along y
    transpose_cplx(w, h, re, im);                     // back to h x w
}

}  // namespace spectral_detail

// Unnormalized forward DFT (normalization lives on the inverse).
inline Spectrum dft2_forward(const Tensor& x) {
    require_dims(x.rank() == 2, "dft2_forward: HxW tensor required");
    Spectrum s;
    s.h = x.dim(0);
    s.w = x.dim(1);
    s.re = x.data;
    s.im.assign(s.re.size(), 0.0);
    spectral_detail::dft2(s.h, s.w, s.re, s.im, -1);
    return s;
}

inline Spectrum dft2_inverse_full(const Spectrum& sp) {
    Spectrum s = sp;
    spectral_detail::dft2(s.h, s.w, s.re, s.im, +1);
    const double inv = 1.0 / ((double)s.h * s.w);
    for (auto& v : s.re) v *= inv;
    for (auto& v : s.im) v *= inv;
    return s;
}

// Inverse transform of a spectrum that should represent a real signal; the
// imaginary residue is an internal-consistency check (mask symmetry).
inline Tensor dft2_inverse_real(const Spectrum& sp, double max_imag = 1e-6) {
    Spectrum s = dft2_inverse_full(sp);
    double worst = 0.0;
    for (double v : s.im) worst = std::max(worst, std::fabs(v));
    if (worst > max_imag)
        throw NumericError("dft2_inverse_real: imaginary residue " + std::to_string(worst) +
                           " exceeds tolerance (mask symmetry violated?)");
    Tensor t({s.h, s.w});
    t.data = std::move(s.re);
    return t;
}

// Binary mask that zeroes the centered low band: bin (u,v) is 0 iff
// |f_y| <= floor(H/(2d)) and |f_x| <= floor(W/(2d)) with wrapped frequencies
// f in (-N/2, N/2]. Symmetric in +/-f so masked spectra of real signals stay
// conjugate-symmetric.
inline Tensor highpass_mask(int H, int W, int d) {
    require_dims(H >= 1 && W >= 1, "highpass_mask: dims must be >= 1");
    require_dims(d >= 1, "highpass_mask: divisor must be >= 1");
    const int by = H / (2 * d);
    const int bx = W / (2 * d);
    Tensor m({H, W}, 1.0);
    for (int u = 0; u < H; ++u) {
        const int fy = u <= H / 2 ? u : u - H;
        if (std::abs(fy) > by) continue;
        for (int v = 0; v < W; ++v) {
            const int fx = v <= W / 2 ? v : v - W;
            if (std::abs(fx) <= bx) m.at(u, v) = 0.0;
        }
    }
    return m;
}

// Pure high-pass (tau = 0) path; linear and self-adjoint, also used by the
// training gradient. Accepts HxW or CxHxW.
inline Tensor highpass_filter(const Tensor& x, int d) {
    const bool chw = x.rank() == 3;
    require_dims(chw || x.rank() == 2, "highpass_filter: rank-2 or rank-3 tensor required");
    const int C = chw ? x.dim(0) : 1;
    const int H = chw ? x.dim(1) : x.dim(0);
    const int W = chw ? x.dim(2) : x.dim(1);
    const Tensor mask = highpass_mask(H, W, d);
    Tensor out(x.shape);
    for (int c = 0; c < C; ++c) {
        Tensor plane({H, W});
        std::copy(x.data.begin() + (size_t)c * H * W, x.data.begin() + (size_t)(c + 1) * H * W,
                  plane.data.begin());
        Spectrum sp = dft2_forward(plane);
        for (size_t i = 0; i < sp.re.size(); ++i) {
            sp.re[i] *= mask.data[i];
            sp.im[i] *= mask.data[i];
        }
        Tensor back = dft2_inverse_real(sp);
        std::copy(back.data.begin(), back.data.end(), out.data.begin() + (size_t)c * H * W);
    }
    return out;
}

inline Tensor soft_threshold(const Tensor& x, double tau) {
    require_dims(tau >= 0.0, "soft_threshold: tau must be >= 0");
    Tensor y = x;
    for (auto& v : y.data) {
        const double m = std::fabs(v) - tau;
        v = m > 0.0 ? (v > 0.0 ? m : -m) : 0.0;
    }
    return y;
}

// Frequency-gated purification: per channel, high-pass the plane in the
// frequency domain, then shrink small magnitudes.
inline Tensor freq_gate(const Tensor& x, const HighPassSpec& spec) {
    return soft_threshold(highpass_filter(x, spec.divisor), spec.tau);
}

// Subgradient adjoint: shrinkage passes gradient only where |high| > tau; the
// high-pass projection is self-adjoint (real symmetric circulant).
inline Tensor freq_gate_backward(const Tensor& x, const HighPassSpec& spec, const Tensor& g) {
    require_dims(x.same_shape(g), "freq_gate_backward: shape mismatch");
    const Tensor high = highpass_filter(x, spec.divisor);
    Tensor gated = g;
    for (size_t i = 0; i < gated.data.size(); ++i)
        if (std::fabs(high.data[i]) <= spec.tau) gated.data[i] = 0.0;
    return highpass_filter(gated, spec.divisor);
}

inline AdjointPair freq_gate_adjoint_pair(const HighPassSpec& spec) {
    return {"freq_gate",
            [spec](const std::vector<Tensor>& in) { return freq_gate(in[0], spec); },
            [spec](const std::vector<Tensor>& in, const Tensor& g) {
                return std::vector<Tensor>{freq_gate_backward(in[0], spec, g)};
            }};
}

}  // namespace edgediff
