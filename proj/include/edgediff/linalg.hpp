#pragma once

#include <cmath>
#include <vector>

#include "edgediff/tensor.hpp"

namespace edgediff {

struct SymEig {
    std::vector<double> values;
    Tensor vectors;  // columns are eigenvectors
};

// Cyclic Jacobi for symmetric matrices; plenty for the 24x24 feature
// covariances used here.
inline SymEig sym_eig(const Tensor& m) {
    require_dims(m.rank() == 2 && m.dim(0) == m.dim(1), "sym_eig: square matrix required");
    const int n = m.dim(0);
    Tensor a = m;
    // enforce symmetry
    for (int i = 0; i < n; ++i)
        for (int j = i + 1; j < n; ++j) {
            const double v = 0.5 * (a.at(i, j) + a.at(j, i));
            a.at(i, j) = v;
            a.at(j, i) = v;
        }
    Tensor v({n, n});
    for (int i = 0; i < n; ++i) v.at(i, i) = 1.0;

    double norm = 0.0;
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) norm += a.at(i, j) * a.at(i, j);
    const double tol = 1e-28 * std::max(norm, 1e-300);

    for (int sweep = 0; sweep < 100; ++sweep) {
        double off = 0.0;
        for (int i = 0; i < n; ++i)
            for (int j = i + 1; j < n; ++j) off += 2.0 * a.at(i, j) * a.at(i, j);
        if (off <= tol) break;
        for (int p = 0; p < n - 1; ++p) {
            for (int q = p + 1; q < n; ++q) {
                const double apq = a.at(p, q);
                if (apq == 0.0) continue;
                const double tau = (a.at(q, q) - a.at(p, p)) / (2.0 * apq);
                const double t = (tau >= 0.0 ? 1.0 : -1.0) / (std::fabs(tau) + std::sqrt(1.0 + tau * tau));
                const double c = 1.0 / std::sqrt(1.0 + t * t);
                const double s = t * c;
                for (int k = 0; k < n; ++k) {
                    const double akp = a.at(k, p), akq = a.at(k, q);
                    a.at(k, p) = c * akp - s * akq;
                    a.at(k, q) = s * akp + c * akq;
                }
                for (int k = 0; k < n; ++k) {
                    const double apk = a.at(p, k), aqk = a.at(q, k);
                    a.at(p, k) = c * apk - s * aqk;
                    a.at(q, k) = s * apk + c * aqk;
                }
                for (int k = 0; k < n; ++k) {
                    const double vkp = v.at(k, p), vkq = v.at(k, q);
                    v.at(k, p) = c * vkp - s * vkq;
                    v.at(k, q) = s * vkp + c * vkq;
                }
            }
        }
    }
    SymEig out;
    out.values.resize((size_t)n);
    for (int i = 0; i < n; ++i) out.values[(size_t)i] = a.at(i, i);
    out.vectors = std::move(v);
    return out;
}

// Symmetric PSD square root via eigendecomposition; negative eigenvalues are
// clamped to 0.
inline Tensor sqrt_psd(const Tensor& m) {
    const SymEig eig = sym_eig(m);
    const int n = m.dim(0);
    Tensor out({n, n});
    for (int k = 0; k < n; ++k) {
        const double lam = eig.values[(size_t)k];
        const double r = lam > 0.0 ? std::sqrt(lam) : 0.0;
        if (r == 0.0) continue;
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < n; ++j) out.at(i, j) += r * eig.vectors.at(i, k) * eig.vectors.at(j, k);
    }
    return out;
}

inline double trace(const Tensor& m) {
    double s = 0.0;
    for (int i = 0; i < m.dim(0); ++i) s += m.at(i, i);
    return s;
}

}  // namespace edgediff
