#pragma once

#include <cmath>
#include <vector>

#include "edgediff/tensor.hpp"

namespace testutil {

using edgediff::AdjointPair;
using edgediff::Rng;
using edgediff::Tensor;

// <adjoint(u), v> vs <u, J v> with J v estimated by central differences.
inline double adjoint_fd_relerr(const AdjointPair& pair, std::vector<Tensor> inputs, Rng& rng,
                                double step = 1e-4) {
    const Tensor out = pair.forward(inputs);
    const Tensor u = edgediff::randn(out.shape, rng);
    std::vector<Tensor> dirs;
    for (const auto& in : inputs) dirs.push_back(edgediff::randn(in.shape, rng));

    const auto cotangents = pair.adjoint(inputs, u);
    double lhs = 0.0;
    for (size_t i = 0; i < inputs.size(); ++i) lhs += edgediff::dot(cotangents[i], dirs[i]);

    auto shifted = [&](double sgn) {
        std::vector<Tensor> moved = inputs;
        for (size_t i = 0; i < moved.size(); ++i) edgediff::axpy(moved[i], sgn * step, dirs[i]);
        return pair.forward(moved);
    };
    const Tensor fp = shifted(+1.0), fm = shifted(-1.0);
    double rhs = 0.0;
    for (size_t k = 0; k < u.data.size(); ++k) rhs += u.data[k] * (fp.data[k] - fm.data[k]) / (2.0 * step);

    const double denom = std::max({std::fabs(lhs), std::fabs(rhs), 1e-10});
    return std::fabs(lhs - rhs) / denom;
}

}  // namespace testutil
