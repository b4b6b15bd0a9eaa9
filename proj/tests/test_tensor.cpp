#include <doctest.h>

#include "edgediff/tensor.hpp"
#include "test_util.hpp"

using namespace edgediff;

namespace {

Tensor naive_matmul(const Tensor& a, const Tensor& b) {
    Tensor c({a.dim(0), b.dim(1)});
    for (int i = 0; i < a.dim(0); ++i)
        for (int j = 0; j < b.dim(1); ++j) {
            double s = 0.0;
            for (int k = 0; k < a.dim(1); ++k) s += a.at(i, k) * b.at(k, j);
            c.at(i, j) = s;
        }
    return c;
}

Tensor naive_conv2d(const Tensor& x, const Tensor& w, const Tensor& b) {
    const int C = x.dim(0), H = x.dim(1), W = x.dim(2);
    const int O = w.dim(0), k = w.dim(2), r = k / 2;
    Tensor y({O, H, W});
    for (int o = 0; o < O; ++o)
        for (int yy = 0; yy < H; ++yy)
            for (int xx = 0; xx < W; ++xx) {
                double s = b[(size_t)o];
                for (int c = 0; c < C; ++c)
                    for (int dy = 0; dy < k; ++dy)
                        for (int dx = 0; dx < k; ++dx) {
                            const int sy = yy + dy - r, sx = xx + dx - r;
                            if (sy < 0 || sy >= H || sx < 0 || sx >= W) continue;
                            s += x.at(c, sy, sx) * w.at(o, c, dy, dx);
                        }
                y.at(o, yy, xx) = s;
            }
    return y;
}

}  // namespace

TEST_CASE("matmul identity and hand arithmetic") {
    Tensor eye({3, 3});
    for (int i = 0; i < 3; ++i) eye.at(i, i) = 1.0;
    Rng rng(7);
    Tensor b = randn({3, 4}, rng);
    Tensor r = matmul(eye, b);
    for (size_t i = 0; i < b.data.size(); ++i) CHECK(r.data[i] == b.data[i]);

    Tensor a = Tensor::of({2, 2}, {1, 2, 3, 4});
    Tensor v = Tensor::of({2, 1}, {0, 1});
    Tensor p = matmul(a, v);
    CHECK(p.at(0, 0) == 2.0);
    CHECK(p.at(1, 0) == 4.0);

    CHECK_THROWS_AS(matmul(Tensor({2, 3}), Tensor({2, 3})), DimError);
}

TEST_CASE("matmul and conv2d match naive oracles on random instances") {
    Rng rng(11);
    for (int trial = 0; trial < 20; ++trial) {
        const int m = 1 + rng.uniform_int(8), k = 1 + rng.uniform_int(8), n = 1 + rng.uniform_int(8);
        Tensor a = randn({m, k}, rng), b = randn({k, n}, rng);
        Tensor got = matmul(a, b), want = naive_matmul(a, b);
        for (size_t i = 0; i < got.data.size(); ++i) CHECK(got.data[i] == doctest::Approx(want.data[i]).epsilon(1e-12));
    }
    Tensor a57 = randn({5, 7}, rng), b73 = randn({7, 3}, rng);
    Tensor got = matmul(a57, b73), want = naive_matmul(a57, b73);
    for (size_t i = 0; i < got.data.size(); ++i)
        CHECK(std::fabs(got.data[i] - want.data[i]) <= 1e-12);

    for (int trial = 0; trial < 8; ++trial) {
        const int C = 1 + rng.uniform_int(3), O = 1 + rng.uniform_int(3);
        const int H = 2 + rng.uniform_int(7), W = 2 + rng.uniform_int(7);
        const int k = rng.uniform_int(2) ? 3 : 1;
        Tensor x = randn({C, H, W}, rng), w = randn({O, C, k, k}, rng), b = randn({O}, rng);
        Tensor got2 = conv2d(x, w, b), want2 = naive_conv2d(x, w, b);
        for (size_t i = 0; i < got2.data.size(); ++i)
            CHECK(std::fabs(got2.data[i] - want2.data[i]) <= 1e-12);
    }
}

TEST_CASE("softmax trivial rows, masked entries, formula oracle") {
    Tensor x = Tensor::of({3}, {0, 0, 0});
    Tensor y = softmax_lastdim(x);
    for (double v : y.data) CHECK(v == doctest::Approx(1.0 / 3).epsilon(1e-15));

    Tensor m = Tensor::of({2}, {0, kNegInf});
    Tensor ym = softmax_lastdim(m);
    CHECK(ym[0] == 1.0);
    CHECK(ym[1] == 0.0);  // exactly zero

    Tensor z = Tensor::of({3}, {1, 2, 3});
    Tensor yz = softmax_lastdim(z);
    const double denom = std::exp(1.0) + std::exp(2.0) + std::exp(3.0);
    for (int i = 0; i < 3; ++i) CHECK(std::fabs(yz[(size_t)i] - std::exp(1.0 + i) / denom) <= 1e-12);

    Tensor full = Tensor::of({2}, {kNegInf, kNegInf});
    CHECK_THROWS_AS(softmax_lastdim(full), NumericError);
}

TEST_CASE("softmax rows sum to one and are shift invariant") {
    Rng rng(3);
    for (int trial = 0; trial < 30; ++trial) {
        const int n = 1 + rng.uniform_int(9);
        Tensor x = randn({4, n}, rng);
        Tensor y = softmax_lastdim(x);
        for (int r = 0; r < 4; ++r) {
            double s = 0.0;
            for (int j = 0; j < n; ++j) s += y.at(r, j);
            CHECK(std::fabs(s - 1.0) <= 1e-12);
        }
        const double c = rng.uniform(-5, 5);
        Tensor xs = x;
        for (auto& v : xs.data) v += c;
        Tensor ys = softmax_lastdim(xs);
        for (size_t i = 0; i < y.data.size(); ++i) CHECK(std::fabs(y.data[i] - ys.data[i]) <= 1e-12);
    }
}

TEST_CASE("conv2d trivial cases") {
    Rng rng(5);
    Tensor x = randn({2, 6, 6}, rng);
    Tensor w0({3, 2, 3, 3}), b0({3});
    Tensor y0 = conv2d(x, w0, b0);
    CHECK(max_abs(y0) == 0.0);

    // k=1 identity channel map
    Tensor wi({2, 2, 1, 1}), bi({2});
    wi.at(0, 0, 0, 0) = 1.0;
    wi.at(1, 1, 0, 0) = 1.0;
    Tensor yi = conv2d(x, wi, bi);
    for (size_t i = 0; i < x.data.size(); ++i) CHECK(yi.data[i] == x.data[i]);

    CHECK_THROWS_AS(conv2d(x, Tensor({3, 4, 3, 3}), Tensor({3})), DimError);
}

TEST_CASE("resize_bilinear identity, constants, interpolation values") {
    Rng rng(9);
    Tensor x = randn({3, 5, 7}, rng);
    Tensor same = resize_bilinear(x, 5, 7);
    for (size_t i = 0; i < x.data.size(); ++i) CHECK(same.data[i] == doctest::Approx(x.data[i]).epsilon(1e-15));

    Tensor c({4, 4}, 0.37);
    Tensor cr = resize_bilinear(c, 9, 3);
    for (double v : cr.data) CHECK(v == doctest::Approx(0.37).epsilon(1e-15));

    Tensor ramp = Tensor::of({2, 2}, {0, 1, 0, 1});
    Tensor wide = resize_bilinear(ramp, 2, 4);
    const double expect[4] = {0.0, 1.0 / 3, 2.0 / 3, 1.0};
    for (int r = 0; r < 2; ++r)
        for (int j = 0; j < 4; ++j) CHECK(wide.at(r, j) == doctest::Approx(expect[j]).epsilon(1e-12));
}

TEST_CASE("adjoint pairs pass the finite-difference inner-product check") {
    Rng rng(2024);
    for (const auto& pair : standard_adjoint_pairs()) {
        for (int trial = 0; trial < 5; ++trial) {
            std::vector<Tensor> inputs;
            if (pair.name == "matmul") {
                inputs = {randn({4, 3}, rng), randn({3, 5}, rng)};
            } else if (pair.name == "softmax_lastdim") {
                inputs = {randn({3, 6}, rng)};
            } else if (pair.name == "conv2d_k3") {
                inputs = {randn({2, 6, 6}, rng), randn({3, 2, 3, 3}, rng), randn({3}, rng)};
            } else if (pair.name == "conv2d_k1") {
                inputs = {randn({2, 6, 6}, rng), randn({3, 2, 1, 1}, rng), randn({3}, rng)};
            } else if (pair.name == "silu") {
                inputs = {randn({2, 4, 4}, rng)};
            } else if (pair.name == "avgpool2" || pair.name == "upsample_nearest2") {
                inputs = {randn({2, 6, 6}, rng)};
            } else {
                FAIL("unhandled adjoint pair ", pair.name);
            }
            const double err = testutil::adjoint_fd_relerr(pair, inputs, rng);
            INFO("pair ", pair.name, " trial ", trial);
            CHECK(err <= 1e-3);
        }
    }
}
