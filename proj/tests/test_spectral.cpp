#include <doctest.h>

#include <complex>

#include "edgediff/spectral.hpp"
#include "test_util.hpp"

using namespace edgediff;

namespace {

// O(N^2) double-sum reference DFT.
Spectrum naive_dft2(const Tensor& x) {
    const int H = x.dim(0), W = x.dim(1);
    Spectrum s;
    s.h = H;
    s.w = W;
    s.re.assign((size_t)H * W, 0.0);
    s.im.assign((size_t)H * W, 0.0);
    for (int u = 0; u < H; ++u)
        for (int v = 0; v < W; ++v) {
            std::complex<double> acc{0.0, 0.0};
            for (int y = 0; y < H; ++y)
                for (int xx = 0; xx < W; ++xx) {
                    const double ang = -2.0 * M_PI * (double(u) * y / H + double(v) * xx / W);
                    acc += x.at(y, xx) * std::complex<double>(std::cos(ang), std::sin(ang));
                }
            s.re[s.idx(u, v)] = acc.real();
            s.im[s.idx(u, v)] = acc.imag();
        }
    return s;
}

}  // namespace

TEST_CASE("dft2 forward: DC, impulse, naive oracle") {
    Tensor c({4, 6}, 2.5);
    Spectrum sc = dft2_forward(c);
    CHECK(sc.re[0] == doctest::Approx(2.5 * 24).epsilon(1e-12));
    for (int u = 0; u < 4; ++u)
        for (int v = 0; v < 6; ++v) {
            if (u == 0 && v == 0) continue;
            CHECK(std::fabs(sc.re[sc.idx(u, v)]) <= 1e-9);
            CHECK(std::fabs(sc.im[sc.idx(u, v)]) <= 1e-9);
        }

    Tensor imp({5, 5});
    imp.at(0, 0) = 1.0;
    Spectrum si = dft2_forward(imp);
    for (size_t i = 0; i < si.re.size(); ++i) {
        CHECK(std::fabs(si.re[i] - 1.0) <= 1e-9);
        CHECK(std::fabs(si.im[i]) <= 1e-9);
    }

    Rng rng(13);
    Tensor x = randn({8, 8}, rng);
    Spectrum got = dft2_forward(x), want = naive_dft2(x);
    for (size_t i = 0; i < got.re.size(); ++i) {
        CHECK(std::fabs(got.re[i] - want.re[i]) <= 1e-9);
        CHECK(std::fabs(got.im[i] - want.im[i]) <= 1e-9);
    }
}

TEST_CASE("dft2 round trip up to 64x64") {
    Rng rng(17);
    for (int side : {5, 16, 32, 64}) {
        Tensor x = randn({side, side}, rng);
        Tensor back = dft2_inverse_real(dft2_forward(x), 1e-6);
        double worst = 0.0;
        for (size_t i = 0; i < x.data.size(); ++i) worst = std::max(worst, std::fabs(back.data[i] - x.data[i]));
        CHECK(worst <= 1e-9);
    }
}

TEST_CASE("highpass_mask: counts, DC, conjugate symmetry") {
    Tensor m = highpass_mask(32, 32, 16);
    int zeros = 0;
    for (double v : m.data) zeros += v == 0.0 ? 1 : 0;
    CHECK(zeros == 9);
    CHECK(m.at(0, 0) == 0.0);

    Tensor big = highpass_mask(8, 8, 64);
    CHECK(big.at(0, 0) == 0.0);  // DC always inside the band

    Rng rng(21);
    for (int trial = 0; trial < 10; ++trial) {
        const int H = 2 + rng.uniform_int(16), W = 2 + rng.uniform_int(16);
        const int d = 1 + rng.uniform_int(20);
        Tensor mm = highpass_mask(H, W, d);
        for (int u = 0; u < H; ++u)
            for (int v = 0; v < W; ++v)
                CHECK(mm.at(u, v) == mm.at((H - u) % H, (W - v) % W));
    }
}

TEST_CASE("freq_gate: constants vanish, shrinkage spot values, tau=0 linearity") {
    HighPassSpec spec{16, 0.05};
    Tensor c({2, 16, 16}, 3.0);
    Tensor out = freq_gate(c, spec);
    CHECK(max_abs(out) <= 1e-9);

    // soft-threshold spot values from the shrinkage rule at tau = 0.05
    Tensor vals = Tensor::of({2}, {0.03, -0.10});
    Tensor shr = soft_threshold(vals, 0.05);
    CHECK(shr[0] == 0.0);
    CHECK(shr[1] == doctest::Approx(-0.05).epsilon(1e-15));

    Rng rng(31);
    Tensor x = randn({1, 16, 16}, rng);
    HighPassSpec tau0{16, 0.0};
    Tensor hp = freq_gate(x, tau0);
    Tensor hp_direct = highpass_filter(x, 16);
    for (size_t i = 0; i < hp.data.size(); ++i) CHECK(hp.data[i] == doctest::Approx(hp_direct.data[i]).epsilon(1e-12));

    // complementary low band reconstructs the input
    Tensor mask = highpass_mask(16, 16, 16);
    Spectrum sp = dft2_forward(Tensor::of({16, 16}, std::vector<double>(x.data.begin(), x.data.end())));
    for (size_t i = 0; i < sp.re.size(); ++i) {
        sp.re[i] *= (1.0 - mask.data[i]);
        sp.im[i] *= (1.0 - mask.data[i]);
    }
    Tensor low = dft2_inverse_real(sp);
    for (size_t i = 0; i < low.data.size(); ++i)
        CHECK(std::fabs(hp.data[i] + low.data[i] - x.data[i]) <= 1e-9);

    // linearity of the tau=0 path
    Tensor scaled = freq_gate(scale(x, 3.7), tau0);
    for (size_t i = 0; i < scaled.data.size(); ++i)
        CHECK(std::fabs(scaled.data[i] - 3.7 * hp.data[i]) <= 1e-9);
}

TEST_CASE("freq_gate: zero channel mean at tau=0 and shrinkage bound") {
    Rng rng(37);
    Tensor x = randn({3, 12, 12}, rng);
    HighPassSpec tau0{8, 0.0};
    Tensor hp = freq_gate(x, tau0);
    for (int c = 0; c < 3; ++c) {
        double mean = 0.0;
        for (int p = 0; p < 144; ++p) mean += hp.data[(size_t)c * 144 + p];
        CHECK(std::fabs(mean / 144.0) <= 1e-9);
    }

    HighPassSpec spec{8, 0.05};
    Tensor gated = freq_gate(x, spec);
    Tensor high = highpass_filter(x, 8);
    CHECK(max_abs(gated) <= max_abs(high));
    for (size_t i = 0; i < gated.data.size(); ++i) {
        const double want = std::max(std::fabs(high.data[i]) - 0.05, 0.0);
        CHECK(std::fabs(gated.data[i]) == doctest::Approx(want).epsilon(1e-12));
    }
}

TEST_CASE("freq_gate adjoint consistency at tau=0") {
    Rng rng(41);
    const auto pair = freq_gate_adjoint_pair(HighPassSpec{4, 0.0});
    for (int trial = 0; trial < 3; ++trial) {
        const double err = testutil::adjoint_fd_relerr(pair, {randn({2, 8, 8}, rng)}, rng);
        CHECK(err <= 1e-3);
    }
}

TEST_CASE("freq_gate rejects asymmetric spectra via the imaginary residue guard") {
    Spectrum sp;
    sp.h = 4;
    sp.w = 4;
    sp.re.assign(16, 0.0);
    sp.im.assign(16, 0.0);
    sp.re[sp.idx(1, 0)] = 1.0;  // no conjugate partner
    sp.im[sp.idx(1, 0)] = 2.0;
    CHECK_THROWS_AS(dft2_inverse_real(sp, 1e-6), NumericError);
}
