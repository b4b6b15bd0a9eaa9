#include <doctest.h>

#include "edgediff/control.hpp"
#include "edgediff/diffusion.hpp"

using namespace edgediff;

namespace {

DenoiserConfig toy_cfg() {
    DenoiserConfig cfg;
    cfg.latent = 8;
    cfg.channels = 4;
    cfg.attn_dim = 8;
    cfg.n_classes = 3;
    return cfg;
}

}  // namespace

TEST_CASE("purify: constants vanish, full shrinkage, paper configuration") {
    Tensor c({2, 8, 8}, 1.7);
    HighPassSpec spec;  // d = 16, tau = 0.05 defaults
    CHECK(spec.divisor == 16);
    CHECK(spec.tau == 0.05);
    CHECK(max_abs(purify(c, spec)) <= 1e-9);

    Rng rng(1);
    Tensor x = randn({1, 8, 8}, rng);
    Tensor high = highpass_filter(x, 4);
    HighPassSpec huge{4, max_abs(high) + 1.0};
    CHECK(max_abs(purify(x, huge)) == 0.0);
}

TEST_CASE("gate: empty layout, full-canvas box, background always zero") {
    Rng rng(2);
    Tensor res = randn({3, 8, 8}, rng);

    Layout empty{16, 16, {}};
    CHECK(max_abs(gate(res, empty)) == 0.0);

    Layout full{16, 16, {Instance::hbb(0, 0, 0, 16, 16)}};
    Tensor gated = gate(res, full);
    for (size_t i = 0; i < res.data.size(); ++i) CHECK(gated.data[i] == res.data[i]);

    for (int trial = 0; trial < 50; ++trial) {
        Layout layout{16, 16, {}};
        const int n = 1 + rng.uniform_int(3);
        for (int i = 0; i < n; ++i)
            layout.instances.push_back(Instance::hbb(i, rng.uniform(0, 10), rng.uniform(0, 10),
                                                     rng.uniform(1, 6), rng.uniform(1, 6)));
        Tensor r = randn({2, 8, 8}, rng);
        Tensor g = gate(r, layout);
        const Tensor bg = rasterize(layout, 8, 8).bg;
        for (int c = 0; c < 2; ++c)
            for (size_t p = 0; p < bg.data.size(); ++p)
                if (bg.data[p] == 1.0) CHECK(g.data[(size_t)c * 64 + p] == 0.0);
    }
}

TEST_CASE("control_forward: fresh branch produces exactly zero residuals") {
    Rng rng(3);
    DenoiserConfig cfg = toy_cfg();
    ControlBranch branch = ControlBranch::init(cfg, rng);
    CHECK(branch.zero_convs_are_zero());

    Layout layout{8, 8, {Instance::hbb(0, 1, 1, 5, 4)}};
    Tensor edge({8, 8}, 0.5);
    Tensor z = randn({1, 8, 8}, rng);
    ControlTrace tr = control_forward(branch, edge, z, 3, layout);
    CHECK(max_abs(tr.site0.dh_final) == 0.0);
    CHECK(max_abs(tr.site1.dh_final) == 0.0);
    CHECK(max_abs(tr.site0.dh) == 0.0);

    // base output bit-identical with and without the branch attached
    Denoiser model = Denoiser::init(cfg, rng);
    PromptSpec prompt = PromptSpec::for_classes({0});
    TokenBatch tok = model.assemble_tokens(prompt);
    DenoiserInputs plain;
    DenoiserInputs with_branch;
    with_branch.site0 = &tr.site0.dh_final;
    with_branch.site1 = &tr.site1.dh_final;
    Tensor a = model.forward(z, 3, tok, plain).out;
    Tensor b = model.forward(z, 3, tok, with_branch).out;
    for (size_t i = 0; i < a.data.size(); ++i) CHECK(a.data[i] == b.data[i]);
}

TEST_CASE("control_forward: site shapes, frequency purity, background purity") {
    Rng rng(4);
    DenoiserConfig cfg = toy_cfg();
    ControlBranch branch = ControlBranch::init(cfg, rng);
    // make residuals nonzero
    for (auto& v : branch.zc0_w.data) v = rng.normal();
    for (auto& v : branch.zc1_w.data) v = rng.normal();

    Layout layout{8, 8, {Instance::hbb(0, 0, 2, 4, 4), Instance::hbb(1, 5, 5, 3, 3)}};
    Tensor edge = rand_uniform({8, 8}, rng);
    Tensor z = randn({1, 8, 8}, rng);

    ControlOptions opt;
    opt.train_mode = true;  // tau = 0 path for the mean check
    ControlTrace tr = control_forward(branch, edge, z, 2, layout, opt);
    CHECK(tr.site0.dh_final.dim(1) == 4);
    CHECK(tr.site1.dh_final.dim(1) == 8);

    // per-channel spatial mean of dh_str vanishes at tau = 0 (DC removed)
    for (int c = 0; c < cfg.channels; ++c) {
        double mean = 0.0;
        const int plane = 4 * 4;
        for (int p = 0; p < plane; ++p) mean += tr.site0.dh_str.data[(size_t)c * plane + p];
        CHECK(std::fabs(mean / plane) <= 1e-9);
    }

    // background purity at both sites for any training state
    for (int site = 0; site < 2; ++site) {
        const ControlResidual& r = site == 0 ? tr.site0 : tr.site1;
        const int side = site == 0 ? 4 : 8;
        const Tensor bg = rasterize(layout, side, side).bg;
        for (int c = 0; c < cfg.channels; ++c)
            for (size_t p = 0; p < bg.data.size(); ++p)
                if (bg.data[p] == 1.0) CHECK(r.dh_final.data[(size_t)c * bg.data.size() + p] == 0.0);
    }
}

TEST_CASE("ablation flags: highpass and spatial gate can be disabled independently") {
    Rng rng(5);
    DenoiserConfig cfg = toy_cfg();
    ControlBranch branch = ControlBranch::init(cfg, rng);
    for (auto& v : branch.zc1_w.data) v = rng.normal();
    Layout layout{8, 8, {Instance::hbb(0, 2, 2, 4, 4)}};
    Tensor edge = rand_uniform({8, 8}, rng);
    Tensor z = randn({1, 8, 8}, rng);

    ControlOptions raw{false, false, false};
    ControlTrace tr = control_forward(branch, edge, z, 1, layout, raw);
    for (size_t i = 0; i < tr.site1.dh.data.size(); ++i) CHECK(tr.site1.dh_final.data[i] == tr.site1.dh.data[i]);

    ControlOptions gate_only{true, false, false};
    ControlTrace tg = control_forward(branch, edge, z, 1, layout, gate_only);
    const Tensor bg = rasterize(layout, 8, 8).bg;
    for (int c = 0; c < cfg.channels; ++c)
        for (size_t p = 0; p < bg.data.size(); ++p)
            if (bg.data[p] == 1.0) CHECK(tg.site1.dh_final.data[(size_t)c * 64 + p] == 0.0);
}

TEST_CASE("branch gradients match finite differences through the combined model") {
    Rng rng(6);
    DenoiserConfig cfg = toy_cfg();
    Denoiser model = Denoiser::init(cfg, rng);
    // the base's output head starts at zero; give it weight so gradients
    // reach the injection sites
    for (auto& v : model.conv_out_w.data) v = 0.2 * rng.normal();
    ControlBranch branch = ControlBranch::init(cfg, rng);
    // move zero convs off the origin so every site path is active
    for (auto& v : branch.zc0_w.data) v = 0.3 * rng.normal();
    for (auto& v : branch.zc0_b.data) v = 0.1 * rng.normal();
    for (auto& v : branch.zc1_w.data) v = 0.3 * rng.normal();

    Layout layout{8, 8, {Instance::hbb(0, 1, 1, 5, 5)}};
    Tensor edge = rand_uniform({8, 8}, rng);
    Tensor z = randn({1, 8, 8}, rng);
    Tensor target = randn({1, 8, 8}, rng);
    PromptSpec prompt = PromptSpec::for_classes({0});
    TokenBatch tok = model.assemble_tokens(prompt);
    ControlOptions opt;
    opt.train_mode = true;

    auto loss_of = [&]() {
        ControlTrace tr = control_forward(branch, edge, z, 2, layout, opt);
        DenoiserInputs in;
        in.site0 = &tr.site0.dh_final;
        in.site1 = &tr.site1.dh_final;
        return mse_mean(model.forward(z, 2, tok, in).out, target);
    };

    ControlTrace tr = control_forward(branch, edge, z, 2, layout, opt);
    DenoiserInputs in;
    in.site0 = &tr.site0.dh_final;
    in.site1 = &tr.site1.dh_final;
    DenoiserTrace dt = model.forward(z, 2, tok, in);
    Tensor d_out = sub(dt.out, target);
    for (auto& v : d_out.data) v *= 2.0 / (double)dt.out.numel();
    BackwardRequest req;
    req.d_out = &d_out;
    req.want_site_grads = true;
    BackwardResult back = denoiser_backward(model, dt, tok, req);
    ControlBranch grads = control_backward(branch, tr, back.dsite0, back.dsite1, opt);

    Rng pick(7);
    const double h = 1e-5;
    auto gps = grads.params();
    auto bps = branch.params();
    for (size_t pi = 0; pi < bps.size(); ++pi) {
        Tensor& param = *bps[pi].tensor;
        const Tensor& g = *gps[pi].tensor;
        const size_t idx = (size_t)pick.uniform_int((int)param.data.size());
        const double keep = param.data[idx];
        param.data[idx] = keep + h;
        const double lp = loss_of();
        param.data[idx] = keep - h;
        const double lm = loss_of();
        param.data[idx] = keep;
        const double fd = (lp - lm) / (2.0 * h);
        INFO("param ", bps[pi].name, " idx ", idx, " analytic ", g.data[idx], " fd ", fd);
        CHECK(std::fabs(g.data[idx] - fd) <= 1e-4 * std::max({1.0, std::fabs(fd), std::fabs(g.data[idx])}));
    }
}
