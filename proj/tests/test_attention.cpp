#include <doctest.h>

#include "edgediff/attention.hpp"
#include "edgediff/layout.hpp"

using namespace edgediff;

TEST_CASE("sdpa trivial cases and formula oracle") {
    Rng rng(1);
    // single key: output equals that key's value row
    Tensor q = randn({3, 4}, rng), k1 = randn({1, 4}, rng), v1 = randn({1, 5}, rng);
    SdpaResult r1 = sdpa(q, k1, v1);
    for (int p = 0; p < 3; ++p)
        for (int j = 0; j < 5; ++j) CHECK(r1.output.at(p, j) == v1.at(0, j));

    // mask forcing key 2: output row equals V[2] exactly
    Tensor k = randn({4, 4}, rng), v = randn({4, 5}, rng);
    Tensor mask({3, 4}, kNegInf);
    for (int p = 0; p < 3; ++p) mask.at(p, 2) = 0.0;
    SdpaResult r2 = sdpa(q, k, v, &mask);
    for (int p = 0; p < 3; ++p) {
        CHECK(r2.weights.at(p, 2) == 1.0);
        for (int j = 0; j < 5; ++j) CHECK(r2.output.at(p, j) == v.at(2, j));
    }

    // direct formula oracle, no mask
    Tensor q4 = randn({4, 8}, rng), k4 = randn({4, 8}, rng), v4 = randn({4, 8}, rng);
    SdpaResult r3 = sdpa(q4, k4, v4);
    for (int p = 0; p < 4; ++p) {
        double denom = 0.0;
        std::vector<double> e(4);
        for (int j = 0; j < 4; ++j) {
            double s = 0.0;
            for (int d = 0; d < 8; ++d) s += q4.at(p, d) * k4.at(j, d);
            e[(size_t)j] = std::exp(s / std::sqrt(8.0));
            denom += e[(size_t)j];
        }
        for (int j = 0; j < 8; ++j) {
            double want = 0.0;
            for (int kk = 0; kk < 4; ++kk) want += e[(size_t)kk] / denom * v4.at(kk, j);
            CHECK(std::fabs(r3.output.at(p, j) - want) <= 1e-12);
        }
    }

    Tensor all_blocked({3, 4}, kNegInf);
    CHECK_THROWS_AS(sdpa(q, k, v, &all_blocked), NumericError);
}

TEST_CASE("blocked weights are exactly zero") {
    Rng rng(2);
    for (int trial = 0; trial < 20; ++trial) {
        Tensor q = randn({6, 4}, rng), k = randn({5, 4}, rng), v = randn({5, 3}, rng);
        Tensor mask({6, 5});
        for (auto& m : mask.data)
            if (rng.uniform() < 0.4) m = kNegInf;
        for (int p = 0; p < 6; ++p) mask.at(p, p % 5) = 0.0;  // keep rows open
        SdpaResult r = sdpa(q, k, v, &mask);
        for (size_t i = 0; i < mask.data.size(); ++i)
            if (mask.data[i] == kNegInf) CHECK(r.weights.data[i] == 0.0);
    }
}

TEST_CASE("self mask: same-label pairs open, cross-instance blocked, diagonal open") {
    std::vector<int> label = {-1, 0, 0, 1, -1, 1};
    AttnMask mask = build_self_mask(label);
    mask.validate();
    for (int p = 0; p < 6; ++p) CHECK(mask.m.at(p, p) == 0.0);
    CHECK(mask.m.at(1, 2) == 0.0);   // same instance
    CHECK(mask.m.at(1, 3) == kNegInf);  // instance 0 vs 1
    CHECK(mask.m.at(0, 4) == 0.0);   // background with background
    CHECK(mask.m.at(0, 1) == kNegInf);  // background vs instance

    std::vector<int> empty_layout(4, -1);
    AttnMask open = build_self_mask(empty_layout);
    CHECK(max_abs(open.m) == 0.0);
}

TEST_CASE("cross mask: prefix for background, K_i for instance pixels") {
    std::vector<int> label = {-1, 0, 1, 1};
    TokenMap tokens = TokenMap::for_instances(2, 1);
    AttnMask mask = build_cross_mask(label, tokens);
    mask.validate();
    // background row: prefix only
    CHECK(mask.m.at(0, 0) == 0.0);
    CHECK(mask.m.at(0, 1) == kNegInf);
    CHECK(mask.m.at(0, 2) == kNegInf);
    // instance 0 pixel: prefix + its token
    CHECK(mask.m.at(1, 0) == 0.0);
    CHECK(mask.m.at(1, 1) == 0.0);
    CHECK(mask.m.at(1, 2) == kNegInf);  // token of instance 1 blocked for instance 0 pixels
    // instance 1 pixels
    CHECK(mask.m.at(2, 2) == 0.0);
    CHECK(mask.m.at(2, 1) == kNegInf);

    TokenMap broken = tokens;
    broken.per_instance[1].clear();
    CHECK_THROWS_AS(build_cross_mask(label, broken), UsageError);
}

TEST_CASE("self-mask physically blocks information flow (bit-identical rows)") {
    Rng rng(3);
    for (int trial = 0; trial < 10; ++trial) {
        std::vector<int> label = {0, 0, 1, 1};
        AttnMask mask = build_self_mask(label);
        Tensor q = randn({4, 6}, rng), k = randn({4, 6}, rng), v = randn({4, 3}, rng);
        SdpaResult base = sdpa(q, k, v, &mask.m);
        Tensor v2 = v;
        v2.at(2, 0) += 13.5;  // perturb instance-2 value rows
        v2.at(3, 2) -= 2.25;
        Tensor k2 = k;
        k2.at(2, 1) += 7.0;  // and their keys
        SdpaResult pert = sdpa(q, k2, v2, &mask.m);
        for (int p = 0; p < 2; ++p)
            for (int j = 0; j < 3; ++j) CHECK(base.output.at(p, j) == pert.output.at(p, j));
    }
}

TEST_CASE("aggregate_maps: trivial cases and loop oracle") {
    TokenMap tokens = TokenMap::for_instances(2, 1);
    Rng rng(4);

    // single head, single token: A_i is that softmax column
    Tensor w({1, 4, 3});
    for (auto& v : w.data) v = rng.uniform();
    auto maps = aggregate_maps(w, tokens, 2, 2);
    REQUIRE(maps.size() == 2);
    for (int p = 0; p < 4; ++p) {
        CHECK(maps[0].data[(size_t)p] == w.at(0, p, 1));
        CHECK(maps[1].data[(size_t)p] == w.at(0, p, 2));
    }

    // two identical heads equal one head
    Tensor w2({2, 4, 3});
    for (int p = 0; p < 4; ++p)
        for (int t = 0; t < 3; ++t) {
            w2.at(0, p, t) = w.at(0, p, t);
            w2.at(1, p, t) = w.at(0, p, t);
        }
    auto maps2 = aggregate_maps(w2, tokens, 2, 2);
    for (int i = 0; i < 2; ++i)
        for (size_t p = 0; p < 4; ++p)
            CHECK(maps2[(size_t)i].data[p] == doctest::Approx(maps[(size_t)i].data[p]).epsilon(1e-15));

    // random multi-head vs explicit loops
    Tensor wr = rand_uniform({3, 4, 5}, rng);
    TokenMap tk = TokenMap::for_instances(2, 1);
    tk.num_tokens = 5;
    tk.per_instance[0] = {1, 2};
    tk.per_instance[1] = {3, 4};
    auto mr = aggregate_maps(wr, tk, 2, 2);
    for (int i = 0; i < 2; ++i)
        for (int p = 0; p < 4; ++p) {
            double want = 0.0;
            for (int h = 0; h < 3; ++h)
                for (int t : tk.per_instance[(size_t)i]) want += wr.at(h, p, t);
            want /= 3.0;
            CHECK(std::fabs(mr[(size_t)i].data[(size_t)p] - want) <= 1e-12);
        }
}

TEST_CASE("aggregate_maps is linear and head-permutation equivariant") {
    Rng rng(5);
    TokenMap tk = TokenMap::for_instances(3, 2);
    Tensor a = rand_uniform({2, 9, tk.num_tokens}, rng);
    Tensor b = rand_uniform({2, 9, tk.num_tokens}, rng);
    Tensor sum = add(scale(a, 2.0), b);
    auto ma = aggregate_maps(a, tk, 3, 3);
    auto mb = aggregate_maps(b, tk, 3, 3);
    auto ms = aggregate_maps(sum, tk, 3, 3);
    for (size_t i = 0; i < ma.size(); ++i)
        for (size_t p = 0; p < 9; ++p)
            CHECK(ms[i].data[p] == doctest::Approx(2.0 * ma[i].data[p] + mb[i].data[p]).epsilon(1e-12));

    Tensor swapped({2, 9, tk.num_tokens});
    for (int p = 0; p < 9; ++p)
        for (int t = 0; t < tk.num_tokens; ++t) {
            swapped.at(0, p, t) = a.at(1, p, t);
            swapped.at(1, p, t) = a.at(0, p, t);
        }
    auto msw = aggregate_maps(swapped, tk, 3, 3);
    for (size_t i = 0; i < ma.size(); ++i)
        for (size_t p = 0; p < 9; ++p) CHECK(msw[i].data[p] == doctest::Approx(ma[i].data[p]).epsilon(1e-15));
}

TEST_CASE("aggregate_self_maps matches the label-sum rule") {
    Rng rng(6);
    std::vector<int> label = {0, -1, 1, 1};
    Tensor w = rand_uniform({2, 4, 4}, rng);
    auto maps = aggregate_self_maps(w, label, 2, 2, 2);
    for (int i = 0; i < 2; ++i)
        for (int p = 0; p < 4; ++p) {
            double want = 0.0;
            for (int h = 0; h < 2; ++h)
                for (int q = 0; q < 4; ++q)
                    if (label[(size_t)q] == i) want += w.at(h, p, q);
            want /= 2.0;
            CHECK(std::fabs(maps[(size_t)i].data[(size_t)p] - want) <= 1e-12);
        }
}
