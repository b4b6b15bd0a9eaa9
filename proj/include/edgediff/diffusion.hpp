#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "edgediff/control.hpp"
#include "edgediff/denoiser.hpp"
#include "edgediff/guidance.hpp"
#include "edgediff/layout.hpp"
#include "edgediff/rng.hpp"

namespace edgediff {

// Variance-preserving schedule, alpha_t^2 + sigma_t^2 = 1, alpha_0 = 1 and
// alpha_T near (not exactly) zero so the reverse update stays well defined.
struct NoiseSchedule {
    int T = 20;
    std::vector<double> alpha, sigma;

    // squash < 1 keeps alpha_T strictly positive: terminal inversion
    // 1/alpha_T in the reverse update stays bounded.
    static NoiseSchedule cosine(int steps, double squash = 0.9) {
        require_dims(steps >= 1, "schedule: steps must be >= 1");
        require_dims(squash > 0.0 && squash < 1.0, "schedule: squash in (0,1)");
        NoiseSchedule s;
        s.T = steps;
        s.alpha.resize((size_t)steps + 1);
        s.sigma.resize((size_t)steps + 1);
        for (int t = 0; t <= steps; ++t) {
            const double theta = 0.5 * M_PI * (double(t) / steps) * squash;
            s.alpha[(size_t)t] = std::cos(theta);
            s.sigma[(size_t)t] = std::sin(theta);
        }
        s.alpha[0] = 1.0;
        s.sigma[0] = 0.0;
        return s;
    }
};

inline Tensor add_noise(const Tensor& z0, int t, const Tensor& eps, const NoiseSchedule& s) {
    require_dims(t >= 0 && t <= s.T, "add_noise: t out of range");
    require_dims(z0.same_shape(eps), "add_noise: shape mismatch");
    Tensor z = scale(z0, s.alpha[(size_t)t]);
    axpy(z, s.sigma[(size_t)t], eps);
    return z;
}

inline double mse_mean(const Tensor& pred, const Tensor& target) {
    require_dims(pred.same_shape(target), "mse: shape mismatch");
    double s = 0.0;
    for (size_t i = 0; i < pred.data.size(); ++i) {
        const double d = pred.data[i] - target.data[i];
        s += d * d;
    }
    return s / (double)pred.numel();
}

struct TrainSample {
    Tensor z0;                // 1xHxW, latent scale
    Layout layout;
    std::vector<int> classes; // prompt classes in instance order
    Tensor edge;              // HxW in [0,1]; empty when unused
};

struct TrainOptions {
    double token_dropout = 0.1;
    bool train_branch = false;  // base frozen, only the branch learns
    // Layout conditioning: train under region-masked attention built from the
    // sample's ground-truth layout. This is what makes the base a
    // layout-to-image model rather than an unconditional one.
    bool masked_attention = true;
    ControlOptions control{true, true, true};
};

// One SGD step on the noise-prediction MSE (Eq.-1-style objective). Returns
// the batch loss. When train_branch is set the base stays frozen and
// gradients flow through the injection sites into the branch.
inline double train_step(Denoiser& model, ControlBranch* branch, const std::vector<TrainSample>& batch,
                         const NoiseSchedule& sched, double lr, Rng& rng, const TrainOptions& opt = {}) {
    require_dims(!batch.empty(), "train_step: empty batch");
    if (opt.train_branch && !branch) throw UsageError("train_step: branch training without a branch");
    Denoiser gacc = Denoiser::zeros(model.cfg);
    ControlBranch bacc = branch ? ControlBranch::zeros(branch->cfg, branch->spec) : ControlBranch();
    ControlOptions copt = opt.control;
    copt.train_mode = true;

    double loss_sum = 0.0;
    const double inv_batch = 1.0 / (double)batch.size();
    for (const auto& sample : batch) {
        const int t = 1 + rng.uniform_int(sched.T);
        Tensor eps = randn(sample.z0.shape, rng);
        const Tensor z_t = add_noise(sample.z0, t, eps, sched);

        PromptSpec prompt = PromptSpec::for_classes(sample.classes);
        for (size_t i = 0; i < sample.classes.size(); ++i)
            if (rng.uniform() < opt.token_dropout) prompt.vocab_rows[i + 1] = 1;  // null token
        const TokenBatch tok = model.assemble_tokens(prompt);

        ControlTrace ctr;
        DenoiserInputs inputs;
        AttnMask self_mask, cross_mask;
        if (opt.masked_attention && !sample.layout.instances.empty()) {
            const int side = model.cfg.attn_side();
            const MaskSet masks = rasterize(sample.layout, side, side);
            self_mask = build_self_mask(masks.label);
            cross_mask = build_cross_mask(masks.label, prompt.tokens);
            inputs.self_mask = &self_mask.m;
            inputs.cross_mask = &cross_mask.m;
        }
        if (branch) {
            ctr = control_forward(*branch, sample.edge, z_t, t, sample.layout, copt);
            inputs.site0 = &ctr.site0.dh_final;
            inputs.site1 = &ctr.site1.dh_final;
        }
        const DenoiserTrace tr = model.forward(z_t, t, tok, inputs);
        const double loss = mse_mean(tr.out, eps);
        if (!std::isfinite(loss)) throw NumericError("train_step: non-finite loss");
        loss_sum += loss;

        Tensor d_out = sub(tr.out, eps);
        for (auto& v : d_out.data) v *= 2.0 * inv_batch / (double)tr.out.numel();

        BackwardRequest req;
        req.d_out = &d_out;
        req.want_param_grads = !opt.train_branch;
        req.want_site_grads = branch != nullptr && opt.train_branch;
        BackwardResult back = denoiser_backward(model, tr, tok, req);
        if (req.want_param_grads) {
            auto gs = gacc.params();
            auto bs = back.grads.params();
            for (size_t i = 0; i < gs.size(); ++i) axpy(*gs[i].tensor, 1.0, *bs[i].tensor);
        }
        if (req.want_site_grads) {
            ControlBranch bg = control_backward(*branch, ctr, back.dsite0, back.dsite1, copt);
            auto gs = bacc.params();
            auto bs = bg.params();
            for (size_t i = 0; i < gs.size(); ++i) axpy(*gs[i].tensor, 1.0, *bs[i].tensor);
        }
    }

    if (lr != 0.0) {
        if (opt.train_branch && branch) {
            auto ps = branch->params();
            auto gs = bacc.params();
            for (size_t i = 0; i < ps.size(); ++i) axpy(*ps[i].tensor, -lr, *gs[i].tensor);
        } else {
            auto ps = model.params();
            auto gs = gacc.params();
            for (size_t i = 0; i < ps.size(); ++i) axpy(*ps[i].tensor, -lr, *gs[i].tensor);
        }
    }
    return loss_sum * inv_batch;
}

struct SamplerConfig {
    int steps = 20;
    double guided_frac = 0.3;
    bool guidance = true;
    bool masked_attention = true;
    double strength = 0.6;  // img2img noising fraction
    uint64_t seed = 0;
    // Seeded per-step noise keeps the reverse states on the training
    // distribution; still bit-reproducible. Off = plain DDIM.
    bool ancestral = true;
    GuidanceSchedule guidance_sched;     // lambda endpoints, layer toggles
    ControlOptions control{true, true, false};
};

namespace sampler_detail {

// Shared reverse loop: from z at t_start down to 0. Deterministic unless
// ancestral noise is requested.
inline Tensor run_reverse(const Denoiser& model, Tensor z, int t_start, const Layout& layout,
                          const SamplerConfig& cfg, const ControlBranch* branch, const Tensor* edge,
                          Rng& rng) {
    const NoiseSchedule sched = NoiseSchedule::cosine(cfg.steps);
    require_dims(t_start >= 0 && t_start <= sched.T, "sampler: t_start out of range");
    std::vector<int> classes;
    for (const auto& inst : layout.instances) classes.push_back(inst.class_id);
    const PromptSpec prompt = PromptSpec::for_classes(classes);
    const TokenBatch tok = model.assemble_tokens(prompt);

    GuidanceSchedule gsched = cfg.guidance_sched;
    gsched.guided_steps =
        (cfg.guidance && !layout.instances.empty()) ? (int)std::ceil(cfg.guided_frac * t_start) : 0;

    AttnMask self_mask, cross_mask;
    bool have_masks = false;
    if (cfg.masked_attention && !layout.instances.empty()) {
        const int side = model.cfg.attn_side();
        const MaskSet masks = rasterize(layout, side, side);
        self_mask = build_self_mask(masks.label);
        cross_mask = build_cross_mask(masks.label, prompt.tokens);
        have_masks = true;
    }

    ControlOptions copt = cfg.control;
    copt.train_mode = false;

    for (int t = t_start; t >= 1; --t) {
        const int step_index = t_start - t;
        if (step_index < gsched.guided_steps) {
            // The region-loss gradient reads unmasked attention maps (hard
            // masks would zero the background leakage it penalizes); the
            // denoising forward below stays conditioned.
            for (int j = 0; j < std::max(1, gsched.grad_updates); ++j)
                z = guidance_step(model, z, t, layout, prompt, gsched, step_index);
        }

        DenoiserInputs inputs;
        if (have_masks) {
            inputs.self_mask = &self_mask.m;
            inputs.cross_mask = &cross_mask.m;
        }
        ControlTrace ctr;
        if (branch) {
            const Tensor zero_edge({model.cfg.latent, model.cfg.latent});
            ctr = control_forward(*branch, edge ? *edge : zero_edge, z, t, layout, copt);
            inputs.site0 = &ctr.site0.dh_final;
            inputs.site1 = &ctr.site1.dh_final;
        }
        const DenoiserTrace tr = model.forward(z, t, tok, inputs);
        const double at = sched.alpha[(size_t)t], st = sched.sigma[(size_t)t];
        const double ap = sched.alpha[(size_t)t - 1], sp = sched.sigma[(size_t)t - 1];
        // z0_hat = (z_t - sigma_t eps_hat)/alpha_t, clamped to the data range:
        // 1/alpha_t amplifies prediction error ~6x at t = T and unclamped
        // trajectories drift off the training manifold. The noise direction is
        // recomputed from the clamped estimate, which reduces to eps_hat
        // exactly whenever the clamp does not bind.
        Tensor z0_hat = z;
        axpy(z0_hat, -st, tr.out);
        for (auto& v : z0_hat.data) v = std::clamp(v / at, -1.5, 1.5);
        Tensor next = scale(z0_hat, ap);
        if (cfg.ancestral && t > 1) {
            Tensor noise = randn(z.shape, rng);
            axpy(next, sp, noise);
        } else if (st > 0.0) {
            Tensor eps_dir = z;
            axpy(eps_dir, -at, z0_hat);
            axpy(next, sp / st, eps_dir);
        }
        z = std::move(next);
    }
    return z;
}

inline Tensor latent_to_image(const Tensor& z) {
    Tensor img = z;
    for (auto& v : img.data) v = std::clamp(0.5 * (v + 1.0), 0.0, 1.0);
    return img;
}

}  // namespace sampler_detail

// Layout-to-image sampling: seeded Gaussian start, latent guidance over the
// early phase, region-masked attention over the rest, optional control-branch
// residual injection at every step. Returns a 1xHxW image in [0,1].
inline Tensor sample(const Denoiser& model, const Layout& layout, const SamplerConfig& cfg,
                     const ControlBranch* branch = nullptr, const Tensor* edge = nullptr) {
    Rng rng(mix_seed(cfg.seed, 0x5eedULL));
    Tensor z = randn({1, model.cfg.latent, model.cfg.latent}, rng);
    z = sampler_detail::run_reverse(model, std::move(z), cfg.steps, layout, cfg, branch, edge, rng);
    return sampler_detail::latent_to_image(z);
}

// Image-to-image: noise the init to t_start = ceil(s*T) and run the reverse
// loop with the region-attention interventions enabled. s = 0 returns the
// init; s = 1 is exactly a fresh sample (full noising).
inline Tensor img2img(const Denoiser& model, const Tensor& init_image, double strength, const Layout& layout,
                      const SamplerConfig& cfg, const ControlBranch* branch = nullptr,
                      const Tensor* edge = nullptr) {
    require_dims(strength >= 0.0 && strength <= 1.0, "img2img: strength must be in [0,1]");
    Tensor init = init_image;
    if (init.rank() == 2) init = Tensor::of({1, init.dim(0), init.dim(1)}, init.data);
    require_dims(init.rank() == 3 && init.dim(0) == 1 && init.dim(1) == model.cfg.latent &&
                     init.dim(2) == model.cfg.latent,
                 "img2img: init shape mismatch");
    if (strength == 0.0) return init;
    if (strength == 1.0) return sample(model, layout, cfg, branch, edge);

    const NoiseSchedule sched = NoiseSchedule::cosine(cfg.steps);
    const int t_start = (int)std::ceil(strength * sched.T);
    Rng rng(mix_seed(cfg.seed, 0x5eedULL));
    Tensor z0 = init;
    for (auto& v : z0.data) v = 2.0 * v - 1.0;
    Tensor z = add_noise(z0, t_start, randn(z0.shape, rng), sched);
    z = sampler_detail::run_reverse(model, std::move(z), t_start, layout, cfg, branch, edge, rng);
    return sampler_detail::latent_to_image(z);
}

}  // namespace edgediff
