#pragma once

#include <string>

#include "edgediff/control.hpp"
#include "edgediff/denoiser.hpp"
#include "edgediff/weights_io.hpp"

namespace edgediff {

inline nlohmann::ordered_json denoiser_meta(const DenoiserConfig& cfg) {
    nlohmann::ordered_json meta;
    meta["kind"] = "denoiser";
    meta["latent"] = cfg.latent;
    meta["channels"] = cfg.channels;
    meta["attn_dim"] = cfg.attn_dim;
    meta["classes"] = cfg.n_classes;
    return meta;
}

inline DenoiserConfig config_from_meta(const nlohmann::json& meta) {
    DenoiserConfig cfg;
    cfg.latent = meta.at("latent").get<int>();
    cfg.channels = meta.at("channels").get<int>();
    cfg.attn_dim = meta.at("attn_dim").get<int>();
    cfg.n_classes = meta.at("classes").get<int>();
    return cfg;
}

inline void save_denoiser(const std::string& prefix, Denoiser& model) {
    save_weights(prefix, model.params(), denoiser_meta(model.cfg));
}

inline Denoiser load_denoiser(const std::string& prefix) {
    const nlohmann::json meta = load_weights_meta(prefix);
    if (meta.value("kind", "") != "denoiser") throw DataError("weights: " + prefix + " is not a denoiser");
    Denoiser model = Denoiser::zeros(config_from_meta(meta));
    load_weights(prefix, model.params());
    return model;
}

inline void save_branch(const std::string& prefix, ControlBranch& branch) {
    nlohmann::ordered_json meta = denoiser_meta(branch.cfg);
    meta["kind"] = "control-branch";
    meta["highpass_divisor"] = branch.spec.divisor;
    meta["highpass_tau"] = branch.spec.tau;
    save_weights(prefix, branch.params(), meta);
}

inline ControlBranch load_branch(const std::string& prefix) {
    const nlohmann::json meta = load_weights_meta(prefix);
    if (meta.value("kind", "") != "control-branch")
        throw DataError("weights: " + prefix + " is not a control branch");
    HighPassSpec spec;
    spec.divisor = meta.at("highpass_divisor").get<int>();
    spec.tau = meta.at("highpass_tau").get<double>();
    ControlBranch branch = ControlBranch::zeros(config_from_meta(meta), spec);
    load_weights(prefix, branch.params());
    return branch;
}

}  // namespace edgediff
