#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "edgediff/tensor.hpp"

namespace edgediff {

// Flat binary tensor archive: <prefix>.bin holds little-endian f64 payloads
// back to back, <prefix>.json is the manifest (name, shape, dtype, offset).

struct NamedTensor {
    std::string name;
    Tensor* tensor;
};

inline void save_weights(const std::string& prefix, const std::vector<NamedTensor>& tensors,
                         const nlohmann::ordered_json& meta = {}) {
    std::ofstream bin(prefix + ".bin", std::ios::binary);
    if (!bin) throw DataError("weights: cannot write " + prefix + ".bin");
    nlohmann::ordered_json manifest;
    manifest["format"] = "edgediff-weights-v1";
    if (!meta.is_null() && !meta.empty()) manifest["meta"] = meta;
    manifest["tensors"] = nlohmann::ordered_json::array();
    uint64_t offset = 0;
    for (const auto& nt : tensors) {
        const uint64_t nbytes = (uint64_t)nt.tensor->numel() * sizeof(double);
        bin.write((const char*)nt.tensor->data.data(), (std::streamsize)nbytes);
        nlohmann::ordered_json je;
        je["name"] = nt.name;
        je["shape"] = nt.tensor->shape;
        je["dtype"] = "f64";
        je["offset"] = offset;
        je["nbytes"] = nbytes;
        manifest["tensors"].push_back(je);
        offset += nbytes;
    }
    std::ofstream js(prefix + ".json", std::ios::binary);
    if (!js) throw DataError("weights: cannot write " + prefix + ".json");
    js << manifest.dump(2) << "\n";
}

inline void load_weights(const std::string& prefix, const std::vector<NamedTensor>& tensors) {
    std::ifstream js(prefix + ".json");
    if (!js) throw DataError("weights: cannot open " + prefix + ".json");
    nlohmann::json manifest;
    try {
        js >> manifest;
    } catch (const nlohmann::json::exception& e) {
        throw DataError("weights: bad manifest " + prefix + ".json: " + e.what());
    }
    std::ifstream bin(prefix + ".bin", std::ios::binary);
    if (!bin) throw DataError("weights: cannot open " + prefix + ".bin");

    std::map<std::string, const nlohmann::json*> by_name;
    for (const auto& je : manifest.at("tensors")) by_name[je.at("name").get<std::string>()] = &je;

    for (const auto& nt : tensors) {
        auto it = by_name.find(nt.name);
        if (it == by_name.end()) throw DataError("weights: missing tensor " + nt.name);
        const auto& je = *it->second;
        const auto shape = je.at("shape").get<std::vector<int>>();
        if (shape != nt.tensor->shape)
            throw DataError("weights: shape mismatch for " + nt.name);
        if (je.at("dtype").get<std::string>() != "f64") throw DataError("weights: unsupported dtype");
        bin.seekg((std::streamoff)je.at("offset").get<uint64_t>());
        bin.read((char*)nt.tensor->data.data(), (std::streamsize)(nt.tensor->numel() * (long long)sizeof(double)));
        if (!bin) throw DataError("weights: truncated payload for " + nt.name);
    }
}

inline nlohmann::json load_weights_meta(const std::string& prefix) {
    std::ifstream js(prefix + ".json");
    if (!js) throw DataError("weights: cannot open " + prefix + ".json");
    nlohmann::json manifest;
    try {
        js >> manifest;
    } catch (const nlohmann::json::exception& e) {
        throw DataError("weights: bad manifest " + prefix + ".json: " + e.what());
    }
    return manifest.value("meta", nlohmann::json::object());
}

// FNV-1a over a file's bytes; used for provenance records.
inline uint64_t fnv1a64_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open " + path);
    uint64_t h = 1469598103934665603ULL;
    char buf[4096];
    while (in.read(buf, sizeof buf) || in.gcount() > 0) {
        for (std::streamsize i = 0; i < in.gcount(); ++i) {
            h ^= (uint8_t)buf[i];
            h *= 1099511628211ULL;
        }
        if (!in) break;
    }
    return h;
}

}  // namespace edgediff
