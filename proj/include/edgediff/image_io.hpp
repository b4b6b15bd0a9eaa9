#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include <zlib.h>

#include "edgediff/tensor.hpp"

namespace edgediff {

// 8-bit grayscale image files: PNG (color types 0/2/4/6 read, 0 written) and
// binary PGM. Values map to [0,1] by /255.

namespace png_detail {

inline void put_u32(std::vector<uint8_t>& out, uint32_t v) {
    out.push_back((uint8_t)(v >> 24));
    out.push_back((uint8_t)(v >> 16));
    out.push_back((uint8_t)(v >> 8));
    out.push_back((uint8_t)v);
}

inline uint32_t get_u32(const uint8_t* p) {
    return (uint32_t(p[0]) << 24) | (uint32_t(p[1]) << 16) | (uint32_t(p[2]) << 8) | uint32_t(p[3]);
}

inline void write_chunk(std::vector<uint8_t>& out, const char type[4], const std::vector<uint8_t>& payload) {
    put_u32(out, (uint32_t)payload.size());
    const size_t start = out.size();
    out.insert(out.end(), type, type + 4);
    out.insert(out.end(), payload.begin(), payload.end());
    const uint32_t crc = (uint32_t)crc32(0L, out.data() + start, (uInt)(payload.size() + 4));
    put_u32(out, crc);
}

inline int paeth(int a, int b, int c) {
    const int p = a + b - c;
    const int pa = std::abs(p - a), pb = std::abs(p - b), pc = std::abs(p - c);
    if (pa <= pb && pa <= pc) return a;
    if (pb <= pc) return b;
    return c;
}

}  // namespace png_detail

inline uint8_t quantize_byte(double v) {
    const double c = v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v);
    return (uint8_t)std::lround(c * 255.0);
}

inline std::vector<uint8_t> encode_png_gray(const Tensor& img) {
    require_dims(img.rank() == 2, "encode_png_gray: HxW tensor required");
    const int H = img.dim(0), W = img.dim(1);
    std::vector<uint8_t> raw((size_t)H * (W + 1));
    for (int r = 0; r < H; ++r) {
        raw[(size_t)r * (W + 1)] = 0;  // filter: None
        for (int c = 0; c < W; ++c) raw[(size_t)r * (W + 1) + 1 + c] = quantize_byte(img.at(r, c));
    }
    uLongf bound = compressBound((uLong)raw.size());
    std::vector<uint8_t> compressed(bound);
    if (compress2(compressed.data(), &bound, raw.data(), (uLong)raw.size(), 6) != Z_OK)
        throw NumericError("png: deflate failed");
    compressed.resize(bound);

    std::vector<uint8_t> out;
    const uint8_t sig[8] = {0x89, 'P', 'N', 'G', 0x0d, 0x0a, 0x1a, 0x0a};
    out.insert(out.end(), sig, sig + 8);
    std::vector<uint8_t> ihdr;
    png_detail::put_u32(ihdr, (uint32_t)W);
    png_detail::put_u32(ihdr, (uint32_t)H);
    ihdr.push_back(8);  // bit depth
    ihdr.push_back(0);  // grayscale
    ihdr.push_back(0);
    ihdr.push_back(0);
    ihdr.push_back(0);
    png_detail::write_chunk(out, "IHDR", ihdr);
    png_detail::write_chunk(out, "IDAT", compressed);
    png_detail::write_chunk(out, "IEND", {});
    return out;
}

inline Tensor decode_png_gray(const std::vector<uint8_t>& bytes) {
    using namespace png_detail;
    if (bytes.size() < 8 || std::memcmp(bytes.data(), "\x89PNG\r\n\x1a\n", 8) != 0)
        throw DataError("png: bad signature");
    size_t pos = 8;
    int W = 0, H = 0, depth = 0, color = 0;
    std::vector<uint8_t> idat;
    while (pos + 12 <= bytes.size()) {
        const uint32_t len = get_u32(&bytes[pos]);
        if (pos + 12 + len > bytes.size()) throw DataError("png: truncated chunk");
        const char* type = (const char*)&bytes[pos + 4];
        const uint8_t* payload = &bytes[pos + 8];
        if (std::memcmp(type, "IHDR", 4) == 0) {
            if (len != 13) throw DataError("png: bad IHDR");
            W = (int)get_u32(payload);
            H = (int)get_u32(payload + 4);
            depth = payload[8];
            color = payload[9];
            if (payload[12] != 0) throw DataError("png: interlaced images unsupported");
            if (depth != 8) throw DataError("png: only 8-bit depth supported");
            if (color != 0 && color != 2 && color != 4 && color != 6)
                throw DataError("png: palette images unsupported");
        } else if (std::memcmp(type, "IDAT", 4) == 0) {
            idat.insert(idat.end(), payload, payload + len);
        } else if (std::memcmp(type, "IEND", 4) == 0) {
            break;
        }
        pos += 12 + len;
    }
    if (W <= 0 || H <= 0) throw DataError("png: missing IHDR");
    const int ch = color == 0 ? 1 : color == 2 ? 3 : color == 4 ? 2 : 4;
    const size_t stride = (size_t)W * ch;
    std::vector<uint8_t> raw(((size_t)H) * (stride + 1));
    uLongf rawlen = (uLongf)raw.size();
    if (uncompress(raw.data(), &rawlen, idat.data(), (uLong)idat.size()) != Z_OK || rawlen != raw.size())
        throw DataError("png: inflate failed");

    // Undo per-scanline filters.
    std::vector<uint8_t> prev(stride, 0);
    Tensor img({H, W});
    std::vector<uint8_t> line(stride);
    for (int r = 0; r < H; ++r) {
        const uint8_t* src = &raw[(size_t)r * (stride + 1)];
        const int f = src[0];
        for (size_t i = 0; i < stride; ++i) {
            const int x = src[1 + i];
            const int a = i >= (size_t)ch ? line[i - ch] : 0;
            const int b = prev[i];
            const int c = i >= (size_t)ch ? prev[i - ch] : 0;
            int v;
            switch (f) {
                case 0: v = x; break;
                case 1: v = x + a; break;
                case 2: v = x + b; break;
                case 3: v = x + (a + b) / 2; break;
                case 4: v = x + paeth(a, b, c); break;
                default: throw DataError("png: unknown filter type");
            }
            line[i] = (uint8_t)v;
        }
        for (int cpx = 0; cpx < W; ++cpx) {
            double v = 0.0;
            const int rgb = ch >= 3 ? 3 : 1;
            for (int k = 0; k < rgb; ++k) v += line[(size_t)cpx * ch + k];
            img.at(r, cpx) = v / (255.0 * rgb);
        }
        prev = line;
    }
    return img;
}

inline void write_png_gray(const std::string& path, const Tensor& img) {
    const auto bytes = encode_png_gray(img);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("png: cannot write " + path);
    out.write((const char*)bytes.data(), (std::streamsize)bytes.size());
}

inline void write_pgm(const std::string& path, const Tensor& img) {
    require_dims(img.rank() == 2, "write_pgm: HxW tensor required");
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("pgm: cannot write " + path);
    out << "P5\n" << img.dim(1) << " " << img.dim(0) << "\n255\n";
    for (double v : img.data) out.put((char)quantize_byte(v));
}

inline Tensor read_pgm(const std::vector<uint8_t>& bytes) {
    size_t pos = 0;
    auto next_token = [&]() -> std::string {
        while (pos < bytes.size()) {
            if (std::isspace(bytes[pos])) {
                ++pos;
            } else if (bytes[pos] == '#') {
                while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
            } else {
                break;
            }
        }
        std::string tok;
        while (pos < bytes.size() && !std::isspace(bytes[pos])) tok.push_back((char)bytes[pos++]);
        return tok;
    };
    const std::string magic = next_token();
    if (magic != "P5" && magic != "P2") throw DataError("pgm: unsupported magic " + magic);
    const int W = std::stoi(next_token());
    const int H = std::stoi(next_token());
    const int maxval = std::stoi(next_token());
    if (W <= 0 || H <= 0 || maxval <= 0 || maxval > 255) throw DataError("pgm: bad header");
    Tensor img({H, W});
    if (magic == "P5") {
        ++pos;  // single whitespace after maxval
        if (pos + (size_t)W * H > bytes.size()) throw DataError("pgm: truncated data");
        for (long long i = 0; i < img.numel(); ++i) img.data[(size_t)i] = bytes[pos + i] / double(maxval);
    } else {
        for (long long i = 0; i < img.numel(); ++i) img.data[(size_t)i] = std::stoi(next_token()) / double(maxval);
    }
    return img;
}

inline std::vector<uint8_t> read_file_bytes(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open " + path);
    return std::vector<uint8_t>((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

// Dispatch on magic bytes: PNG or PGM, grayscale in [0,1].
inline Tensor read_image(const std::string& path) {
    const auto bytes = read_file_bytes(path);
    if (bytes.size() >= 2 && bytes[0] == 0x89 && bytes[1] == 'P') return decode_png_gray(bytes);
    if (bytes.size() >= 2 && bytes[0] == 'P' && (bytes[1] == '5' || bytes[1] == '2')) return read_pgm(bytes);
    throw DataError("unrecognized image format: " + path);
}

}  // namespace edgediff
