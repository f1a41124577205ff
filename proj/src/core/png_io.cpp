#include "kv/core/png_io.hpp"

#include <zlib.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace kv {

namespace {

void put_be32(std::string& s, std::uint32_t v) {
    s.push_back(char((v >> 24) & 0xff));
    s.push_back(char((v >> 16) & 0xff));
    s.push_back(char((v >> 8) & 0xff));
    s.push_back(char(v & 0xff));
}

std::uint32_t get_be32(const unsigned char* p) {
    return (std::uint32_t(p[0]) << 24) | (std::uint32_t(p[1]) << 16) | (std::uint32_t(p[2]) << 8) |
           std::uint32_t(p[3]);
}

void append_chunk(std::string& out, const char type[4], const std::string& payload) {
    put_be32(out, std::uint32_t(payload.size()));
    std::string body(type, 4);
    body += payload;
    out += body;
    const auto crc =
        crc32(0, reinterpret_cast<const Bytef*>(body.data()), static_cast<uInt>(body.size()));
    put_be32(out, std::uint32_t(crc));
}

std::string zlib_deflate(const std::string& in) {
    uLongf bound = compressBound(static_cast<uLong>(in.size()));
    std::string out(bound, '\0');
    if (compress2(reinterpret_cast<Bytef*>(out.data()), &bound,
                  reinterpret_cast<const Bytef*>(in.data()), static_cast<uLong>(in.size()),
                  6) != Z_OK) {
        throw std::runtime_error("png: deflate failed");
    }
    out.resize(bound);
    return out;
}

std::string zlib_inflate(const std::string& in, std::size_t expected) {
    std::string out(expected, '\0');
    uLongf len = static_cast<uLongf>(expected);
    const int rc = uncompress(reinterpret_cast<Bytef*>(out.data()), &len,
                              reinterpret_cast<const Bytef*>(in.data()),
                              static_cast<uLong>(in.size()));
    if (rc != Z_OK || len != expected) throw std::runtime_error("png: inflate failed");
    return out;
}

void write_file(const std::string& path, const std::string& bytes) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw std::runtime_error("cannot open for write: " + path);
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw std::runtime_error("write failed: " + path);
}

std::string read_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open: " + path);
    std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    return bytes;
}

constexpr unsigned char kSig[8] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};

}  // namespace

void write_png_gray(const std::string& path, const ImageU8& img) {
    if (img.w <= 0 || img.h <= 0) throw std::invalid_argument("png: empty image");
    std::string out(reinterpret_cast<const char*>(kSig), 8);

    std::string ihdr;
    put_be32(ihdr, std::uint32_t(img.w));
    put_be32(ihdr, std::uint32_t(img.h));
    ihdr.push_back(8);   // bit depth
    ihdr.push_back(0);   // grayscale
    ihdr.push_back(0);   // deflate
    ihdr.push_back(0);   // adaptive filter
    ihdr.push_back(0);   // no interlace
    append_chunk(out, "IHDR", ihdr);

    std::string scan;
    scan.reserve((std::size_t(img.w) + 1) * img.h);
    for (int y = 0; y < img.h; ++y) {
        scan.push_back(0);  // filter: none
        scan.append(reinterpret_cast<const char*>(img.row(y)), img.w);
    }
    append_chunk(out, "IDAT", zlib_deflate(scan));
    append_chunk(out, "IEND", "");
    write_file(path, out);
}

void write_png_gray(const std::string& path, const ImageF& img) {
    ImageU8 q(img.w, img.h);
    for (std::size_t i = 0; i < img.size(); ++i) {
        const float v = std::clamp(img.px[i], 0.0f, 1.0f);
        q.px[i] = static_cast<std::uint8_t>(std::lround(v * 255.0f));
    }
    write_png_gray(path, q);
}

ImageU8 read_png_gray(const std::string& path) {
    const std::string bytes = read_file(path);
    if (bytes.size() < 8 || std::memcmp(bytes.data(), kSig, 8) != 0)
        throw std::runtime_error("png: bad signature: " + path);

    int w = 0, h = 0;
    std::string idat;
    std::size_t off = 8;
    bool seen_ihdr = false;
    while (off + 8 <= bytes.size()) {
        const auto* p = reinterpret_cast<const unsigned char*>(bytes.data() + off);
        const std::uint32_t len = get_be32(p);
        const std::string type = bytes.substr(off + 4, 4);
        if (off + 12 + len > bytes.size()) throw std::runtime_error("png: truncated chunk");
        const char* payload = bytes.data() + off + 8;
        if (type == "IHDR") {
            const auto* q = reinterpret_cast<const unsigned char*>(payload);
            w = int(get_be32(q));
            h = int(get_be32(q + 4));
            if (q[8] != 8 || q[9] != 0 || q[12] != 0)
                throw std::runtime_error("png: only 8-bit non-interlaced grayscale supported");
            seen_ihdr = true;
        } else if (type == "IDAT") {
            idat.append(payload, len);
        } else if (type == "IEND") {
            break;
        }
        off += 12 + len;
    }
    if (!seen_ihdr || w <= 0 || h <= 0) throw std::runtime_error("png: missing IHDR");

    const std::size_t stride = std::size_t(w) + 1;
    const std::string scan = zlib_inflate(idat, stride * h);
    ImageU8 img(w, h);
    std::vector<std::uint8_t> prev(w, 0);
    for (int y = 0; y < h; ++y) {
        const auto* src = reinterpret_cast<const unsigned char*>(scan.data() + stride * y);
        const int filter = src[0];
        auto* dst = img.row(y);
        for (int x = 0; x < w; ++x) {
            const int raw = src[1 + x];
            const int a = x > 0 ? dst[x - 1] : 0;
            const int b = prev[x];
            const int c = x > 0 ? prev[x - 1] : 0;
            int v = 0;
            switch (filter) {
                case 0: v = raw; break;
                case 1: v = raw + a; break;
                case 2: v = raw + b; break;
                case 3: v = raw + (a + b) / 2; break;
                case 4: {
                    const int pp = a + b - c;
                    const int pa = std::abs(pp - a), pb = std::abs(pp - b), pc = std::abs(pp - c);
                    v = raw + ((pa <= pb && pa <= pc) ? a : (pb <= pc ? b : c));
                    break;
                }
                default: throw std::runtime_error("png: unknown filter");
            }
            dst[x] = static_cast<std::uint8_t>(v & 0xff);
        }
        std::copy(dst, dst + w, prev.begin());
    }
    return img;
}

void write_raw(const std::string& path, const ImageF& img) {
    std::string bytes(reinterpret_cast<const char*>(img.px.data()), img.size() * sizeof(float));
    write_file(path, bytes);
}

void write_raw(const std::string& path, const ImageU8& img) {
    std::string bytes(reinterpret_cast<const char*>(img.px.data()), img.size());
    write_file(path, bytes);
}

ImageF read_raw_f32(const std::string& path, int w, int h) {
    const std::string bytes = read_file(path);
    if (bytes.size() != std::size_t(w) * h * sizeof(float))
        throw std::runtime_error("raw f32 size mismatch: " + path);
    ImageF img(w, h);
    std::memcpy(img.px.data(), bytes.data(), bytes.size());
    return img;
}

ImageU8 read_raw_u8(const std::string& path, int w, int h) {
    const std::string bytes = read_file(path);
    if (bytes.size() != std::size_t(w) * h)
        throw std::runtime_error("raw u8 size mismatch: " + path);
    ImageU8 img(w, h);
    std::memcpy(img.px.data(), bytes.data(), bytes.size());
    return img;
}

}  // namespace kv
