#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "tcv/tensor.hpp"

namespace tcv {

// All binary formats are little-endian with float32 payloads:
//   TCVF  flow fields:  magic, u32 version=1, u32 height, u32 width,
//                       H*W*2 float32 row-major, (dx,dy) interleaved.
//   TCVW / TCVG        named-tensor containers (latents / generator params):
//                       magic, u32 version=1, u32 count, then per tensor
//                       u32 name_len, name, u32 ndim, u32 dims[], float32 data.

namespace detail {

inline void put_u32(std::ostream& os, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
    os.write(reinterpret_cast<const char*>(b), 4);
}

inline std::uint32_t get_u32(std::istream& is) {
    unsigned char b[4];
    is.read(reinterpret_cast<char*>(b), 4);
    if (!is) throw std::runtime_error("truncated binary file");
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

inline void put_f32(std::ostream& os, float v) {
    std::uint32_t u;
    std::memcpy(&u, &v, 4);
    put_u32(os, u);
}

inline float get_f32(std::istream& is) {
    std::uint32_t u = get_u32(is);
    float v;
    std::memcpy(&v, &u, 4);
    return v;
}

inline void put_magic(std::ostream& os, const char m[4]) { os.write(m, 4); }

inline void check_magic(std::istream& is, const char* expect, const std::string& path) {
    char m[4];
    is.read(m, 4);
    if (!is || std::memcmp(m, expect, 4) != 0)
        throw std::runtime_error("bad magic in " + path + " (expected " + expect + ")");
}

}  // namespace detail

inline void write_tensor_container(const std::string& path, const char magic[4],
                                   const std::vector<std::pair<std::string, Tensor>>& tensors) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot open for write: " + path);
    detail::put_magic(os, magic);
    detail::put_u32(os, 1);
    detail::put_u32(os, static_cast<std::uint32_t>(tensors.size()));
    for (const auto& [name, t] : tensors) {
        detail::put_u32(os, static_cast<std::uint32_t>(name.size()));
        os.write(name.data(), static_cast<std::streamsize>(name.size()));
        detail::put_u32(os, static_cast<std::uint32_t>(t.ndim()));
        for (int i = 0; i < t.ndim(); ++i) detail::put_u32(os, static_cast<std::uint32_t>(t.dim(i)));
        for (std::size_t i = 0; i < t.size(); ++i)
            detail::put_f32(os, static_cast<float>(t[i]));
    }
    if (!os) throw std::runtime_error("write failure: " + path);
}

inline std::vector<std::pair<std::string, Tensor>> read_tensor_container(const std::string& path,
                                                                         const char* magic) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open: " + path);
    detail::check_magic(is, magic, path);
    const std::uint32_t version = detail::get_u32(is);
    if (version != 1) throw std::runtime_error("unsupported version in " + path);
    const std::uint32_t count = detail::get_u32(is);
    std::vector<std::pair<std::string, Tensor>> out;
    out.reserve(count);
    for (std::uint32_t k = 0; k < count; ++k) {
        const std::uint32_t nlen = detail::get_u32(is);
        std::string name(nlen, '\0');
        is.read(name.data(), nlen);
        const std::uint32_t nd = detail::get_u32(is);
        std::vector<int> shape(nd);
        for (auto& d : shape) d = static_cast<int>(detail::get_u32(is));
        Tensor t(shape);
        for (std::size_t i = 0; i < t.size(); ++i) t[i] = detail::get_f32(is);
        if (!is) throw std::runtime_error("truncated tensor in " + path);
        out.emplace_back(std::move(name), std::move(t));
    }
    return out;
}

inline Tensor find_tensor(const std::vector<std::pair<std::string, Tensor>>& tensors,
                          const std::string& name) {
    for (const auto& [n, t] : tensors)
        if (n == name) return t;
    throw std::runtime_error("missing tensor '" + name + "' in container");
}

// Round a tensor's values to float32 precision in place (what a save/load
// cycle through the container formats would do).
inline Tensor to_f32_precision(Tensor t) {
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = static_cast<double>(static_cast<float>(t[i]));
    return t;
}

inline bool file_bytes_equal(const std::string& a, const std::string& b) {
    std::ifstream fa(a, std::ios::binary), fb(b, std::ios::binary);
    if (!fa || !fb) return false;
    std::vector<char> ba((std::istreambuf_iterator<char>(fa)), std::istreambuf_iterator<char>());
    std::vector<char> bb((std::istreambuf_iterator<char>(fb)), std::istreambuf_iterator<char>());
    return ba == bb;
}

}  // namespace tcv
