#pragma once

#include <png.h>

#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

#include "tcv/autodiff.hpp"
#include "tcv/tensor.hpp"

namespace tcv {

// H x W x 3 image, values in [0,1], stored planar (3,H,W).
struct Frame {
    Tensor data;  // (3,H,W)

    Frame() = default;
    explicit Frame(Tensor t) : data(std::move(t)) {
        if (data.ndim() != 3 || data.dim(0) != 3)
            throw std::invalid_argument("Frame: expected (3,H,W) tensor");
        if (!data.all_finite()) throw std::invalid_argument("Frame: non-finite values");
    }
    Frame(int height, int width, double fill = 0.0) : data(Tensor({3, height, width}, fill)) {}

    int height() const { return data.dim(1); }
    int width() const { return data.dim(2); }
    double& at(int c, int y, int x) { return data(c, y, x); }
    double at(int c, int y, int x) const { return data(c, y, x); }
};

// Generator and PNG I/O require dims >= 4 and divisible by 4; the sampling
// math itself works on any size.
inline void require_generator_dims(int h, int w, const char* where) {
    if (h < 4 || w < 4 || h % 4 || w % 4)
        throw std::invalid_argument(std::string(where) +
                                    ": frame dims must be >= 4 and divisible by 4, got " +
                                    std::to_string(h) + "x" + std::to_string(w));
}

// Absolute sample coordinates, (2,H,W): channel 0 = x, channel 1 = y.
struct SampleGrid {
    Tensor coords;

    explicit SampleGrid(Tensor t) : coords(std::move(t)) {
        if (coords.ndim() != 3 || coords.dim(0) != 2)
            throw std::invalid_argument("SampleGrid: expected (2,H,W) tensor");
        if (!coords.all_finite()) throw std::invalid_argument("SampleGrid: non-finite coords");
    }

    static SampleGrid identity(int h, int w) {
        Tensor t({2, h, w});
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                t(0, y, x) = x;
                t(1, y, x) = y;
            }
        return SampleGrid(std::move(t));
    }

    int height() const { return coords.dim(1); }
    int width() const { return coords.dim(2); }
};

struct SampleResult {
    Frame frame;
    Tensor mask;  // (H,W), 1.0 where the requested coordinate was fully in-bounds
};

inline SampleResult bilinear_sample(const Frame& frame, const SampleGrid& grid) {
    if (grid.height() != frame.height() || grid.width() != frame.width())
        throw std::invalid_argument("bilinear_sample: grid/frame dimension mismatch");
    Tensor out, mask;
    kernels::bilinear_sample_fwd(frame.data, grid.coords, out, &mask);
    return {Frame(std::move(out)), std::move(mask)};
}

// flow is (2,H,W) backward displacements; sample source at p + flow(p).
inline Tensor flow_to_grid(const Tensor& flow) {
    const int h = flow.dim(1), w = flow.dim(2);
    Tensor g({2, h, w});
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            g(0, y, x) = x + flow(0, y, x);
            g(1, y, x) = y + flow(1, y, x);
        }
    return g;
}

inline SampleResult warp(const Frame& frame, const Tensor& flow) {
    if (flow.ndim() != 3 || flow.dim(0) != 2 || flow.dim(1) != frame.height() ||
        flow.dim(2) != frame.width())
        throw std::invalid_argument("warp: flow/frame dimension mismatch");
    Tensor out, mask;
    Tensor grid = flow_to_grid(flow);
    kernels::bilinear_sample_fwd(frame.data, grid, out, &mask);
    return {Frame(std::move(out)), std::move(mask)};
}

// Differentiable warp: image and flow may both carry gradients.
inline ad::Var warp_v(const ad::Var& image, const ad::Var& flow, Tensor* mask_out = nullptr) {
    const int h = image.value().dim(1), w = image.value().dim(2);
    if (flow.value().dim(1) != h || flow.value().dim(2) != w)
        throw std::invalid_argument("warp_v: flow/frame dimension mismatch");
    ad::Var grid = ad::add(flow, ad::constant(SampleGrid::identity(h, w).coords));
    return ad::bilinear_sample(image, grid, mask_out);
}

// ---------------------------------------------------------------------------
// PNG I/O: 8-bit on disk, [0,1] doubles in memory. Quantization rounds half
// up; loading divides by 255.
// ---------------------------------------------------------------------------

inline int quantize8(double v) {
    const double q = std::floor(v * 255.0 + 0.5);
    return static_cast<int>(std::clamp(q, 0.0, 255.0));
}

namespace detail {

struct PngCloser {
    std::FILE* f = nullptr;
    ~PngCloser() { if (f) std::fclose(f); }
};

inline void write_png_bytes(const std::string& path, const std::vector<unsigned char>& bytes,
                            int h, int w, int channels) {
    PngCloser fc;
    fc.f = std::fopen(path.c_str(), "wb");
    if (!fc.f) throw std::runtime_error("cannot open for write: " + path);
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png_create_info_struct(png);
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw std::runtime_error("libpng write failure: " + path);
    }
    png_init_io(png, fc.f);
    png_set_IHDR(png, info, static_cast<png_uint_32>(w), static_cast<png_uint_32>(h), 8,
                 channels == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB,
                 PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    std::vector<png_bytep> rows(static_cast<std::size_t>(h));
    for (int y = 0; y < h; ++y)
        rows[static_cast<std::size_t>(y)] =
            const_cast<png_bytep>(&bytes[static_cast<std::size_t>(y) * w * channels]);
    png_write_image(png, rows.data());
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

inline std::vector<unsigned char> read_png_bytes(const std::string& path, int& h, int& w) {
    PngCloser fc;
    fc.f = std::fopen(path.c_str(), "rb");
    if (!fc.f) throw std::runtime_error("cannot open: " + path);
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png_create_info_struct(png);
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw std::runtime_error("libpng read failure: " + path);
    }
    png_init_io(png, fc.f);
    png_read_info(png, info);
    w = static_cast<int>(png_get_image_width(png, info));
    h = static_cast<int>(png_get_image_height(png, info));
    // Normalize anything to 8-bit RGB.
    png_set_expand(png);
    if (png_get_bit_depth(png, info) == 16) png_set_strip_16(png);
    png_set_strip_alpha(png);
    if (png_get_color_type(png, info) == PNG_COLOR_TYPE_GRAY ||
        png_get_color_type(png, info) == PNG_COLOR_TYPE_GRAY_ALPHA)
        png_set_gray_to_rgb(png);
    png_read_update_info(png, info);
    if (png_get_rowbytes(png, info) != static_cast<std::size_t>(w) * 3) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw std::runtime_error("unexpected PNG layout: " + path);
    }
    std::vector<unsigned char> bytes(static_cast<std::size_t>(h) * w * 3);
    std::vector<png_bytep> rows(static_cast<std::size_t>(h));
    for (int y = 0; y < h; ++y)
        rows[static_cast<std::size_t>(y)] = &bytes[static_cast<std::size_t>(y) * w * 3];
    png_read_image(png, rows.data());
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);
    return bytes;
}

}  // namespace detail

inline void save_png(const Frame& frame, const std::string& path) {
    const int h = frame.height(), w = frame.width();
    std::vector<unsigned char> bytes(static_cast<std::size_t>(h) * w * 3);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int c = 0; c < 3; ++c)
                bytes[(static_cast<std::size_t>(y) * w + x) * 3 + c] =
                    static_cast<unsigned char>(quantize8(frame.at(c, y, x)));
    detail::write_png_bytes(path, bytes, h, w, 3);
}

inline Frame load_png(const std::string& path) {
    int h = 0, w = 0;
    auto bytes = detail::read_png_bytes(path, h, w);
    Tensor t({3, h, w});
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int c = 0; c < 3; ++c)
                t(c, y, x) = bytes[(static_cast<std::size_t>(y) * w + x) * 3 + c] / 255.0;
    return Frame(std::move(t));
}

// Masks persist as 8-bit grayscale for inspection.
inline void save_mask_png(const Tensor& mask, const std::string& path) {
    const int h = mask.dim(0), w = mask.dim(1);
    std::vector<unsigned char> bytes(static_cast<std::size_t>(h) * w);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            bytes[static_cast<std::size_t>(y) * w + x] =
                static_cast<unsigned char>(quantize8(mask(y, x)));
    detail::write_png_bytes(path, bytes, h, w, 1);
}

inline std::string frame_filename(int index) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "frame_%05d.png", index);
    return buf;
}

inline void save_frame_dir(const std::vector<Frame>& frames, const std::string& dir) {
    std::filesystem::create_directories(dir);
    for (std::size_t t = 0; t < frames.size(); ++t)
        save_png(frames[t], dir + "/" + frame_filename(static_cast<int>(t)));
}

inline std::vector<Frame> load_frame_dir(const std::string& dir) {
    std::vector<std::filesystem::path> paths;
    for (const auto& e : std::filesystem::directory_iterator(dir))
        if (e.path().extension() == ".png") paths.push_back(e.path());
    std::sort(paths.begin(), paths.end());
    if (paths.empty()) throw std::runtime_error("no PNG frames in " + dir);
    std::vector<Frame> frames;
    frames.reserve(paths.size());
    for (const auto& p : paths) frames.push_back(load_png(p.string()));
    for (const auto& f : frames)
        if (f.height() != frames[0].height() || f.width() != frames[0].width())
            throw std::runtime_error("inconsistent frame dimensions in " + dir);
    return frames;
}

inline double psnr(const Frame& a, const Frame& b) {
    require_same_shape(a.data, b.data, "psnr");
    double mse = 0.0;
    for (std::size_t i = 0; i < a.data.size(); ++i) {
        const double d = a.data[i] - b.data[i];
        mse += d * d;
    }
    mse /= static_cast<double>(a.data.size());
    if (mse <= 0.0) return 99.0;
    return 10.0 * std::log10(1.0 / mse);
}

}  // namespace tcv
