#pragma once

// Test-only brute-force references and a finite-difference gradient harness.
// These stay independent of the library's kernel implementations: every loop
// below is written directly from the definitions.

#include <functional>
#include <vector>

#include "tcv/autodiff.hpp"
#include "tcv/tensor.hpp"

namespace oracle {

using tcv::Tensor;

inline double clampd(double v, double lo, double hi) { return v < lo ? lo : (v > hi ? hi : v); }

// Scalar bilinear lookup with border clamp, integer coords at pixel centers.
inline double sample_at(const Tensor& img, int c, double x, double y) {
    const int h = img.dim(1), w = img.dim(2);
    const double cx = clampd(x, 0.0, w - 1.0);
    const double cy = clampd(y, 0.0, h - 1.0);
    int x0 = static_cast<int>(std::floor(cx));
    int y0 = static_cast<int>(std::floor(cy));
    if (x0 > w - 1) x0 = w - 1;
    if (y0 > h - 1) y0 = h - 1;
    const int x1 = x0 + 1 > w - 1 ? w - 1 : x0 + 1;
    const int y1 = y0 + 1 > h - 1 ? h - 1 : y0 + 1;
    const double fx = cx - x0, fy = cy - y0;
    const double top = (1.0 - fx) * img(c, y0, x0) + fx * img(c, y0, x1);
    const double bot = (1.0 - fx) * img(c, y1, x0) + fx * img(c, y1, x1);
    return (1.0 - fy) * top + fy * bot;
}

struct SampleOut {
    Tensor image;  // (C,H,W)
    Tensor mask;   // (H,W)
};

inline SampleOut ref_bilinear_sample(const Tensor& img, const Tensor& grid) {
    const int c = img.dim(0), h = grid.dim(1), w = grid.dim(2);
    SampleOut o{Tensor({c, h, w}), Tensor({h, w})};
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            const double gx = grid(0, y, x), gy = grid(1, y, x);
            o.mask(y, x) =
                (gx >= 0.0 && gx <= img.dim(2) - 1.0 && gy >= 0.0 && gy <= img.dim(1) - 1.0) ? 1.0
                                                                                             : 0.0;
            for (int ch = 0; ch < c; ++ch) o.image(ch, y, x) = sample_at(img, ch, gx, gy);
        }
    return o;
}

inline SampleOut ref_warp(const Tensor& img, const Tensor& flow) {
    const int h = flow.dim(1), w = flow.dim(2);
    Tensor grid({2, h, w});
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            grid(0, y, x) = x + flow(0, y, x);
            grid(1, y, x) = y + flow(1, y, x);
        }
    return ref_bilinear_sample(img, grid);
}

inline Tensor ref_fb_error(const Tensor& fab, const Tensor& fba) {
    const int h = fab.dim(1), w = fab.dim(2);
    Tensor e({h, w});
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            const double px = x + fab(0, y, x), py = y + fab(1, y, x);
            const double bx = sample_at(fba, 0, px, py);
            const double by = sample_at(fba, 1, px, py);
            const double rx = fab(0, y, x) + bx, ry = fab(1, y, x) + by;
            e(y, x) = std::sqrt(rx * rx + ry * ry);
        }
    return e;
}

inline Tensor ref_occlusion_mask(const Tensor& f, const Tensor& b) {
    const int h = f.dim(1), w = f.dim(2);
    Tensor m({h, w});
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            const double fx = f(0, y, x), fy = f(1, y, x);
            const double bx = sample_at(b, 0, x + fx, y + fy);
            const double by = sample_at(b, 1, x + fx, y + fy);
            const double lhs = (fx + bx) * (fx + bx) + (fy + by) * (fy + by);
            const double rhs = 0.01 * (fx * fx + fy * fy + bx * bx + by * by) + 0.5;
            m(y, x) = lhs < rhs ? 1.0 : 0.0;
        }
    return m;
}

// ---------------------------------------------------------------------------
// Central finite-difference gradient check. Rebuilds the loss from the same
// leaves for every probe; relative error uses a floored denominator.
// ---------------------------------------------------------------------------

struct GradCheck {
    double max_rel_err = 0.0;
    std::size_t checked = 0;
};

inline GradCheck grad_check(const std::function<tcv::ad::Var()>& loss_fn,
                            std::vector<tcv::ad::Var> leaves, double step = 1e-3,
                            std::size_t max_probes_per_leaf = 0, std::uint64_t probe_seed = 11) {
    using tcv::ad::backward;
    for (auto& l : leaves) l.node()->grad = Tensor();
    tcv::ad::Var loss = loss_fn();
    backward(loss);
    std::vector<Tensor> grads;
    for (auto& l : leaves)
        grads.push_back(l.has_grad() ? l.grad() : Tensor(l.value().shape()));

    GradCheck res;
    tcv::Rng rng(probe_seed);
    for (std::size_t k = 0; k < leaves.size(); ++k) {
        Tensor& val = leaves[k].value_mut();
        std::vector<std::size_t> idx;
        if (max_probes_per_leaf == 0 || val.size() <= max_probes_per_leaf) {
            for (std::size_t i = 0; i < val.size(); ++i) idx.push_back(i);
        } else {
            for (std::size_t i = 0; i < max_probes_per_leaf; ++i)
                idx.push_back(static_cast<std::size_t>(rng.uniform_int(static_cast<int>(val.size()))));
        }
        for (std::size_t i : idx) {
            const double orig = val[i];
            val[i] = orig + step;
            const double fp = loss_fn().scalar();
            val[i] = orig - step;
            const double fm = loss_fn().scalar();
            val[i] = orig;
            const double fd = (fp - fm) / (2.0 * step);
            const double g = grads[k][i];
            const double rel = std::abs(g - fd) / std::max({std::abs(g), std::abs(fd), 1e-6});
            res.max_rel_err = std::max(res.max_rel_err, rel);
            ++res.checked;
        }
    }
    return res;
}

}  // namespace oracle
