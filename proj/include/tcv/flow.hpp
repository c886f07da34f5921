#pragma once

#include <cstdio>
#include <fstream>
#include <string>
#include <vector>

#include "tcv/autodiff.hpp"
#include "tcv/image.hpp"
#include "tcv/serialize.hpp"
#include "tcv/tensor.hpp"

namespace tcv {

// Backward-warping displacement field on a's grid pointing into b:
// content of b at (p + F(p)) corresponds to a's pixel p.
struct FlowField {
    Tensor data;  // (2,H,W), channel 0 = dx, channel 1 = dy

    FlowField() = default;
    explicit FlowField(Tensor t) : data(std::move(t)) {
        if (data.ndim() != 3 || data.dim(0) != 2)
            throw std::invalid_argument("FlowField: expected (2,H,W) tensor");
        validate();
    }
    FlowField(int height, int width) : data(Tensor({2, height, width})) {}

    int height() const { return data.dim(1); }
    int width() const { return data.dim(2); }

    void validate() const {
        if (!data.all_finite()) throw std::invalid_argument("FlowField: non-finite values");
        const double bound = std::max(height(), width());
        for (std::size_t i = 0; i < data.size(); ++i)
            if (std::abs(data[i]) > bound)
                throw std::invalid_argument("FlowField: displacement exceeds max(H,W)");
    }
};

// forward = anc->i (anchor grid, points into frame i), backward = i->anc.
struct FlowPair {
    FlowField forward;
    FlowField backward;
    int source_index = 0;
    int anchor_index = 0;

    FlowPair() = default;
    FlowPair(FlowField fwd, FlowField bwd, int src, int anc)
        : forward(std::move(fwd)), backward(std::move(bwd)), source_index(src), anchor_index(anc) {
        require_same_shape(forward.data, backward.data, "FlowPair");
    }
};

// ---------------------------------------------------------------------------
// Forward-backward consistency.
// eps(p) = || f_ab(p) + f_ba(p + f_ab(p)) ||_2, with f_ba bilinearly sampled
// at the displaced location. The map lives on f_ab's grid. inbounds marks
// round-trip samples that stayed inside the frame.
// ---------------------------------------------------------------------------

struct ConsistencyResult {
    Tensor error;     // (H,W), pixels
    Tensor inbounds;  // (H,W), 0/1
};

inline ConsistencyResult fb_consistency_error(const FlowField& f_ab, const FlowField& f_ba) {
    require_same_shape(f_ab.data, f_ba.data, "fb_consistency_error");
    const int h = f_ab.height(), w = f_ab.width();
    Tensor grid = flow_to_grid(f_ab.data);
    Tensor sampled, inb;
    kernels::bilinear_sample_fwd(f_ba.data, grid, sampled, &inb);
    Tensor err({h, w});
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            const double rx = f_ab.data(0, y, x) + sampled(0, y, x);
            const double ry = f_ab.data(1, y, x) + sampled(1, y, x);
            err(y, x) = std::sqrt(rx * rx + ry * ry);
        }
    return {std::move(err), std::move(inb)};
}

// Differentiable variant; used when flow tensors are attached to a graph
// (flow_grad = through_sampling). With leaf flows it reduces to the plain
// computation.
inline ad::Var fb_consistency_error_v(const ad::Var& f_ab, const ad::Var& f_ba,
                                      Tensor* inbounds_out = nullptr) {
    const int h = f_ab.value().dim(1), w = f_ab.value().dim(2);
    ad::Var grid = ad::add(f_ab, ad::constant(SampleGrid::identity(h, w).coords));
    ad::Var sampled = ad::bilinear_sample(f_ba, grid, inbounds_out);
    ad::Var resid = ad::add(f_ab, sampled);                 // (2,H,W)
    ad::Var sq = ad::sum_channels(ad::mul(resid, resid));   // (H,W)
    // sqrt with eps guard for differentiability at zero residual
    Tensor out = sq.value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::sqrt(out[i] + 1e-12);
    return ad::make_op(std::move(out), {sq}, [](ad::Node& n) {
        Tensor& g = ad::ensure_grad(*n.parents[0].node());
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i] * 0.5 / n.value[i];
    });
}

// M = exp(-10 eps) * inbounds. Values in (0,1].
inline Tensor visibility_mask(const Tensor& error, const Tensor& inbounds) {
    require_same_shape(error, inbounds, "visibility_mask");
    Tensor m = error;
    for (std::size_t i = 0; i < m.size(); ++i) {
        if (m[i] < 0.0) throw std::invalid_argument("visibility_mask: negative error");
        m[i] = std::exp(-10.0 * m[i]) * inbounds[i];
    }
    return m;
}

inline Tensor visibility_mask(const ConsistencyResult& c) {
    return visibility_mask(c.error, c.inbounds);
}

// ---------------------------------------------------------------------------
// Flow providers. "file" loads a precomputed field; "builtin" runs a
// deterministic coarse-to-fine brightness-constancy estimator (3 pyramid
// levels, 20 fixed-point sweeps per level, quadratic smoothness).
// ---------------------------------------------------------------------------

struct FlowProviderConfig {
    enum class Kind { file, builtin };
    Kind kind = Kind::builtin;
    std::string dir;      // file provider: directory of flow_<src>_<dst>.tcvf
    int levels = 3;
    int iters_per_level = 20;  // Jacobi sweeps; relinearized every 5
    double smoothness = 2e-3;  // quadratic regularizer weight (alpha^2)
};

inline std::string flow_filename(int src, int dst) {
    return "flow_" + std::to_string(src) + "_" + std::to_string(dst) + ".tcvf";
}

inline void save_flow(const FlowField& f, const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot open for write: " + path);
    detail::put_magic(os, "TCVF");
    detail::put_u32(os, 1);
    detail::put_u32(os, static_cast<std::uint32_t>(f.height()));
    detail::put_u32(os, static_cast<std::uint32_t>(f.width()));
    for (int y = 0; y < f.height(); ++y)
        for (int x = 0; x < f.width(); ++x) {
            detail::put_f32(os, static_cast<float>(f.data(0, y, x)));
            detail::put_f32(os, static_cast<float>(f.data(1, y, x)));
        }
    if (!os) throw std::runtime_error("write failure: " + path);
}

inline FlowField load_flow(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("missing flow file: " + path);
    detail::check_magic(is, "TCVF", path);
    if (detail::get_u32(is) != 1) throw std::runtime_error("unsupported TCVF version: " + path);
    const int h = static_cast<int>(detail::get_u32(is));
    const int w = static_cast<int>(detail::get_u32(is));
    Tensor t({2, h, w});
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            t(0, y, x) = detail::get_f32(is);
            t(1, y, x) = detail::get_f32(is);
        }
    return FlowField(std::move(t));  // validates finiteness and magnitude
}

namespace detail {

inline Tensor grayscale(const Frame& f) {
    const int h = f.height(), w = f.width();
    Tensor g({h, w});
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            g(y, x) = (f.at(0, y, x) + f.at(1, y, x) + f.at(2, y, x)) / 3.0;
    return g;
}

inline Tensor down2_gray(const Tensor& g) {
    const int h = g.dim(0), w = g.dim(1);
    Tensor o({h / 2, w / 2});
    for (int y = 0; y < h / 2; ++y)
        for (int x = 0; x < w / 2; ++x)
            o(y, x) = 0.25 * (g(2 * y, 2 * x) + g(2 * y, 2 * x + 1) + g(2 * y + 1, 2 * x) +
                              g(2 * y + 1, 2 * x + 1));
    return o;
}

inline double sample_gray(const Tensor& g, double x, double y) {
    const int h = g.dim(0), w = g.dim(1);
    const double cx = std::clamp(x, 0.0, static_cast<double>(w - 1));
    const double cy = std::clamp(y, 0.0, static_cast<double>(h - 1));
    const int x0 = std::min(static_cast<int>(cx), w - 1);
    const int y0 = std::min(static_cast<int>(cy), h - 1);
    const int x1 = std::min(x0 + 1, w - 1);
    const int y1 = std::min(y0 + 1, h - 1);
    const double fx = cx - x0, fy = cy - y0;
    return (1 - fy) * ((1 - fx) * g(y0, x0) + fx * g(y0, x1)) +
           fy * ((1 - fx) * g(y1, x0) + fx * g(y1, x1));
}

// One pyramid level of Horn-Schunck-style fixed-point sweeps. u,v are
// updated in place; relinearize (rewarp) every `relin` sweeps.
inline void hs_level(const Tensor& a, const Tensor& b, Tensor& u, Tensor& v, int iters,
                     double alpha2, int relin = 5) {
    const int h = a.dim(0), w = a.dim(1);
    Tensor ix({h, w}), iy({h, w}), it({h, w}), u0 = u, v0 = v;
    auto relinearize = [&]() {
        // derivatives of the warped second image, brightness difference vs first
        Tensor bw({h, w});
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x)
                bw(y, x) = sample_gray(b, x + u(y, x), y + v(y, x));
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                const int xm = std::max(x - 1, 0), xp = std::min(x + 1, w - 1);
                const int ym = std::max(y - 1, 0), yp = std::min(y + 1, h - 1);
                ix(y, x) = (bw(y, xp) - bw(y, xm)) / (xp - xm > 0 ? xp - xm : 1);
                iy(y, x) = (bw(yp, x) - bw(ym, x)) / (yp - ym > 0 ? yp - ym : 1);
                it(y, x) = bw(y, x) - a(y, x);
            }
        u0 = u;
        v0 = v;
    };
    for (int k = 0; k < iters; ++k) {
        if (k % relin == 0) relinearize();
        Tensor un = u, vn = v;
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                const int xm = std::max(x - 1, 0), xp = std::min(x + 1, w - 1);
                const int ym = std::max(y - 1, 0), yp = std::min(y + 1, h - 1);
                const double ub = 0.25 * (u(y, xm) + u(y, xp) + u(ym, x) + u(yp, x));
                const double vb = 0.25 * (v(y, xm) + v(y, xp) + v(ym, x) + v(yp, x));
                const double gx = ix(y, x), gy = iy(y, x);
                // data term linearized around the flow at the last rewarp
                const double resid = gx * (ub - u0(y, x)) + gy * (vb - v0(y, x)) + it(y, x);
                const double denom = alpha2 + gx * gx + gy * gy;
                un(y, x) = ub - gx * resid / denom;
                vn(y, x) = vb - gy * resid / denom;
            }
        u = un;
        v = vn;
    }
}

}  // namespace detail

inline FlowField estimate_flow_builtin(const Frame& a, const Frame& b,
                                       const FlowProviderConfig& cfg) {
    require_same_shape(a.data, b.data, "estimate_flow");
    std::vector<Tensor> pa, pb;
    pa.push_back(detail::grayscale(a));
    pb.push_back(detail::grayscale(b));
    for (int l = 1; l < cfg.levels; ++l) {
        if (pa.back().dim(0) < 8 || pa.back().dim(1) < 8) break;
        pa.push_back(detail::down2_gray(pa.back()));
        pb.push_back(detail::down2_gray(pb.back()));
    }
    const int coarsest = static_cast<int>(pa.size()) - 1;
    Tensor u({pa[static_cast<std::size_t>(coarsest)].dim(0), pa[static_cast<std::size_t>(coarsest)].dim(1)});
    Tensor v = u;
    for (int l = coarsest; l >= 0; --l) {
        if (l != coarsest) {
            // upsample flow x2, scale displacements
            const int h = pa[static_cast<std::size_t>(l)].dim(0), w = pa[static_cast<std::size_t>(l)].dim(1);
            Tensor uu({h, w}), vv({h, w});
            for (int y = 0; y < h; ++y)
                for (int x = 0; x < w; ++x) {
                    uu(y, x) = 2.0 * detail::sample_gray(u, x * 0.5, y * 0.5);
                    vv(y, x) = 2.0 * detail::sample_gray(v, x * 0.5, y * 0.5);
                }
            u = std::move(uu);
            v = std::move(vv);
        }
        detail::hs_level(pa[static_cast<std::size_t>(l)], pb[static_cast<std::size_t>(l)], u, v,
                         cfg.iters_per_level, cfg.smoothness);
    }
    const int h = a.height(), w = a.width();
    Tensor out({2, h, w});
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            out(0, y, x) = u(y, x);
            out(1, y, x) = v(y, x);
        }
    FlowField f(std::move(out));
    if (!f.data.all_finite())
        throw std::runtime_error("builtin flow estimator diverged (non-finite values)");
    return f;
}

inline FlowField estimate_flow(const Frame& a, const Frame& b, const FlowProviderConfig& cfg,
                               int src_index = -1, int dst_index = -1) {
    require_same_shape(a.data, b.data, "estimate_flow");
    if (cfg.kind == FlowProviderConfig::Kind::file) {
        const std::string path = cfg.dir + "/" + flow_filename(src_index, dst_index);
        try {
            return load_flow(path);
        } catch (const std::exception& e) {
            throw std::runtime_error("flow provider (pair " + std::to_string(src_index) + "->" +
                                     std::to_string(dst_index) + "): " + e.what());
        }
    }
    try {
        return estimate_flow_builtin(a, b, cfg);
    } catch (const std::exception& e) {
        throw std::runtime_error("flow provider (pair " + std::to_string(src_index) + "->" +
                                 std::to_string(dst_index) + "): " + e.what());
    }
}

}  // namespace tcv
