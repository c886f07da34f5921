#pragma once

#include <functional>
#include <memory>
#include <unordered_set>
#include <utility>
#include <vector>

#include "tcv/tensor.hpp"

namespace tcv {

// ---------------------------------------------------------------------------
// Numeric kernels shared by the autodiff ops and the plain (no-graph) paths.
// Layouts: images (C,H,W); sample grids and flows (2,H,W) with channel 0 = x
// displacement/coordinate and channel 1 = y. Integer coordinates address
// pixel centers.
// ---------------------------------------------------------------------------
namespace kernels {

inline void conv2d_fwd(const Tensor& x, const Tensor& w, const Tensor* b, Tensor& out) {
    const int cin = x.dim(0), h = x.dim(1), wd = x.dim(2);
    const int cout = w.dim(0), kh = w.dim(2), kw = w.dim(3);
    const int ph = kh / 2, pw = kw / 2;
    out = Tensor({cout, h, wd});
    for (int co = 0; co < cout; ++co) {
        if (b) {
            const double bv = (*b)(co);
            for (int y = 0; y < h; ++y)
                for (int xx = 0; xx < wd; ++xx) out(co, y, xx) = bv;
        }
        for (int ci = 0; ci < cin; ++ci)
            for (int ky = 0; ky < kh; ++ky) {
                const int dy = ky - ph;
                const int y0 = std::max(0, -dy), y1 = std::min(h, h - dy);
                for (int kx = 0; kx < kw; ++kx) {
                    const int dx = kx - pw;
                    const int x0 = std::max(0, -dx), x1 = std::min(wd, wd - dx);
                    const double wv = w(co, ci, ky, kx);
                    if (wv == 0.0) continue;
                    for (int y = y0; y < y1; ++y) {
                        const double* src = &x(ci, y + dy, x0 + dx);
                        double* dst = &out(co, y, x0);
                        for (int i = 0; i < x1 - x0; ++i) dst[i] += wv * src[i];
                    }
                }
            }
    }
}

inline void conv2d_bwd_data(const Tensor& w, const Tensor& gout, Tensor& gx,
                            int cin, int h, int wd) {
    const int cout = w.dim(0), kh = w.dim(2), kw = w.dim(3);
    const int ph = kh / 2, pw = kw / 2;
    if (gx.empty()) gx = Tensor({cin, h, wd});
    for (int co = 0; co < cout; ++co)
        for (int ci = 0; ci < cin; ++ci)
            for (int ky = 0; ky < kh; ++ky) {
                const int dy = ky - ph;
                const int y0 = std::max(0, -dy), y1 = std::min(h, h - dy);
                for (int kx = 0; kx < kw; ++kx) {
                    const int dx = kx - pw;
                    const int x0 = std::max(0, -dx), x1 = std::min(wd, wd - dx);
                    const double wv = w(co, ci, ky, kx);
                    if (wv == 0.0) continue;
                    for (int y = y0; y < y1; ++y) {
                        double* dst = &gx(ci, y + dy, x0 + dx);
                        const double* src = &gout(co, y, x0);
                        for (int i = 0; i < x1 - x0; ++i) dst[i] += wv * src[i];
                    }
                }
            }
}

inline void conv2d_bwd_weight(const Tensor& x, const Tensor& gout, Tensor& gw, Tensor* gb,
                              int cout, int cin, int kh, int kw) {
    const int h = x.dim(1), wd = x.dim(2);
    const int ph = kh / 2, pw = kw / 2;
    if (gw.empty()) gw = Tensor({cout, cin, kh, kw});
    for (int co = 0; co < cout; ++co) {
        if (gb) {
            double s = 0.0;
            for (int y = 0; y < h; ++y)
                for (int xx = 0; xx < wd; ++xx) s += gout(co, y, xx);
            (*gb)(co) += s;
        }
        for (int ci = 0; ci < cin; ++ci)
            for (int ky = 0; ky < kh; ++ky) {
                const int dy = ky - ph;
                const int y0 = std::max(0, -dy), y1 = std::min(h, h - dy);
                for (int kx = 0; kx < kw; ++kx) {
                    const int dx = kx - pw;
                    const int x0 = std::max(0, -dx), x1 = std::min(wd, wd - dx);
                    double acc = 0.0;
                    for (int y = y0; y < y1; ++y) {
                        const double* sx = &x(ci, y + dy, x0 + dx);
                        const double* sg = &gout(co, y, x0);
                        for (int i = 0; i < x1 - x0; ++i) acc += sx[i] * sg[i];
                    }
                    gw(co, ci, ky, kx) += acc;
                }
            }
    }
}

// Bilinear sampling with border clamp. mask_out (if given) gets 1.0 where the
// ORIGINAL coordinate lies fully inside [0,W-1]x[0,H-1], else 0.0.
inline void bilinear_sample_fwd(const Tensor& img, const Tensor& grid, Tensor& out,
                                Tensor* mask_out) {
    const int c = img.dim(0), h = img.dim(1), w = img.dim(2);
    const int oh = grid.dim(1), ow = grid.dim(2);
    out = Tensor({c, oh, ow});
    if (mask_out) *mask_out = Tensor({oh, ow});
    for (int y = 0; y < oh; ++y)
        for (int x = 0; x < ow; ++x) {
            const double gx = grid(0, y, x), gy = grid(1, y, x);
            const bool inb = gx >= 0.0 && gx <= w - 1 && gy >= 0.0 && gy <= h - 1;
            if (mask_out) (*mask_out)(y, x) = inb ? 1.0 : 0.0;
            const double cx = std::clamp(gx, 0.0, static_cast<double>(w - 1));
            const double cy = std::clamp(gy, 0.0, static_cast<double>(h - 1));
            const int x0 = std::min(static_cast<int>(cx), w - 1);
            const int y0 = std::min(static_cast<int>(cy), h - 1);
            const int x1 = std::min(x0 + 1, w - 1);
            const int y1 = std::min(y0 + 1, h - 1);
            const double fx = cx - x0, fy = cy - y0;
            for (int ch = 0; ch < c; ++ch) {
                const double v00 = img(ch, y0, x0), v01 = img(ch, y0, x1);
                const double v10 = img(ch, y1, x0), v11 = img(ch, y1, x1);
                out(ch, y, x) = (1 - fy) * ((1 - fx) * v00 + fx * v01) +
                                fy * ((1 - fx) * v10 + fx * v11);
            }
        }
}

inline void bilinear_sample_bwd(const Tensor& img, const Tensor& grid, const Tensor& gout,
                                Tensor* gimg, Tensor* ggrid) {
    const int c = img.dim(0), h = img.dim(1), w = img.dim(2);
    const int oh = grid.dim(1), ow = grid.dim(2);
    for (int y = 0; y < oh; ++y)
        for (int x = 0; x < ow; ++x) {
            const double gx = grid(0, y, x), gy = grid(1, y, x);
            const double cx = std::clamp(gx, 0.0, static_cast<double>(w - 1));
            const double cy = std::clamp(gy, 0.0, static_cast<double>(h - 1));
            const int x0 = std::min(static_cast<int>(cx), w - 1);
            const int y0 = std::min(static_cast<int>(cy), h - 1);
            const int x1 = std::min(x0 + 1, w - 1);
            const int y1 = std::min(y0 + 1, h - 1);
            const double fx = cx - x0, fy = cy - y0;
            const bool in_x = gx > 0.0 && gx < w - 1;
            const bool in_y = gy > 0.0 && gy < h - 1;
            double dgx = 0.0, dgy = 0.0;
            for (int ch = 0; ch < c; ++ch) {
                const double g = gout(ch, y, x);
                if (g == 0.0) continue;
                if (gimg) {
                    (*gimg)(ch, y0, x0) += g * (1 - fy) * (1 - fx);
                    (*gimg)(ch, y0, x1) += g * (1 - fy) * fx;
                    (*gimg)(ch, y1, x0) += g * fy * (1 - fx);
                    (*gimg)(ch, y1, x1) += g * fy * fx;
                }
                if (ggrid) {
                    const double v00 = img(ch, y0, x0), v01 = img(ch, y0, x1);
                    const double v10 = img(ch, y1, x0), v11 = img(ch, y1, x1);
                    if (in_x) dgx += g * ((1 - fy) * (v01 - v00) + fy * (v11 - v10));
                    if (in_y) dgy += g * ((1 - fx) * (v10 - v00) + fx * (v11 - v01));
                }
            }
            if (ggrid) {
                (*ggrid)(0, y, x) += dgx;
                (*ggrid)(1, y, x) += dgy;
            }
        }
}

// Factor-2 bilinear upsample, half-pixel centers: even output taps (prev,cur)
// with weights (1/4, 3/4), odd taps (cur, next) with (3/4, 1/4).
inline void up2_taps(int o, int n, int& i0, int& i1, double& w0, double& w1) {
    const int i = o / 2;
    if ((o & 1) == 0) {
        i0 = std::max(i - 1, 0); i1 = i; w0 = 0.25; w1 = 0.75;
    } else {
        i0 = i; i1 = std::min(i + 1, n - 1); w0 = 0.75; w1 = 0.25;
    }
}

inline void upsample2x_fwd(const Tensor& x, Tensor& out) {
    const int c = x.dim(0), h = x.dim(1), w = x.dim(2);
    out = Tensor({c, 2 * h, 2 * w});
    for (int ch = 0; ch < c; ++ch)
        for (int oy = 0; oy < 2 * h; ++oy) {
            int y0, y1; double wy0, wy1;
            up2_taps(oy, h, y0, y1, wy0, wy1);
            for (int ox = 0; ox < 2 * w; ++ox) {
                int x0, x1; double wx0, wx1;
                up2_taps(ox, w, x0, x1, wx0, wx1);
                out(ch, oy, ox) = wy0 * (wx0 * x(ch, y0, x0) + wx1 * x(ch, y0, x1)) +
                                  wy1 * (wx0 * x(ch, y1, x0) + wx1 * x(ch, y1, x1));
            }
        }
}

inline void upsample2x_bwd(const Tensor& gout, Tensor& gx, int c, int h, int w) {
    if (gx.empty()) gx = Tensor({c, h, w});
    for (int ch = 0; ch < c; ++ch)
        for (int oy = 0; oy < 2 * h; ++oy) {
            int y0, y1; double wy0, wy1;
            up2_taps(oy, h, y0, y1, wy0, wy1);
            for (int ox = 0; ox < 2 * w; ++ox) {
                int x0, x1; double wx0, wx1;
                up2_taps(ox, w, x0, x1, wx0, wx1);
                const double g = gout(ch, oy, ox);
                gx(ch, y0, x0) += g * wy0 * wx0;
                gx(ch, y0, x1) += g * wy0 * wx1;
                gx(ch, y1, x0) += g * wy1 * wx0;
                gx(ch, y1, x1) += g * wy1 * wx1;
            }
        }
}

inline void downsample2x_fwd(const Tensor& x, Tensor& out) {
    const int c = x.dim(0), h = x.dim(1), w = x.dim(2);
    if (h % 2 || w % 2) throw std::invalid_argument("downsample2x: odd dims");
    out = Tensor({c, h / 2, w / 2});
    for (int ch = 0; ch < c; ++ch)
        for (int y = 0; y < h / 2; ++y)
            for (int xx = 0; xx < w / 2; ++xx)
                out(ch, y, xx) = 0.25 * (x(ch, 2 * y, 2 * xx) + x(ch, 2 * y, 2 * xx + 1) +
                                         x(ch, 2 * y + 1, 2 * xx) + x(ch, 2 * y + 1, 2 * xx + 1));
}

inline void downsample2x_bwd(const Tensor& gout, Tensor& gx, int c, int h, int w) {
    if (gx.empty()) gx = Tensor({c, h, w});
    for (int ch = 0; ch < c; ++ch)
        for (int y = 0; y < h / 2; ++y)
            for (int xx = 0; xx < w / 2; ++xx) {
                const double g = 0.25 * gout(ch, y, xx);
                gx(ch, 2 * y, 2 * xx) += g;
                gx(ch, 2 * y, 2 * xx + 1) += g;
                gx(ch, 2 * y + 1, 2 * xx) += g;
                gx(ch, 2 * y + 1, 2 * xx + 1) += g;
            }
}

}  // namespace kernels

// ---------------------------------------------------------------------------
// Reverse-mode tape. Var is a value-semantics handle onto a shared graph
// node; each loss evaluation builds a fresh graph that dies with its Vars.
// ---------------------------------------------------------------------------
namespace ad {

struct Node;
class Var {
public:
    Var() = default;
    explicit Var(Tensor value, bool requires_grad = false);

    const Tensor& value() const;
    Tensor& value_mut();
    Tensor& grad();
    bool has_grad() const;
    bool requires_grad() const;
    bool valid() const { return static_cast<bool>(n_); }
    Node* node() const { return n_.get(); }

    double scalar() const { return value()[0]; }

private:
    std::shared_ptr<Node> n_;
};

struct Node {
    Tensor value;
    Tensor grad;  // lazily allocated, same shape as value
    bool requires_grad = false;
    std::vector<Var> parents;
    std::function<void(Node&)> backward_fn;
};

inline Var::Var(Tensor value, bool requires_grad) : n_(std::make_shared<Node>()) {
    n_->value = std::move(value);
    n_->requires_grad = requires_grad;
}
inline const Tensor& Var::value() const { return n_->value; }
inline Tensor& Var::value_mut() { return n_->value; }
inline Tensor& Var::grad() { return n_->grad; }
inline bool Var::has_grad() const { return !n_->grad.empty(); }
inline bool Var::requires_grad() const { return n_ && n_->requires_grad; }

inline Tensor& ensure_grad(Node& n) {
    if (n.grad.empty()) n.grad = Tensor(n.value.shape());
    return n.grad;
}

inline Var make_op(Tensor value, std::vector<Var> parents,
                   std::function<void(Node&)> backward_fn) {
    bool rg = false;
    for (const auto& p : parents) rg = rg || p.requires_grad();
    Var r(std::move(value), rg);
    if (rg) {
        r.node()->parents = std::move(parents);
        r.node()->backward_fn = std::move(backward_fn);
    }
    return r;
}

inline Var constant(Tensor t) { return Var(std::move(t), false); }
inline Var leaf(Tensor t) { return Var(std::move(t), true); }
inline Var detach(const Var& a) { return Var(a.value(), false); }

// Accumulates d(root)/d(leaf) into every reachable grad. root must be scalar.
inline void backward(const Var& root) {
    if (root.value().size() != 1)
        throw std::invalid_argument("backward: root must be scalar");
    if (!root.requires_grad()) return;

    std::vector<Node*> order;
    std::unordered_set<Node*> seen;
    std::vector<std::pair<Node*, std::size_t>> stack;
    stack.emplace_back(root.node(), 0);
    seen.insert(root.node());
    while (!stack.empty()) {
        auto& [n, idx] = stack.back();
        if (idx < n->parents.size()) {
            Node* p = n->parents[idx].node();
            ++idx;
            if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
        } else {
            order.push_back(n);
            stack.pop_back();
        }
    }
    ensure_grad(*root.node())[0] += 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* n = *it;
        if (n->backward_fn && !n->grad.empty()) n->backward_fn(*n);
    }
}

// ---- elementwise ----------------------------------------------------------

inline Var add(const Var& a, const Var& b) {
    require_same_shape(a.value(), b.value(), "add");
    Tensor out = a.value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += b.value()[i];
    return make_op(std::move(out), {a, b}, [](Node& n) {
        for (int k = 0; k < 2; ++k)
            if (n.parents[k].requires_grad()) {
                Tensor& g = ensure_grad(*n.parents[k].node());
                for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i];
            }
    });
}

inline Var sub(const Var& a, const Var& b) {
    require_same_shape(a.value(), b.value(), "sub");
    Tensor out = a.value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b.value()[i];
    return make_op(std::move(out), {a, b}, [](Node& n) {
        if (n.parents[0].requires_grad()) {
            Tensor& g = ensure_grad(*n.parents[0].node());
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i];
        }
        if (n.parents[1].requires_grad()) {
            Tensor& g = ensure_grad(*n.parents[1].node());
            for (std::size_t i = 0; i < g.size(); ++i) g[i] -= n.grad[i];
        }
    });
}

inline Var mul(const Var& a, const Var& b) {
    require_same_shape(a.value(), b.value(), "mul");
    Tensor out = a.value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b.value()[i];
    return make_op(std::move(out), {a, b}, [](Node& n) {
        const Tensor& av = n.parents[0].value();
        const Tensor& bv = n.parents[1].value();
        if (n.parents[0].requires_grad()) {
            Tensor& g = ensure_grad(*n.parents[0].node());
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i] * bv[i];
        }
        if (n.parents[1].requires_grad()) {
            Tensor& g = ensure_grad(*n.parents[1].node());
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i] * av[i];
        }
    });
}

inline Var scalar_mul(const Var& a, double c) {
    Tensor out = a.value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= c;
    return make_op(std::move(out), {a}, [c](Node& n) {
        Tensor& g = ensure_grad(*n.parents[0].node());
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += c * n.grad[i];
    });
}

inline Var scalar_add(const Var& a, double c) {
    Tensor out = a.value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += c;
    return make_op(std::move(out), {a}, [](Node& n) {
        Tensor& g = ensure_grad(*n.parents[0].node());
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i];
    });
}

inline Var mul_const(const Var& a, Tensor c) {
    require_same_shape(a.value(), c, "mul_const");
    Tensor out = a.value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= c[i];
    auto cp = std::make_shared<Tensor>(std::move(c));
    return make_op(std::move(out), {a}, [cp](Node& n) {
        Tensor& g = ensure_grad(*n.parents[0].node());
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i] * (*cp)[i];
    });
}

inline Var abs_v(const Var& a) {
    Tensor out = a.value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::abs(out[i]);
    return make_op(std::move(out), {a}, [](Node& n) {
        const Tensor& av = n.parents[0].value();
        Tensor& g = ensure_grad(*n.parents[0].node());
        for (std::size_t i = 0; i < g.size(); ++i)
            g[i] += n.grad[i] * (av[i] > 0.0 ? 1.0 : (av[i] < 0.0 ? -1.0 : 0.0));
    });
}

inline Var exp_v(const Var& a) {
    Tensor out = a.value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::exp(out[i]);
    return make_op(std::move(out), {a}, [](Node& n) {
        Tensor& g = ensure_grad(*n.parents[0].node());
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i] * n.value[i];
    });
}

inline Var sigmoid_v(const Var& a) {
    Tensor out = a.value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = 1.0 / (1.0 + std::exp(-out[i]));
    return make_op(std::move(out), {a}, [](Node& n) {
        Tensor& g = ensure_grad(*n.parents[0].node());
        for (std::size_t i = 0; i < g.size(); ++i)
            g[i] += n.grad[i] * n.value[i] * (1.0 - n.value[i]);
    });
}

inline Var leaky_relu(const Var& a, double slope = 0.2) {
    Tensor out = a.value();
    for (std::size_t i = 0; i < out.size(); ++i)
        if (out[i] < 0.0) out[i] *= slope;
    return make_op(std::move(out), {a}, [slope](Node& n) {
        const Tensor& av = n.parents[0].value();
        Tensor& g = ensure_grad(*n.parents[0].node());
        for (std::size_t i = 0; i < g.size(); ++i)
            g[i] += n.grad[i] * (av[i] >= 0.0 ? 1.0 : slope);
    });
}

// ---- reductions -----------------------------------------------------------

inline Var sum(const Var& a) {
    Tensor out = Tensor::scalar(a.value().sum());
    return make_op(std::move(out), {a}, [](Node& n) {
        Tensor& g = ensure_grad(*n.parents[0].node());
        const double gv = n.grad[0];
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += gv;
    });
}

inline Var mean(const Var& a) {
    const double inv = 1.0 / static_cast<double>(a.value().size());
    Tensor out = Tensor::scalar(a.value().sum() * inv);
    return make_op(std::move(out), {a}, [inv](Node& n) {
        Tensor& g = ensure_grad(*n.parents[0].node());
        const double gv = n.grad[0] * inv;
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += gv;
    });
}

inline Var sum_channels(const Var& a) {  // (C,H,W) -> (H,W)
    const int c = a.value().dim(0), h = a.value().dim(1), w = a.value().dim(2);
    Tensor out({h, w});
    for (int ch = 0; ch < c; ++ch)
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) out(y, x) += a.value()(ch, y, x);
    return make_op(std::move(out), {a}, [c, h, w](Node& n) {
        Tensor& g = ensure_grad(*n.parents[0].node());
        for (int ch = 0; ch < c; ++ch)
            for (int y = 0; y < h; ++y)
                for (int x = 0; x < w; ++x) g(ch, y, x) += n.grad(y, x);
    });
}

// ---- shape ops ------------------------------------------------------------

inline Var row(const Var& a, int r) {  // (L,D) -> (D)
    const int d = a.value().dim(1);
    Tensor out({d});
    for (int j = 0; j < d; ++j) out(j) = a.value()(r, j);
    return make_op(std::move(out), {a}, [r, d](Node& n) {
        Tensor& g = ensure_grad(*n.parents[0].node());
        for (int j = 0; j < d; ++j) g(r, j) += n.grad(j);
    });
}

inline Var stack_rows(const std::vector<Var>& rows) {  // L x (D) -> (L,D)
    const int l = static_cast<int>(rows.size());
    const int d = rows[0].value().dim(0);
    Tensor out({l, d});
    for (int i = 0; i < l; ++i)
        for (int j = 0; j < d; ++j) out(i, j) = rows[static_cast<std::size_t>(i)].value()(j);
    return make_op(std::move(out), rows, [l, d](Node& n) {
        for (int i = 0; i < l; ++i)
            if (n.parents[static_cast<std::size_t>(i)].requires_grad()) {
                Tensor& g = ensure_grad(*n.parents[static_cast<std::size_t>(i)].node());
                for (int j = 0; j < d; ++j) g(j) += n.grad(i, j);
            }
    });
}

inline Var concat1d(const Var& a, const Var& b) {
    const int na = static_cast<int>(a.value().size());
    const int nb = static_cast<int>(b.value().size());
    Tensor out({na + nb});
    for (int i = 0; i < na; ++i) out(i) = a.value()[static_cast<std::size_t>(i)];
    for (int i = 0; i < nb; ++i) out(na + i) = b.value()[static_cast<std::size_t>(i)];
    return make_op(std::move(out), {a, b}, [na, nb](Node& n) {
        if (n.parents[0].requires_grad()) {
            Tensor& g = ensure_grad(*n.parents[0].node());
            for (int i = 0; i < na; ++i) g[static_cast<std::size_t>(i)] += n.grad(i);
        }
        if (n.parents[1].requires_grad()) {
            Tensor& g = ensure_grad(*n.parents[1].node());
            for (int i = 0; i < nb; ++i) g[static_cast<std::size_t>(i)] += n.grad(na + i);
        }
    });
}

// ---- linear algebra -------------------------------------------------------

inline Var matvec(const Var& w, const Var& x) {  // (M,N) x (N) -> (M)
    const int m = w.value().dim(0), nn = w.value().dim(1);
    Tensor out({m});
    for (int i = 0; i < m; ++i) {
        double acc = 0.0;
        const double* wr = &w.value()(i, 0);
        for (int j = 0; j < nn; ++j) acc += wr[j] * x.value()(j);
        out(i) = acc;
    }
    return make_op(std::move(out), {w, x}, [m, nn](Node& n) {
        const Tensor& wv = n.parents[0].value();
        const Tensor& xv = n.parents[1].value();
        if (n.parents[0].requires_grad()) {
            Tensor& g = ensure_grad(*n.parents[0].node());
            for (int i = 0; i < m; ++i) {
                const double gi = n.grad(i);
                if (gi == 0.0) continue;
                double* gr = &g(i, 0);
                for (int j = 0; j < nn; ++j) gr[j] += gi * xv(j);
            }
        }
        if (n.parents[1].requires_grad()) {
            Tensor& g = ensure_grad(*n.parents[1].node());
            for (int i = 0; i < m; ++i) {
                const double gi = n.grad(i);
                if (gi == 0.0) continue;
                const double* wr = &wv(i, 0);
                for (int j = 0; j < nn; ++j) g(j) += gi * wr[j];
            }
        }
    });
}

// ---- image ops ------------------------------------------------------------

inline Var conv2d(const Var& x, const Var& w, const Var& b) {
    Tensor out;
    kernels::conv2d_fwd(x.value(), w.value(), b.valid() ? &b.value() : nullptr, out);
    std::vector<Var> parents = {x, w};
    if (b.valid()) parents.push_back(b);
    const int cin = x.value().dim(0), h = x.value().dim(1), wd = x.value().dim(2);
    const int cout = w.value().dim(0), kh = w.value().dim(2), kw = w.value().dim(3);
    return make_op(std::move(out), std::move(parents),
                   [cin, h, wd, cout, kh, kw](Node& n) {
        const Var& xp = n.parents[0];
        const Var& wp = n.parents[1];
        if (xp.requires_grad())
            kernels::conv2d_bwd_data(wp.value(), n.grad, ensure_grad(*xp.node()), cin, h, wd);
        if (wp.requires_grad()) {
            Tensor* gb = nullptr;
            if (n.parents.size() > 2 && n.parents[2].requires_grad())
                gb = &ensure_grad(*n.parents[2].node());
            kernels::conv2d_bwd_weight(xp.value(), n.grad, ensure_grad(*wp.node()), gb,
                                       cout, cin, kh, kw);
        } else if (n.parents.size() > 2 && n.parents[2].requires_grad()) {
            Tensor& gb = ensure_grad(*n.parents[2].node());
            for (int co = 0; co < cout; ++co) {
                double s = 0.0;
                for (int y = 0; y < h; ++y)
                    for (int x2 = 0; x2 < wd; ++x2) s += n.grad(co, y, x2);
                gb(co) += s;
            }
        }
    });
}

inline Var channel_affine(const Var& x, const Var& s, const Var& t) {  // y_c = x_c*s_c + t_c
    const int c = x.value().dim(0), h = x.value().dim(1), w = x.value().dim(2);
    Tensor out({c, h, w});
    for (int ch = 0; ch < c; ++ch) {
        const double sv = s.value()(ch), tv = t.value()(ch);
        for (int y = 0; y < h; ++y)
            for (int xx = 0; xx < w; ++xx) out(ch, y, xx) = x.value()(ch, y, xx) * sv + tv;
    }
    return make_op(std::move(out), {x, s, t}, [c, h, w](Node& n) {
        const Tensor& xv = n.parents[0].value();
        const Tensor& sv = n.parents[1].value();
        if (n.parents[0].requires_grad()) {
            Tensor& g = ensure_grad(*n.parents[0].node());
            for (int ch = 0; ch < c; ++ch) {
                const double s2 = sv(ch);
                for (int y = 0; y < h; ++y)
                    for (int xx = 0; xx < w; ++xx) g(ch, y, xx) += n.grad(ch, y, xx) * s2;
            }
        }
        if (n.parents[1].requires_grad()) {
            Tensor& g = ensure_grad(*n.parents[1].node());
            for (int ch = 0; ch < c; ++ch) {
                double acc = 0.0;
                for (int y = 0; y < h; ++y)
                    for (int xx = 0; xx < w; ++xx) acc += n.grad(ch, y, xx) * xv(ch, y, xx);
                g(ch) += acc;
            }
        }
        if (n.parents[2].requires_grad()) {
            Tensor& g = ensure_grad(*n.parents[2].node());
            for (int ch = 0; ch < c; ++ch) {
                double acc = 0.0;
                for (int y = 0; y < h; ++y)
                    for (int xx = 0; xx < w; ++xx) acc += n.grad(ch, y, xx);
                g(ch) += acc;
            }
        }
    });
}

inline Var upsample2x(const Var& x) {
    Tensor out;
    kernels::upsample2x_fwd(x.value(), out);
    const int c = x.value().dim(0), h = x.value().dim(1), w = x.value().dim(2);
    return make_op(std::move(out), {x}, [c, h, w](Node& n) {
        kernels::upsample2x_bwd(n.grad, ensure_grad(*n.parents[0].node()), c, h, w);
    });
}

inline Var downsample2x(const Var& x) {
    Tensor out;
    kernels::downsample2x_fwd(x.value(), out);
    const int c = x.value().dim(0), h = x.value().dim(1), w = x.value().dim(2);
    return make_op(std::move(out), {x}, [c, h, w](Node& n) {
        kernels::downsample2x_bwd(n.grad, ensure_grad(*n.parents[0].node()), c, h, w);
    });
}

// grid is (2,Ho,Wo) absolute coordinates. Differentiable in img and grid;
// in-bounds indicator (not differentiable) is written to mask_out if given.
inline Var bilinear_sample(const Var& img, const Var& grid, Tensor* mask_out = nullptr) {
    Tensor out;
    kernels::bilinear_sample_fwd(img.value(), grid.value(), out, mask_out);
    return make_op(std::move(out), {img, grid}, [](Node& n) {
        Tensor* gimg = n.parents[0].requires_grad() ? &ensure_grad(*n.parents[0].node()) : nullptr;
        Tensor* ggrid = n.parents[1].requires_grad() ? &ensure_grad(*n.parents[1].node()) : nullptr;
        kernels::bilinear_sample_bwd(n.parents[0].value(), n.parents[1].value(), n.grad,
                                     gimg, ggrid);
    });
}

// Per-channel standardization over the spatial dims: y_c = (x_c - mu_c)/sd_c.
inline Var instance_norm(const Var& x, double eps = 1e-6) {
    const int c = x.value().dim(0), h = x.value().dim(1), w = x.value().dim(2);
    const double n = static_cast<double>(h) * w;
    Tensor out({c, h, w});
    Tensor mu({c}), sd({c});
    for (int ch = 0; ch < c; ++ch) {
        double m = 0.0;
        for (int y = 0; y < h; ++y)
            for (int xx = 0; xx < w; ++xx) m += x.value()(ch, y, xx);
        m /= n;
        double v = 0.0;
        for (int y = 0; y < h; ++y)
            for (int xx = 0; xx < w; ++xx) {
                const double d = x.value()(ch, y, xx) - m;
                v += d * d;
            }
        const double s = std::sqrt(v / n + eps);
        mu(ch) = m;
        sd(ch) = s;
        for (int y = 0; y < h; ++y)
            for (int xx = 0; xx < w; ++xx) out(ch, y, xx) = (x.value()(ch, y, xx) - m) / s;
    }
    auto stats = std::make_shared<std::pair<Tensor, Tensor>>(std::move(mu), std::move(sd));
    return make_op(std::move(out), {x}, [c, h, w, n, stats](Node& nd) {
        Tensor& g = ensure_grad(*nd.parents[0].node());
        for (int ch = 0; ch < c; ++ch) {
            const double s = stats->second(ch);
            double gsum = 0.0, gysum = 0.0;
            for (int y = 0; y < h; ++y)
                for (int xx = 0; xx < w; ++xx) {
                    gsum += nd.grad(ch, y, xx);
                    gysum += nd.grad(ch, y, xx) * nd.value(ch, y, xx);
                }
            const double gmean = gsum / n, gymean = gysum / n;
            for (int y = 0; y < h; ++y)
                for (int xx = 0; xx < w; ++xx)
                    g(ch, y, xx) += (nd.grad(ch, y, xx) - gmean - nd.value(ch, y, xx) * gymean) / s;
        }
    });
}

// Per-pixel unit normalization across channels: y = x / sqrt(eps + sum_c x^2).
inline Var channel_unit_norm(const Var& x, double eps = 1e-3) {
    const int c = x.value().dim(0), h = x.value().dim(1), w = x.value().dim(2);
    Tensor out({c, h, w});
    Tensor norms({h, w});
    for (int y = 0; y < h; ++y)
        for (int xx = 0; xx < w; ++xx) {
            double s = eps;
            for (int ch = 0; ch < c; ++ch) s += x.value()(ch, y, xx) * x.value()(ch, y, xx);
            norms(y, xx) = std::sqrt(s);
        }
    for (int ch = 0; ch < c; ++ch)
        for (int y = 0; y < h; ++y)
            for (int xx = 0; xx < w; ++xx) out(ch, y, xx) = x.value()(ch, y, xx) / norms(y, xx);
    auto np = std::make_shared<Tensor>(std::move(norms));
    return make_op(std::move(out), {x}, [c, h, w, np](Node& n) {
        const Tensor& xv = n.parents[0].value();
        Tensor& g = ensure_grad(*n.parents[0].node());
        for (int y = 0; y < h; ++y)
            for (int xx = 0; xx < w; ++xx) {
                const double nr = (*np)(y, xx);
                double dot = 0.0;
                for (int ch = 0; ch < c; ++ch) dot += n.grad(ch, y, xx) * xv(ch, y, xx);
                const double inv = 1.0 / nr, inv3 = inv * inv * inv;
                for (int ch = 0; ch < c; ++ch)
                    g(ch, y, xx) += n.grad(ch, y, xx) * inv - xv(ch, y, xx) * dot * inv3;
            }
    });
}

// ---- composites -----------------------------------------------------------

inline Var mse(const Var& a, const Var& b) {
    Var d = sub(a, b);
    return mean(mul(d, d));
}

inline Var mean_abs(const Var& a) { return mean(abs_v(a)); }

// sum(w .* x) / max(sum(w), 1e-12); w is a detached weight map.
inline Var weighted_mean(const Var& x, const Tensor& w) {
    const double denom = std::max(w.sum(), 1e-12);
    return scalar_mul(sum(mul_const(x, w)), 1.0 / denom);
}

inline Var add_all(const std::vector<Var>& vs) {
    Var acc = vs[0];
    for (std::size_t i = 1; i < vs.size(); ++i) acc = add(acc, vs[i]);
    return acc;
}

}  // namespace ad
}  // namespace tcv
