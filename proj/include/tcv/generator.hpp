#pragma once

#include <string>
#include <vector>

#include "tcv/autodiff.hpp"
#include "tcv/image.hpp"
#include "tcv/optim.hpp"
#include "tcv/perceptual.hpp"
#include "tcv/serialize.hpp"
#include "tcv/tensor.hpp"

namespace tcv {

// Per-frame latent code: one D-vector per synthesis layer.
struct LatentStack {
    Tensor data;  // (L,D)

    LatentStack() = default;
    explicit LatentStack(Tensor t) : data(std::move(t)) {
        if (data.ndim() != 2) throw std::invalid_argument("LatentStack: expected (L,D)");
        validate();
    }
    LatentStack(int layers, int dim) : data(Tensor({layers, dim})) {}

    int layers() const { return data.dim(0); }
    int dim() const { return data.dim(1); }

    void validate() const {
        if (!data.all_finite()) throw std::invalid_argument("LatentStack: non-finite values");
        for (int l = 0; l < layers(); ++l) {
            double n2 = 0.0;
            for (int j = 0; j < dim(); ++j) n2 += data(l, j) * data(l, j);
            if (std::sqrt(n2) > 100.0)
                throw std::invalid_argument("LatentStack: layer norm exceeds divergence guard");
        }
    }
};

inline void save_latents(const std::vector<LatentStack>& ws, const std::string& path) {
    const int t = static_cast<int>(ws.size());
    const int l = ws[0].layers(), d = ws[0].dim();
    Tensor all({t, l, d});
    for (int i = 0; i < t; ++i)
        for (int a = 0; a < l; ++a)
            for (int b = 0; b < d; ++b) all(i, a, b) = ws[static_cast<std::size_t>(i)].data(a, b);
    write_tensor_container(path, "TCVW", {{"latents", all}});
}

inline std::vector<LatentStack> load_latents(const std::string& path) {
    Tensor all = find_tensor(read_tensor_container(path, "TCVW"), "latents");
    if (all.ndim() != 3) throw std::runtime_error("latent file: expected (T,L,D)");
    std::vector<LatentStack> ws;
    for (int i = 0; i < all.dim(0); ++i) {
        Tensor t({all.dim(1), all.dim(2)});
        for (int a = 0; a < all.dim(1); ++a)
            for (int b = 0; b < all.dim(2); ++b) t(a, b) = all(i, a, b);
        ws.emplace_back(std::move(t));
    }
    return ws;
}

// ---------------------------------------------------------------------------
// Toy layered generator: learned 4x4 constant, then one upsample-conv block
// per resolution doubling with two modulated conv layers each. Latent layer l
// modulates synthesis layer l (per-channel scale and shift).
// ---------------------------------------------------------------------------

struct GeneratorConfig {
    int resolution = 64;
    int base_res = 4;
    int base_channels = 64;
    int latent_dim = 64;
    std::vector<int> layer_channels;  // per synthesis layer; empty = defaults

    int blocks() const {
        int b = 0;
        for (int r = base_res; r < resolution; r *= 2) ++b;
        if (base_res << b != resolution)
            throw std::invalid_argument("GeneratorConfig: resolution must be base_res * 2^k");
        return b;
    }
    int layers() const { return 2 * blocks(); }

    std::vector<int> channels() const {
        if (!layer_channels.empty()) {
            if (static_cast<int>(layer_channels.size()) != layers())
                throw std::invalid_argument("GeneratorConfig: layer_channels size mismatch");
            return layer_channels;
        }
        std::vector<int> c;
        int ch = base_channels / 2;
        for (int b = 0; b < blocks(); ++b) {
            c.push_back(ch);
            c.push_back(ch);
            ch = std::max(8, ch - ch / 4);
        }
        return c;
    }
};

struct GeneratorParams {
    struct Layer {
        Tensor conv_w;      // (Cout,Cin,3,3)
        Tensor conv_b;      // (Cout)
        Tensor mod_scale_w; // (Cout,D)
        Tensor mod_scale_b; // (Cout)
        Tensor mod_shift_w; // (Cout,D)
        Tensor mod_shift_b; // (Cout)
    };

    GeneratorConfig cfg;
    Tensor base;  // (C0, base_res, base_res)
    std::vector<Layer> layers;
    Tensor rgb_w;  // (3, Clast, 1, 1)
    Tensor rgb_b;  // (3)
    std::vector<bool> frozen;  // per synthesis layer

    static GeneratorParams init(const GeneratorConfig& cfg, std::uint64_t seed) {
        Rng rng = Rng::stream(seed, "generator.init");
        GeneratorParams p;
        p.cfg = cfg;
        p.base = rng.normal_tensor({cfg.base_channels, cfg.base_res, cfg.base_res});
        const auto ch = cfg.channels();
        int cin = cfg.base_channels;
        for (int l = 0; l < cfg.layers(); ++l) {
            Layer ly;
            const int cout = ch[static_cast<std::size_t>(l)];
            ly.conv_w = rng.normal_tensor({cout, cin, 3, 3}, 1.0 / std::sqrt(9.0 * cin));
            ly.conv_b = Tensor({cout});
            const double mstd = 0.2 / std::sqrt(static_cast<double>(cfg.latent_dim));
            ly.mod_scale_w = rng.normal_tensor({cout, cfg.latent_dim}, mstd);
            ly.mod_scale_b = Tensor({cout});
            ly.mod_shift_w = rng.normal_tensor({cout, cfg.latent_dim}, mstd);
            ly.mod_shift_b = Tensor({cout});
            p.layers.push_back(std::move(ly));
            cin = cout;
        }
        p.rgb_w = rng.normal_tensor({3, cin, 1, 1}, 2.0 / std::sqrt(static_cast<double>(cin)));
        p.rgb_b = Tensor({3});
        p.frozen.assign(static_cast<std::size_t>(cfg.layers()), false);
        return p;
    }

    void freeze_last(int k) {
        const int l = cfg.layers();
        for (int i = 0; i < l; ++i) frozen[static_cast<std::size_t>(i)] = i >= l - k;
    }

    bool is_frozen(int l) const { return frozen[static_cast<std::size_t>(l)]; }

    // Finetune-side mutation guard: frozen layers reject updates.
    Layer& layer_for_update(int l) {
        if (is_frozen(l))
            throw std::logic_error("generator layer " + std::to_string(l) + " is frozen");
        return layers[static_cast<std::size_t>(l)];
    }

    std::vector<std::pair<std::string, Tensor>> named() const {
        std::vector<std::pair<std::string, Tensor>> out;
        out.emplace_back("base", base);
        for (std::size_t l = 0; l < layers.size(); ++l) {
            const std::string p = "layer" + std::to_string(l) + ".";
            out.emplace_back(p + "conv_w", layers[l].conv_w);
            out.emplace_back(p + "conv_b", layers[l].conv_b);
            out.emplace_back(p + "mod_scale_w", layers[l].mod_scale_w);
            out.emplace_back(p + "mod_scale_b", layers[l].mod_scale_b);
            out.emplace_back(p + "mod_shift_w", layers[l].mod_shift_w);
            out.emplace_back(p + "mod_shift_b", layers[l].mod_shift_b);
        }
        out.emplace_back("rgb_w", rgb_w);
        out.emplace_back("rgb_b", rgb_b);
        Tensor fz({std::max<int>(1, static_cast<int>(frozen.size()))});
        for (std::size_t i = 0; i < frozen.size(); ++i) fz[i] = frozen[i] ? 1.0 : 0.0;
        out.emplace_back("frozen", fz);
        Tensor meta({4});
        meta(0) = cfg.resolution;
        meta(1) = cfg.base_res;
        meta(2) = cfg.base_channels;
        meta(3) = cfg.latent_dim;
        out.emplace_back("meta", meta);
        return out;
    }

    void save(const std::string& path) const { write_tensor_container(path, "TCVG", named()); }

    static GeneratorParams load(const std::string& path) {
        auto ts = read_tensor_container(path, "TCVG");
        Tensor meta = find_tensor(ts, "meta");
        GeneratorConfig cfg;
        cfg.resolution = static_cast<int>(meta(0));
        cfg.base_res = static_cast<int>(meta(1));
        cfg.base_channels = static_cast<int>(meta(2));
        cfg.latent_dim = static_cast<int>(meta(3));
        GeneratorParams p;
        p.cfg = cfg;
        p.base = find_tensor(ts, "base");
        for (int l = 0; l < cfg.layers(); ++l) {
            Layer ly;
            const std::string pre = "layer" + std::to_string(l) + ".";
            ly.conv_w = find_tensor(ts, pre + "conv_w");
            ly.conv_b = find_tensor(ts, pre + "conv_b");
            ly.mod_scale_w = find_tensor(ts, pre + "mod_scale_w");
            ly.mod_scale_b = find_tensor(ts, pre + "mod_scale_b");
            ly.mod_shift_w = find_tensor(ts, pre + "mod_shift_w");
            ly.mod_shift_b = find_tensor(ts, pre + "mod_shift_b");
            p.cfg.layer_channels.push_back(ly.conv_w.dim(0));
            p.layers.push_back(std::move(ly));
        }
        p.rgb_w = find_tensor(ts, "rgb_w");
        p.rgb_b = find_tensor(ts, "rgb_b");
        Tensor fz = find_tensor(ts, "frozen");
        p.frozen.clear();
        for (int l = 0; l < p.cfg.layers(); ++l) p.frozen.push_back(fz[static_cast<std::size_t>(l)] != 0.0);
        return p;
    }
};

// Var wrappers over one parameter snapshot. trainable=true wraps unfrozen
// layer tensors (plus base and RGB head) as leaves; frozen layers stay
// constants so their values cannot move.
struct GeneratorVarPack {
    GeneratorConfig cfg;
    ad::Var base;
    struct LayerVars {
        ad::Var conv_w, conv_b, mod_scale_w, mod_scale_b, mod_shift_w, mod_shift_b;
    };
    std::vector<LayerVars> layers;
    ad::Var rgb_w, rgb_b;
    std::vector<bool> frozen;

    static GeneratorVarPack from(const GeneratorParams& p, bool trainable) {
        GeneratorVarPack v;
        v.cfg = p.cfg;
        v.frozen = p.frozen;
        auto wrap = [&](const Tensor& t, bool train) {
            return train ? ad::leaf(t) : ad::constant(t);
        };
        v.base = wrap(p.base, trainable);
        for (std::size_t l = 0; l < p.layers.size(); ++l) {
            const bool train = trainable && !p.frozen[l];
            const auto& ly = p.layers[l];
            v.layers.push_back({wrap(ly.conv_w, train), wrap(ly.conv_b, train),
                                wrap(ly.mod_scale_w, train), wrap(ly.mod_scale_b, train),
                                wrap(ly.mod_shift_w, train), wrap(ly.mod_shift_b, train)});
        }
        v.rgb_w = wrap(p.rgb_w, trainable);
        v.rgb_b = wrap(p.rgb_b, trainable);
        return v;
    }

    std::vector<ad::Var> trainable() const {
        std::vector<ad::Var> out;
        auto take = [&](const ad::Var& x) {
            if (x.requires_grad()) out.push_back(x);
        };
        take(base);
        for (const auto& l : layers) {
            take(l.conv_w);
            take(l.conv_b);
            take(l.mod_scale_w);
            take(l.mod_scale_b);
            take(l.mod_shift_w);
            take(l.mod_shift_b);
        }
        take(rgb_w);
        take(rgb_b);
        return out;
    }

    GeneratorParams to_params() const {
        GeneratorParams p;
        p.cfg = cfg;
        p.frozen = frozen;
        p.base = base.value();
        for (const auto& l : layers)
            p.layers.push_back({l.conv_w.value(), l.conv_b.value(), l.mod_scale_w.value(),
                                l.mod_scale_b.value(), l.mod_shift_w.value(),
                                l.mod_shift_b.value()});
        p.rgb_w = rgb_w.value();
        p.rgb_b = rgb_b.value();
        return p;
    }
};

// Synthesis: differentiable in latents and any leaf params. Output sigmoid
// keeps frames strictly inside [0,1].
inline ad::Var generate_v(const GeneratorVarPack& p, const ad::Var& latents) {
    if (latents.value().dim(0) != p.cfg.layers() || latents.value().dim(1) != p.cfg.latent_dim)
        throw std::invalid_argument("generate: latent dims do not match generator");
    ad::Var x = p.base;
    for (int b = 0; b < p.cfg.blocks(); ++b) {
        x = ad::upsample2x(x);
        for (int sub = 0; sub < 2; ++sub) {
            const int l = 2 * b + sub;
            const auto& ly = p.layers[static_cast<std::size_t>(l)];
            x = ad::conv2d(x, ly.conv_w, ly.conv_b);
            // AdaIN-style: standardize per channel, then latent-driven scale+shift
            x = ad::instance_norm(x);
            ad::Var wl = ad::row(latents, l);
            ad::Var s = ad::scalar_add(ad::add(ad::matvec(ly.mod_scale_w, wl), ly.mod_scale_b), 1.0);
            ad::Var t = ad::add(ad::matvec(ly.mod_shift_w, wl), ly.mod_shift_b);
            x = ad::channel_affine(x, s, t);
            x = ad::leaky_relu(x, 0.2);
        }
    }
    ad::Var pre = ad::conv2d(x, p.rgb_w, p.rgb_b);
    return ad::sigmoid_v(pre);
}

inline Frame generate(const LatentStack& w, const GeneratorParams& params) {
    w.validate();
    GeneratorVarPack pack = GeneratorVarPack::from(params, false);
    return Frame(generate_v(pack, ad::constant(w.data)).value());
}

// ---------------------------------------------------------------------------
// Edits
// ---------------------------------------------------------------------------

enum class StyleTarget { sepia, sketch };

struct EditSpec {
    enum class Kind { in_domain, out_of_domain };
    Kind kind = Kind::in_domain;
    Tensor direction;               // (L,D), in-domain
    double strength = 0.0;
    double per_frame_noise_sigma = 0.0;
    StyleTarget style_target = StyleTarget::sepia;  // out-of-domain
    int finetune_steps = 0;
    double finetune_lr = 2e-3;
};

// Fixed seeded library of unit-norm edit directions.
inline Tensor seeded_direction(std::uint64_t id, int layers, int dim) {
    Rng rng = Rng::stream(id, "edit.direction");
    Tensor d = rng.normal_tensor({layers, dim});
    double n = 0.0;
    for (std::size_t i = 0; i < d.size(); ++i) n += d[i] * d[i];
    n = std::sqrt(n);
    for (std::size_t i = 0; i < d.size(); ++i) d[i] /= n;
    return d;
}

// W_edit_t = W_inv_t + strength*direction + eta_t. The per-frame Gaussian
// eta simulates independent per-frame editing inconsistency.
inline std::vector<LatentStack> apply_in_domain_edit(const std::vector<LatentStack>& latents,
                                                     const EditSpec& spec, std::uint64_t seed) {
    if (spec.kind != EditSpec::Kind::in_domain)
        throw std::invalid_argument("apply_in_domain_edit: spec kind mismatch");
    Rng noise = Rng::stream(seed, "edit.noise");
    std::vector<LatentStack> out;
    out.reserve(latents.size());
    for (const auto& w : latents) {
        Tensor t = w.data;
        for (std::size_t i = 0; i < t.size(); ++i) {
            const double dir = spec.direction.empty() ? 0.0 : spec.direction[i];
            t[i] += spec.strength * dir + spec.per_frame_noise_sigma * noise.normal();
        }
        out.emplace_back(std::move(t));
    }
    return out;
}

inline Frame stylize(const Frame& f, StyleTarget target) {
    const int h = f.height(), w = f.width();
    Frame out(h, w);
    if (target == StyleTarget::sepia) {
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                const double r = f.at(0, y, x), g = f.at(1, y, x), b = f.at(2, y, x);
                out.at(0, y, x) = std::min(1.0, 0.393 * r + 0.769 * g + 0.189 * b);
                out.at(1, y, x) = std::min(1.0, 0.349 * r + 0.686 * g + 0.168 * b);
                out.at(2, y, x) = std::min(1.0, 0.272 * r + 0.534 * g + 0.131 * b);
            }
        return out;
    }
    // luminance sketch: bright where the luminance gradient is weak
    Tensor lum({h, w});
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            lum(y, x) = 0.299 * f.at(0, y, x) + 0.587 * f.at(1, y, x) + 0.114 * f.at(2, y, x);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            const int xp = std::min(x + 1, w - 1), yp = std::min(y + 1, h - 1);
            const double gx = lum(y, xp) - lum(y, x);
            const double gy = lum(yp, x) - lum(y, x);
            const double v = std::clamp(1.0 - 6.0 * std::sqrt(gx * gx + gy * gy), 0.0, 1.0);
            for (int c = 0; c < 3; ++c) out.at(c, y, x) = v;
        }
    return out;
}

// Out-of-domain direct edit: finetune one shared copy of the generator so
// each frame matches its stylized target, frame blocks run sequentially and
// independently (fresh optimizer state per frame) which deliberately admits
// temporal inconsistency. Latents are untouched.
inline GeneratorParams apply_out_of_domain_edit(const GeneratorParams& params,
                                                const std::vector<LatentStack>& latents,
                                                const std::vector<Frame>& input_frames,
                                                const EditSpec& spec) {
    if (spec.kind != EditSpec::Kind::out_of_domain)
        throw std::invalid_argument("apply_out_of_domain_edit: spec kind mismatch");
    if (latents.size() != input_frames.size())
        throw std::invalid_argument("apply_out_of_domain_edit: latent/frame count mismatch");
    GeneratorParams cur = params;
    for (std::size_t t = 0; t < input_frames.size(); ++t) {
        if (spec.finetune_steps == 0) break;
        Frame target = stylize(input_frames[t], spec.style_target);
        GeneratorVarPack pack = GeneratorVarPack::from(cur, true);
        Adam opt(pack.trainable(), spec.finetune_lr);
        ad::Var w = ad::constant(latents[t].data);
        for (int s = 0; s < spec.finetune_steps; ++s) {
            opt.zero_grad();
            ad::Var loss = ad::mse(generate_v(pack, w), ad::constant(target.data));
            if (!std::isfinite(loss.scalar()))
                throw std::runtime_error("out-of-domain edit diverged at frame " +
                                         std::to_string(t) + " step " + std::to_string(s));
            ad::backward(loss);
            opt.step();
        }
        cur = pack.to_params();
    }
    return cur;
}

// ---------------------------------------------------------------------------
// Inversion: desk-scale pivotal-tuning analog. Stage A optimizes per-frame
// latents (initialized from the mean of per-frame warm starts) against
// perceptual + 0.1*MSE; stage B finetunes the generator with latents fixed.
// ---------------------------------------------------------------------------

struct InversionConfig {
    int warm_steps = 24;
    int latent_steps = 96;
    double latent_lr = 0.1;
    int tune_steps = 600;  // total, round-robin over frames
    double tune_lr = 3e-3;
    double mse_weight = 0.1;
    double psnr_fail_db = 20.0;
    std::uint64_t seed = 1;
};

struct InversionResult {
    std::vector<LatentStack> latents;
    GeneratorParams params;     // theta_inv
    std::vector<double> psnr;   // per frame
    std::vector<int> failed;    // frames below psnr_fail_db
};

namespace detail {

inline ad::Var recon_loss(const GeneratorVarPack& pack, const ad::Var& w, const Tensor& target,
                          const PerceptualExtractor& percep, double mse_weight) {
    ad::Var img = generate_v(pack, w);
    ad::Var tgt = ad::constant(target);
    return ad::add(percep.distance_v(img, tgt), ad::scalar_mul(ad::mse(img, tgt), mse_weight));
}

inline Tensor optimize_latent(const GeneratorVarPack& pack, const Tensor& init,
                              const Tensor& target, const PerceptualExtractor& percep,
                              int steps, double lr, double mse_weight) {
    ad::Var w = ad::leaf(init);
    Adam opt({w}, lr);
    for (int s = 0; s < steps; ++s) {
        opt.zero_grad();
        ad::Var loss = recon_loss(pack, w, target, percep, mse_weight);
        ad::backward(loss);
        opt.step();
    }
    return w.value();
}

}  // namespace detail

inline InversionResult invert_frames(const std::vector<Frame>& frames,
                                     const GeneratorParams& init_params,
                                     const PerceptualExtractor& percep,
                                     const InversionConfig& cfg) {
    if (frames.size() < 2) throw std::invalid_argument("invert_frames: need >= 2 frames");
    for (const auto& f : frames) {
        require_generator_dims(f.height(), f.width(), "invert_frames");
        if (f.height() != init_params.cfg.resolution || f.width() != init_params.cfg.resolution)
            throw std::invalid_argument("invert_frames: frame size != generator resolution");
    }
    const int T = static_cast<int>(frames.size());
    const int L = init_params.cfg.layers(), D = init_params.cfg.latent_dim;

    GeneratorVarPack fixed = GeneratorVarPack::from(init_params, false);

    // warm starts -> shared mean init
    Tensor mean_init({L, D});
    {
        Tensor zero({L, D});
        for (int t = 0; t < T; ++t) {
            Tensor wt = detail::optimize_latent(fixed, zero, frames[static_cast<std::size_t>(t)].data,
                                                percep, cfg.warm_steps, cfg.latent_lr,
                                                cfg.mse_weight);
            for (std::size_t i = 0; i < mean_init.size(); ++i) mean_init[i] += wt[i] / T;
        }
    }

    // stage A: per-frame latent optimization from the shared init
    std::vector<LatentStack> latents;
    for (int t = 0; t < T; ++t)
        latents.emplace_back(detail::optimize_latent(fixed, mean_init,
                                                     frames[static_cast<std::size_t>(t)].data,
                                                     percep, cfg.latent_steps, cfg.latent_lr,
                                                     cfg.mse_weight));

    // stage B: generator finetuning with latents fixed, round-robin frames
    GeneratorVarPack pack = GeneratorVarPack::from(init_params, true);
    Adam opt(pack.trainable(), cfg.tune_lr);
    opt.set_grad_clip(1.0);
    opt.set_linear_decay(cfg.tune_steps);
    for (int s = 0; s < cfg.tune_steps; ++s) {
        const int t = s % T;
        opt.zero_grad();
        ad::Var loss = detail::recon_loss(pack, ad::constant(latents[static_cast<std::size_t>(t)].data),
                                          frames[static_cast<std::size_t>(t)].data, percep,
                                          cfg.mse_weight);
        ad::backward(loss);
        opt.step();
    }

    InversionResult res;
    res.params = pack.to_params();
    res.latents = std::move(latents);
    for (int t = 0; t < T; ++t) {
        Frame rec = generate(res.latents[static_cast<std::size_t>(t)], res.params);
        res.psnr.push_back(psnr(rec, frames[static_cast<std::size_t>(t)]));
        if (res.psnr.back() < cfg.psnr_fail_db) res.failed.push_back(t);
    }
    return res;
}

}  // namespace tcv
