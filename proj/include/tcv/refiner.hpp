#pragma once

#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "tcv/flow.hpp"
#include "tcv/generator.hpp"
#include "tcv/optim.hpp"
#include "tcv/perceptual.hpp"

namespace tcv {

// ---------------------------------------------------------------------------
// Residual MLP over latent stacks: one MLP shared across latent layers with a
// learned per-layer embedding concatenated to the input. The output linear is
// zero-initialized so a fresh refiner is exactly the identity.
// ---------------------------------------------------------------------------

struct RefinerConfig {
    int hidden = 128;
    int hidden_layers = 4;
    int embed_dim = 16;
    double alpha = 0.04;  // residual scale (paper default; 0.12 for strong localized edits)
};

class LatentRefiner {
public:
    LatentRefiner(int latent_layers, int latent_dim, const RefinerConfig& cfg, std::uint64_t seed)
        : cfg_(cfg), latent_layers_(latent_layers), latent_dim_(latent_dim) {
        Rng rng = Rng::stream(seed, "refiner.init");
        embed_ = ad::leaf(rng.normal_tensor({latent_layers, cfg.embed_dim}));
        int in = latent_dim + cfg.embed_dim;
        for (int l = 0; l < cfg.hidden_layers; ++l) {
            ws_.push_back(ad::leaf(rng.normal_tensor({cfg.hidden, in}, std::sqrt(2.0 / in))));
            bs_.push_back(ad::leaf(Tensor({cfg.hidden})));
            in = cfg.hidden;
        }
        w_out_ = ad::leaf(Tensor({latent_dim, cfg.hidden}));  // zero-init output head
        b_out_ = ad::leaf(Tensor({latent_dim}));
    }

    double alpha() const { return cfg_.alpha; }
    void set_alpha(double a) { cfg_.alpha = a; }
    int latent_layers() const { return latent_layers_; }
    int latent_dim() const { return latent_dim_; }

    // f_theta(W): per-layer residual, shape (L,D)
    ad::Var residual(const ad::Var& latents) const {
        std::vector<ad::Var> rows;
        for (int l = 0; l < latent_layers_; ++l) {
            ad::Var h = ad::concat1d(ad::row(latents, l), ad::row(embed_, l));
            for (std::size_t k = 0; k < ws_.size(); ++k)
                h = ad::leaky_relu(ad::add(ad::matvec(ws_[k], h), bs_[k]), 0.2);
            rows.push_back(ad::add(ad::matvec(w_out_, h), b_out_));
        }
        return ad::stack_rows(rows);
    }

    // W_hat = W + alpha * f_theta(W)
    ad::Var refine_v(const ad::Var& latents) const {
        ad::Var r = ad::add(latents, ad::scalar_mul(residual(latents), cfg_.alpha));
        if (!r.value().all_finite())
            throw std::runtime_error("refiner produced non-finite latents");
        return r;
    }

    LatentStack refine(const LatentStack& w) const {
        if (w.layers() != latent_layers_ || w.dim() != latent_dim_)
            throw std::invalid_argument("refine: latent dims mismatch");
        return LatentStack(refine_v(ad::constant(w.data)).value());
    }

    std::vector<ad::Var> trainable() {
        std::vector<ad::Var> out = {embed_};
        for (auto& w : ws_) out.push_back(w);
        for (auto& b : bs_) out.push_back(b);
        out.push_back(w_out_);
        out.push_back(b_out_);
        return out;
    }

    void save(const std::string& path) const {
        std::vector<std::pair<std::string, Tensor>> ts;
        ts.emplace_back("embed", embed_.value());
        for (std::size_t k = 0; k < ws_.size(); ++k) {
            ts.emplace_back("w" + std::to_string(k), ws_[k].value());
            ts.emplace_back("b" + std::to_string(k), bs_[k].value());
        }
        ts.emplace_back("w_out", w_out_.value());
        ts.emplace_back("b_out", b_out_.value());
        write_tensor_container(path, "TCVW", ts);
    }

    void load(const std::string& path) {
        auto ts = read_tensor_container(path, "TCVW");
        embed_.value_mut() = find_tensor(ts, "embed");
        for (std::size_t k = 0; k < ws_.size(); ++k) {
            ws_[k].value_mut() = find_tensor(ts, "w" + std::to_string(k));
            bs_[k].value_mut() = find_tensor(ts, "b" + std::to_string(k));
        }
        w_out_.value_mut() = find_tensor(ts, "w_out");
        b_out_.value_mut() = find_tensor(ts, "b_out");
    }

private:
    RefinerConfig cfg_;
    int latent_layers_, latent_dim_;
    ad::Var embed_;
    std::vector<ad::Var> ws_, bs_;
    ad::Var w_out_, b_out_;
};

// ---------------------------------------------------------------------------
// Shared pair machinery: flows, masks and the bi-directional photometric
// loss between an anchor frame and a sampled frame. Maps are named by the
// grid they live on; "into_anc" weights the comparison done in anchor
// geometry (frame i warped into the anchor).
// ---------------------------------------------------------------------------

struct PairContext {
    Tensor flow_anc_to_i;  // anchor grid, points into frame i
    Tensor flow_i_to_anc;  // frame-i grid, points into anchor
    Tensor mask_anc_grid;  // fused or visibility-only, anchor geometry
    Tensor mask_i_grid;
    Tensor eps_anc_grid;   // consistency error maps (constant within a step)
    Tensor eps_i_grid;
};

enum class EditMode { in_domain, out_of_domain };

// Builds flows from the given frames with the provider, then the per-grid
// visibility masks; in-domain mode fuses each grid's perceptual-difference
// mask (current frame vs aligned input on the same grid).
inline PairContext make_pair_context(const Frame& cur_anc, const Frame& cur_i,
                                     const Frame& in_anc, const Frame& in_i,
                                     const FlowProviderConfig& provider, EditMode mode,
                                     const PerceptualExtractor& percep,
                                     int anc_index = -1, int i_index = -1) {
    PairContext ctx;
    ctx.flow_anc_to_i = estimate_flow(cur_anc, cur_i, provider, anc_index, i_index).data;
    ctx.flow_i_to_anc = estimate_flow(cur_i, cur_anc, provider, i_index, anc_index).data;
    ConsistencyResult ea = fb_consistency_error(FlowField(ctx.flow_anc_to_i), FlowField(ctx.flow_i_to_anc));
    ConsistencyResult ei = fb_consistency_error(FlowField(ctx.flow_i_to_anc), FlowField(ctx.flow_anc_to_i));
    ctx.eps_anc_grid = ea.error;
    ctx.eps_i_grid = ei.error;
    Tensor vis_anc = visibility_mask(ea);
    Tensor vis_i = visibility_mask(ei);
    if (mode == EditMode::in_domain) {
        Tensor pd_anc = percep.difference_mask(cur_anc, in_anc);
        Tensor pd_i = percep.difference_mask(cur_i, in_i);
        ctx.mask_anc_grid = fuse_masks(vis_anc, pd_anc);
        ctx.mask_i_grid = fuse_masks(vis_i, pd_i);
    } else {
        ctx.mask_anc_grid = std::move(vis_anc);
        ctx.mask_i_grid = std::move(vis_i);
    }
    return ctx;
}

// Bi-directional masked perceptual photometric loss.
inline ad::Var photometric_loss(const ad::Var& frame_anc, const ad::Var& frame_i,
                                const PairContext& ctx, const PerceptualExtractor& percep) {
    ad::Var warped_i = warp_v(frame_i, ad::constant(ctx.flow_anc_to_i));
    ad::Var warped_anc = warp_v(frame_anc, ad::constant(ctx.flow_i_to_anc));
    ad::Var term_anc = percep.distance_v(frame_anc, warped_i, &ctx.mask_anc_grid);
    ad::Var term_i = percep.distance_v(frame_i, warped_anc, &ctx.mask_i_grid);
    return ad::add(term_anc, term_i);
}

inline double eps_l1(const PairContext& ctx) {
    return ctx.eps_anc_grid.mean() + ctx.eps_i_grid.mean();
}

// ---------------------------------------------------------------------------
// Phase 1
// ---------------------------------------------------------------------------

struct Phase1Config {
    int epochs = 10;          // in-domain default; 5 out-of-domain
    double lr = 0.05;         // alpha_I in-domain; 0.005 out-of-domain
    double lambda_rf = 0.1;
    double lambda_eps = 10.0;
    RefinerConfig refiner;
    FlowProviderConfig provider;
    bool recompute_flows = true;  // per-epoch from current outputs; else fixed from direct edit
    // Accepted for spec parity: with leaf flow fields both settings behave
    // identically since no estimator gradients exist to propagate.
    enum class FlowGrad { none, through_sampling };
    FlowGrad flow_grad = FlowGrad::none;

    static Phase1Config defaults(EditMode mode) {
        Phase1Config c;
        if (mode == EditMode::out_of_domain) {
            c.epochs = 5;
            c.lr = 0.005;
        }
        return c;
    }
};

struct Phase1Breakdown {
    double photo = 0, rf = 0, eps = 0, total = 0;
};

// L_I for one (anchor, i) pair: photometric + lambda_rf * L_rf + lambda_eps * L_eps.
inline ad::Var phase1_pair_loss(const LatentRefiner& refiner, const GeneratorVarPack& gen,
                                const Tensor& w_anc, const Tensor& w_i, const PairContext& ctx,
                                const PerceptualExtractor& percep, const Phase1Config& cfg,
                                Phase1Breakdown* bd = nullptr) {
    ad::Var res_anc = refiner.residual(ad::constant(w_anc));
    ad::Var res_i = refiner.residual(ad::constant(w_i));
    ad::Var what_anc = ad::add(ad::constant(w_anc), ad::scalar_mul(res_anc, refiner.alpha()));
    ad::Var what_i = ad::add(ad::constant(w_i), ad::scalar_mul(res_i, refiner.alpha()));
    ad::Var frame_anc = generate_v(gen, what_anc);
    ad::Var frame_i = generate_v(gen, what_i);

    ad::Var photo = photometric_loss(frame_anc, frame_i, ctx, percep);
    ad::Var rf = ad::add(ad::mean_abs(res_i), ad::mean_abs(res_anc));
    const double eps = eps_l1(ctx);

    ad::Var total = ad::add(photo, ad::scalar_mul(rf, cfg.lambda_rf));
    total = ad::scalar_add(total, cfg.lambda_eps * eps);
    if (bd) {
        bd->photo = photo.scalar();
        bd->rf = rf.scalar();
        bd->eps = eps;
        bd->total = total.scalar();
    }
    if (!std::isfinite(total.scalar()))
        throw std::runtime_error("phase1 loss non-finite (photo=" + std::to_string(bd ? bd->photo : -1) +
                                 " rf=" + std::to_string(bd ? bd->rf : -1) +
                                 " eps=" + std::to_string(eps) + ")");
    return total;
}

struct Phase1Result {
    std::vector<LatentStack> refined;  // all frames, anchor included
    std::vector<std::string> log_rows; // epoch,pair,L_photo,L_rf,L_eps,total
    bool loss_increase_warning = false;
};

// One epoch visits every i != anc exactly once in seeded-shuffled order.
inline Phase1Result run_phase1(LatentRefiner& refiner, const GeneratorParams& params,
                               const std::vector<LatentStack>& edit_latents,
                               const std::vector<Frame>& aligned_inputs, int anchor,
                               EditMode mode, const Phase1Config& cfg,
                               const PerceptualExtractor& percep, std::uint64_t seed) {
    const int T = static_cast<int>(edit_latents.size());
    if (anchor < 0 || anchor >= T) throw std::invalid_argument("run_phase1: bad anchor");
    GeneratorVarPack gen = GeneratorVarPack::from(params, false);
    Adam opt(refiner.trainable(), cfg.lr);
    Rng order_rng = Rng::stream(seed, "phase1.order");

    Phase1Result res;
    auto regen = [&](const std::vector<LatentStack>& ws) {
        std::vector<Frame> fs;
        fs.reserve(ws.size());
        for (const auto& w : ws) fs.push_back(generate(w, params));
        return fs;
    };
    auto refined_all = [&]() {
        std::vector<LatentStack> ws;
        ws.reserve(static_cast<std::size_t>(T));
        for (const auto& w : edit_latents) ws.push_back(refiner.refine(w));
        return ws;
    };

    std::vector<Frame> flow_frames = regen(edit_latents);  // direct-edit frames
    double prev_epoch_loss = 0.0;
    int increase_streak = 0;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        if (cfg.recompute_flows && epoch > 0) flow_frames = regen(refined_all());
        std::vector<int> order;
        for (int i = 0; i < T; ++i)
            if (i != anchor) order.push_back(i);
        order_rng.shuffle(order);
        double epoch_loss = 0.0;
        for (int i : order) {
            PairContext ctx = make_pair_context(
                flow_frames[static_cast<std::size_t>(anchor)], flow_frames[static_cast<std::size_t>(i)],
                aligned_inputs[static_cast<std::size_t>(anchor)], aligned_inputs[static_cast<std::size_t>(i)],
                cfg.provider, mode, percep);
            opt.zero_grad();
            Phase1Breakdown bd;
            ad::Var loss = phase1_pair_loss(refiner, gen, edit_latents[static_cast<std::size_t>(anchor)].data,
                                            edit_latents[static_cast<std::size_t>(i)].data, ctx, percep,
                                            cfg, &bd);
            ad::backward(loss);
            opt.step();
            epoch_loss += bd.total;
            res.log_rows.push_back(std::to_string(epoch) + "," + std::to_string(i) + "," +
                                   std::to_string(bd.photo) + "," + std::to_string(bd.rf) + "," +
                                   std::to_string(bd.eps) + "," + std::to_string(bd.total));
        }
        if (epoch > 0 && epoch_loss > prev_epoch_loss) {
            if (++increase_streak >= 3) {
                res.loss_increase_warning = true;
                std::cerr << "[phase1] warning: loss increased for 3 consecutive epochs\n";
                increase_streak = 0;
            }
        } else {
            increase_streak = 0;
        }
        prev_epoch_loss = epoch_loss;
    }
    res.refined = refined_all();
    return res;
}

}  // namespace tcv
