#pragma once

#include <string>
#include <vector>

#include "tcv/refiner.hpp"

namespace tcv {

struct Phase2Config {
    EditMode mode = EditMode::in_domain;
    double lambda_eps = 10.0;
    double lambda_r = 200.0;
    double lambda_m = 1.0;
    double lambda_l2r = 1.0;
    double alpha_interp = 0.5;
    double lr = 1e-4;          // alpha_II in-domain; 8e-4 out-of-domain
    int epochs = 5;
    int freeze_last_k = 0;     // out-of-domain default L/2
    FlowProviderConfig provider;
    bool recompute_flows = true;

    static Phase2Config defaults(EditMode mode, int latent_layers = 8) {
        Phase2Config c;
        c.mode = mode;
        if (mode == EditMode::out_of_domain) {
            c.lr = 8e-4;
            c.freeze_last_k = latent_layers / 2;
        }
        return c;
    }

    void validate() const {
        if (lambda_eps < 0 || lambda_r < 0 || lambda_m < 0 || lambda_l2r < 0)
            throw std::invalid_argument("Phase2Config: negative lambda");
        if (!(alpha_interp > 0.0 && alpha_interp <= 1.0))
            throw std::invalid_argument("Phase2Config: alpha_interp must be in (0,1]");
    }
};

// ---------------------------------------------------------------------------
// Local latent-space regularization (L_r): keep the finetuned generator close
// to the snapshot on codes interpolated a fixed distance alpha_interp from
// the current latent toward a random code. Gradients flow only into the new
// generator.
// ---------------------------------------------------------------------------

inline Tensor draw_wr(const LatentStack& w_hat, double alpha_interp, Rng& rng) {
    Tensor wr = w_hat.data;
    for (int attempt = 0; attempt < 16; ++attempt) {
        Tensor wz = rng.normal_tensor(w_hat.data.shape());
        double n2 = 0.0;
        for (std::size_t i = 0; i < wz.size(); ++i) {
            const double d = wz[i] - w_hat.data[i];
            n2 += d * d;
        }
        const double n = std::sqrt(n2);
        if (n < 1e-8) continue;  // resample degenerate draw
        for (std::size_t i = 0; i < wr.size(); ++i)
            wr[i] = w_hat.data[i] + alpha_interp * (wz[i] - w_hat.data[i]) / n;
        return wr;
    }
    throw std::runtime_error("draw_wr: repeated degenerate W_z draws");
}

inline ad::Var local_reg_loss(const LatentStack& w_hat, const GeneratorParams& theta_old,
                              const GeneratorVarPack& theta_new, const PerceptualExtractor& percep,
                              double alpha_interp, double lambda_l2r, Rng& rng,
                              Tensor* wr_out = nullptr) {
    Tensor wr = draw_wr(w_hat, alpha_interp, rng);
    if (wr_out) *wr_out = wr;
    Frame x_r = generate(LatentStack(wr), theta_old);
    ad::Var x_hat_r = generate_v(theta_new, ad::constant(wr));
    return ad::add(percep.distance_v(ad::constant(x_r.data), x_hat_r),
                   ad::scalar_mul(ad::mse(ad::constant(x_r.data), x_hat_r), lambda_l2r));
}

// (1 - M_PD)-weighted perceptual distance between an edited frame and the
// aligned input; pixels fully inside the edit get zero weight and therefore
// zero gradient.
inline ad::Var masked_input_loss(const ad::Var& edited, const Frame& input, const Tensor& m_pd,
                                 const PerceptualExtractor& percep) {
    Tensor inv = m_pd;
    for (std::size_t i = 0; i < inv.size(); ++i) inv[i] = 1.0 - inv[i];
    return percep.distance_v(edited, ad::constant(input.data), &inv);
}

struct Phase2Result {
    GeneratorParams params;            // theta_hat_edit
    std::vector<Frame> frames;         // regenerated from refined latents
    std::vector<std::string> log_rows; // epoch,pair,L_photo,L_eps,L_r,L_M,total
};

// Phase 2: finetune the generator with refined latents fixed. In-domain uses
// fused masks and adds L_M; out-of-domain uses visibility masks only, drops
// L_M, and enforces the freeze flags.
inline Phase2Result run_phase2(const GeneratorParams& theta_edit,
                               const std::vector<LatentStack>& refined,
                               const std::vector<Frame>& aligned_inputs, int anchor,
                               const Phase2Config& cfg, const PerceptualExtractor& percep,
                               std::uint64_t seed) {
    cfg.validate();
    const int T = static_cast<int>(refined.size());
    if (anchor < 0 || anchor >= T) throw std::invalid_argument("run_phase2: bad anchor");

    GeneratorParams start = theta_edit;
    if (cfg.freeze_last_k > 0) start.freeze_last(cfg.freeze_last_k);

    GeneratorVarPack pack = GeneratorVarPack::from(start, true);
    Adam opt(pack.trainable(), cfg.lr);
    Rng wz_rng = Rng::stream(seed, "phase2.wz");
    Rng order_rng = Rng::stream(seed, "phase2.order");

    Phase2Result res;
    auto regen_all = [&]() {
        GeneratorParams cur = pack.to_params();
        std::vector<Frame> fs;
        fs.reserve(static_cast<std::size_t>(T));
        for (const auto& w : refined) fs.push_back(generate(w, cur));
        return fs;
    };

    std::vector<Frame> flow_frames = regen_all();
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        if (cfg.recompute_flows && epoch > 0) flow_frames = regen_all();
        std::vector<int> order;
        for (int i = 0; i < T; ++i)
            if (i != anchor) order.push_back(i);
        order_rng.shuffle(order);
        for (int i : order) {
            PairContext ctx = make_pair_context(
                flow_frames[static_cast<std::size_t>(anchor)], flow_frames[static_cast<std::size_t>(i)],
                aligned_inputs[static_cast<std::size_t>(anchor)], aligned_inputs[static_cast<std::size_t>(i)],
                cfg.provider, cfg.mode, percep);
            opt.zero_grad();

            ad::Var frame_anc = generate_v(pack, ad::constant(refined[static_cast<std::size_t>(anchor)].data));
            ad::Var frame_i = generate_v(pack, ad::constant(refined[static_cast<std::size_t>(i)].data));
            ad::Var photo = photometric_loss(frame_anc, frame_i, ctx, percep);
            const double eps = eps_l1(ctx);
            ad::Var lr_term = local_reg_loss(refined[static_cast<std::size_t>(i)], theta_edit, pack,
                                             percep, cfg.alpha_interp, cfg.lambda_l2r, wz_rng);
            ad::Var total = ad::add(photo, ad::scalar_mul(lr_term, cfg.lambda_r));
            total = ad::scalar_add(total, cfg.lambda_eps * eps);

            double lm_val = 0.0;
            if (cfg.mode == EditMode::in_domain) {
                // M_PD recomputed against the current frames each evaluation,
                // stop-gradient through the mask itself.
                Tensor pd_i = percep.difference_mask(Frame(frame_i.value()),
                                                     aligned_inputs[static_cast<std::size_t>(i)]);
                Tensor pd_anc = percep.difference_mask(Frame(frame_anc.value()),
                                                       aligned_inputs[static_cast<std::size_t>(anchor)]);
                ad::Var lm = ad::add(
                    masked_input_loss(frame_i, aligned_inputs[static_cast<std::size_t>(i)], pd_i, percep),
                    masked_input_loss(frame_anc, aligned_inputs[static_cast<std::size_t>(anchor)], pd_anc,
                                      percep));
                lm_val = lm.scalar();
                total = ad::add(total, ad::scalar_mul(lm, cfg.lambda_m));
            }
            if (!std::isfinite(total.scalar()))
                throw std::runtime_error(
                    "phase2 loss non-finite (photo=" + std::to_string(photo.scalar()) +
                    " eps=" + std::to_string(eps) + " L_r=" + std::to_string(lr_term.scalar()) +
                    " L_M=" + std::to_string(lm_val) + ")");
            ad::backward(total);
            opt.step();
            res.log_rows.push_back(std::to_string(epoch) + "," + std::to_string(i) + "," +
                                   std::to_string(photo.scalar()) + "," + std::to_string(eps) + "," +
                                   std::to_string(lr_term.scalar()) + "," + std::to_string(lm_val) +
                                   "," + std::to_string(total.scalar()));
        }
    }

    res.params = pack.to_params();
    // Internal assertion: frozen layers must be bit-identical.
    for (int l = 0; l < res.params.cfg.layers(); ++l)
        if (res.params.is_frozen(l) &&
            !(res.params.layers[static_cast<std::size_t>(l)].conv_w ==
              start.layers[static_cast<std::size_t>(l)].conv_w))
            throw std::logic_error("phase2: frozen layer mutated");
    res.frames.reserve(static_cast<std::size_t>(T));
    for (const auto& w : refined) res.frames.push_back(generate(w, res.params));
    return res;
}

}  // namespace tcv
