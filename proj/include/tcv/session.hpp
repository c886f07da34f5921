#pragma once

#include <nlohmann/json.hpp>

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "tcv/generator.hpp"
#include "tcv/metrics.hpp"
#include "tcv/refiner.hpp"
#include "tcv/synthdata.hpp"
#include "tcv/tuner.hpp"

namespace tcv {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Alignment: per-frame affine 2x3 mapping original-frame coordinates to the
// canonical aligned square. Identity by default (face detectors are out of
// scope; transforms are user-supplied).
// ---------------------------------------------------------------------------

struct AlignTransform {
    // aligned = M * original + t
    double m[2][3] = {{1, 0, 0}, {0, 1, 0}};

    double det() const { return m[0][0] * m[1][1] - m[0][1] * m[1][0]; }

    void require_invertible() const {
        if (std::abs(det()) < 1e-6)
            throw std::invalid_argument("AlignTransform: non-invertible matrix");
    }

    AlignTransform inverse() const {
        require_invertible();
        const double d = det();
        AlignTransform r;
        r.m[0][0] = m[1][1] / d;
        r.m[0][1] = -m[0][1] / d;
        r.m[1][0] = -m[1][0] / d;
        r.m[1][1] = m[0][0] / d;
        r.m[0][2] = -(r.m[0][0] * m[0][2] + r.m[0][1] * m[1][2]);
        r.m[1][2] = -(r.m[1][0] * m[0][2] + r.m[1][1] * m[1][2]);
        return r;
    }

    std::pair<double, double> apply(double x, double y) const {
        return {m[0][0] * x + m[0][1] * y + m[0][2], m[1][0] * x + m[1][1] * y + m[1][2]};
    }
};

inline Frame align(const Frame& frame, const AlignTransform& t, int out_res) {
    t.require_invertible();
    const AlignTransform inv = t.inverse();
    Tensor grid({2, out_res, out_res});
    for (int y = 0; y < out_res; ++y)
        for (int x = 0; x < out_res; ++x) {
            auto [ox, oy] = inv.apply(x, y);
            grid(0, y, x) = ox;
            grid(1, y, x) = oy;
        }
    Tensor out, mask;
    kernels::bilinear_sample_fwd(frame.data, grid, out, &mask);
    return Frame(std::move(out));
}

// Inverse-warp the edited square into the original frame and composite with a
// feathered alpha border (linear ramp over 8 px from the square's edge).
inline Frame unalign(const Frame& edited, const Frame& original, const AlignTransform& t) {
    t.require_invertible();
    const int h = original.height(), w = original.width();
    const int eh = edited.height(), ew = edited.width();
    Frame out = original;
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            auto [qx, qy] = t.apply(x, y);
            if (qx < 0 || qx > ew - 1 || qy < 0 || qy > eh - 1) continue;
            const double border = std::min(std::min(qx, ew - 1 - qx), std::min(qy, eh - 1 - qy));
            const double alpha = std::clamp(border / 8.0, 0.0, 1.0);
            if (alpha == 0.0) continue;
            const double cx = std::clamp(qx, 0.0, static_cast<double>(ew - 1));
            const double cy = std::clamp(qy, 0.0, static_cast<double>(eh - 1));
            const int x0 = std::min(static_cast<int>(cx), ew - 1);
            const int y0 = std::min(static_cast<int>(cy), eh - 1);
            const int x1 = std::min(x0 + 1, ew - 1);
            const int y1 = std::min(y0 + 1, eh - 1);
            const double fx = cx - x0, fy = cy - y0;
            for (int c = 0; c < 3; ++c) {
                const double v = (1 - fy) * ((1 - fx) * edited.at(c, y0, x0) + fx * edited.at(c, y0, x1)) +
                                 fy * ((1 - fx) * edited.at(c, y1, x0) + fx * edited.at(c, y1, x1));
                out.at(c, y, x) = alpha * v + (1 - alpha) * original.at(c, y, x);
            }
        }
    return out;
}

inline std::vector<AlignTransform> load_transforms(const std::string& path, int count) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("cannot open transform file: " + path);
    json j = json::parse(is);
    std::vector<AlignTransform> ts;
    const auto parse_one = [](const json& m) {
        AlignTransform t;
        for (int r = 0; r < 2; ++r)
            for (int c = 0; c < 3; ++c) t.m[r][c] = m.at(static_cast<std::size_t>(r)).at(static_cast<std::size_t>(c)).get<double>();
        t.require_invertible();
        return t;
    };
    const json& arr = j.contains("transforms") ? j["transforms"] : j;
    if (arr.is_array() && arr.size() && arr[0].is_array() && arr[0][0].is_array()) {
        for (const auto& m : arr) ts.push_back(parse_one(m));
    } else {
        ts.push_back(parse_one(arr));
    }
    if (static_cast<int>(ts.size()) == 1) ts.assign(static_cast<std::size_t>(count), ts[0]);
    if (static_cast<int>(ts.size()) != count)
        throw std::runtime_error("transform count does not match frame count");
    return ts;
}

// ---------------------------------------------------------------------------
// Session configuration (JSON, schema_version 1). A run is reproducible from
// config + seed alone; every random draw comes from a named sub-stream.
// ---------------------------------------------------------------------------

struct EditSpecConfig {
    std::string kind = "in_domain";  // or "out_of_domain"
    std::uint64_t direction_seed = 17;
    std::string direction_file;      // optional TCVW with tensor "direction"
    double strength = 0.5;
    double noise_sigma = 0.1;
    std::string style_target = "sepia";  // or "sketch"
    int finetune_steps = 60;
    double finetune_lr = 2e-3;

    EditMode mode() const {
        if (kind == "in_domain") return EditMode::in_domain;
        if (kind == "out_of_domain") return EditMode::out_of_domain;
        throw std::invalid_argument("edit.kind must be in_domain or out_of_domain");
    }
};

struct SessionConfig {
    int schema_version = 1;
    std::uint64_t seed = 1;
    std::string frames_dir;
    std::string out_dir;
    std::string align_transforms;  // optional
    std::string flows_dir;         // optional ground-truth flows for eval
    GeneratorConfig gen;
    InversionConfig inv;
    EditSpecConfig edit;
    Phase1Config p1;
    Phase2Config p2;
    int slice_y = -1;  // optional x-t slice row for the eval stage

    static SessionConfig from_json(const json& j);
    json to_json() const;
    static SessionConfig load(const std::string& path) {
        std::ifstream is(path);
        if (!is) throw std::invalid_argument("cannot open config: " + path);
        json j = json::parse(is);
        return from_json(j);
    }
};

inline SessionConfig SessionConfig::from_json(const json& j) {
    SessionConfig c;
    if (j.value("schema_version", 1) != 1)
        throw std::invalid_argument("unsupported schema_version");
    c.seed = j.value("seed", std::uint64_t{1});
    c.frames_dir = j.value("frames_dir", "");
    c.out_dir = j.value("out_dir", "");
    c.align_transforms = j.value("align_transforms", "");
    c.flows_dir = j.value("flows_dir", "");
    if (j.contains("generator")) {
        const auto& g = j["generator"];
        c.gen.resolution = g.value("resolution", 64);
        c.gen.base_res = g.value("base_res", 4);
        c.gen.base_channels = g.value("base_channels", 64);
        c.gen.latent_dim = g.value("latent_dim", 64);
        if (g.contains("layer_channels"))
            c.gen.layer_channels = g["layer_channels"].get<std::vector<int>>();
    }
    if (j.contains("inversion")) {
        const auto& v = j["inversion"];
        c.inv.warm_steps = v.value("warm_steps", c.inv.warm_steps);
        c.inv.latent_steps = v.value("latent_steps", c.inv.latent_steps);
        c.inv.latent_lr = v.value("latent_lr", c.inv.latent_lr);
        c.inv.tune_steps = v.value("tune_steps", c.inv.tune_steps);
        c.inv.tune_lr = v.value("tune_lr", c.inv.tune_lr);
        c.inv.mse_weight = v.value("mse_weight", c.inv.mse_weight);
        c.inv.psnr_fail_db = v.value("psnr_fail_db", c.inv.psnr_fail_db);
    }
    if (j.contains("edit")) {
        const auto& e = j["edit"];
        c.edit.kind = e.value("kind", c.edit.kind);
        c.edit.direction_seed = e.value("direction_seed", c.edit.direction_seed);
        c.edit.direction_file = e.value("direction_file", c.edit.direction_file);
        c.edit.strength = e.value("strength", c.edit.strength);
        c.edit.noise_sigma = e.value("noise_sigma", c.edit.noise_sigma);
        c.edit.style_target = e.value("style_target", c.edit.style_target);
        c.edit.finetune_steps = e.value("finetune_steps", c.edit.finetune_steps);
        c.edit.finetune_lr = e.value("finetune_lr", c.edit.finetune_lr);
    }
    const EditMode mode = c.edit.mode();
    c.p1 = Phase1Config::defaults(mode);
    if (j.contains("phase1")) {
        const auto& p = j["phase1"];
        c.p1.epochs = p.value("epochs", c.p1.epochs);
        c.p1.lr = p.value("lr", c.p1.lr);
        c.p1.refiner.alpha = p.value("alpha", c.p1.refiner.alpha);
        c.p1.lambda_rf = p.value("lambda_rf", c.p1.lambda_rf);
        c.p1.lambda_eps = p.value("lambda_eps", c.p1.lambda_eps);
        c.p1.recompute_flows = p.value("recompute_flows", c.p1.recompute_flows);
        const std::string fg = p.value("flow_grad", "none");
        if (fg == "none") c.p1.flow_grad = Phase1Config::FlowGrad::none;
        else if (fg == "through_sampling") c.p1.flow_grad = Phase1Config::FlowGrad::through_sampling;
        else throw std::invalid_argument("phase1.flow_grad must be none or through_sampling");
    }
    c.p2 = Phase2Config::defaults(mode, c.gen.layers());
    if (j.contains("phase2")) {
        const auto& p = j["phase2"];
        c.p2.epochs = p.value("epochs", c.p2.epochs);
        c.p2.lr = p.value("lr", c.p2.lr);
        c.p2.lambda_eps = p.value("lambda_eps", c.p2.lambda_eps);
        c.p2.lambda_r = p.value("lambda_r", c.p2.lambda_r);
        c.p2.lambda_m = p.value("lambda_m", c.p2.lambda_m);
        c.p2.lambda_l2r = p.value("lambda_l2r", c.p2.lambda_l2r);
        c.p2.alpha_interp = p.value("alpha_interp", c.p2.alpha_interp);
        c.p2.freeze_last_k = p.value("freeze_last_k", c.p2.freeze_last_k);
        c.p2.recompute_flows = p.value("recompute_flows", c.p2.recompute_flows);
    }
    c.p2.validate();
    c.slice_y = j.contains("eval") ? j["eval"].value("slice_y", -1) : -1;
    return c;
}

inline json SessionConfig::to_json() const {
    json j;
    j["schema_version"] = schema_version;
    j["seed"] = seed;
    j["frames_dir"] = frames_dir;
    j["out_dir"] = out_dir;
    j["align_transforms"] = align_transforms;
    j["flows_dir"] = flows_dir;
    j["generator"] = {{"resolution", gen.resolution},
                      {"base_res", gen.base_res},
                      {"base_channels", gen.base_channels},
                      {"latent_dim", gen.latent_dim}};
    if (!gen.layer_channels.empty()) j["generator"]["layer_channels"] = gen.layer_channels;
    j["inversion"] = {{"warm_steps", inv.warm_steps},   {"latent_steps", inv.latent_steps},
                      {"latent_lr", inv.latent_lr},     {"tune_steps", inv.tune_steps},
                      {"tune_lr", inv.tune_lr},         {"mse_weight", inv.mse_weight},
                      {"psnr_fail_db", inv.psnr_fail_db}};
    j["edit"] = {{"kind", edit.kind},
                 {"direction_seed", edit.direction_seed},
                 {"direction_file", edit.direction_file},
                 {"strength", edit.strength},
                 {"noise_sigma", edit.noise_sigma},
                 {"style_target", edit.style_target},
                 {"finetune_steps", edit.finetune_steps},
                 {"finetune_lr", edit.finetune_lr}};
    j["phase1"] = {{"epochs", p1.epochs},
                   {"lr", p1.lr},
                   {"alpha", p1.refiner.alpha},
                   {"lambda_rf", p1.lambda_rf},
                   {"lambda_eps", p1.lambda_eps},
                   {"recompute_flows", p1.recompute_flows},
                   {"flow_grad", p1.flow_grad == Phase1Config::FlowGrad::none ? "none"
                                                                               : "through_sampling"}};
    j["phase2"] = {{"epochs", p2.epochs},         {"lr", p2.lr},
                   {"lambda_eps", p2.lambda_eps}, {"lambda_r", p2.lambda_r},
                   {"lambda_m", p2.lambda_m},     {"lambda_l2r", p2.lambda_l2r},
                   {"alpha_interp", p2.alpha_interp}, {"freeze_last_k", p2.freeze_last_k},
                   {"recompute_flows", p2.recompute_flows}};
    j["eval"] = {{"slice_y", slice_y}};
    return j;
}

// ---------------------------------------------------------------------------
// Stages. Each stage reads only persisted artifacts plus the config, writes
// its outputs and a .done marker, and is skipped when the marker exists —
// deleting downstream artifacts and resuming reproduces them bit-identically.
// ---------------------------------------------------------------------------

class Session {
public:
    explicit Session(SessionConfig cfg) : cfg_(std::move(cfg)) {
        if (cfg_.frames_dir.empty() || cfg_.out_dir.empty())
            throw std::invalid_argument("config requires frames_dir and out_dir");
    }

    const SessionConfig& config() const { return cfg_; }
    std::string out(const std::string& rel) const { return cfg_.out_dir + "/" + rel; }

    bool stage_done(const std::string& stage) const { return fs::exists(out(stage + "/.done")); }

    void run_align() { run_stage("aligned", [&] { do_align(); }); }
    void run_invert() { run_stage("inverted", [&] { do_invert(); }); }
    void run_edit() { run_stage("edited", [&] { do_edit(); }); }
    void run_phase1() { run_stage("phase1", [&] { do_phase1(); }); }
    void run_phase2() { run_stage("phase2", [&] { do_phase2(); }); }
    void run_unalign() { run_stage("unaligned", [&] { do_unalign(); }); }
    EvalReport run_eval() {
        run_stage("eval", [&] { do_eval(); });
        std::ifstream is(out("report.json"));
        json j = json::parse(is);
        EvalReport r;
        r.pair_warp_errors = j["pair_warp_errors"].get<std::vector<double>>();
        r.skipped_pairs = j["skipped_pairs"].get<std::vector<int>>();
        r.mean_warp_error = j["mean_warp_error"];
        r.direct_warp_error = j["direct_warp_error"];
        r.mean_similarity_to_direct = j["mean_similarity_to_direct"];
        r.inversion_psnr = j["inversion_psnr"].get<std::vector<double>>();
        r.config_echo = j["config_echo"];
        r.seed = j["seed"];
        return r;
    }

    // Full chain. Returns true when inversion quality was flagged (exit 4).
    bool run_all() {
        fs::create_directories(cfg_.out_dir);
        {
            std::ofstream os(out("session.json"));
            os << cfg_.to_json().dump(2) << "\n";
        }
        run_align();
        run_invert();
        run_edit();
        run_phase1();
        run_phase2();
        run_unalign();
        run_eval();
        return inversion_flagged();
    }

    bool inversion_flagged() const {
        std::ifstream is(out("inverted/psnr.csv"));
        if (!is) return false;
        std::string line;
        std::getline(is, line);  // header
        while (std::getline(is, line)) {
            const auto comma = line.find(',');
            if (comma == std::string::npos) continue;
            if (std::stod(line.substr(comma + 1)) < cfg_.inv.psnr_fail_db) return true;
        }
        return false;
    }

private:
    SessionConfig cfg_;

    template <typename F>
    void run_stage(const std::string& stage, F&& body) {
        if (stage_done(stage)) {
            std::cout << "[" << stage << "] already done, skipping\n";
            return;
        }
        const auto t0 = std::chrono::steady_clock::now();
        try {
            fs::create_directories(out(stage));
            body();
        } catch (const std::exception& e) {
            throw std::runtime_error("stage '" + stage + "' failed: " + e.what());
        }
        const auto ms = std::chrono::duration_cast<std::chrono::milliseconds>(
                            std::chrono::steady_clock::now() - t0)
                            .count();
        json marker = {{"stage", stage}, {"wall_ms", ms}};
        std::ofstream os(out(stage + "/.done"));
        os << marker.dump() << "\n";
        std::cout << "[" << stage << "] done in " << ms << " ms\n";
    }

    std::vector<AlignTransform> transforms(int count) const {
        if (cfg_.align_transforms.empty())
            return std::vector<AlignTransform>(static_cast<std::size_t>(count));
        return load_transforms(cfg_.align_transforms, count);
    }

    PerceptualExtractor extractor() const { return PerceptualExtractor(cfg_.seed); }

    int anchor_of(int T) const { return T / 2; }  // middle frame

    void do_align() {
        std::vector<Frame> input = load_frame_dir(cfg_.frames_dir);
        auto ts = transforms(static_cast<int>(input.size()));
        std::vector<Frame> aligned;
        if (cfg_.align_transforms.empty()) {
            for (const auto& f : input) {
                if (f.height() != cfg_.gen.resolution || f.width() != cfg_.gen.resolution)
                    throw std::runtime_error(
                        "no alignment transforms given and input frames are not at generator "
                        "resolution " + std::to_string(cfg_.gen.resolution));
                aligned.push_back(f);
            }
        } else {
            for (std::size_t t = 0; t < input.size(); ++t)
                aligned.push_back(align(input[t], ts[t], cfg_.gen.resolution));
        }
        save_frame_dir(aligned, out("aligned"));
    }

    void do_invert() {
        std::vector<Frame> aligned = load_frame_dir(out("aligned"));
        GeneratorParams init = GeneratorParams::init(cfg_.gen, cfg_.seed);
        InversionConfig ic = cfg_.inv;
        ic.seed = cfg_.seed;
        PerceptualExtractor percep = extractor();
        InversionResult res = invert_frames(aligned, init, percep, ic);
        res.params.save(out("inverted/params.tcvg"));
        save_latents(res.latents, out("inverted/latents.tcvw"));
        {
            std::ofstream os(out("inverted/psnr.csv"));
            os << "frame,psnr_db\n";
            for (std::size_t t = 0; t < res.psnr.size(); ++t) {
                char buf[64];
                std::snprintf(buf, sizeof buf, "%zu,%.6f\n", t, res.psnr[t]);
                os << buf;
            }
        }
        std::vector<Frame> recon;
        for (const auto& w : res.latents) recon.push_back(generate(w, res.params));
        save_frame_dir(recon, out("inverted/frames"));
        if (!res.failed.empty()) {
            std::cerr << "[inverted] warning: " << res.failed.size()
                      << " frame(s) under PSNR threshold " << cfg_.inv.psnr_fail_db << " dB\n";
        }
    }

    Tensor edit_direction(int L, int D) const {
        if (!cfg_.edit.direction_file.empty())
            return find_tensor(read_tensor_container(cfg_.edit.direction_file, "TCVW"), "direction");
        return seeded_direction(cfg_.edit.direction_seed, L, D);
    }

    void do_edit() {
        GeneratorParams params = GeneratorParams::load(out("inverted/params.tcvg"));
        std::vector<LatentStack> latents = load_latents(out("inverted/latents.tcvw"));
        const EditMode mode = cfg_.edit.mode();
        if (mode == EditMode::in_domain) {
            EditSpec spec;
            spec.kind = EditSpec::Kind::in_domain;
            spec.direction = edit_direction(latents[0].layers(), latents[0].dim());
            spec.strength = cfg_.edit.strength;
            spec.per_frame_noise_sigma = cfg_.edit.noise_sigma;
            latents = apply_in_domain_edit(latents, spec, cfg_.seed);
        } else {
            std::vector<Frame> aligned = load_frame_dir(out("aligned"));
            EditSpec spec;
            spec.kind = EditSpec::Kind::out_of_domain;
            spec.style_target =
                cfg_.edit.style_target == "sketch" ? StyleTarget::sketch : StyleTarget::sepia;
            spec.finetune_steps = cfg_.edit.finetune_steps;
            spec.finetune_lr = cfg_.edit.finetune_lr;
            params = apply_out_of_domain_edit(params, latents, aligned, spec);
        }
        params.save(out("edited/params.tcvg"));
        save_latents(latents, out("edited/latents.tcvw"));
        std::vector<Frame> direct;
        for (const auto& w : latents) direct.push_back(generate(w, params));
        save_frame_dir(direct, out("edited/frames"));
    }

    void do_phase1() {
        GeneratorParams params = GeneratorParams::load(out("edited/params.tcvg"));
        std::vector<LatentStack> latents = load_latents(out("edited/latents.tcvw"));
        std::vector<Frame> aligned = load_frame_dir(out("aligned"));
        const int T = static_cast<int>(latents.size());
        PerceptualExtractor percep = extractor();
        LatentRefiner refiner(latents[0].layers(), latents[0].dim(), cfg_.p1.refiner, cfg_.seed);
        Phase1Result res = tcv::run_phase1(refiner, params, latents, aligned, anchor_of(T),
                                      cfg_.edit.mode(), cfg_.p1, percep, cfg_.seed);
        save_latents(res.refined, out("phase1/latents.tcvw"));
        refiner.save(out("phase1/refiner.tcvw"));
        {
            std::ofstream os(out("phase1/loss.csv"));
            os << "epoch,pair,L_photo,L_rf,L_eps,total\n";
            for (const auto& row : res.log_rows) os << row << "\n";
        }
        std::vector<Frame> frames;
        for (const auto& w : res.refined) frames.push_back(generate(w, params));
        save_frame_dir(frames, out("phase1/frames"));
    }

    void do_phase2() {
        GeneratorParams params = GeneratorParams::load(out("edited/params.tcvg"));
        std::vector<LatentStack> refined = load_latents(out("phase1/latents.tcvw"));
        std::vector<Frame> aligned = load_frame_dir(out("aligned"));
        const int T = static_cast<int>(refined.size());
        PerceptualExtractor percep = extractor();
        Phase2Result res =
            tcv::run_phase2(params, refined, aligned, anchor_of(T), cfg_.p2, percep, cfg_.seed);
        res.params.save(out("phase2/params.tcvg"));
        {
            std::ofstream os(out("phase2/loss.csv"));
            os << "epoch,pair,L_photo,L_eps,L_r,L_M,total\n";
            for (const auto& row : res.log_rows) os << row << "\n";
        }
        save_frame_dir(res.frames, out("phase2/frames"));
    }

    void do_unalign() {
        std::vector<Frame> input = load_frame_dir(cfg_.frames_dir);
        std::vector<Frame> edited = load_frame_dir(out("phase2/frames"));
        auto ts = transforms(static_cast<int>(input.size()));
        std::vector<Frame> final_frames;
        for (std::size_t t = 0; t < input.size(); ++t)
            final_frames.push_back(unalign(edited[t], input[t], ts[t]));
        save_frame_dir(final_frames, out("unaligned"));
    }

    void do_eval() {
        std::vector<Frame> input = load_frame_dir(cfg_.frames_dir);
        std::vector<Frame> output = load_frame_dir(out("unaligned"));
        std::vector<Frame> direct_aligned = load_frame_dir(out("edited/frames"));
        std::vector<Frame> phase2_frames = load_frame_dir(out("phase2/frames"));
        auto ts = transforms(static_cast<int>(input.size()));
        std::vector<Frame> direct_unaligned;
        for (std::size_t t = 0; t < input.size(); ++t)
            direct_unaligned.push_back(unalign(direct_aligned[t], input[t], ts[t]));

        PerceptualExtractor percep = extractor();
        EvalReport rep = evaluate_video(output, input, cfg_.flows_dir, percep);
        WarpingErrorResult direct =
            warping_error_with_flows(direct_unaligned, input, cfg_.flows_dir);
        rep.direct_warp_error = direct.mean;
        rep.mean_similarity_to_direct = similarity_to_direct(phase2_frames, direct_aligned, percep);
        rep.config_echo = cfg_.to_json();
        rep.seed = cfg_.seed;
        // inversion PSNR echo out of the persisted CSV
        std::ifstream ps(out("inverted/psnr.csv"));
        std::string line;
        std::getline(ps, line);
        while (std::getline(ps, line)) {
            const auto comma = line.find(',');
            if (comma != std::string::npos) rep.inversion_psnr.push_back(std::stod(line.substr(comma + 1)));
        }
        rep.save(out("report.json"), out("report.csv"));
        if (cfg_.slice_y >= 0) {
            fs::create_directories(out("slices"));
            save_png(xt_slice(output, cfg_.slice_y), out("slices/xt_y" + std::to_string(cfg_.slice_y) + ".png"));
        }
    }

public:
    // Evaluation flows come from the INPUT video: ground-truth files when a
    // flow dir is given, otherwise the builtin estimator on the input frames.
    static WarpingErrorResult warping_error_with_flows(const std::vector<Frame>& frames,
                                                       const std::vector<Frame>& input,
                                                       const std::string& flows_dir) {
        const int T = static_cast<int>(frames.size());
        FlowProviderConfig prov;
        if (!flows_dir.empty()) {
            prov.kind = FlowProviderConfig::Kind::file;
            prov.dir = flows_dir;
        }
        std::vector<FlowField> fwd;
        std::vector<Tensor> masks;
        for (int t = 0; t + 1 < T; ++t) {
            FlowField f = estimate_flow(input[static_cast<std::size_t>(t)],
                                        input[static_cast<std::size_t>(t + 1)], prov, t, t + 1);
            FlowField b = estimate_flow(input[static_cast<std::size_t>(t + 1)],
                                        input[static_cast<std::size_t>(t)], prov, t + 1, t);
            masks.push_back(occlusion_mask(f, b));
            fwd.push_back(std::move(f));
        }
        return warping_error(frames, fwd, masks);
    }

    static EvalReport evaluate_video(const std::vector<Frame>& frames,
                                     const std::vector<Frame>& input, const std::string& flows_dir,
                                     const PerceptualExtractor& percep) {
        (void)percep;
        EvalReport rep;
        WarpingErrorResult we = warping_error_with_flows(frames, input, flows_dir);
        rep.pair_warp_errors = we.per_pair;
        rep.skipped_pairs = we.skipped;
        rep.mean_warp_error = we.mean;
        return rep;
    }
};

}  // namespace tcv
