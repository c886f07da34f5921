// tcv — flow-consistent video editing on a toy differentiable generator.
//
// Subcommands: synth, invert, edit, optimize, unalign, eval, slice, run.
// Exit codes: 0 success, 2 invalid config, 3 stage failure, 4 inversion
// quality under threshold.

#include <CLI11.hpp>

#include <cstdio>
#include <iostream>

#include "tcv/session.hpp"

namespace {

int run_guarded(const std::function<int()>& body) {
    try {
        return body();
    } catch (const std::invalid_argument& e) {
        std::cerr << "error (config): " << e.what() << "\n";
        return 2;
    } catch (const nlohmann::json::exception& e) {
        std::cerr << "error (config): " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    }
}

tcv::SessionConfig load_config(const std::string& path, std::uint64_t seed_override,
                               const std::string& out_override) {
    tcv::SessionConfig cfg = tcv::SessionConfig::load(path);
    if (seed_override) cfg.seed = seed_override;
    if (!out_override.empty()) cfg.out_dir = out_override;
    return cfg;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"flow-based temporal consistency for semantically edited videos"};
    app.require_subcommand(1);

    std::string config_path, out_dir, log_level = "info", spec_path;
    std::uint64_t seed = 0;
    app.add_option("--config", config_path, "session config JSON");
    app.add_option("--seed", seed, "override config seed");
    app.add_option("--out", out_dir, "override output directory");
    app.add_option("--log-level", log_level, "quiet|info");

    auto* synth = app.add_subcommand("synth", "render a synthetic scene with ground-truth flows");
    std::string synth_out, synth_kind = "translate";
    int synth_frames = 8, synth_res = 64;
    double synth_vx = 2.0, synth_vy = 0.0;
    std::uint64_t synth_seed = 1;
    synth->add_option("--spec", spec_path, "scene spec JSON (overrides flags)");
    synth->add_option("--dir", synth_out, "output directory")->required();
    synth->add_option("--kind", synth_kind, "translate|rotate|scale|two_layer");
    synth->add_option("--frames", synth_frames);
    synth->add_option("--resolution", synth_res);
    synth->add_option("--vx", synth_vx);
    synth->add_option("--vy", synth_vy);
    synth->add_option("--texture-seed", synth_seed);

    auto* invert = app.add_subcommand("invert", "align + invert the input video");
    auto* edit = app.add_subcommand("edit", "apply the configured direct edit");
    auto* optimize = app.add_subcommand("optimize", "run the two-phase optimization");
    bool phase1_only = false, phase2_only = false;
    std::string opt_mode;
    optimize->add_flag("--phase1-only", phase1_only);
    optimize->add_flag("--phase2-only", phase2_only);
    optimize->add_option("--mode", opt_mode, "in|out (overrides config edit kind)");
    auto* unalign_cmd = app.add_subcommand("unalign", "paste the edited frames back");
    auto* eval_cmd = app.add_subcommand("eval", "evaluate warping error and similarity");
    std::string eval_frames, eval_input, eval_flows;
    eval_cmd->add_option("--frames", eval_frames, "frame dir to evaluate (default: session output)");
    eval_cmd->add_option("--input", eval_input, "input video for evaluation flows");
    eval_cmd->add_option("--flows", eval_flows, "ground-truth flow dir");
    auto* slice = app.add_subcommand("slice", "export an x-t slice");
    int slice_y = 0;
    std::string slice_frames, slice_out;
    slice->add_option("--frames", slice_frames, "frame dir")->required();
    slice->add_option("--y", slice_y, "row")->required();
    slice->add_option("--png", slice_out, "output PNG")->required();
    auto* run = app.add_subcommand("run", "full session: align..eval");

    CLI11_PARSE(app, argc, argv);

    return run_guarded([&]() -> int {
        if (synth->parsed()) {
            tcv::SceneSpec s;
            if (!spec_path.empty()) {
                std::ifstream is(spec_path);
                if (!is) throw std::invalid_argument("cannot open scene spec: " + spec_path);
                s = tcv::scene_from_json(tcv::json::parse(is));
            } else {
                if (synth_kind == "translate") s.kind = tcv::SceneSpec::Kind::translate;
                else if (synth_kind == "rotate") s.kind = tcv::SceneSpec::Kind::rotate;
                else if (synth_kind == "scale") s.kind = tcv::SceneSpec::Kind::scale;
                else if (synth_kind == "two_layer") s.kind = tcv::SceneSpec::Kind::two_layer;
                else throw std::invalid_argument("unknown scene kind " + synth_kind);
                s.frames = synth_frames;
                s.width = s.height = synth_res;
                s.vx = synth_vx;
                s.vy = synth_vy;
                s.texture_seed = synth_seed;
            }
            tcv::emit_scene(s, synth_out);
            std::cout << "scene written to " << synth_out << "\n";
            return 0;
        }

        if (config_path.empty()) throw std::invalid_argument("--config is required");
        tcv::SessionConfig cfg = load_config(config_path, seed, out_dir);
        if (optimize->parsed() && !opt_mode.empty()) {
            if (opt_mode == "in") cfg.edit.kind = "in_domain";
            else if (opt_mode == "out") cfg.edit.kind = "out_of_domain";
            else throw std::invalid_argument("--mode must be in or out");
        }
        tcv::Session session(cfg);

        if (invert->parsed()) {
            session.run_align();
            session.run_invert();
            return session.inversion_flagged() ? 4 : 0;
        }
        if (edit->parsed()) {
            session.run_edit();
            return 0;
        }
        if (optimize->parsed()) {
            if (!phase2_only) session.run_phase1();
            if (!phase1_only) session.run_phase2();
            return 0;
        }
        if (unalign_cmd->parsed()) {
            session.run_unalign();
            return 0;
        }
        if (eval_cmd->parsed()) {
            if (!eval_frames.empty()) {
                // standalone evaluation of an arbitrary frame directory
                std::vector<tcv::Frame> frames = tcv::load_frame_dir(eval_frames);
                std::vector<tcv::Frame> input =
                    tcv::load_frame_dir(eval_input.empty() ? eval_frames : eval_input);
                tcv::PerceptualExtractor percep(cfg.seed);
                tcv::EvalReport rep = tcv::Session::evaluate_video(frames, input, eval_flows, percep);
                rep.seed = cfg.seed;
                rep.config_echo = cfg.to_json();
                std::cout << rep.to_json().dump(2) << "\n";
                return 0;
            }
            tcv::EvalReport rep = session.run_eval();
            std::cout << "mean_warp_error " << rep.mean_warp_error << "\n";
            return 0;
        }
        if (slice->parsed()) {
            std::vector<tcv::Frame> frames = tcv::load_frame_dir(slice_frames);
            tcv::save_png(tcv::xt_slice(frames, slice_y), slice_out);
            return 0;
        }
        if (run->parsed()) {
            const bool flagged = session.run_all();
            return flagged ? 4 : 0;
        }
        return 0;
    });
}
