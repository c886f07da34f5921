#pragma once

#include <nlohmann/json.hpp>

#include <array>
#include <fstream>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "tcv/flow.hpp"
#include "tcv/image.hpp"
#include "tcv/tensor.hpp"

namespace tcv {

// ---------------------------------------------------------------------------
// Synthetic scenes with exact analytic ground truth. Textures are band-limited
// sums of seeded sinusoids, so they can be evaluated exactly at any real
// coordinate and affine flows are bilinear-exact.
//
// `velocity` advances the texture sampling window (a camera pan): on-screen
// content moves opposite, so the ground-truth backward flow between t and t+1
// is -velocity. The two_layer sprite velocity is an on-screen velocity.
// ---------------------------------------------------------------------------

struct BandTexture {
    struct Wave {
        double fx, fy, amp, phase;
    };
    std::array<std::vector<Wave>, 3> waves;

    static BandTexture make(std::uint64_t seed, int n_waves = 8) {
        Rng rng = Rng::stream(seed, "synth.texture");
        BandTexture t;
        for (int c = 0; c < 3; ++c) {
            double total = 0.0;
            std::vector<Wave> ws;
            for (int k = 0; k < n_waves; ++k) {
                const double f = rng.uniform(0.02, 0.10);
                const double ang = rng.uniform(0.0, 6.283185307179586);
                Wave w{f * std::cos(ang), f * std::sin(ang), rng.uniform(0.3, 1.0),
                       rng.uniform(0.0, 6.283185307179586)};
                total += w.amp;
                ws.push_back(w);
            }
            for (auto& w : ws) w.amp *= 0.45 / total;  // keep values in [0.05, 0.95]
            t.waves[static_cast<std::size_t>(c)] = std::move(ws);
        }
        return t;
    }

    double value(int c, double x, double y) const {
        double v = 0.5;
        for (const auto& w : waves[static_cast<std::size_t>(c)])
            v += w.amp * std::sin(6.283185307179586 * (w.fx * x + w.fy * y) + w.phase);
        return v;
    }
};

struct SpriteSpec {
    double cx = 32.0, cy = 32.0;   // initial center
    double radius = 12.0;
    double vx = 0.0, vy = 0.0;     // on-screen velocity, px/frame
    std::uint64_t texture_seed = 7;
    // attribute hooks (make_attribute_variants)
    double color_gain_r = 1.0, color_gain_g = 1.0, color_gain_b = 1.0;
    bool marking = false;
};

struct SceneSpec {
    enum class Kind { translate, rotate, scale, two_layer };
    Kind kind = Kind::translate;
    int frames = 8;
    int width = 64, height = 64;
    std::uint64_t texture_seed = 1;
    double vx = 2.0, vy = 0.0;   // sampling-window velocity (translate + two_layer background)
    double omega = 0.0;          // rad/frame (rotate)
    double scale_rate = 1.0;     // per-frame scale factor (scale)
    SpriteSpec sprite;

    void validate() const {
        if (frames < 2) throw std::invalid_argument("SceneSpec: need >= 2 frames");
        require_generator_dims(height, width, "SceneSpec");
        const double diag = 0.5 * std::hypot(width, height);
        double maxdisp = std::hypot(vx, vy);
        if (kind == Kind::rotate) maxdisp = 2.0 * diag * std::abs(std::sin(omega / 2.0));
        if (kind == Kind::scale) maxdisp = diag * std::abs(scale_rate - 1.0);
        if (kind == Kind::two_layer)
            maxdisp = std::max(maxdisp, std::hypot(sprite.vx, sprite.vy));
        if (maxdisp > 4.0 + 1e-9)
            throw std::invalid_argument("SceneSpec: per-frame displacement exceeds 4 px");
        if (kind == Kind::two_layer) {
            for (int t = 0; t < frames; ++t) {
                const double cx = sprite.cx + t * sprite.vx;
                const double cy = sprite.cy + t * sprite.vy;
                if (cx + sprite.radius < 0 || cx - sprite.radius > width - 1 ||
                    cy + sprite.radius < 0 || cy - sprite.radius > height - 1)
                    throw std::invalid_argument("SceneSpec: sprite leaves the frame at t=" +
                                                std::to_string(t));
            }
        }
    }
};

struct SceneData {
    std::vector<Frame> frames;
    // flows for all ordered pairs used downstream: consecutive pairs both
    // directions plus anchor pairs both directions
    std::map<std::pair<int, int>, FlowField> flows;
    // analytic non-occlusion masks for consecutive pairs (t,t+1)
    std::vector<Tensor> occlusion;  // 1 = valid correspondence
};

namespace detail {

// sampling-window affine per frame: tex = A_t p + b_t
struct Affine {
    double a = 1, b = 0, c = 0, d = 1, tx = 0, ty = 0;
    std::pair<double, double> apply(double x, double y) const {
        return {a * x + b * y + tx, c * x + d * y + ty};
    }
    Affine inverse() const {
        const double det = a * d - b * c;
        Affine r;
        r.a = d / det;
        r.b = -b / det;
        r.c = -c / det;
        r.d = a / det;
        r.tx = -(r.a * tx + r.b * ty);
        r.ty = -(r.c * tx + r.d * ty);
        return r;
    }
};

inline Affine scene_affine(const SceneSpec& s, int t) {
    Affine m;
    const double cx = (s.width - 1) / 2.0, cy = (s.height - 1) / 2.0;
    switch (s.kind) {
        case SceneSpec::Kind::translate:
        case SceneSpec::Kind::two_layer:
            m.tx = t * s.vx;
            m.ty = t * s.vy;
            break;
        case SceneSpec::Kind::rotate: {
            const double th = t * s.omega;
            m.a = std::cos(th);
            m.b = -std::sin(th);
            m.c = std::sin(th);
            m.d = std::cos(th);
            m.tx = cx - (m.a * cx + m.b * cy);
            m.ty = cy - (m.c * cx + m.d * cy);
            break;
        }
        case SceneSpec::Kind::scale: {
            const double sc = std::pow(s.scale_rate, t);
            m.a = m.d = sc;
            m.tx = cx - sc * cx;
            m.ty = cy - sc * cy;
            break;
        }
    }
    return m;
}

inline bool in_sprite(const SceneSpec& s, double x, double y, int t) {
    const double dx = x - (s.sprite.cx + t * s.sprite.vx);
    const double dy = y - (s.sprite.cy + t * s.sprite.vy);
    return dx * dx + dy * dy <= s.sprite.radius * s.sprite.radius;
}

inline double sprite_dist(const SceneSpec& s, double x, double y, int t) {
    const double dx = x - (s.sprite.cx + t * s.sprite.vx);
    const double dy = y - (s.sprite.cy + t * s.sprite.vy);
    return std::abs(std::hypot(dx, dy) - s.sprite.radius);
}

}  // namespace detail

// Ground-truth backward flow on frame t's grid pointing into frame u.
inline FlowField scene_flow(const SceneSpec& spec, int t, int u) {
    FlowField f(spec.height, spec.width);
    const detail::Affine at = detail::scene_affine(spec, t);
    const detail::Affine au_inv = detail::scene_affine(spec, u).inverse();
    for (int y = 0; y < spec.height; ++y)
        for (int x = 0; x < spec.width; ++x) {
            double qx, qy;
            if (spec.kind == SceneSpec::Kind::two_layer && detail::in_sprite(spec, x, y, t)) {
                qx = x + (u - t) * spec.sprite.vx;
                qy = y + (u - t) * spec.sprite.vy;
            } else {
                auto [tx, ty] = at.apply(x, y);
                std::tie(qx, qy) = au_inv.apply(tx, ty);
            }
            f.data(0, y, x) = qx - x;
            f.data(1, y, x) = qy - y;
        }
    return f;
}

// Valid-correspondence mask for pair (t,u): correspondence inside the frame,
// not covered by the sprite in the other frame, and (for two_layer) not
// within 1.5 px of the layer boundary where motion is mixed.
inline Tensor scene_valid_mask(const SceneSpec& spec, int t, int u) {
    Tensor m({spec.height, spec.width});
    const FlowField f = scene_flow(spec, t, u);
    for (int y = 0; y < spec.height; ++y)
        for (int x = 0; x < spec.width; ++x) {
            const double qx = x + f.data(0, y, x), qy = y + f.data(1, y, x);
            bool ok = qx >= 0 && qx <= spec.width - 1 && qy >= 0 && qy <= spec.height - 1;
            if (ok && spec.kind == SceneSpec::Kind::two_layer) {
                const bool src_fg = detail::in_sprite(spec, x, y, t);
                if (!src_fg && detail::in_sprite(spec, qx, qy, u)) ok = false;  // covered
                if (detail::sprite_dist(spec, x, y, t) < 1.5 ||
                    detail::sprite_dist(spec, qx, qy, u) < 1.5)
                    ok = false;
            }
            m(y, x) = ok ? 1.0 : 0.0;
        }
    return m;
}

inline Frame render_frame(const SceneSpec& spec, int t) {
    const BandTexture bg = BandTexture::make(spec.texture_seed);
    const BandTexture fg = BandTexture::make(spec.sprite.texture_seed);
    Frame f(spec.height, spec.width);
    const detail::Affine at = detail::scene_affine(spec, t);
    const double gains[3] = {spec.sprite.color_gain_r, spec.sprite.color_gain_g,
                             spec.sprite.color_gain_b};
    for (int y = 0; y < spec.height; ++y)
        for (int x = 0; x < spec.width; ++x) {
            if (spec.kind == SceneSpec::Kind::two_layer && detail::in_sprite(spec, x, y, t)) {
                const double lx = x - (spec.sprite.cx + t * spec.sprite.vx);
                const double ly = y - (spec.sprite.cy + t * spec.sprite.vy);
                const bool marked = spec.sprite.marking && std::abs(ly) < spec.sprite.radius / 4.0;
                for (int c = 0; c < 3; ++c) {
                    double v = fg.value(c, lx, ly) * gains[c];
                    if (marked) v *= 0.35;
                    f.at(c, y, x) = std::clamp(v, 0.0, 1.0);
                }
            } else {
                auto [tx, ty] = at.apply(x, y);
                for (int c = 0; c < 3; ++c)
                    f.at(c, y, x) = std::clamp(bg.value(c, tx, ty), 0.0, 1.0);
            }
        }
    return f;
}

inline SceneData render_sequence(const SceneSpec& spec, int anchor = -1) {
    spec.validate();
    if (anchor < 0) anchor = spec.frames / 2;
    SceneData d;
    for (int t = 0; t < spec.frames; ++t) d.frames.push_back(render_frame(spec, t));
    auto add_pair = [&](int a, int b) {
        if (a == b) return;
        if (!d.flows.count({a, b})) d.flows.emplace(std::make_pair(a, b), scene_flow(spec, a, b));
        if (!d.flows.count({b, a})) d.flows.emplace(std::make_pair(b, a), scene_flow(spec, b, a));
    };
    for (int t = 0; t + 1 < spec.frames; ++t) add_pair(t, t + 1);
    for (int i = 0; i < spec.frames; ++i) add_pair(anchor, i);
    for (int t = 0; t + 1 < spec.frames; ++t)
        d.occlusion.push_back(scene_valid_mask(spec, t, t + 1));
    return d;
}

// Two frame sets differing only in one localized sprite attribute.
inline std::pair<std::vector<Frame>, std::vector<Frame>> make_attribute_variants(
    const SceneSpec& spec, const std::string& attribute) {
    if (spec.kind != SceneSpec::Kind::two_layer)
        throw std::invalid_argument("make_attribute_variants: requires a two_layer scene");
    SceneSpec a = spec, b = spec;
    if (attribute == "sprite_color") {
        b.sprite.color_gain_r = 1.35;
        b.sprite.color_gain_g = 0.75;
        b.sprite.color_gain_b = 0.9;
    } else if (attribute == "sprite_marking") {
        b.sprite.marking = true;
    } else {
        throw std::invalid_argument("make_attribute_variants: unknown attribute " + attribute);
    }
    std::vector<Frame> fa, fb;
    for (int t = 0; t < spec.frames; ++t) {
        fa.push_back(render_frame(a, t));
        fb.push_back(render_frame(b, t));
    }
    return {std::move(fa), std::move(fb)};
}

// ---------------------------------------------------------------------------
// JSON + on-disk emission (frame dir, TCVF flows, occlusion PNGs, spec sidecar)
// ---------------------------------------------------------------------------

inline nlohmann::json scene_to_json(const SceneSpec& s) {
    nlohmann::json j;
    const char* kinds[] = {"translate", "rotate", "scale", "two_layer"};
    j["kind"] = kinds[static_cast<int>(s.kind)];
    j["frames"] = s.frames;
    j["width"] = s.width;
    j["height"] = s.height;
    j["texture_seed"] = s.texture_seed;
    j["vx"] = s.vx;
    j["vy"] = s.vy;
    j["omega"] = s.omega;
    j["scale_rate"] = s.scale_rate;
    j["sprite"] = {{"cx", s.sprite.cx},       {"cy", s.sprite.cy}, {"radius", s.sprite.radius},
                   {"vx", s.sprite.vx},       {"vy", s.sprite.vy},
                   {"texture_seed", s.sprite.texture_seed}};
    return j;
}

inline SceneSpec scene_from_json(const nlohmann::json& j) {
    SceneSpec s;
    const std::string k = j.value("kind", "translate");
    if (k == "translate") s.kind = SceneSpec::Kind::translate;
    else if (k == "rotate") s.kind = SceneSpec::Kind::rotate;
    else if (k == "scale") s.kind = SceneSpec::Kind::scale;
    else if (k == "two_layer") s.kind = SceneSpec::Kind::two_layer;
    else throw std::invalid_argument("scene spec: unknown kind " + k);
    s.frames = j.value("frames", 8);
    s.width = j.value("width", 64);
    s.height = j.value("height", 64);
    s.texture_seed = j.value("texture_seed", std::uint64_t{1});
    s.vx = j.value("vx", 0.0);
    s.vy = j.value("vy", 0.0);
    s.omega = j.value("omega", 0.0);
    s.scale_rate = j.value("scale_rate", 1.0);
    if (j.contains("sprite")) {
        const auto& sp = j["sprite"];
        s.sprite.cx = sp.value("cx", 32.0);
        s.sprite.cy = sp.value("cy", 32.0);
        s.sprite.radius = sp.value("radius", 12.0);
        s.sprite.vx = sp.value("vx", 0.0);
        s.sprite.vy = sp.value("vy", 0.0);
        s.sprite.texture_seed = sp.value("texture_seed", std::uint64_t{7});
    }
    return s;
}

inline void emit_scene(const SceneSpec& spec, const std::string& dir) {
    SceneData d = render_sequence(spec);
    namespace fs = std::filesystem;
    fs::create_directories(dir + "/frames");
    fs::create_directories(dir + "/flows");
    fs::create_directories(dir + "/occlusion");
    save_frame_dir(d.frames, dir + "/frames");
    for (const auto& [key, f] : d.flows)
        save_flow(f, dir + "/flows/" + flow_filename(key.first, key.second));
    for (std::size_t t = 0; t < d.occlusion.size(); ++t)
        save_mask_png(d.occlusion[t],
                      dir + "/occlusion/occ_" + std::to_string(t) + "_" + std::to_string(t + 1) + ".png");
    std::ofstream os(dir + "/scene.json");
    os << scene_to_json(spec).dump(2) << "\n";
}

}  // namespace tcv
