#include <catch2/catch_amalgamated.hpp>

#include <filesystem>

#include "oracles.hpp"
#include "tcv/flow.hpp"
#include "tcv/synthdata.hpp"

using namespace tcv;

namespace {
FlowField constant_flow(int h, int w, double dx, double dy) {
    Tensor t({2, h, w});
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            t(0, y, x) = dx;
            t(1, y, x) = dy;
        }
    return FlowField(std::move(t));
}
}  // namespace

TEST_CASE("fb consistency: exact round trip gives zero error") {
    auto e = fb_consistency_error(constant_flow(8, 8, 3, 0), constant_flow(8, 8, -3, 0));
    REQUIRE(e.error.max() <= 1e-12);
}

TEST_CASE("fb consistency: (3,0) vs (-2,0) leaves residual 1") {
    auto e = fb_consistency_error(constant_flow(8, 8, 3, 0), constant_flow(8, 8, -2, 0));
    REQUIRE(e.error.min() == Catch::Approx(1.0).margin(1e-9));
    REQUIRE(e.error.max() == Catch::Approx(1.0).margin(1e-9));
}

TEST_CASE("fb consistency matches brute-force loop on random smooth fields") {
    Rng rng(11);
    for (int trial = 0; trial < 20; ++trial) {
        Tensor a = rng.uniform_tensor({2, 8, 8}, -2.0, 2.0);
        Tensor b = rng.uniform_tensor({2, 8, 8}, -2.0, 2.0);
        auto e = fb_consistency_error(FlowField(a), FlowField(b));
        Tensor ref = oracle::ref_fb_error(a, b);
        REQUIRE(e.error.max_abs_diff(ref) <= 1e-6);
    }
}

TEST_CASE("fb consistency rejects dimension mismatch") {
    REQUIRE_THROWS_AS(fb_consistency_error(constant_flow(8, 8, 1, 0), constant_flow(4, 4, 1, 0)),
                      std::invalid_argument);
}

TEST_CASE("visibility mask values") {
    Tensor err({4, 4}, 0.0);
    Tensor inb({4, 4}, 1.0);
    REQUIRE(visibility_mask(err, inb).min() == 1.0);
    err.fill(0.1);
    const double v = visibility_mask(err, inb)(0, 0);
    REQUIRE(v == Catch::Approx(std::exp(-1.0)).margin(1e-6));
    REQUIRE(v == Catch::Approx(0.367879).margin(1e-6));
    err.fill(1.0);
    REQUIRE(visibility_mask(err, inb)(0, 0) == Catch::Approx(4.54e-5).epsilon(0.01));
    err.fill(-0.1);
    REQUIRE_THROWS_AS(visibility_mask(err, inb), std::invalid_argument);
}

TEST_CASE("visibility mask is monotone decreasing in the error") {
    Tensor inb({1, 1}, 1.0);
    double prev = 2.0;
    for (double e = 0.0; e < 2.0; e += 0.05) {
        Tensor err({1, 1}, e);
        const double v = visibility_mask(err, inb)(0, 0);
        REQUIRE(v < prev);
        prev = v;
    }
}

TEST_CASE("symmetric consistency for exactly inverse constant fields") {
    // for inverse fields the error at p and at the mapped point agree
    auto ea = fb_consistency_error(constant_flow(8, 8, 2, 1), constant_flow(8, 8, -2, -1));
    auto eb = fb_consistency_error(constant_flow(8, 8, -2, -1), constant_flow(8, 8, 2, 1));
    REQUIRE(ea.error.max() <= 1e-9);
    REQUIRE(eb.error.max() <= 1e-9);
}

TEST_CASE("builtin estimator: identical frames give near-zero flow") {
    SceneSpec s;
    s.vx = 0;
    s.vy = 0;
    Frame f = render_frame(s, 0);
    FlowProviderConfig cfg;
    FlowField flow = estimate_flow(f, f, cfg);
    REQUIRE(flow.data.max() <= 0.1);
    REQUIRE(flow.data.min() >= -0.1);
}

TEST_CASE("builtin estimator recovers a constant translation within 0.5 px") {
    SceneSpec s;
    s.vx = 2;
    s.vy = 0;
    Frame a = render_frame(s, 0);
    Frame b = render_frame(s, 1);
    FlowProviderConfig cfg;
    FlowField flow = estimate_flow(a, b, cfg);
    // ground-truth backward flow is (-2, 0)
    double epe = 0.0;
    for (int y = 0; y < 64; ++y)
        for (int x = 0; x < 64; ++x)
            epe += std::hypot(flow.data(0, y, x) + 2.0, flow.data(1, y, x));
    epe /= 64.0 * 64.0;
    INFO("mean EPE " << epe);
    REQUIRE(epe <= 0.5);
}

TEST_CASE("builtin estimator is deterministic") {
    SceneSpec s;
    s.vx = 1.5;
    s.vy = -0.5;
    Frame a = render_frame(s, 0);
    Frame b = render_frame(s, 1);
    FlowProviderConfig cfg;
    FlowField f1 = estimate_flow(a, b, cfg);
    FlowField f2 = estimate_flow(a, b, cfg);
    REQUIRE(f1.data == f2.data);
}

TEST_CASE("flow file round trip is bit-identical") {
    Rng rng(13);
    // values quantized to float32 precision, as the format stores
    Tensor t = to_f32_precision(rng.uniform_tensor({2, 8, 8}, -3.0, 3.0));
    FlowField f(t);
    const std::string dir = std::filesystem::temp_directory_path() / "tcv_flow_test";
    std::filesystem::create_directories(dir);
    const std::string path = dir + "/" + flow_filename(0, 1);
    save_flow(f, path);
    FlowField g = load_flow(path);
    REQUIRE(g.data == f.data);
}

TEST_CASE("file provider reports missing files with frame indices") {
    FlowProviderConfig cfg;
    cfg.kind = FlowProviderConfig::Kind::file;
    cfg.dir = "/nonexistent";
    Frame a(8, 8), b(8, 8);
    try {
        estimate_flow(a, b, cfg, 3, 4);
        FAIL("expected throw");
    } catch (const std::runtime_error& e) {
        REQUIRE(std::string(e.what()).find("3->4") != std::string::npos);
    }
}

TEST_CASE("flow magnitude sanity bound rejects corrupt fields") {
    Tensor t({2, 8, 8}, 0.0);
    t(0, 0, 0) = 100.0;  // > max(H,W)
    REQUIRE_THROWS_AS(FlowField(t), std::invalid_argument);
    Tensor nan({2, 8, 8}, 0.0);
    nan(1, 1, 1) = std::nan("");
    REQUIRE_THROWS_AS(FlowField(nan), std::invalid_argument);
}
