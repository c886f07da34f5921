#include <catch2/catch_amalgamated.hpp>

#include <filesystem>

#include "oracles.hpp"
#include "tcv/image.hpp"

using namespace tcv;

namespace {
Frame random_frame(Rng& rng, int h, int w) {
    return Frame(rng.uniform_tensor({3, h, w}, 0.0, 1.0));
}
}  // namespace

TEST_CASE("bilinear_sample identity grid returns the frame") {
    Rng rng(1);
    Frame f = random_frame(rng, 8, 8);
    auto [out, mask] = bilinear_sample(f, SampleGrid::identity(8, 8));
    REQUIRE(out.data.max_abs_diff(f.data) == 0.0);
    REQUIRE(mask.min() == 1.0);
}

TEST_CASE("bilinear_sample hand-computed center of 2x2") {
    // channel values [[0,1],[2,3]]/3, sample at (0.5,0.5) -> 1.5/3
    Tensor t({3, 2, 2});
    for (int c = 0; c < 3; ++c) {
        t(c, 0, 0) = 0.0 / 3;
        t(c, 0, 1) = 1.0 / 3;
        t(c, 1, 0) = 2.0 / 3;
        t(c, 1, 1) = 3.0 / 3;
    }
    Tensor grid({2, 2, 2});
    for (int y = 0; y < 2; ++y)
        for (int x = 0; x < 2; ++x) {
            grid(0, y, x) = 0.5;
            grid(1, y, x) = 0.5;
        }
    Tensor out, mask;
    kernels::bilinear_sample_fwd(t, grid, out, &mask);
    for (int c = 0; c < 3; ++c) REQUIRE(out(c, 0, 0) == Catch::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("fully out-of-bounds grid clamps to border and masks zero") {
    Rng rng(2);
    Frame f = random_frame(rng, 8, 8);
    Tensor grid = SampleGrid::identity(8, 8).coords;
    for (std::size_t i = 0; i < grid.size(); ++i) grid[i] += 1000.0;
    auto [out, mask] = bilinear_sample(f, SampleGrid(grid));
    REQUIRE(mask.max() == 0.0);
    // clamped to bottom-right border pixel
    for (int c = 0; c < 3; ++c)
        for (int y = 0; y < 8; ++y)
            for (int x = 0; x < 8; ++x) REQUIRE(out.at(c, y, x) == f.at(c, 7, 7));
}

TEST_CASE("warp with zero flow is the identity") {
    Rng rng(3);
    Frame f = random_frame(rng, 8, 8);
    Tensor zero({2, 8, 8});
    auto [out, mask] = warp(f, zero);
    REQUIRE(out.data.max_abs_diff(f.data) <= 1e-6);
    REQUIRE(mask.min() == 1.0);
}

TEST_CASE("constant flow shifts a linear ramp by one pixel in the interior") {
    const int n = 8;
    Tensor t({3, n, n});
    for (int c = 0; c < 3; ++c)
        for (int y = 0; y < n; ++y)
            for (int x = 0; x < n; ++x) t(c, y, x) = x / double(n - 1);
    Frame ramp(std::move(t));
    Tensor flow({2, n, n});
    for (int y = 0; y < n; ++y)
        for (int x = 0; x < n; ++x) flow(0, y, x) = -1.0;
    auto [out, mask] = warp(ramp, flow);
    for (int y = 0; y < n; ++y)
        for (int x = 1; x < n; ++x)
            REQUIRE(out.at(0, y, x) == Catch::Approx((x - 1) / double(n - 1)).margin(1e-9));
    // brute-force reference agrees everywhere
    auto ref = oracle::ref_warp(ramp.data, flow);
    REQUIRE(out.data.max_abs_diff(ref.image) <= 1e-6);
}

TEST_CASE("warp matches brute-force oracle on random inputs") {
    Rng rng(4);
    for (int trial = 0; trial < 20; ++trial) {
        Frame f = random_frame(rng, 8, 8);
        Tensor flow = rng.uniform_tensor({2, 8, 8}, -2.0, 2.0);
        auto [out, mask] = warp(f, flow);
        auto ref = oracle::ref_warp(f.data, flow);
        REQUIRE(out.data.max_abs_diff(ref.image) <= 1e-6);
        REQUIRE(mask.max_abs_diff(ref.mask) == 0.0);
    }
}

TEST_CASE("warped values stay within the frame's value range") {
    Rng rng(5);
    for (int trial = 0; trial < 5; ++trial) {
        Frame f = random_frame(rng, 8, 8);
        Tensor flow = rng.uniform_tensor({2, 8, 8}, -3.0, 3.0);
        auto [out, mask] = warp(f, flow);
        REQUIRE(out.data.min() >= f.data.min() - 1e-12);
        REQUIRE(out.data.max() <= f.data.max() + 1e-12);
    }
}

TEST_CASE("warp gradients match finite differences") {
    Rng rng(6);
    ad::Var img = ad::leaf(rng.uniform_tensor({3, 8, 8}, 0.0, 1.0));
    // keep samples away from the border-clamp kinks so FD is well-defined
    Tensor fl = rng.uniform_tensor({2, 8, 8}, -1.2, 1.2);
    for (int y = 0; y < 8; ++y)
        for (int x = 0; x < 8; ++x) {
            fl(0, y, x) = std::clamp(fl(0, y, x), 0.3 - x, 6.7 - x);
            fl(1, y, x) = std::clamp(fl(1, y, x), 0.3 - y, 6.7 - y);
        }
    ad::Var flow = ad::leaf(fl);
    auto loss = [&] {
        ad::Var out = warp_v(img, flow);
        return ad::mean(ad::mul(out, out));
    };
    auto res = oracle::grad_check(loss, {img, flow}, 1e-3);
    REQUIRE(res.max_rel_err <= 1e-2);
}

TEST_CASE("warp rejects dimension mismatch") {
    Rng rng(7);
    Frame f = random_frame(rng, 8, 8);
    Tensor flow({2, 4, 4});
    REQUIRE_THROWS_AS(warp(f, flow), std::invalid_argument);
}

TEST_CASE("png round trip with round-half-up quantization") {
    Rng rng(8);
    Frame f = random_frame(rng, 8, 8);
    const std::string dir = std::filesystem::temp_directory_path() / "tcv_png_test";
    std::filesystem::create_directories(dir);
    const std::string path = dir + "/f.png";
    save_png(f, path);
    Frame g = load_png(path);
    // quantization error bounded by half a level
    REQUIRE(f.data.max_abs_diff(g.data) <= 0.5 / 255.0 + 1e-12);
    // saving the loaded frame again is bit-stable
    const std::string path2 = dir + "/g.png";
    save_png(g, path2);
    Frame h = load_png(path2);
    REQUIRE(g.data.max_abs_diff(h.data) == 0.0);
    REQUIRE(quantize8(0.5 / 255.0) == 1);  // round half up
}

TEST_CASE("frame directory order is numeric") {
    Rng rng(9);
    const std::string dir = std::filesystem::temp_directory_path() / "tcv_framedir_test";
    std::filesystem::remove_all(dir);
    std::vector<Frame> frames;
    for (int t = 0; t < 12; ++t) frames.push_back(random_frame(rng, 8, 8));
    save_frame_dir(frames, dir);
    auto loaded = load_frame_dir(dir);
    REQUIRE(loaded.size() == 12);
    for (int t = 0; t < 12; ++t)
        REQUIRE(loaded[t].data.max_abs_diff(frames[t].data) <= 0.5 / 255.0 + 1e-12);
}
