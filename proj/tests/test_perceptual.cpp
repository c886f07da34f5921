#include <catch2/catch_amalgamated.hpp>

#include "oracles.hpp"
#include "tcv/perceptual.hpp"

using namespace tcv;

namespace {
Frame random_frame(Rng& rng, int n) { return Frame(rng.uniform_tensor({3, n, n}, 0.0, 1.0)); }

Frame add_noise(const Frame& f, double sigma, Rng& rng) {
    Tensor t = f.data;
    for (std::size_t i = 0; i < t.size(); ++i)
        t[i] = std::clamp(t[i] + sigma * (2.0 * rng.uniform() - 1.0), 0.0, 1.0);
    return Frame(std::move(t));
}
}  // namespace

TEST_CASE("perceptual distance of identical frames is exactly zero") {
    Rng rng(17);
    PerceptualExtractor p(1);
    Frame a = random_frame(rng, 16);
    REQUIRE(p.distance(a, a) == 0.0);
}

TEST_CASE("fully masked distance is exactly zero") {
    Rng rng(18);
    PerceptualExtractor p(1);
    Frame a = random_frame(rng, 16);
    Frame b = random_frame(rng, 16);
    Tensor w({16, 16}, 0.0);
    REQUIRE(p.distance(a, b, &w) == 0.0);
}

TEST_CASE("distance is symmetric and monotone in noise level over seeded trials") {
    PerceptualExtractor p(2);
    int wins = 0;
    for (int trial = 0; trial < 20; ++trial) {
        Rng rng(100 + static_cast<std::uint64_t>(trial));
        Frame a = random_frame(rng, 16);
        Frame b1 = add_noise(a, 0.1, rng);
        Frame b2 = add_noise(a, 0.2, rng);
        REQUIRE(p.distance(a, b1) == Catch::Approx(p.distance(b1, a)).epsilon(1e-12));
        if (p.distance(a, b1) < p.distance(a, b2)) ++wins;
    }
    REQUIRE(wins == 20);
}

TEST_CASE("extractors with equal seeds are bit-identical") {
    Rng rng(19);
    Frame a = random_frame(rng, 16);
    Frame b = random_frame(rng, 16);
    PerceptualExtractor p1(77), p2(77), p3(78);
    REQUIRE(p1.distance(a, b) == p2.distance(a, b));
    REQUIRE(p1.distance(a, b) != p3.distance(a, b));
}

TEST_CASE("perceptual distance gradient matches finite differences") {
    Rng rng(20);
    PerceptualExtractor p(3);
    ad::Var a = ad::leaf(rng.uniform_tensor({3, 16, 16}, 0.1, 0.9));
    ad::Var b = ad::leaf(rng.uniform_tensor({3, 16, 16}, 0.1, 0.9));
    auto loss = [&] { return p.distance_v(a, b); };
    auto res = oracle::grad_check(loss, {a, b}, 1e-3, 96);
    REQUIRE(res.max_rel_err <= 1e-2);
}

TEST_CASE("difference map of identical frames is zero and symmetric otherwise") {
    Rng rng(21);
    PerceptualExtractor p(4);
    Frame a = random_frame(rng, 16);
    Tensor m = p.difference_map(a, a);
    REQUIRE(m.max() == 0.0);
    Frame b = random_frame(rng, 16);
    Tensor ab = p.difference_map(a, b);
    Tensor ba = p.difference_map(b, a);
    REQUIRE(ab.max_abs_diff(ba) <= 1e-12);
    REQUIRE(ab.min() >= 0.0);
}

TEST_CASE("difference map mass concentrates at a localized edit") {
    Rng rng(22);
    PerceptualExtractor p(5);
    Frame a = random_frame(rng, 64);
    Frame b = a;
    // k x k patch edit
    const int k = 16, y0 = 24, x0 = 24;
    for (int c = 0; c < 3; ++c)
        for (int y = y0; y < y0 + k; ++y)
            for (int x = x0; x < x0 + k; ++x) b.at(c, y, x) = 1.0 - b.at(c, y, x);
    Tensor m = p.difference_map(a, b);
    const int r = p.receptive_field_radius();
    double inside = 0.0, total = 0.0;
    for (int y = 0; y < 64; ++y)
        for (int x = 0; x < 64; ++x) {
            total += m(y, x);
            if (y >= y0 - r && y < y0 + k + r && x >= x0 - r && x < x0 + k + r) inside += m(y, x);
        }
    REQUIRE(inside / total >= 0.9);
}

TEST_CASE("difference mask: zero for identical frames, localized for patch edits") {
    Rng rng(23);
    PerceptualExtractor p(6);
    Frame a = random_frame(rng, 64);
    REQUIRE(p.difference_mask(a, a).max() == 0.0);

    Frame b = a;
    const int k = 16, y0 = 20, x0 = 28;
    for (int c = 0; c < 3; ++c)
        for (int y = y0; y < y0 + k; ++y)
            for (int x = x0; x < x0 + k; ++x) b.at(c, y, x) = 1.0 - b.at(c, y, x);
    Tensor m = p.difference_mask(b, a);
    REQUIRE(m.min() >= 0.0);
    REQUIRE(m.max() <= 1.0);
    // >= 50% of the patch interior is >= 0.5
    int hot = 0, n = 0;
    for (int y = y0 + 4; y < y0 + k - 4; ++y)
        for (int x = x0 + 4; x < x0 + k - 4; ++x) {
            ++n;
            if (m(y, x) >= 0.5) ++hot;
        }
    REQUIRE(hot * 2 >= n);
    // far field stays below 0.1
    const int r = p.receptive_field_radius();
    for (int y = 0; y < 64; ++y)
        for (int x = 0; x < 64; ++x) {
            const bool far = y < y0 - r || y >= y0 + k + r || x < x0 - r || x >= x0 + k + r;
            if (far) REQUIRE(m(y, x) <= 0.1);
        }
}

TEST_CASE("difference mask is invariant to scaling of the underlying map") {
    // clamp(d/q95) is scale-invariant; verified through two globally scaled edits
    Rng rng(24);
    PerceptualExtractor p(7);
    Frame a = random_frame(rng, 16);
    Frame b = a;
    for (std::size_t i = 0; i < b.data.size(); ++i)
        b.data[i] = std::clamp(b.data[i] + 0.2, 0.0, 1.0);
    Tensor d = p.difference_map(b, a);
    const double q = std::max(PerceptualExtractor::percentile(d, 0.95), 1e-6);
    Tensor m1 = d, m2 = d;
    for (std::size_t i = 0; i < d.size(); ++i) {
        m1[i] = std::clamp(d[i] / q, 0.0, 1.0);
        m2[i] = std::clamp(3.0 * d[i] / (3.0 * q), 0.0, 1.0);
    }
    REQUIRE(m1.max_abs_diff(m2) <= 1e-12);
}

TEST_CASE("fuse_masks clamps the sum") {
    Tensor v({2, 2}, 0.5), pd({2, 2}, 0.7);
    REQUIRE(fuse_masks(v, pd).max() == 1.0);
    REQUIRE(fuse_masks(v, pd).min() == 1.0);
    Tensor zero({2, 2}, 0.0);
    REQUIRE(fuse_masks(v, zero).max_abs_diff(v) == 0.0);
    Tensor one({2, 2}, 1.0);
    REQUIRE(fuse_masks(one, pd).min() == 1.0);
}
