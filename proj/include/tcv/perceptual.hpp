#pragma once

#include <vector>

#include "tcv/autodiff.hpp"
#include "tcv/image.hpp"
#include "tcv/tensor.hpp"

namespace tcv {

// Deterministic multi-scale perceptual distance: fixed seeded 5x5 conv
// features at scales {1,2,4}, 16 channels each, channel-unit-normalized,
// squared differences. The weights are drawn once at construction and
// frozen, so identical seeds give bit-identical distances.
class PerceptualExtractor {
public:
    static constexpr int kChannels = 16;
    static constexpr int kKernel = 5;

    explicit PerceptualExtractor(std::uint64_t seed) : seed_(seed) {
        Rng rng = Rng::stream(seed, "perceptual.weights");
        const double std = 1.0 / std::sqrt(3.0 * kKernel * kKernel);
        for (int s = 0; s < 3; ++s)
            weights_.push_back(rng.normal_tensor({kChannels, 3, kKernel, kKernel}, std));
    }

    std::uint64_t seed() const { return seed_; }
    const std::vector<int>& scales() const { return scales_; }

    // Conservative bound on how far a single-pixel change can spread in the
    // difference map (conv taps at coarsest scale + resampling smear).
    int receptive_field_radius() const { return 4 * scales_.back(); }

    ad::Var features(const ad::Var& img, int scale_idx) const {
        ad::Var x = img;
        for (int s = scales_[static_cast<std::size_t>(scale_idx)]; s > 1; s /= 2)
            x = ad::downsample2x(x);
        x = ad::conv2d(x, ad::constant(weights_[static_cast<std::size_t>(scale_idx)]), ad::Var());
        return ad::channel_unit_norm(x);
    }

    // Mean over scales of the (optionally mask-weighted) mean per-pixel
    // squared feature difference. weights, if given, is an (H,W) map in
    // [0,1], area-downsampled to each scale.
    ad::Var distance_v(const ad::Var& a, const ad::Var& b, const Tensor* weights = nullptr) const {
        require_same_shape(a.value(), b.value(), "perceptual_distance");
        if (weights && (weights->dim(0) != a.value().dim(1) || weights->dim(1) != a.value().dim(2)))
            throw std::invalid_argument("perceptual_distance: weight mask dimension mismatch");
        std::vector<ad::Var> per_scale;
        for (int s = 0; s < static_cast<int>(scales_.size()); ++s) {
            ad::Var fa = features(a, s);
            ad::Var fb = features(b, s);
            ad::Var d = ad::sub(fa, fb);
            ad::Var dmap = ad::sum_channels(ad::mul(d, d));  // (Hs,Ws)
            if (weights) {
                Tensor w = downsample_mask(*weights, scales_[static_cast<std::size_t>(s)]);
                per_scale.push_back(ad::weighted_mean(dmap, w));
            } else {
                per_scale.push_back(ad::mean(dmap));
            }
        }
        return ad::scalar_mul(ad::add_all(per_scale), 1.0 / static_cast<double>(per_scale.size()));
    }

    double distance(const Frame& a, const Frame& b, const Tensor* weights = nullptr) const {
        return distance_v(ad::constant(a.data), ad::constant(b.data), weights).scalar();
    }

    // Per-pixel feature distance, upsampled from each scale to full
    // resolution and averaged. Detached by design (feeds masks only).
    Tensor difference_map(const Frame& a, const Frame& b) const {
        require_same_shape(a.data, b.data, "perceptual_difference_map");
        const int h = a.height(), w = a.width();
        Tensor acc({h, w});
        for (int s = 0; s < static_cast<int>(scales_.size()); ++s) {
            ad::Var fa = features(ad::constant(a.data), s);
            ad::Var fb = features(ad::constant(b.data), s);
            Tensor d({fa.value().dim(1), fa.value().dim(2)});
            for (int c = 0; c < kChannels; ++c)
                for (int y = 0; y < d.dim(0); ++y)
                    for (int x = 0; x < d.dim(1); ++x) {
                        const double dd = fa.value()(c, y, x) - fb.value()(c, y, x);
                        d(y, x) += dd * dd;
                    }
            // back to full resolution
            Tensor cur({1, d.dim(0), d.dim(1)});
            for (int y = 0; y < d.dim(0); ++y)
                for (int x = 0; x < d.dim(1); ++x) cur(0, y, x) = d(y, x);
            while (cur.dim(1) < h) {
                Tensor up;
                kernels::upsample2x_fwd(cur, up);
                cur = std::move(up);
            }
            for (int y = 0; y < h; ++y)
                for (int x = 0; x < w; ++x) acc(y, x) += cur(0, y, x);
        }
        for (std::size_t i = 0; i < acc.size(); ++i)
            acc[i] /= static_cast<double>(scales_.size());
        return acc;
    }

    // Soft mask of edited regions: clamp(d / q95, 0, 1) then one 5x5 box pass.
    Tensor difference_mask(const Frame& edited, const Frame& input) const {
        Tensor d = difference_map(edited, input);
        const double q = std::max(percentile(d, 0.95), 1e-6);
        for (std::size_t i = 0; i < d.size(); ++i) d[i] = std::clamp(d[i] / q, 0.0, 1.0);
        return box5(d);
    }

    static double percentile(const Tensor& t, double p) {
        std::vector<double> v(t.data(), t.data() + t.size());
        const std::size_t k = static_cast<std::size_t>(p * (static_cast<double>(v.size()) - 1));
        std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(k), v.end());
        return v[k];
    }

    static Tensor downsample_mask(const Tensor& m, int factor) {
        Tensor cur({1, m.dim(0), m.dim(1)});
        for (int y = 0; y < m.dim(0); ++y)
            for (int x = 0; x < m.dim(1); ++x) cur(0, y, x) = m(y, x);
        for (int f = factor; f > 1; f /= 2) {
            Tensor dn;
            kernels::downsample2x_fwd(cur, dn);
            cur = std::move(dn);
        }
        Tensor out({cur.dim(1), cur.dim(2)});
        for (int y = 0; y < out.dim(0); ++y)
            for (int x = 0; x < out.dim(1); ++x) out(y, x) = cur(0, y, x);
        return out;
    }

    static Tensor box5(const Tensor& m) {
        const int h = m.dim(0), w = m.dim(1);
        Tensor out({h, w});
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                double s = 0.0;
                int n = 0;
                for (int dy = -2; dy <= 2; ++dy)
                    for (int dx = -2; dx <= 2; ++dx) {
                        const int yy = y + dy, xx = x + dx;
                        if (yy < 0 || yy >= h || xx < 0 || xx >= w) continue;
                        s += m(yy, xx);
                        ++n;
                    }
                out(y, x) = s / n;
            }
        return out;
    }

private:
    std::uint64_t seed_;
    std::vector<int> scales_ = {1, 2, 4};
    std::vector<Tensor> weights_;
};

inline Tensor fuse_masks(const Tensor& m_vis, const Tensor& m_pd) {
    require_same_shape(m_vis, m_pd, "fuse_masks");
    Tensor out = m_vis;
    for (std::size_t i = 0; i < out.size(); ++i)
        out[i] = std::clamp(out[i] + m_pd[i], 0.0, 1.0);
    return out;
}

}  // namespace tcv
