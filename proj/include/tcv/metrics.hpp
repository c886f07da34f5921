#pragma once

#include <nlohmann/json.hpp>

#include <fstream>
#include <string>
#include <vector>

#include "tcv/flow.hpp"
#include "tcv/image.hpp"
#include "tcv/perceptual.hpp"

namespace tcv {

using json = nlohmann::json;  // std::map-backed: keys serialize in sorted order

// Binary non-occlusion mask from forward-backward consistency:
// 1 where ||f(p) + b(p + f(p))||^2 < 0.01 (||f(p)||^2 + ||b(p+f(p))||^2) + 0.5.
inline Tensor occlusion_mask(const FlowField& f_fwd, const FlowField& f_bwd) {
    require_same_shape(f_fwd.data, f_bwd.data, "occlusion_mask");
    const int h = f_fwd.height(), w = f_fwd.width();
    Tensor grid = flow_to_grid(f_fwd.data);
    Tensor sampled, inb;
    kernels::bilinear_sample_fwd(f_bwd.data, grid, sampled, &inb);
    Tensor m({h, w});
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            const double fx = f_fwd.data(0, y, x), fy = f_fwd.data(1, y, x);
            const double bx = sampled(0, y, x), by = sampled(1, y, x);
            const double rx = fx + bx, ry = fy + by;
            const double lhs = rx * rx + ry * ry;
            const double rhs = 0.01 * (fx * fx + fy * fy + bx * bx + by * by) + 0.5;
            m(y, x) = lhs < rhs ? 1.0 : 0.0;
        }
    return m;
}

struct WarpingErrorResult {
    std::vector<double> per_pair;  // aggregated in frame order
    std::vector<int> skipped;      // pairs with empty masks
    double mean = 0.0;
};

// E_warp over consecutive pairs: masked mean over pixels of the per-pixel
// squared difference, averaged over the 3 channels so values are resolution-
// and channel-count-invariant.
inline WarpingErrorResult warping_error(const std::vector<Frame>& frames,
                                        const std::vector<FlowField>& flows_fwd,
                                        const std::vector<Tensor>& masks) {
    const int T = static_cast<int>(frames.size());
    if (static_cast<int>(flows_fwd.size()) != T - 1 || static_cast<int>(masks.size()) != T - 1)
        throw std::invalid_argument("warping_error: need T-1 flows and masks");
    WarpingErrorResult res;
    for (int t = 0; t + 1 < T; ++t) {
        const Frame& a = frames[static_cast<std::size_t>(t)];
        SampleResult warped = warp(frames[static_cast<std::size_t>(t + 1)],
                                   flows_fwd[static_cast<std::size_t>(t)].data);
        const Tensor& m = masks[static_cast<std::size_t>(t)];
        require_same_shape(m, warped.mask, "warping_error mask");
        double num = 0.0, den = 0.0;
        for (int y = 0; y < a.height(); ++y)
            for (int x = 0; x < a.width(); ++x) {
                const double mv = m(y, x);
                if (mv == 0.0) continue;
                double d2 = 0.0;
                for (int c = 0; c < 3; ++c) {
                    const double d = a.at(c, y, x) - warped.frame.at(c, y, x);
                    d2 += d * d;
                }
                num += mv * d2 / 3.0;
                den += mv;
            }
        if (den == 0.0) {
            res.skipped.push_back(t);
            continue;
        }
        res.per_pair.push_back(num / den);
    }
    if (!res.per_pair.empty()) {
        double s = 0.0;
        for (double v : res.per_pair) s += v;
        res.mean = s / static_cast<double>(res.per_pair.size());
    }
    return res;
}

inline double similarity_to_direct(const std::vector<Frame>& out_frames,
                                   const std::vector<Frame>& direct_frames,
                                   const PerceptualExtractor& percep) {
    if (out_frames.size() != direct_frames.size())
        throw std::invalid_argument("similarity_to_direct: length mismatch");
    double s = 0.0;
    for (std::size_t t = 0; t < out_frames.size(); ++t)
        s += percep.distance(out_frames[t], direct_frames[t]);
    return s / static_cast<double>(out_frames.size());
}

// Row y of each frame stacked over time: output height T, width W.
inline Frame xt_slice(const std::vector<Frame>& frames, int y) {
    if (frames.empty()) throw std::invalid_argument("xt_slice: no frames");
    const int h = frames[0].height(), w = frames[0].width();
    if (y < 0 || y >= h) throw std::invalid_argument("xt_slice: row out of range");
    const int T = static_cast<int>(frames.size());
    Tensor out({3, T, w});
    for (int t = 0; t < T; ++t)
        for (int c = 0; c < 3; ++c)
            for (int x = 0; x < w; ++x) out(c, t, x) = frames[static_cast<std::size_t>(t)].at(c, y, x);
    return Frame(std::move(out));
}

struct EvalReport {
    std::vector<double> pair_warp_errors;
    std::vector<int> skipped_pairs;
    double mean_warp_error = 0.0;
    double direct_warp_error = -1.0;  // optional context (-1 = not computed)
    double mean_similarity_to_direct = -1.0;
    std::vector<double> inversion_psnr;
    json config_echo;
    std::uint64_t seed = 0;

    json to_json() const {
        json j;
        j["config_echo"] = config_echo;
        j["direct_warp_error"] = direct_warp_error;
        j["inversion_psnr"] = inversion_psnr;
        j["mean_similarity_to_direct"] = mean_similarity_to_direct;
        j["mean_warp_error"] = mean_warp_error;
        j["pair_warp_errors"] = pair_warp_errors;
        j["skipped_pairs"] = skipped_pairs;
        j["seed"] = seed;
        return j;
    }

    std::string to_csv() const {
        std::string s = "metric,index,value\n";
        for (std::size_t i = 0; i < pair_warp_errors.size(); ++i)
            s += "pair_warp_error," + std::to_string(i) + "," + std::to_string(pair_warp_errors[i]) + "\n";
        s += "mean_warp_error,," + std::to_string(mean_warp_error) + "\n";
        if (direct_warp_error >= 0)
            s += "direct_warp_error,," + std::to_string(direct_warp_error) + "\n";
        if (mean_similarity_to_direct >= 0)
            s += "mean_similarity_to_direct,," + std::to_string(mean_similarity_to_direct) + "\n";
        for (std::size_t i = 0; i < inversion_psnr.size(); ++i)
            s += "inversion_psnr," + std::to_string(i) + "," + std::to_string(inversion_psnr[i]) + "\n";
        return s;
    }

    void save(const std::string& json_path, const std::string& csv_path) const {
        std::ofstream js(json_path);
        js << to_json().dump(2) << "\n";
        std::ofstream cs(csv_path);
        cs << to_csv();
    }
};

}  // namespace tcv
