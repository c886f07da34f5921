#pragma once

#include <vector>

#include "tcv/autodiff.hpp"

namespace tcv {

// First-order momentum-based optimizer (Adam). Parameters are leaf Vars
// whose values are updated in place; a missing grad counts as zero.
class Adam {
public:
    Adam(std::vector<ad::Var> params, double lr, double beta1 = 0.9, double beta2 = 0.999,
         double eps = 1e-8)
        : params_(std::move(params)), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
        for (const auto& p : params_) {
            m_.emplace_back(p.value().shape());
            v_.emplace_back(p.value().shape());
        }
    }

    void zero_grad() {
        for (auto& p : params_) p.node()->grad = Tensor();
    }

    // Per-tensor global-norm gradient clip; 0 disables.
    void set_grad_clip(double c) { clip_ = c; }
    // Linear lr decay toward lr*floor_frac over total_steps; 0 disables.
    void set_linear_decay(long total_steps, double floor_frac = 0.1) {
        decay_steps_ = total_steps;
        decay_floor_ = floor_frac;
    }

    void step() {
        ++t_;
        double lr = lr_;
        if (decay_steps_ > 0) {
            const double f = std::min(1.0, static_cast<double>(t_) / static_cast<double>(decay_steps_));
            lr = lr_ * (1.0 - (1.0 - decay_floor_) * f);
        }
        const double bc1 = 1.0 - std::pow(beta1_, t_);
        const double bc2 = 1.0 - std::pow(beta2_, t_);
        for (std::size_t k = 0; k < params_.size(); ++k) {
            Tensor& val = params_[k].value_mut();
            const Tensor& g = params_[k].node()->grad;
            Tensor& m = m_[k];
            Tensor& v = v_[k];
            double scale = 1.0;
            if (clip_ > 0.0 && !g.empty()) {
                double n2 = 0.0;
                for (std::size_t i = 0; i < g.size(); ++i) n2 += g[i] * g[i];
                const double n = std::sqrt(n2);
                if (n > clip_) scale = clip_ / n;
            }
            for (std::size_t i = 0; i < val.size(); ++i) {
                const double gi = g.empty() ? 0.0 : g[i] * scale;
                m[i] = beta1_ * m[i] + (1.0 - beta1_) * gi;
                v[i] = beta2_ * v[i] + (1.0 - beta2_) * gi * gi;
                val[i] -= lr * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + eps_);
            }
        }
    }

    double lr() const { return lr_; }
    long steps_taken() const { return t_; }

private:
    std::vector<ad::Var> params_;
    double lr_, beta1_, beta2_, eps_;
    double clip_ = 0.0;
    double decay_floor_ = 0.1;
    long decay_steps_ = 0;
    std::vector<Tensor> m_, v_;
    long t_ = 0;
};

}  // namespace tcv
