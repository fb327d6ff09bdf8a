#pragma once

#include <cmath>
#include <vector>

#include "mmc/tensor.hpp"

namespace mmc {

// Plain Adam over leaf tensors. step() reads each param's accumulated grad.
class Adam {
public:
    Adam(std::vector<Tensor> params, double lr, double beta1 = 0.9, double beta2 = 0.999,
         double eps = 1e-8)
        : params_(std::move(params)), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
        m_.resize(params_.size());
        v_.resize(params_.size());
        for (std::size_t i = 0; i < params_.size(); ++i) {
            m_[i].assign(params_[i].numel(), 0.0);
            v_[i].assign(params_[i].numel(), 0.0);
        }
    }

    void zero_grad() {
        for (Tensor& p : params_) p.zero_grad();
    }

    void step() {
        ++t_;
        const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
        const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
        for (std::size_t i = 0; i < params_.size(); ++i) {
            auto* impl = params_[i].raw();
            if (impl->grad.size() != impl->data.size()) continue;  // param unused this step
            for (std::size_t j = 0; j < impl->data.size(); ++j) {
                const double g = impl->grad[j];
                m_[i][j] = beta1_ * m_[i][j] + (1.0 - beta1_) * g;
                v_[i][j] = beta2_ * v_[i][j] + (1.0 - beta2_) * g * g;
                const double mh = m_[i][j] / bc1;
                const double vh = v_[i][j] / bc2;
                impl->data[j] -= lr_ * mh / (std::sqrt(vh) + eps_);
            }
        }
    }

    const std::vector<Tensor>& params() const { return params_; }

private:
    std::vector<Tensor> params_;
    double lr_, beta1_, beta2_, eps_;
    long t_ = 0;
    std::vector<std::vector<double>> m_, v_;
};

}  // namespace mmc
