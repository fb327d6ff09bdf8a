#pragma once

#include <optional>
#include <string>
#include <vector>

#include "mmc/tensor.hpp"

namespace mmc {

// Low-rank delta on a linear map: scale * up * down, zero at creation
// because up starts as all zeros.
struct LoraAdapter {
    Tensor down;   // [r x d_in]
    Tensor up;     // [d_out x r]
    double scale;  // alpha / r

    static LoraAdapter init(std::size_t d_in, std::size_t d_out, std::size_t rank, double alpha,
                            Rng& rng);
};

// Frozen base linear map plus an optional trainable low-rank delta.
// forward applies rows-as-samples: y = x W^T (+ bias) + scale * x down^T up^T.
struct ReparamLinear {
    Tensor base_weight;  // [d_out x d_in]
    std::optional<Tensor> base_bias;
    std::optional<LoraAdapter> adapter;
    bool frozen = true;

    std::size_t d_in() const { return base_weight.dims()[1]; }
    std::size_t d_out() const { return base_weight.dims()[0]; }

    Tensor forward(const Tensor& x) const;

    // Folds the adapter into the weight and drops it.
    ReparamLinear merged() const;

    // Deep copy sharing nothing; adapter reinitialized fresh (zero delta).
    ReparamLinear inherit_base(std::size_t rank, double alpha, Rng& rng) const;

    void collect_trainable(std::vector<Tensor>& out) const;

    static ReparamLinear init(std::size_t d_in, std::size_t d_out, Rng& rng, bool with_bias,
                              bool frozen = true);
    static ReparamLinear zero_init(std::size_t d_in, std::size_t d_out, bool with_bias);
    void attach_adapter(std::size_t rank, double alpha, Rng& rng);
};

}  // namespace mmc
