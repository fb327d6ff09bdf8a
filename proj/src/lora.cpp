#include "mmc/lora.hpp"

#include <cmath>
#include <stdexcept>

namespace mmc {

LoraAdapter LoraAdapter::init(std::size_t d_in, std::size_t d_out, std::size_t rank, double alpha,
                              Rng& rng) {
    if (rank < 1) throw std::invalid_argument("LoraAdapter: rank must be >= 1");
    LoraAdapter a;
    a.down = Tensor::randn({rank, d_in}, rng, 1.0 / std::sqrt(static_cast<double>(d_in)), true);
    a.up = Tensor::zeros({d_out, rank}, true);
    a.scale = alpha / static_cast<double>(rank);
    return a;
}

Tensor ReparamLinear::forward(const Tensor& x) const {
    if (x.dims().size() != 2 || x.dims()[1] != d_in())
        throw std::invalid_argument("ReparamLinear: input cols must equal d_in");
    Tensor y = matmul(x, transpose(base_weight));
    if (base_bias) y = add_row_broadcast(y, *base_bias);
    if (adapter) {
        Tensor delta = matmul(matmul(x, transpose(adapter->down)), transpose(adapter->up));
        y = add(y, scale(delta, adapter->scale));
    }
    return y;
}

ReparamLinear ReparamLinear::merged() const {
    if (!adapter) throw std::invalid_argument("ReparamLinear::merged: no adapter present");
    ReparamLinear out;
    Tensor delta = matmul(adapter->up, adapter->down);  // [d_out x d_in]
    std::vector<double> w(base_weight.data().begin(), base_weight.data().end());
    for (std::size_t i = 0; i < w.size(); ++i) w[i] += adapter->scale * delta.at(i);
    out.base_weight = Tensor(base_weight.dims(), std::move(w));
    if (base_bias) out.base_bias = base_bias->detach();
    out.frozen = frozen;
    return out;
}

ReparamLinear ReparamLinear::inherit_base(std::size_t rank, double alpha, Rng& rng) const {
    ReparamLinear out;
    out.base_weight = base_weight.detach();
    if (base_bias) out.base_bias = base_bias->detach();
    out.frozen = true;
    out.attach_adapter(rank, alpha, rng);
    return out;
}

void ReparamLinear::collect_trainable(std::vector<Tensor>& out) const {
    if (!frozen) {
        out.push_back(base_weight);
        if (base_bias) out.push_back(*base_bias);
    }
    if (adapter) {
        out.push_back(adapter->down);
        out.push_back(adapter->up);
    }
}

ReparamLinear ReparamLinear::init(std::size_t d_in, std::size_t d_out, Rng& rng, bool with_bias,
                                  bool frozen) {
    ReparamLinear l;
    l.base_weight =
        Tensor::randn({d_out, d_in}, rng, 1.0 / std::sqrt(static_cast<double>(d_in)), !frozen);
    if (with_bias) l.base_bias = Tensor::zeros({d_out}, !frozen);
    l.frozen = frozen;
    return l;
}

ReparamLinear ReparamLinear::zero_init(std::size_t d_in, std::size_t d_out, bool with_bias) {
    ReparamLinear l;
    l.base_weight = Tensor::zeros({d_out, d_in}, true);
    if (with_bias) l.base_bias = Tensor::zeros({d_out}, true);
    l.frozen = false;
    return l;
}

void ReparamLinear::attach_adapter(std::size_t rank, double alpha, Rng& rng) {
    adapter = LoraAdapter::init(d_in(), d_out(), rank, alpha, rng);
}

}  // namespace mmc
