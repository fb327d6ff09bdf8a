#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace mmc {

// Raised when an op produces NaN/Inf or a computation cannot continue.
struct ComputeError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Counter-based PRNG. value(i) = splitmix64(seed + (i+1) * 0x9E3779B97F4A7C15),
// so the stream depends only on (seed, i) and is identical on every platform.
// uniform() consumes one counter step, normal() exactly two (Box-Muller).
class Rng {
public:
    explicit Rng(uint64_t seed) : seed_(seed) {}

    uint64_t next_u64() {
        uint64_t z = seed_ + (++counter_) * 0x9E3779B97F4A7C15ull;
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
        return z ^ (z >> 31);
    }

    // [0, 1)
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double normal();

    uint64_t seed() const { return seed_; }

private:
    uint64_t seed_;
    uint64_t counter_ = 0;
};

struct RopeIndex;   // rope3d.hpp
struct RopeConfig;  // rope3d.hpp

// Shared node of the autograd graph. Leaves are parameters/inputs; interior
// nodes keep their parents alive and know how to push gradients to them.
struct TensorImpl {
    std::vector<std::size_t> dims;
    std::vector<double> data;
    bool requires_grad = false;
    bool is_leaf = true;
    std::vector<double> grad;  // sized lazily during backward
    std::vector<std::shared_ptr<TensorImpl>> parents;
    std::function<void(TensorImpl& self)> backward_fn;

    std::size_t numel() const {
        std::size_t n = 1;
        for (std::size_t d : dims) n *= d;
        return n;
    }
    void ensure_grad() {
        if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
    }
};

// Value-semantics handle onto a shared TensorImpl. Row-major, f64 only.
class Tensor {
public:
    Tensor() = default;
    Tensor(std::vector<std::size_t> dims, std::vector<double> data, bool requires_grad = false);
    explicit Tensor(std::shared_ptr<TensorImpl> impl) : impl_(std::move(impl)) {}

    static Tensor zeros(std::vector<std::size_t> dims, bool requires_grad = false);
    static Tensor full(std::vector<std::size_t> dims, double value, bool requires_grad = false);
    static Tensor scalar(double value, bool requires_grad = false);
    static Tensor identity(std::size_t n);
    static Tensor randn(std::vector<std::size_t> dims, Rng& rng, double stddev = 1.0,
                        bool requires_grad = false);

    bool defined() const { return impl_ != nullptr; }
    const std::vector<std::size_t>& dims() const { return impl_->dims; }
    std::size_t numel() const { return impl_->numel(); }
    std::size_t rows() const;
    std::size_t cols() const;

    double item() const;
    double at(std::size_t i) const { return impl_->data[i]; }
    double at(std::size_t r, std::size_t c) const { return impl_->data[r * cols() + c]; }
    std::span<const double> data() const { return impl_->data; }
    std::vector<double>& mutable_data() { return impl_->data; }  // leaf mutation only

    bool requires_grad() const { return impl_ && impl_->requires_grad; }
    bool is_leaf() const { return impl_ && impl_->is_leaf; }

    Tensor detach() const;  // same values, fresh leaf, no grad tracking
    Tensor clone() const;   // deep copy, keeps requires_grad as a fresh leaf

    // Gradient accumulated by the last backward(); empty tensor if none.
    Tensor grad() const;
    void zero_grad();

    std::shared_ptr<TensorImpl> impl() const { return impl_; }
    TensorImpl* raw() const { return impl_.get(); }

private:
    std::shared_ptr<TensorImpl> impl_;
};

// Reverse-mode sweep from a scalar loss. Throws on non-scalar input.
void backward(const Tensor& loss);

// Convenience wrapper: d(loss)/d(param) for each param, in order.
std::vector<Tensor> grad(const Tensor& loss, std::span<const Tensor> params);

// --- differentiable ops (every output is checked finite) ---

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);
// [m x n] + [n] broadcast over rows
Tensor add_row_broadcast(const Tensor& m, const Tensor& row);
Tensor sum(const Tensor& a);   // -> [1]
Tensor mean(const Tensor& a);  // -> [1]
Tensor softmax_rows(const Tensor& a);
Tensor gelu(const Tensor& a);
Tensor rms_norm_rows(const Tensor& a, double eps = 1e-6);
Tensor concat_rows(std::span<const Tensor> parts);
Tensor slice_rows(const Tensor& a, std::size_t start, std::size_t count);
Tensor concat_cols(std::span<const Tensor> parts);
Tensor slice_cols(const Tensor& a, std::size_t start, std::size_t count);
Tensor reshape(const Tensor& a, std::vector<std::size_t> dims);

// Helpers shared by op implementations and custom ops elsewhere.
namespace detail {
void check_finite(std::span<const double> v, const char* op);
Tensor make_node(std::vector<std::size_t> dims, std::vector<double> data,
                 std::vector<std::shared_ptr<TensorImpl>> parents,
                 std::function<void(TensorImpl&)> backward_fn, const char* op);
}  // namespace detail

double max_abs_diff(const Tensor& a, const Tensor& b);

}  // namespace mmc
