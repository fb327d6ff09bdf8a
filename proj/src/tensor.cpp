#include "mmc/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_set>

namespace mmc {

double Rng::normal() {
    // Box-Muller; offset keeps u1 strictly inside (0,1).
    double u1 = (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53;
    double u2 = static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
}

Tensor::Tensor(std::vector<std::size_t> dims, std::vector<double> data, bool requires_grad) {
    std::size_t n = 1;
    for (std::size_t d : dims) n *= d;
    if (n != data.size())
        throw std::invalid_argument("Tensor: dims product " + std::to_string(n) +
                                    " != data length " + std::to_string(data.size()));
    impl_ = std::make_shared<TensorImpl>();
    impl_->dims = std::move(dims);
    impl_->data = std::move(data);
    impl_->requires_grad = requires_grad;
    impl_->is_leaf = true;
}

Tensor Tensor::zeros(std::vector<std::size_t> dims, bool requires_grad) {
    std::size_t n = 1;
    for (std::size_t d : dims) n *= d;
    return Tensor(std::move(dims), std::vector<double>(n, 0.0), requires_grad);
}

Tensor Tensor::full(std::vector<std::size_t> dims, double value, bool requires_grad) {
    std::size_t n = 1;
    for (std::size_t d : dims) n *= d;
    return Tensor(std::move(dims), std::vector<double>(n, value), requires_grad);
}

Tensor Tensor::scalar(double value, bool requires_grad) {
    return Tensor({1}, {value}, requires_grad);
}

Tensor Tensor::identity(std::size_t n) {
    std::vector<double> d(n * n, 0.0);
    for (std::size_t i = 0; i < n; ++i) d[i * n + i] = 1.0;
    return Tensor({n, n}, std::move(d));
}

Tensor Tensor::randn(std::vector<std::size_t> dims, Rng& rng, double stddev, bool requires_grad) {
    std::size_t n = 1;
    for (std::size_t d : dims) n *= d;
    std::vector<double> data(n);
    for (std::size_t i = 0; i < n; ++i) data[i] = rng.normal() * stddev;
    return Tensor(std::move(dims), std::move(data), requires_grad);
}

std::size_t Tensor::rows() const {
    if (impl_->dims.size() != 2) throw std::invalid_argument("Tensor::rows: rank != 2");
    return impl_->dims[0];
}

std::size_t Tensor::cols() const {
    if (impl_->dims.size() != 2) throw std::invalid_argument("Tensor::cols: rank != 2");
    return impl_->dims[1];
}

double Tensor::item() const {
    if (numel() != 1) throw std::invalid_argument("Tensor::item: numel != 1");
    return impl_->data[0];
}

Tensor Tensor::detach() const {
    return Tensor(impl_->dims, impl_->data, false);
}

Tensor Tensor::clone() const {
    return Tensor(impl_->dims, impl_->data, impl_->requires_grad);
}

Tensor Tensor::grad() const {
    if (!impl_ || impl_->grad.size() != impl_->data.size()) return Tensor();
    return Tensor(impl_->dims, impl_->grad, false);
}

void Tensor::zero_grad() {
    if (impl_) impl_->grad.assign(impl_->data.size(), 0.0);
}

namespace detail {

void check_finite(std::span<const double> v, const char* op) {
    for (double x : v) {
        if (!std::isfinite(x))
            throw ComputeError(std::string("op '") + op + "' produced a non-finite value");
    }
}

Tensor make_node(std::vector<std::size_t> dims, std::vector<double> data,
                 std::vector<std::shared_ptr<TensorImpl>> parents,
                 std::function<void(TensorImpl&)> backward_fn, const char* op) {
    check_finite(data, op);
    auto impl = std::make_shared<TensorImpl>();
    impl->dims = std::move(dims);
    impl->data = std::move(data);
    bool needs = false;
    for (const auto& p : parents) needs = needs || (p && p->requires_grad);
    impl->requires_grad = needs;
    impl->is_leaf = false;
    if (needs) {
        impl->parents = std::move(parents);
        impl->backward_fn = std::move(backward_fn);
    }
    return Tensor(std::move(impl));
}

}  // namespace detail

void backward(const Tensor& loss) {
    if (!loss.defined() || loss.numel() != 1)
        throw std::invalid_argument("backward: loss must be a defined scalar");
    TensorImpl* root = loss.raw();
    if (!root->requires_grad) return;

    // iterative DFS topological order
    std::vector<TensorImpl*> order;
    std::unordered_set<TensorImpl*> visited;
    std::vector<std::pair<TensorImpl*, std::size_t>> stack;
    stack.emplace_back(root, 0);
    visited.insert(root);
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            TensorImpl* p = node->parents[next++].get();
            if (p && p->requires_grad && !visited.count(p)) {
                visited.insert(p);
                stack.emplace_back(p, 0);
            }
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    root->ensure_grad();
    root->grad[0] += 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        TensorImpl* node = *it;
        if (node->backward_fn) {
            node->ensure_grad();
            node->backward_fn(*node);
        }
    }
}

std::vector<Tensor> grad(const Tensor& loss, std::span<const Tensor> params) {
    for (const Tensor& p : params) p.raw()->grad.assign(p.raw()->data.size(), 0.0);
    backward(loss);
    std::vector<Tensor> out;
    out.reserve(params.size());
    for (const Tensor& p : params) {
        Tensor g = p.grad();
        out.push_back(g.defined() ? g : Tensor::zeros(p.dims()));
    }
    return out;
}

// --- ops ---

static void require_rank2(const Tensor& t, const char* op) {
    if (t.dims().size() != 2)
        throw std::invalid_argument(std::string(op) + ": expected rank-2 tensor");
}

Tensor matmul(const Tensor& a, const Tensor& b) {
    require_rank2(a, "matmul");
    require_rank2(b, "matmul");
    const std::size_t m = a.dims()[0], k = a.dims()[1], k2 = b.dims()[0], n = b.dims()[1];
    if (k != k2)
        throw std::invalid_argument("matmul: inner dims mismatch " + std::to_string(k) + " vs " +
                                    std::to_string(k2));
    std::vector<double> out(m * n, 0.0);
    const double* pa = a.data().data();
    const double* pb = b.data().data();
    for (std::size_t i = 0; i < m; ++i) {
        double* po = out.data() + i * n;
        for (std::size_t kk = 0; kk < k; ++kk) {
            const double av = pa[i * k + kk];
            const double* pbr = pb + kk * n;
            for (std::size_t j = 0; j < n; ++j) po[j] += av * pbr[j];
        }
    }
    auto ai = a.impl(), bi = b.impl();
    return detail::make_node(
        {m, n}, std::move(out), {ai, bi},
        [ai, bi, m, k, n](TensorImpl& self) {
            const double* g = self.grad.data();
            if (ai->requires_grad) {
                ai->ensure_grad();  // dA = G * B^T
                for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t kk = 0; kk < k; ++kk) {
                        double acc = 0.0;
                        const double* gr = g + i * n;
                        const double* br = bi->data.data() + kk * n;
                        for (std::size_t j = 0; j < n; ++j) acc += gr[j] * br[j];
                        ai->grad[i * k + kk] += acc;
                    }
            }
            if (bi->requires_grad) {
                bi->ensure_grad();  // dB = A^T * G
                for (std::size_t kk = 0; kk < k; ++kk)
                    for (std::size_t i = 0; i < m; ++i) {
                        const double av = ai->data[i * k + kk];
                        const double* gr = g + i * n;
                        double* bg = bi->grad.data() + kk * n;
                        for (std::size_t j = 0; j < n; ++j) bg[j] += av * gr[j];
                    }
            }
        },
        "matmul");
}

Tensor transpose(const Tensor& a) {
    require_rank2(a, "transpose");
    const std::size_t m = a.dims()[0], n = a.dims()[1];
    std::vector<double> out(m * n);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) out[j * m + i] = a.data()[i * n + j];
    auto ai = a.impl();
    return detail::make_node(
        {n, m}, std::move(out), {ai},
        [ai, m, n](TensorImpl& self) {
            ai->ensure_grad();
            for (std::size_t j = 0; j < n; ++j)
                for (std::size_t i = 0; i < m; ++i) ai->grad[i * n + j] += self.grad[j * m + i];
        },
        "transpose");
}

static void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.dims() != b.dims()) throw std::invalid_argument(std::string(op) + ": shape mismatch");
}

Tensor add(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "add");
    std::vector<double> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] + b.data()[i];
    auto ai = a.impl(), bi = b.impl();
    return detail::make_node(
        a.dims(), std::move(out), {ai, bi},
        [ai, bi](TensorImpl& self) {
            if (ai->requires_grad) {
                ai->ensure_grad();
                for (std::size_t i = 0; i < self.grad.size(); ++i) ai->grad[i] += self.grad[i];
            }
            if (bi->requires_grad) {
                bi->ensure_grad();
                for (std::size_t i = 0; i < self.grad.size(); ++i) bi->grad[i] += self.grad[i];
            }
        },
        "add");
}

Tensor sub(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "sub");
    std::vector<double> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] - b.data()[i];
    auto ai = a.impl(), bi = b.impl();
    return detail::make_node(
        a.dims(), std::move(out), {ai, bi},
        [ai, bi](TensorImpl& self) {
            if (ai->requires_grad) {
                ai->ensure_grad();
                for (std::size_t i = 0; i < self.grad.size(); ++i) ai->grad[i] += self.grad[i];
            }
            if (bi->requires_grad) {
                bi->ensure_grad();
                for (std::size_t i = 0; i < self.grad.size(); ++i) bi->grad[i] -= self.grad[i];
            }
        },
        "sub");
}

Tensor mul(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "mul");
    std::vector<double> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * b.data()[i];
    auto ai = a.impl(), bi = b.impl();
    return detail::make_node(
        a.dims(), std::move(out), {ai, bi},
        [ai, bi](TensorImpl& self) {
            if (ai->requires_grad) {
                ai->ensure_grad();
                for (std::size_t i = 0; i < self.grad.size(); ++i)
                    ai->grad[i] += self.grad[i] * bi->data[i];
            }
            if (bi->requires_grad) {
                bi->ensure_grad();
                for (std::size_t i = 0; i < self.grad.size(); ++i)
                    bi->grad[i] += self.grad[i] * ai->data[i];
            }
        },
        "mul");
}

Tensor scale(const Tensor& a, double s) {
    std::vector<double> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * s;
    auto ai = a.impl();
    return detail::make_node(
        a.dims(), std::move(out), {ai},
        [ai, s](TensorImpl& self) {
            ai->ensure_grad();
            for (std::size_t i = 0; i < self.grad.size(); ++i) ai->grad[i] += self.grad[i] * s;
        },
        "scale");
}

Tensor add_row_broadcast(const Tensor& m, const Tensor& row) {
    require_rank2(m, "add_row_broadcast");
    if (row.dims().size() != 1 || row.dims()[0] != m.dims()[1])
        throw std::invalid_argument("add_row_broadcast: row length must equal matrix cols");
    const std::size_t r = m.dims()[0], c = m.dims()[1];
    std::vector<double> out(r * c);
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) out[i * c + j] = m.data()[i * c + j] + row.data()[j];
    auto mi = m.impl(), ri = row.impl();
    return detail::make_node(
        {r, c}, std::move(out), {mi, ri},
        [mi, ri, r, c](TensorImpl& self) {
            if (mi->requires_grad) {
                mi->ensure_grad();
                for (std::size_t i = 0; i < r * c; ++i) mi->grad[i] += self.grad[i];
            }
            if (ri->requires_grad) {
                ri->ensure_grad();
                for (std::size_t i = 0; i < r; ++i)
                    for (std::size_t j = 0; j < c; ++j) ri->grad[j] += self.grad[i * c + j];
            }
        },
        "add_row_broadcast");
}

Tensor sum(const Tensor& a) {
    double acc = 0.0;
    for (double x : a.data()) acc += x;
    auto ai = a.impl();
    return detail::make_node(
        {1}, {acc}, {ai},
        [ai](TensorImpl& self) {
            ai->ensure_grad();
            for (std::size_t i = 0; i < ai->grad.size(); ++i) ai->grad[i] += self.grad[0];
        },
        "sum");
}

Tensor mean(const Tensor& a) {
    if (a.numel() == 0) throw std::invalid_argument("mean: empty tensor");
    double acc = 0.0;
    for (double x : a.data()) acc += x;
    const double inv = 1.0 / static_cast<double>(a.numel());
    auto ai = a.impl();
    return detail::make_node(
        {1}, {acc * inv}, {ai},
        [ai, inv](TensorImpl& self) {
            ai->ensure_grad();
            for (std::size_t i = 0; i < ai->grad.size(); ++i) ai->grad[i] += self.grad[0] * inv;
        },
        "mean");
}

Tensor softmax_rows(const Tensor& a) {
    require_rank2(a, "softmax_rows");
    detail::check_finite(a.data(), "softmax_rows(input)");
    const std::size_t m = a.dims()[0], n = a.dims()[1];
    if (n == 0) throw std::invalid_argument("softmax_rows: zero columns");
    std::vector<double> out(m * n);
    for (std::size_t i = 0; i < m; ++i) {
        const double* x = a.data().data() + i * n;
        double mx = x[0];
        for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, x[j]);
        double z = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
            out[i * n + j] = std::exp(x[j] - mx);
            z += out[i * n + j];
        }
        for (std::size_t j = 0; j < n; ++j) out[i * n + j] /= z;
    }
    auto ai = a.impl();
    return detail::make_node(
        {m, n}, std::move(out), {ai},
        [ai, m, n](TensorImpl& self) {
            ai->ensure_grad();
            for (std::size_t i = 0; i < m; ++i) {
                const double* y = self.data.data() + i * n;
                const double* g = self.grad.data() + i * n;
                double dot = 0.0;
                for (std::size_t j = 0; j < n; ++j) dot += y[j] * g[j];
                double* ag = ai->grad.data() + i * n;
                for (std::size_t j = 0; j < n; ++j) ag[j] += y[j] * (g[j] - dot);
            }
        },
        "softmax_rows");
}

Tensor gelu(const Tensor& a) {
    std::vector<double> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) {
        const double x = a.data()[i];
        out[i] = 0.5 * x * (1.0 + std::erf(x * M_SQRT1_2));
    }
    auto ai = a.impl();
    return detail::make_node(
        a.dims(), std::move(out), {ai},
        [ai](TensorImpl& self) {
            ai->ensure_grad();
            constexpr double inv_sqrt_2pi = 0.3989422804014326779;
            for (std::size_t i = 0; i < self.grad.size(); ++i) {
                const double x = ai->data[i];
                const double cdf = 0.5 * (1.0 + std::erf(x * M_SQRT1_2));
                const double pdf = inv_sqrt_2pi * std::exp(-0.5 * x * x);
                ai->grad[i] += self.grad[i] * (cdf + x * pdf);
            }
        },
        "gelu");
}

Tensor rms_norm_rows(const Tensor& a, double eps) {
    require_rank2(a, "rms_norm_rows");
    const std::size_t m = a.dims()[0], n = a.dims()[1];
    if (n == 0) throw std::invalid_argument("rms_norm_rows: zero columns");
    std::vector<double> out(m * n);
    std::vector<double> rinv(m);
    for (std::size_t i = 0; i < m; ++i) {
        const double* x = a.data().data() + i * n;
        double ms = 0.0;
        for (std::size_t j = 0; j < n; ++j) ms += x[j] * x[j];
        ms /= static_cast<double>(n);
        rinv[i] = 1.0 / std::sqrt(ms + eps);
        for (std::size_t j = 0; j < n; ++j) out[i * n + j] = x[j] * rinv[i];
    }
    auto ai = a.impl();
    return detail::make_node(
        {m, n}, std::move(out), {ai},
        [ai, m, n, rinv = std::move(rinv)](TensorImpl& self) {
            ai->ensure_grad();
            for (std::size_t i = 0; i < m; ++i) {
                const double* x = ai->data.data() + i * n;
                const double* g = self.grad.data() + i * n;
                double dot = 0.0;
                for (std::size_t j = 0; j < n; ++j) dot += g[j] * x[j];
                const double r = rinv[i];
                const double coef = r * r * r * dot / static_cast<double>(n);
                double* ag = ai->grad.data() + i * n;
                for (std::size_t j = 0; j < n; ++j) ag[j] += r * g[j] - coef * x[j];
            }
        },
        "rms_norm_rows");
}

Tensor concat_rows(std::span<const Tensor> parts) {
    if (parts.empty()) throw std::invalid_argument("concat_rows: no parts");
    const std::size_t n = parts[0].dims()[1];
    std::size_t total = 0;
    for (const Tensor& p : parts) {
        require_rank2(p, "concat_rows");
        if (p.dims()[1] != n) throw std::invalid_argument("concat_rows: column mismatch");
        total += p.dims()[0];
    }
    std::vector<double> out;
    out.reserve(total * n);
    std::vector<std::shared_ptr<TensorImpl>> parents;
    std::vector<std::size_t> row_counts;
    for (const Tensor& p : parts) {
        out.insert(out.end(), p.data().begin(), p.data().end());
        parents.push_back(p.impl());
        row_counts.push_back(p.dims()[0]);
    }
    return detail::make_node(
        {total, n}, std::move(out), std::move(parents),
        [row_counts, n](TensorImpl& self) {
            std::size_t row0 = 0;
            for (std::size_t pi = 0; pi < self.parents.size(); ++pi) {
                auto& p = self.parents[pi];
                if (p->requires_grad) {
                    p->ensure_grad();
                    const std::size_t cnt = row_counts[pi] * n;
                    const double* g = self.grad.data() + row0 * n;
                    for (std::size_t i = 0; i < cnt; ++i) p->grad[i] += g[i];
                }
                row0 += row_counts[pi];
            }
        },
        "concat_rows");
}

Tensor slice_rows(const Tensor& a, std::size_t start, std::size_t count) {
    require_rank2(a, "slice_rows");
    const std::size_t m = a.dims()[0], n = a.dims()[1];
    if (start + count > m) throw std::invalid_argument("slice_rows: out of range");
    std::vector<double> out(a.data().begin() + start * n, a.data().begin() + (start + count) * n);
    auto ai = a.impl();
    return detail::make_node(
        {count, n}, std::move(out), {ai},
        [ai, start, count, n](TensorImpl& self) {
            ai->ensure_grad();
            for (std::size_t i = 0; i < count * n; ++i) ai->grad[start * n + i] += self.grad[i];
        },
        "slice_rows");
}

Tensor concat_cols(std::span<const Tensor> parts) {
    if (parts.empty()) throw std::invalid_argument("concat_cols: no parts");
    const std::size_t m = parts[0].dims()[0];
    std::size_t total = 0;
    for (const Tensor& p : parts) {
        require_rank2(p, "concat_cols");
        if (p.dims()[0] != m) throw std::invalid_argument("concat_cols: row mismatch");
        total += p.dims()[1];
    }
    std::vector<double> out(m * total);
    std::vector<std::shared_ptr<TensorImpl>> parents;
    std::vector<std::size_t> col_counts;
    std::size_t col0 = 0;
    for (const Tensor& p : parts) {
        const std::size_t c = p.dims()[1];
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < c; ++j) out[i * total + col0 + j] = p.data()[i * c + j];
        parents.push_back(p.impl());
        col_counts.push_back(c);
        col0 += c;
    }
    return detail::make_node(
        {m, total}, std::move(out), std::move(parents),
        [col_counts, m, total](TensorImpl& self) {
            std::size_t col0 = 0;
            for (std::size_t pi = 0; pi < self.parents.size(); ++pi) {
                auto& p = self.parents[pi];
                const std::size_t c = col_counts[pi];
                if (p->requires_grad) {
                    p->ensure_grad();
                    for (std::size_t i = 0; i < m; ++i)
                        for (std::size_t j = 0; j < c; ++j)
                            p->grad[i * c + j] += self.grad[i * total + col0 + j];
                }
                col0 += c;
            }
        },
        "concat_cols");
}

Tensor slice_cols(const Tensor& a, std::size_t start, std::size_t count) {
    require_rank2(a, "slice_cols");
    const std::size_t m = a.dims()[0], n = a.dims()[1];
    if (start + count > n) throw std::invalid_argument("slice_cols: out of range");
    std::vector<double> out(m * count);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < count; ++j) out[i * count + j] = a.data()[i * n + start + j];
    auto ai = a.impl();
    return detail::make_node(
        {m, count}, std::move(out), {ai},
        [ai, start, count, m, n](TensorImpl& self) {
            ai->ensure_grad();
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < count; ++j)
                    ai->grad[i * n + start + j] += self.grad[i * count + j];
        },
        "slice_cols");
}

Tensor reshape(const Tensor& a, std::vector<std::size_t> dims) {
    std::size_t n = 1;
    for (std::size_t d : dims) n *= d;
    if (n != a.numel()) throw std::invalid_argument("reshape: element count mismatch");
    std::vector<double> out(a.data().begin(), a.data().end());
    auto ai = a.impl();
    return detail::make_node(
        std::move(dims), std::move(out), {ai},
        [ai](TensorImpl& self) {
            ai->ensure_grad();
            for (std::size_t i = 0; i < self.grad.size(); ++i) ai->grad[i] += self.grad[i];
        },
        "reshape");
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
    if (a.dims() != b.dims()) throw std::invalid_argument("max_abs_diff: shape mismatch");
    double mx = 0.0;
    for (std::size_t i = 0; i < a.numel(); ++i)
        mx = std::max(mx, std::abs(a.data()[i] - b.data()[i]));
    return mx;
}

}  // namespace mmc
