#include <cmath>

#include "doctest.h"
#include "mmc/tensor.hpp"
#include "mmc/tensor_file.hpp"
#include "testutil.hpp"

using namespace mmc;

TEST_CASE("rng stream is frozen for seed 42") {
    // independently computed from the documented splitmix64-over-counter rule
    const uint64_t expected[8] = {0xbdd732262feb6e95ull, 0x28efe333b266f103ull,
                                  0x47526757130f9f52ull, 0x581ce1ff0e4ae394ull,
                                  0x9bc585a244823f2ull,  0xde4431fa3c80db06ull,
                                  0x37e9671c45376d5dull, 0xccf635ee9e9e2fa4ull};
    Rng rng(42);
    for (uint64_t e : expected) CHECK(rng.next_u64() == e);

    Rng rng2(42);
    CHECK(rng2.uniform() == 0.74156487877182331);
    CHECK(rng2.uniform() == 0.1599103928769201);
}

TEST_CASE("rng uniform range and normal finiteness") {
    Rng rng(7);
    for (int i = 0; i < 1000; ++i) {
        const double u = rng.uniform();
        CHECK(u >= 0.0);
        CHECK(u < 1.0);
    }
    for (int i = 0; i < 1000; ++i) CHECK(std::isfinite(rng.normal()));
}

TEST_CASE("matmul identity") {
    Tensor a({3, 3}, {1, 2, 3, 4, 5, 6, 7, 8, 9});
    Tensor out = matmul(Tensor::identity(3), a);
    CHECK(max_abs_diff(out, a) == 0.0);
}

TEST_CASE("matmul hand-expanded 2x2") {
    Tensor a({2, 2}, {1, 2, 3, 4});
    Tensor b({2, 2}, {5, 6, 7, 8});
    Tensor c = matmul(a, b);
    CHECK(c.at(0, 0) == 19.0);
    CHECK(c.at(0, 1) == 22.0);
    CHECK(c.at(1, 0) == 43.0);
    CHECK(c.at(1, 1) == 50.0);
}

TEST_CASE("matmul degenerate zero-row") {
    Tensor a({0, 4}, {});
    Tensor b({4, 2}, {1, 2, 3, 4, 5, 6, 7, 8});
    Tensor c = matmul(a, b);
    CHECK(c.dims() == std::vector<std::size_t>{0, 2});
    CHECK(c.numel() == 0);
}

TEST_CASE("matmul dim mismatch throws") {
    Tensor a({2, 3}, {1, 2, 3, 4, 5, 6});
    Tensor b({2, 2}, {1, 2, 3, 4});
    CHECK_THROWS_AS((void)matmul(a, b), std::invalid_argument);
}

TEST_CASE("softmax uniform on equal rows") {
    Tensor x({1, 4}, {2.5, 2.5, 2.5, 2.5});
    Tensor y = softmax_rows(x);
    for (std::size_t j = 0; j < 4; ++j) CHECK(std::abs(y.at(0, j) - 0.25) < 1e-15);
}

TEST_CASE("softmax closed-form exp ratio") {
    Tensor x({1, 2}, {0.0, std::log(3.0)});
    Tensor y = softmax_rows(x);
    CHECK(std::abs(y.at(0, 0) - 0.25) < 1e-15);
    CHECK(std::abs(y.at(0, 1) - 0.75) < 1e-15);
}

TEST_CASE("softmax huge spike becomes one-hot") {
    Tensor x({1, 3}, {1e6, 0.0, -1.0});
    Tensor y = softmax_rows(x);
    CHECK(std::abs(y.at(0, 0) - 1.0) < 1e-12);
    CHECK(y.at(0, 1) < 1e-12);
    CHECK(y.at(0, 2) < 1e-12);
}

TEST_CASE("softmax rows sum to 1 for inputs in [-1e3, 1e3]") {
    Rng rng(123);
    for (int trial = 0; trial < 50; ++trial) {
        const std::size_t m = 1 + rng.next_u64() % 6, n = 1 + rng.next_u64() % 8;
        std::vector<double> data(m * n);
        for (double& v : data) v = (rng.uniform() * 2.0 - 1.0) * 1e3;
        Tensor y = softmax_rows(Tensor({m, n}, std::move(data)));
        for (std::size_t i = 0; i < m; ++i) {
            double s = 0.0;
            for (std::size_t j = 0; j < n; ++j) {
                s += y.at(i, j);
                CHECK(y.at(i, j) >= 0.0);
            }
            CHECK(std::abs(s - 1.0) < 1e-12);
        }
    }
}

TEST_CASE("grad of sum(W x) has outer-product structure") {
    Tensor w({2, 3}, {1, 2, 3, 4, 5, 6}, true);
    Tensor x({3, 1}, {10, 20, 30});
    Tensor loss = sum(matmul(w, x));
    backward(loss);
    Tensor g = w.grad();
    // every row of dL/dW equals x^T
    for (std::size_t i = 0; i < 2; ++i) {
        CHECK(g.at(i, 0) == 10.0);
        CHECK(g.at(i, 1) == 20.0);
        CHECK(g.at(i, 2) == 30.0);
    }
}

TEST_CASE("constant loss gives zero gradients") {
    Tensor w({2, 2}, {1, 2, 3, 4}, true);
    Tensor c({1}, {5.0});
    Tensor loss = sum(c);  // does not depend on w
    std::vector<Tensor> params = {w};
    auto gs = grad(loss, params);
    for (std::size_t i = 0; i < 4; ++i) CHECK(gs[0].at(i) == 0.0);
}

TEST_CASE("backward rejects non-scalar loss") {
    Tensor w({2, 2}, {1, 2, 3, 4}, true);
    Tensor y = scale(w, 2.0);
    CHECK_THROWS_AS(backward(y), std::invalid_argument);
}

TEST_CASE("five-parameter toy net matches finite differences") {
    Rng rng(99);
    Tensor w({1, 5}, {0.3, -0.2, 0.5, 0.1, -0.4}, true);
    Tensor x = Tensor::randn({5, 3}, rng);
    auto loss_fn = [&]() {
        Tensor h = gelu(matmul(w, x));
        return mean(mul(h, h));
    };
    CHECK(testutil::fd_check(loss_fn, w) < 1e-4);
}

TEST_CASE("every differentiable op matches central finite differences") {
    // randomized small tensors (<= 64 elements), 100 seeds
    for (uint64_t seed = 0; seed < 100; ++seed) {
        Rng rng(seed);
        const std::size_t m = 2 + rng.next_u64() % 4;  // 2..5
        const std::size_t n = 2 + rng.next_u64() % 4;
        Tensor a = Tensor::randn({m, n}, rng, 1.0, true);
        Tensor b = Tensor::randn({m, n}, rng, 1.0);
        Tensor r = Tensor::randn({m, n}, rng, 1.0);
        Tensor bk = Tensor::randn({n, m}, rng, 1.0);
        Tensor row = Tensor::randn({n}, rng, 1.0);
        Tensor rk = Tensor::randn({m, m}, rng, 1.0);

        auto probe = [&](const std::function<Tensor()>& fn) {
            CHECK(testutil::fd_check(fn, a) < 1e-4);
        };
        probe([&] { return sum(mul(matmul(a, bk), rk)); });
        probe([&] { return sum(mul(transpose(a), transpose(r))); });
        probe([&] { return sum(mul(add(a, b), r)); });
        probe([&] { return sum(mul(sub(a, b), r)); });
        probe([&] { return sum(mul(mul(a, b), r)); });
        probe([&] { return sum(mul(scale(a, -1.7), r)); });
        probe([&] { return sum(mul(add_row_broadcast(a, row), r)); });
        probe([&] { return scale(sum(a), 0.37); });
        probe([&] { return mean(mul(a, a)); });
        probe([&] { return sum(mul(softmax_rows(a), r)); });
        probe([&] { return sum(mul(gelu(a), r)); });
        probe([&] { return sum(mul(rms_norm_rows(a), r)); });
        probe([&] {
            std::vector<Tensor> parts = {a, b};
            std::vector<Tensor> rparts = {r, r};
            return sum(mul(concat_rows(parts), concat_rows(rparts)));
        });
        probe([&] { return sum(mul(slice_rows(a, 1, m - 1), slice_rows(r, 1, m - 1))); });
        probe([&] { return sum(mul(slice_cols(a, 1, n - 1), slice_cols(r, 1, n - 1))); });
        probe([&] {
            std::vector<Tensor> parts = {a, b};
            std::vector<Tensor> rparts = {r, r};
            return sum(mul(concat_cols(parts), concat_cols(rparts)));
        });
        probe([&] { return sum(mul(reshape(a, {n, m}), bk)); });
    }
}

TEST_CASE("non-finite op output aborts with diagnostic") {
    Tensor big({1, 2}, {1e308, 1e308});
    CHECK_THROWS_AS((void)scale(big, 10.0), ComputeError);
    CHECK_THROWS_AS((void)mul(Tensor({1, 2}, {1e308, 1e308}), Tensor({1, 2}, {10.0, 10.0})),
                    ComputeError);
}

TEST_CASE("tensor file round trip and rejection") {
    auto dir = testutil::scratch_dir("tensorfile");
    Rng rng(5);
    Tensor t = Tensor::randn({3, 4, 2}, rng);
    write_tensor_file(dir / "t.pvtd", t);
    Tensor back = read_tensor_file(dir / "t.pvtd");
    CHECK(back.dims() == t.dims());
    for (std::size_t i = 0; i < t.numel(); ++i) CHECK(back.at(i) == t.at(i));

    // corrupt magic
    std::string raw = testutil::read_file(dir / "t.pvtd");
    raw[0] = 'X';
    atomic_write_file(dir / "bad_magic.pvtd", raw);
    CHECK_THROWS_AS((void)read_tensor_file(dir / "bad_magic.pvtd"), std::runtime_error);

    raw = testutil::read_file(dir / "t.pvtd");
    raw[4] = 0x02;  // unknown version
    atomic_write_file(dir / "bad_version.pvtd", raw);
    CHECK_THROWS_AS((void)read_tensor_file(dir / "bad_version.pvtd"), std::runtime_error);

    raw = testutil::read_file(dir / "t.pvtd");
    raw.pop_back();  // truncated payload
    atomic_write_file(dir / "trunc.pvtd", raw);
    CHECK_THROWS_AS((void)read_tensor_file(dir / "trunc.pvtd"), std::runtime_error);
}
