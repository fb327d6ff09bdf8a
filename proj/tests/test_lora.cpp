#include "doctest.h"
#include "mmc/lora.hpp"
#include "mmc/optim.hpp"
#include "testutil.hpp"

using namespace mmc;

TEST_CASE("zero-initialized adapter is an exact no-op") {
    Rng rng(3);
    ReparamLinear base = ReparamLinear::init(4, 3, rng, true);
    ReparamLinear adapted = base;
    adapted.attach_adapter(2, 4.0, rng);
    Tensor x = Tensor::randn({5, 4}, rng);
    Tensor y0 = base.forward(x);
    Tensor y1 = adapted.forward(x);
    for (std::size_t i = 0; i < y0.numel(); ++i) CHECK(y0.at(i) == y1.at(i));  // bitwise
}

TEST_CASE("rank-1 delta hand evaluation") {
    ReparamLinear l;
    l.base_weight = Tensor::identity(2);
    l.adapter = LoraAdapter{Tensor({1, 2}, {1, 0}), Tensor({2, 1}, {0, 2}), 1.0};
    Tensor y = l.forward(Tensor({1, 2}, {3, 4}));
    CHECK(y.at(0, 0) == 3.0);
    CHECK(y.at(0, 1) == 10.0);
}

TEST_CASE("merge/forward equivalence over random configurations") {
    Rng rng(29);
    for (int trial = 0; trial < 100; ++trial) {
        const std::size_t d_in = 1 + rng.next_u64() % 6;
        const std::size_t d_out = 1 + rng.next_u64() % 6;
        const std::size_t r = 1 + rng.next_u64() % 4;
        ReparamLinear l = ReparamLinear::init(d_in, d_out, rng, trial % 2 == 0);
        l.attach_adapter(r, 2.0 * static_cast<double>(r), rng);
        // give the zero up-matrix some mass so the delta is nontrivial
        for (double& v : l.adapter->up.mutable_data()) v = rng.normal();
        Tensor x = Tensor::randn({3, d_in}, rng);
        Tensor y = l.forward(x);
        Tensor ym = l.merged().forward(x);
        CHECK(max_abs_diff(y, ym) < 1e-9);
    }
}

TEST_CASE("merge of a zero adapter returns the base weight bit-identically") {
    Rng rng(31);
    ReparamLinear l = ReparamLinear::init(3, 3, rng, true);
    l.attach_adapter(2, 4.0, rng);
    ReparamLinear m = l.merged();
    for (std::size_t i = 0; i < 9; ++i) CHECK(m.base_weight.at(i) == l.base_weight.at(i));
    CHECK_FALSE(m.adapter.has_value());
}

TEST_CASE("double merge is idempotent in value") {
    Rng rng(37);
    ReparamLinear l = ReparamLinear::init(4, 4, rng, true);
    l.attach_adapter(2, 4.0, rng);
    for (double& v : l.adapter->up.mutable_data()) v = rng.normal();
    ReparamLinear m1 = l.merged();
    m1.adapter = LoraAdapter::init(4, 4, 2, 4.0, rng);  // fresh zero adapter
    ReparamLinear m2 = m1.merged();
    Tensor x = Tensor::randn({2, 4}, rng);
    CHECK(max_abs_diff(m1.forward(x).detach(), m2.forward(x).detach()) == 0.0);
}

TEST_CASE("training updates only adapter parameters when frozen") {
    Rng rng(41);
    ReparamLinear l = ReparamLinear::init(3, 3, rng, true, true);
    l.attach_adapter(2, 4.0, rng);
    std::vector<double> base_before(l.base_weight.data().begin(), l.base_weight.data().end());
    std::vector<double> up_before(l.adapter->up.data().begin(), l.adapter->up.data().end());

    std::vector<Tensor> params;
    l.collect_trainable(params);
    CHECK(params.size() == 2);  // down and up only
    Adam opt(params, 0.1);

    Tensor x = Tensor::randn({4, 3}, rng);
    Tensor target = Tensor::randn({4, 3}, rng);
    for (int step = 0; step < 3; ++step) {
        Tensor diff = sub(l.forward(x), target);
        Tensor loss = mean(mul(diff, diff));
        opt.zero_grad();
        backward(loss);
        opt.step();
    }
    for (std::size_t i = 0; i < base_before.size(); ++i)
        CHECK(l.base_weight.at(i) == base_before[i]);  // bitwise frozen
    bool up_changed = false;
    for (std::size_t i = 0; i < up_before.size(); ++i)
        up_changed = up_changed || l.adapter->up.at(i) != up_before[i];
    CHECK(up_changed);
}

TEST_CASE("adapter gradients match finite differences") {
    Rng rng(43);
    ReparamLinear l = ReparamLinear::init(4, 3, rng, true);
    l.attach_adapter(2, 4.0, rng);
    for (double& v : l.adapter->up.mutable_data()) v = rng.normal() * 0.1;
    Tensor x = Tensor::randn({3, 4}, rng);
    Tensor r = Tensor::randn({3, 3}, rng);
    auto loss_fn = [&]() { return sum(mul(l.forward(x), r)); };
    CHECK(testutil::fd_check(loss_fn, l.adapter->down) < 1e-4);
    CHECK(testutil::fd_check(loss_fn, l.adapter->up) < 1e-4);
}

TEST_CASE("shape validation") {
    Rng rng(47);
    ReparamLinear l = ReparamLinear::init(4, 3, rng, false);
    CHECK_THROWS_AS((void)l.forward(Tensor::zeros({2, 5})), std::invalid_argument);
    CHECK_THROWS_AS((void)LoraAdapter::init(4, 3, 0, 1.0, rng), std::invalid_argument);
    ReparamLinear no_adapter = ReparamLinear::init(2, 2, rng, false);
    CHECK_THROWS_AS((void)no_adapter.merged(), std::invalid_argument);
}
