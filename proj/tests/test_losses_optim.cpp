#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "nucleo/losses.hpp"
#include "nucleo/optim.hpp"
#include "testutil.hpp"

using namespace nucleo;
using testutil::grad_check;
using testutil::rand_tensor;

TEST_CASE("cross entropy of a one-hot correct prediction is zero") {
    Tensor probs({2, 4}, {1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0});
    CHECK(cross_entropy(probs, {0, 2}).item() == doctest::Approx(0.0).epsilon(1e-9));
}

TEST_CASE("cross entropy of uniform probabilities is ln(C)") {
    Tensor probs({1, 4}, std::vector<double>(4, 0.25));
    CHECK(cross_entropy(probs, {3}).item() == doctest::Approx(std::log(4.0)).epsilon(1e-12));
}

TEST_CASE("cross entropy matches a direct loop over the batch") {
    Rng rng(7);
    const std::size_t n = 16, c = 4;
    std::vector<double> p(n * c);
    std::vector<std::size_t> labels(n);
    for (std::size_t i = 0; i < n; ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < c; ++j) s += p[i * c + j] = 0.05 + rng.next_double();
        for (std::size_t j = 0; j < c; ++j) p[i * c + j] /= s;
        labels[i] = rng.next_below(c);
    }
    double want = 0.0;
    for (std::size_t i = 0; i < n; ++i) want -= std::log(p[i * c + labels[i]]);
    want /= static_cast<double>(n);
    Tensor probs({n, c}, std::move(p));
    CHECK(cross_entropy(probs, labels).item() == doctest::Approx(want).epsilon(1e-12));
}

TEST_CASE("cross entropy rejects out-of-range labels and clamps vanishing probabilities") {
    Tensor probs({1, 3}, {0.5, 0.5, 0.0});
    CHECK_THROWS_AS(cross_entropy(probs, {3}), std::out_of_range);
    // prob 0 is clamped at 1e-12 instead of producing inf
    const double v = cross_entropy(probs, {2}).item();
    CHECK(v == doctest::Approx(-std::log(1e-12)).epsilon(1e-9));
}

TEST_CASE("cross entropy gradient agrees with finite differences") {
    Rng rng(11);
    Tensor logits = rand_tensor({3, 4}, rng);
    std::vector<std::size_t> labels{0, 2, 3};
    auto res = grad_check(
        [&] { return cross_entropy(softmax_channel(logits), labels); }, {logits}, 80, rng);
    CHECK(res.max_rel_err < 1e-6);
    CHECK(res.used > 40);
}

TEST_CASE("hard dice coefficient on hand-checked masks") {
    // |GT n SR| = 2, |GT| = 3, |SR| = 4 -> 2*2/(3+4)
    std::vector<std::uint8_t> gt{1, 1, 1, 0, 0, 0};
    std::vector<std::uint8_t> sr{1, 1, 0, 1, 1, 0};
    CHECK(dice_coefficient(sr, gt) == doctest::Approx(4.0 / 7.0).epsilon(1e-12));
    CHECK(dice_coefficient(gt, gt) == doctest::Approx(1.0));
    std::vector<std::uint8_t> empty(6, 0);
    CHECK(dice_coefficient(empty, empty) == doctest::Approx(1.0));  // both-empty convention
    CHECK(dice_coefficient(empty, gt) == doctest::Approx(0.0));
}

TEST_CASE("soft dice loss vanishes on a perfect binary prediction") {
    Tensor gt({1, 1, 2, 2}, {1.0, 0.0, 0.0, 1.0});
    CHECK(soft_dice_loss(gt, gt).item() == doctest::Approx(0.0).epsilon(1e-6));
}

TEST_CASE("soft dice loss gradient agrees with finite differences") {
    Rng rng(13);
    Tensor logits = rand_tensor({1, 1, 4, 4}, rng);
    Tensor gt({1, 1, 4, 4});
    for (std::size_t i = 0; i < 16; ++i) gt.data()[i] = i % 3 == 0 ? 1.0 : 0.0;
    auto res =
        grad_check([&] { return soft_dice_loss(sigmoid(logits), gt); }, {logits}, 80, rng);
    CHECK(res.max_rel_err < 1e-6);
}

TEST_CASE("mse of a constant offset c is c squared") {
    Tensor a({2, 3}, std::vector<double>(6, 2.0));
    Tensor b({2, 3}, std::vector<double>(6, 0.5));
    CHECK(mse_loss(a, b).item() == doctest::Approx(2.25).epsilon(1e-12));
    Rng rng(17);
    Tensor y = rand_tensor({2, 3}, rng);
    Tensor y_hat = rand_tensor({2, 3}, rng);
    auto res = grad_check([&] { return mse_loss(y_hat, y); }, {y_hat, y}, 60, rng);
    CHECK(res.max_rel_err < 1e-8);
}

TEST_CASE("sgd with momentum follows the hand-worked update") {
    Tensor w({2, 2}, std::vector<double>(4, 1.0));
    w.set_requires_grad(true);
    Registry reg;
    reg.add_param("w", w);
    Optimizer opt(reg, {"sgd", 0.1, 0.9, 0.0, 0.9, 0.999, 1e-8});
    w.grad_buffer().assign(4, 0.5);
    opt.step();
    // v = 0.5, theta = 1 - 0.1 * 0.5
    for (double v : w.data()) CHECK(v == doctest::Approx(0.95).epsilon(1e-12));
    w.grad_buffer().assign(4, 0.5);
    opt.step();
    // v = 0.9 * 0.5 + 0.5 = 0.95, theta = 0.95 - 0.095
    for (double v : w.data()) CHECK(v == doctest::Approx(0.855).epsilon(1e-12));
}

TEST_CASE("weight decay touches kernels but not rank-1 parameters") {
    Tensor w({1, 1}, {1.0});
    Tensor b(Shape{1}, std::vector<double>{1.0});
    w.set_requires_grad(true);
    b.set_requires_grad(true);
    Registry reg;
    reg.add_param("w", w);
    reg.add_param("b", b);
    Optimizer opt(reg, {"sgd", 0.1, 0.0, 0.5, 0.9, 0.999, 1e-8});
    w.grad_buffer().assign(1, 0.0);
    b.grad_buffer().assign(1, 0.0);
    opt.step();
    CHECK(w.data()[0] == doctest::Approx(1.0 - 0.1 * 0.5).epsilon(1e-12));
    CHECK(b.data()[0] == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("adam's first step has magnitude close to the learning rate") {
    Tensor w({2, 2}, std::vector<double>(4, 3.0));
    w.set_requires_grad(true);
    Registry reg;
    reg.add_param("w", w);
    Optimizer opt(reg, {"adam", 0.01, 0.9, 0.0, 0.9, 0.999, 1e-8});
    w.grad_buffer().assign(4, 0.7);
    opt.step();
    for (double v : w.data()) CHECK(v == doctest::Approx(3.0 - 0.01).epsilon(1e-6));
}

TEST_CASE("both optimizers descend a convex quadratic") {
    for (const char* name : {"sgd", "adam"}) {
        Tensor w({1, 4}, {4.0, -3.0, 2.0, -1.0});
        w.set_requires_grad(true);
        Tensor target({1, 4}, {1.0, 1.0, 1.0, 1.0});
        Registry reg;
        reg.add_param("w", w);
        Optimizer opt(reg, {name, name[0] == 's' ? 0.05 : 0.2, 0.9, 0.0, 0.9, 0.999, 1e-8});
        double prev = mse_loss(w, target).item();
        for (int i = 0; i < 200; ++i) {
            Tensor loss = mse_loss(w, target);
            loss.backward();
            opt.step();
            opt.zero_grad();
        }
        const double final = mse_loss(w, target).item();
        CHECK(final < 1e-3);
        CHECK(final < prev);
    }
}

TEST_CASE("a non-finite gradient aborts the step and leaves parameters untouched") {
    Tensor w({2, 2}, std::vector<double>(4, 1.0));
    w.set_requires_grad(true);
    Registry reg;
    reg.add_param("w", w);
    Optimizer opt(reg, {"sgd", 0.1, 0.9, 0.0, 0.9, 0.999, 1e-8});
    w.grad_buffer().assign(4, std::numeric_limits<double>::quiet_NaN());
    CHECK_THROWS_AS(opt.step(), NumericError);
    for (double v : w.data()) CHECK(v == 1.0);
}

TEST_CASE("unknown optimizer names are rejected") {
    Registry reg;
    CHECK_THROWS_AS(Optimizer(reg, {"rmsprop", 0.1, 0.9, 0.0, 0.9, 0.999, 1e-8}),
                    std::invalid_argument);
}
