#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "nucleo/ops.hpp"
#include "testutil.hpp"

using namespace nucleo;
using testutil::grad_check;
using testutil::naive_conv2d;
using testutil::rand_tensor;

TEST_CASE("conv2d all-ones 3x3 gives 9 at the center") {
    Tensor x({1, 1, 3, 3}, std::vector<double>(9, 1.0));
    Tensor w({1, 1, 3, 3}, std::vector<double>(9, 1.0));
    Tensor b(Shape{1});
    Tensor y = conv2d(x, w, b, 1);
    CHECK(y.shape() == Shape{1, 1, 3, 3});
    CHECK(y.data()[4] == doctest::Approx(9.0));
    CHECK(y.data()[0] == doctest::Approx(4.0));  // corner sees a 2x2 window
}

TEST_CASE("conv2d identity kernel reproduces the input") {
    Rng rng(7);
    Tensor x = rand_tensor({2, 3, 5, 5}, rng);
    std::vector<double> ker(3 * 3 * 9, 0.0);
    for (int c = 0; c < 3; ++c) ker[(c * 3 + c) * 9 + 4] = 1.0;  // center tap, matched channel
    Tensor w({3, 3, 3, 3}, std::move(ker));
    Tensor y = conv2d(x, w, Tensor(), 1);
    for (std::size_t i = 0; i < x.numel(); ++i) CHECK(y.data()[i] == doctest::Approx(x.data()[i]));
}

TEST_CASE("conv2d matches the naive six-loop reference") {
    Rng rng(11);
    Tensor x = rand_tensor({2, 3, 8, 8}, rng);
    Tensor w = rand_tensor({4, 3, 3, 3}, rng);
    Tensor b = rand_tensor({4}, rng);
    for (int pad : {0, 1, 2}) {
        Tensor y = conv2d(x, w, b, pad);
        auto ref = naive_conv2d(x.data(), 2, 3, 8, 8, w.data(), 4, 3, 3, b.data(), pad);
        REQUIRE(y.numel() == ref.size());
        for (std::size_t i = 0; i < ref.size(); ++i)
            CHECK(std::abs(y.data()[i] - ref[i]) <=
                  1e-6 * std::max(1.0, std::abs(ref[i])));
    }
}

TEST_CASE("conv2d rejects mismatched shapes with a diagnostic naming the axis") {
    Rng rng(3);
    Tensor x = rand_tensor({1, 2, 4, 4}, rng);
    Tensor w = rand_tensor({4, 3, 3, 3}, rng);
    CHECK_THROWS_WITH_AS(conv2d(x, w, Tensor(), 1),
                         doctest::Contains("axis 1"), ShapeError);
    Tensor w2 = rand_tensor({4, 2, 2, 2}, rng);
    CHECK_THROWS_AS(conv2d(x, w2, Tensor(), 1), ShapeError);
    Tensor bad_b = rand_tensor({3}, rng);
    Tensor w3 = rand_tensor({4, 2, 3, 3}, rng);
    CHECK_THROWS_WITH_AS(conv2d(x, w3, bad_b, 1), doctest::Contains("axis 0"), ShapeError);
}

TEST_CASE("backward of mean gives 1/n everywhere") {
    Tensor x({2, 2}, {1.0, -2.0, 3.0, 4.0});
    x.set_requires_grad(true);
    mean(x).backward();
    for (double g : x.grad()) CHECK(g == doctest::Approx(0.25));
}

TEST_CASE("relu subgradient is 0 below and at zero, 1 above") {
    Tensor x({3}, {-1.0, 0.0, 1.0});
    x.set_requires_grad(true);
    sum(relu(x)).backward();
    CHECK(x.grad()[0] == 0.0);
    CHECK(x.grad()[1] == 0.0);
    CHECK(x.grad()[2] == 1.0);
}

TEST_CASE("backward rejects non-scalar loss") {
    Tensor x({2}, {1.0, 2.0});
    x.set_requires_grad(true);
    CHECK_THROWS_AS(relu(x).backward(), ShapeError);
}

TEST_CASE("softmax rows sum to 1 with entries in (0,1)") {
    Rng rng(5);
    Tensor x = rand_tensor({4, 6}, rng, 3.0);
    Tensor y = softmax_channel(x);
    for (std::size_t i = 0; i < 4; ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < 6; ++j) {
            const double v = y.data()[i * 6 + j];
            CHECK(v > 0.0);
            CHECK(v < 1.0);
            s += v;
        }
        CHECK(std::abs(s - 1.0) < 1e-6);
    }
}

TEST_CASE("concat then slice is the identity") {
    Rng rng(9);
    Tensor a = rand_tensor({2, 3, 4, 4}, rng);
    Tensor b = rand_tensor({2, 5, 4, 4}, rng);
    Tensor cat = concat_channels({a, b});
    CHECK(cat.shape() == Shape{2, 8, 4, 4});
    Tensor sa = slice_channels(cat, 0, 3);
    Tensor sb = slice_channels(cat, 3, 8);
    CHECK(sa.data() == a.data());
    CHECK(sb.data() == b.data());
}

TEST_CASE("two backward passes with cleared grads are bit-identical") {
    Rng rng(13);
    Tensor x = rand_tensor({2, 3, 8, 8}, rng);
    Tensor w = rand_tensor({4, 3, 3, 3}, rng);
    Tensor b = rand_tensor({4}, rng);
    Tensor loss = mean(relu(conv2d(x, w, b, 1)));
    loss.backward();
    const auto g1 = x.grad();
    const auto gw1 = w.grad();
    x.zero_grad();
    w.zero_grad();
    b.zero_grad();
    loss.zero_grad();
    loss.backward();
    CHECK(x.grad() == g1);
    CHECK(w.grad() == gw1);
}

TEST_CASE("batch_norm train mode normalizes per channel") {
    Rng rng(17);
    Tensor x = rand_tensor({4, 3, 6, 6}, rng, 5.0);
    Tensor gamma({3}, std::vector<double>(3, 1.0));
    Tensor beta(Shape{3});
    BatchNormStats stats;
    Tensor y = batch_norm(x, gamma, beta, true, stats);
    const std::size_t plane = 36, n = 4, c = 3;
    for (std::size_t j = 0; j < c; ++j) {
        double m = 0.0, v = 0.0;
        for (std::size_t s = 0; s < n; ++s)
            for (std::size_t i = 0; i < plane; ++i) m += y.data()[(s * c + j) * plane + i];
        m /= n * plane;
        for (std::size_t s = 0; s < n; ++s)
            for (std::size_t i = 0; i < plane; ++i) {
                const double d = y.data()[(s * c + j) * plane + i] - m;
                v += d * d;
            }
        v /= n * plane;
        CHECK(std::abs(m) < 1e-4);
        CHECK(std::abs(v - 1.0) < 1e-4);
    }
    CHECK(stats.seen);
}

TEST_CASE("batch_norm affine scale and shift") {
    Rng rng(19);
    Tensor x = rand_tensor({8, 2, 4, 4}, rng, 2.0);
    Tensor gamma({2}, std::vector<double>(2, 2.0));
    Tensor beta({2}, std::vector<double>(2, 3.0));
    BatchNormStats stats;
    Tensor y = batch_norm(x, gamma, beta, true, stats);
    const std::size_t plane = 16, n = 8, c = 2;
    for (std::size_t j = 0; j < c; ++j) {
        double m = 0.0, v = 0.0;
        for (std::size_t s = 0; s < n; ++s)
            for (std::size_t i = 0; i < plane; ++i) m += y.data()[(s * c + j) * plane + i];
        m /= n * plane;
        for (std::size_t s = 0; s < n; ++s)
            for (std::size_t i = 0; i < plane; ++i) {
                const double d = y.data()[(s * c + j) * plane + i] - m;
                v += d * d;
            }
        v /= n * plane;
        CHECK(std::abs(m - 3.0) < 1e-3);
        CHECK(std::abs(std::sqrt(v) - 2.0) < 1e-3);
    }
}

TEST_CASE("finite differences agree for every primitive") {
    Rng rng(23);
    auto run = [&](const char* name, auto make_loss, std::vector<Tensor> leaves,
                   double tol = 1e-5) {
        auto res = grad_check(make_loss, leaves, 40, rng);
        INFO(name << " max_rel_err=" << res.max_rel_err << " used=" << res.used);
        CHECK(res.used >= 20);
        CHECK(res.max_rel_err <= tol);
    };

    {
        Tensor x = rand_tensor({2, 3, 6, 6}, rng);
        Tensor w = rand_tensor({4, 3, 3, 3}, rng);
        Tensor b = rand_tensor({4}, rng);
        run("conv2d", [&] { return mean(conv2d(x, w, b, 1)); }, {x, w, b});
    }
    {
        Tensor x = rand_tensor({2, 3, 5, 5}, rng);
        Tensor w = rand_tensor({3, 2, 2, 2}, rng);
        Tensor b = rand_tensor({2}, rng);
        run("conv2d_transpose",
            [&] {
                Tensor y = conv2d_transpose(x, w, b, 2);
                return mean(sigmoid(y));
            },
            {x, w, b});
    }
    {
        Tensor x = rand_tensor({3, 4}, rng, 2.0);
        run("softmax+log", [&] { return mean(log_op(softmax_channel(x))); }, {x});
    }
    {
        Tensor x = rand_tensor({2, 2, 4, 4}, rng);
        run("max_pool", [&] { return mean(max_pool2x2(x)); }, {x});
        run("avg_pool", [&] { return mean(avg_pool2x2(x)); }, {x});
        run("global_avg_pool", [&] { return mean(sigmoid(global_avg_pool(x))); }, {x});
        run("pad_replicate",
            [&] { return mean(sigmoid(pad_replicate_even(slice_channels(x, 0, 1)))); }, {x});
    }
    {
        Tensor a = rand_tensor({3, 4}, rng);
        Tensor b = rand_tensor({4, 5}, rng);
        run("matmul", [&] { return mean(sigmoid(matmul(a, b))); }, {a, b});
    }
    {
        Tensor x = rand_tensor({3, 4}, rng);
        Tensor w = rand_tensor({2, 4}, rng);
        Tensor b = rand_tensor({2}, rng);
        run("linear", [&] { return mean(sigmoid(linear(x, w, b))); }, {x, w, b});
    }
    {
        Tensor x = rand_tensor({4, 3, 4, 4}, rng, 2.0);
        Tensor gamma = rand_tensor({3}, rng);
        Tensor beta = rand_tensor({3}, rng);
        run("batch_norm train",
            [&] {
                BatchNormStats st;
                return mean(sigmoid(batch_norm(x, gamma, beta, true, st)));
            },
            {x, gamma, beta}, 1e-4);
        BatchNormStats eval_st;
        eval_st.mean.assign(3, 0.2);
        eval_st.var.assign(3, 1.5);
        eval_st.seen = true;
        run("batch_norm eval",
            [&] { return mean(sigmoid(batch_norm(x, gamma, beta, false, eval_st))); },
            {x, gamma, beta}, 1e-4);
    }
    {
        Tensor a = rand_tensor({2, 2, 3, 3}, rng);
        Tensor b = rand_tensor({2, 3, 3, 3}, rng);
        run("concat+slice+add",
            [&] {
                Tensor cat = concat_channels({a, b});
                return mean(add(slice_channels(cat, 1, 4), mul_scalar(b, 0.5)));
            },
            {a, b});
    }
}
