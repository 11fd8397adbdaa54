#include "nucleo/losses.hpp"

#include <cmath>

namespace nucleo {

Tensor cross_entropy(const Tensor& probs, const std::vector<std::size_t>& labels) {
    if (probs.rank() != 2)
        throw ShapeError("cross_entropy expects N x C probabilities, got " +
                         shape_str(probs.shape()));
    const std::size_t n = probs.dim(0), c = probs.dim(1);
    if (labels.size() != n)
        throw ShapeError("cross_entropy: " + std::to_string(labels.size()) + " labels for " +
                         std::to_string(n) + " rows");
    for (auto l : labels)
        if (l >= c)
            throw std::out_of_range("cross_entropy: label " + std::to_string(l) +
                                    " outside [0," + std::to_string(c) + ")");
    constexpr double kClamp = 1e-12;
    double acc = 0.0;
    std::vector<bool> clamped(n);
    for (std::size_t i = 0; i < n; ++i) {
        const double p = probs.data()[i * c + labels[i]];
        clamped[i] = p < kClamp;
        acc -= std::log(std::max(p, kClamp));
    }
    acc /= static_cast<double>(n);

    bool needs = probs.requires_grad();
    auto node = std::make_shared<Node>();
    node->op_name = "cross_entropy";
    node->inputs = {probs};
    Tensor pp = probs;
    node->backward = [pp, labels, clamped, n, c](const std::vector<double>& go) mutable {
        auto& g = pp.grad_buffer();
        const double scale = go[0] / static_cast<double>(n);
        for (std::size_t i = 0; i < n; ++i) {
            if (clamped[i]) continue;  // flat region of the clamp
            g[i * c + labels[i]] -= scale / pp.data()[i * c + labels[i]];
        }
    };
    return Tensor::from_op({1}, {acc}, std::move(node), needs);
}

double dice_coefficient(const std::vector<std::uint8_t>& sr,
                        const std::vector<std::uint8_t>& gt) {
    if (sr.size() != gt.size())
        throw ShapeError("dice_coefficient: mask sizes differ");
    std::size_t inter = 0, a = 0, b = 0;
    for (std::size_t i = 0; i < sr.size(); ++i) {
        const bool s = sr[i] != 0, g = gt[i] != 0;
        inter += s && g;
        a += g;
        b += s;
    }
    if (a + b == 0) return 1.0;
    return 2.0 * static_cast<double>(inter) / static_cast<double>(a + b);
}

Tensor soft_dice_loss(const Tensor& pred_probs, const Tensor& gt) {
    if (pred_probs.shape() != gt.shape())
        throw ShapeError("soft_dice_loss: shape mismatch " + shape_str(pred_probs.shape()) +
                         " vs " + shape_str(gt.shape()));
    constexpr double kEps = 1e-6;
    double inter = 0.0, sp = 0.0, sg = 0.0;
    for (std::size_t i = 0; i < pred_probs.numel(); ++i) {
        inter += pred_probs.data()[i] * gt.data()[i];
        sp += pred_probs.data()[i];
        sg += gt.data()[i];
    }
    const double denom = sp + sg + kEps;
    const double loss = 1.0 - (2.0 * inter + kEps) / denom;

    bool needs = any_requires_grad({pred_probs, gt});
    auto node = std::make_shared<Node>();
    node->op_name = "soft_dice_loss";
    node->inputs = {pred_probs, gt};
    Tensor pp = pred_probs, gg = gt;
    const double num = 2.0 * inter + kEps;
    node->backward = [pp, gg, denom, num](const std::vector<double>& go) mutable {
        // d/dp of -(2 sum pg + eps)/(sum p + sum g + eps)
        const double inv = 1.0 / denom;
        if (pp.requires_grad()) {
            auto& g = pp.grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i)
                g[i] += go[0] * (-2.0 * gg.data()[i] * inv + num * inv * inv);
        }
        if (gg.requires_grad()) {
            auto& g = gg.grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i)
                g[i] += go[0] * (-2.0 * pp.data()[i] * inv + num * inv * inv);
        }
    };
    return Tensor::from_op({1}, {loss}, std::move(node), needs);
}

Tensor mse_loss(const Tensor& y_hat, const Tensor& y) {
    if (y_hat.shape() != y.shape())
        throw ShapeError("mse: shape mismatch " + shape_str(y_hat.shape()) + " vs " +
                         shape_str(y.shape()));
    const std::size_t n = y_hat.numel();
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double d = y_hat.data()[i] - y.data()[i];
        acc += d * d;
    }
    acc /= static_cast<double>(n);

    bool needs = any_requires_grad({y_hat, y});
    auto node = std::make_shared<Node>();
    node->op_name = "mse";
    node->inputs = {y_hat, y};
    Tensor hh = y_hat, yy = y;
    node->backward = [hh, yy, n](const std::vector<double>& go) mutable {
        const double scale = 2.0 * go[0] / static_cast<double>(n);
        if (hh.requires_grad()) {
            auto& g = hh.grad_buffer();
            for (std::size_t i = 0; i < n; ++i)
                g[i] += scale * (hh.data()[i] - yy.data()[i]);
        }
        if (yy.requires_grad()) {
            auto& g = yy.grad_buffer();
            for (std::size_t i = 0; i < n; ++i)
                g[i] -= scale * (hh.data()[i] - yy.data()[i]);
        }
    };
    return Tensor::from_op({1}, {acc}, std::move(node), needs);
}

}  // namespace nucleo
