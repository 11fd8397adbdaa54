#include "nucleo/optim.hpp"

#include <cmath>

namespace nucleo {

Optimizer::Optimizer(Registry& reg, OptimConfig cfg) : reg_(reg), cfg_(std::move(cfg)) {
    if (cfg_.name != "sgd" && cfg_.name != "adam")
        throw std::invalid_argument("unknown optimizer: " + cfg_.name);
    adam_ = cfg_.name == "adam";
    m1_.resize(reg_.params().size());
    if (adam_) m2_.resize(reg_.params().size());
    for (std::size_t i = 0; i < reg_.params().size(); ++i) {
        const std::size_t n = reg_.params()[i].second.numel();
        m1_[i].assign(n, 0.0);
        if (adam_) m2_[i].assign(n, 0.0);
    }
}

void Optimizer::zero_grad() { reg_.zero_grads(); }

void Optimizer::step() {
    const auto& params = reg_.params();
    for (const auto& [name, t] : params) {
        if (!t.has_grad()) continue;
        for (double g : t.grad())
            if (!std::isfinite(g))
                throw NumericError("non-finite gradient in parameter " + name +
                                   "; step aborted");
    }
    ++steps_;
    for (std::size_t i = 0; i < params.size(); ++i) {
        Tensor t = params[i].second;
        if (!t.has_grad()) continue;
        auto& theta = t.data();
        const auto& grad = t.grad();
        const bool decay = t.rank() >= 2 && cfg_.weight_decay != 0.0;
        if (!adam_) {
            // v <- mu v + g + lambda theta; theta <- theta - lr v
            for (std::size_t j = 0; j < theta.size(); ++j) {
                const double g = grad[j] + (decay ? cfg_.weight_decay * theta[j] : 0.0);
                m1_[i][j] = cfg_.momentum * m1_[i][j] + g;
                theta[j] -= cfg_.lr * m1_[i][j];
            }
        } else {
            const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(steps_));
            const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(steps_));
            for (std::size_t j = 0; j < theta.size(); ++j) {
                const double g = grad[j] + (decay ? cfg_.weight_decay * theta[j] : 0.0);
                m1_[i][j] = cfg_.beta1 * m1_[i][j] + (1.0 - cfg_.beta1) * g;
                m2_[i][j] = cfg_.beta2 * m2_[i][j] + (1.0 - cfg_.beta2) * g * g;
                const double mhat = m1_[i][j] / bc1;
                const double vhat = m2_[i][j] / bc2;
                theta[j] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
            }
        }
    }
}

}  // namespace nucleo
