#include "nucleo/blocks.hpp"

#include <cmath>
#include <iostream>

namespace nucleo {

void Registry::add_param(const std::string& name, const Tensor& t) {
    if (!seen_.insert(t.impl()).second) return;  // shared tensor, already registered
    if (!names_.insert(name).second)
        throw std::runtime_error("duplicate parameter name: " + name);
    params_.emplace_back(name, t);
}

void Registry::add_buffer(const std::string& name, std::vector<double>* v, bool* live) {
    if (!names_.insert(name).second)
        throw std::runtime_error("duplicate buffer name: " + name);
    buffers_.push_back(BufferRef{name, v, live});
}

std::size_t Registry::param_count() const {
    std::size_t n = 0;
    for (const auto& [name, t] : params_) n += t.numel();
    return n;
}

void Registry::zero_grads() {
    for (auto& [name, t] : params_) const_cast<Tensor&>(t).zero_grad();
}

namespace {

Tensor he_normal(Shape shape, std::size_t fan_in, Rng& rng) {
    const double stddev = std::sqrt(2.0 / static_cast<double>(fan_in));
    std::vector<double> data(shape_numel(shape));
    for (auto& v : data) v = stddev * rng.next_normal();
    Tensor t(std::move(shape), std::move(data));
    t.set_requires_grad(true);
    return t;
}

Tensor zeros_param(std::size_t n) {
    Tensor t(Shape{n});
    t.set_requires_grad(true);
    return t;
}

}  // namespace

void Conv2dLayer::init(std::size_t cout, std::size_t cin, std::size_t k, bool bias, int pad_,
                       Rng& rng) {
    w = he_normal({cout, cin, k, k}, cin * k * k, rng);
    if (bias) b = zeros_param(cout);
    pad = pad_;
}

void Conv2dLayer::register_params(Registry& reg, const std::string& prefix) const {
    reg.add_param(prefix + ".w", w);
    if (b.defined()) reg.add_param(prefix + ".b", b);
}

void ConvTranspose2Layer::init(std::size_t cin, std::size_t cout, Rng& rng) {
    w = he_normal({cin, cout, 2, 2}, cin * 4, rng);
    b = zeros_param(cout);
}

void ConvTranspose2Layer::register_params(Registry& reg, const std::string& prefix) const {
    reg.add_param(prefix + ".w", w);
    reg.add_param(prefix + ".b", b);
}

void BatchNormLayer::init(std::size_t channels) {
    gamma = Tensor(Shape{channels}, std::vector<double>(channels, 1.0));
    gamma.set_requires_grad(true);
    beta = zeros_param(channels);
}

void BatchNormLayer::register_params(Registry& reg, const std::string& prefix) {
    reg.add_param(prefix + ".gamma", gamma);
    reg.add_param(prefix + ".beta", beta);
    stats.mean.assign(gamma.numel(), 0.0);
    stats.var.assign(gamma.numel(), 1.0);
    reg.add_buffer(prefix + ".running_mean", &stats.mean, &stats.seen);
    reg.add_buffer(prefix + ".running_var", &stats.var);
}

void BatchNormLayer::set_identity_eval_stats() {
    stats.mean.assign(gamma.numel(), 0.0);
    stats.var.assign(gamma.numel(), 1.0);
    stats.seen = true;
}

void Rcl::init(std::size_t cin, std::size_t cout, int t_, Sharing sharing_, Rng& rng) {
    if (t_ < 0) throw std::invalid_argument("rcl: step count t must be >= 0, got " +
                                            std::to_string(t_));
    t = t_;
    sharing = sharing_;
    w_f = he_normal({cout, cin, 3, 3}, cin * 9, rng);
    b = zeros_param(cout);
    w_r.clear();
    const int n_rec = sharing == Sharing::shared ? (t > 0 ? 1 : 1) : std::max(t, 1);
    for (int i = 0; i < n_rec; ++i) w_r.push_back(he_normal({cout, cout, 3, 3}, cout * 9, rng));
    bn_gamma = Tensor(Shape{cout}, std::vector<double>(cout, 1.0));
    bn_gamma.set_requires_grad(true);
    bn_beta = zeros_param(cout);
    bn_stats.assign(static_cast<std::size_t>(t) + 1, BatchNormStats{});
}

Tensor Rcl::forward(const Tensor& x, bool training) const {
    if (bn_stats.size() != static_cast<std::size_t>(t) + 1)
        bn_stats.assign(static_cast<std::size_t>(t) + 1, BatchNormStats{});
    const Tensor base = conv2d(x, w_f, b, 1);  // conv(x, w_f) + b, reused every step
    Tensor h = base;
    for (int s = 1; s <= t; ++s) {
        Tensor a = relu(batch_norm(h, bn_gamma, bn_beta, training, bn_stats[s - 1]));
        const Tensor& wr = sharing == Sharing::shared ? w_r[0] : w_r[s - 1];
        h = add(base, conv2d(a, wr, Tensor(), 1));
    }
    return relu(batch_norm(h, bn_gamma, bn_beta, training, bn_stats[t]));
}

void Rcl::register_params(Registry& reg, const std::string& prefix) {
    reg.add_param(prefix + ".w_f", w_f);
    reg.add_param(prefix + ".b", b);
    for (std::size_t i = 0; i < w_r.size(); ++i)
        reg.add_param(prefix + ".w_r" + std::to_string(i), w_r[i]);
    reg.add_param(prefix + ".bn.gamma", bn_gamma);
    reg.add_param(prefix + ".bn.beta", bn_beta);
    for (std::size_t s = 0; s < bn_stats.size(); ++s) {
        auto& st = bn_stats[s];
        st.mean.assign(bn_gamma.numel(), 0.0);
        st.var.assign(bn_gamma.numel(), 1.0);
        reg.add_buffer(prefix + ".bn.step" + std::to_string(s) + ".running_mean", &st.mean,
                       &st.seen);
        reg.add_buffer(prefix + ".bn.step" + std::to_string(s) + ".running_var", &st.var);
    }
}

void Rcl::set_identity_eval_stats() {
    for (auto& st : bn_stats) {
        st.mean.assign(bn_gamma.numel(), 0.0);
        st.var.assign(bn_gamma.numel(), 1.0);
        st.seen = true;
    }
}

void DenseUnit::init(UnitKind kind_, std::size_t cin, std::size_t growth, int t, Sharing sharing,
                     Rng& rng) {
    kind = kind_;
    pre_bn.init(cin);
    if (kind == UnitKind::recurrent) {
        rcl.init(cin, growth, t, sharing, rng);
    } else {
        conv1.init(growth, cin, 3, /*bias=*/true, /*pad=*/1, rng);
        mid_bn.init(growth);
        conv2.init(growth, growth, 3, /*bias=*/false, /*pad=*/1, rng);
    }
}

Tensor DenseUnit::forward(const Tensor& x, bool training) const {
    Tensor a = relu(pre_bn.forward(x, training));
    if (kind == UnitKind::recurrent) return rcl.forward(a, training);
    Tensor h = conv1.forward(a);
    return conv2.forward(relu(mid_bn.forward(h, training)));
}

void DenseUnit::register_params(Registry& reg, const std::string& prefix) {
    pre_bn.register_params(reg, prefix + ".pre_bn");
    if (kind == UnitKind::recurrent) {
        rcl.register_params(reg, prefix + ".rcl");
    } else {
        conv1.register_params(reg, prefix + ".conv1");
        mid_bn.register_params(reg, prefix + ".mid_bn");
        conv2.register_params(reg, prefix + ".conv2");
    }
}

void DenseBlock::init(UnitKind kind, std::size_t cin, std::size_t layers, std::size_t growth_,
                      int t, Sharing sharing, Rng& rng) {
    growth = growth_;
    units.resize(layers);
    std::size_t ch = cin;
    for (std::size_t i = 0; i < layers; ++i) {
        units[i].init(kind, ch, growth, t, sharing, rng);
        ch += growth;
    }
}

Tensor DenseBlock::forward(const Tensor& x, bool training) const {
    std::vector<Tensor> feats{x};
    for (const auto& u : units) {
        Tensor in = feats.size() == 1 ? feats[0] : concat_channels(feats);
        feats.push_back(u.forward(in, training));
    }
    return concat_channels(feats);
}

void DenseBlock::register_params(Registry& reg, const std::string& prefix) {
    for (std::size_t i = 0; i < units.size(); ++i)
        units[i].register_params(reg, prefix + ".unit" + std::to_string(i));
}

void Transition::init(std::size_t cin, std::size_t cout, Rng& rng) {
    conv.init(cout, cin, 1, /*bias=*/true, /*pad=*/0, rng);
    bn.init(cout);
}

Tensor Transition::forward(const Tensor& x, bool training) const {
    Tensor h = bn.forward(conv.forward(x), training);
    if (h.dim(2) % 2 || h.dim(3) % 2)
        std::cerr << "[nucleo] transition: odd spatial extent " << shape_str(h.shape())
                  << ", replication-padding to even\n";
    return avg_pool2x2(pad_replicate_even(h));
}

void Transition::register_params(Registry& reg, const std::string& prefix) {
    conv.register_params(reg, prefix + ".conv");
    bn.register_params(reg, prefix + ".bn");
}

void Rru::init(std::size_t cin, std::size_t width, int t, Sharing sharing, Rng& rng) {
    entry.init(width, cin, 1, /*bias=*/true, /*pad=*/0, rng);
    rcl1.init(width, width, t, sharing, rng);
    rcl2.init(width, width, t, sharing, rng);
}

Tensor Rru::forward(const Tensor& x, bool training) const {
    Tensor e = entry.forward(x);
    return add(e, rcl2.forward(rcl1.forward(e, training), training));
}

void Rru::register_params(Registry& reg, const std::string& prefix) {
    entry.register_params(reg, prefix + ".entry");
    rcl1.register_params(reg, prefix + ".rcl1");
    rcl2.register_params(reg, prefix + ".rcl2");
}

void Rru::set_identity_eval_stats() {
    rcl1.set_identity_eval_stats();
    rcl2.set_identity_eval_stats();
}

}  // namespace nucleo
