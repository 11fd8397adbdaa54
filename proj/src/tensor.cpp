#include "nucleo/tensor.hpp"

#include <cmath>
#include <sstream>
#include <unordered_set>

namespace nucleo {

std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) os << "x";
        os << s[i];
    }
    os << "]";
    return os.str();
}

std::size_t shape_numel(const Shape& s) {
    std::size_t n = 1;
    for (auto e : s) n *= e;
    return n;
}

Tensor::Tensor(Shape shape, double fill) : impl_(std::make_shared<TensorImpl>()) {
    impl_->shape = std::move(shape);
    impl_->data.assign(shape_numel(impl_->shape), fill);
}

Tensor::Tensor(Shape shape, std::vector<double> data) : impl_(std::make_shared<TensorImpl>()) {
    if (shape_numel(shape) != data.size())
        throw ShapeError("tensor data length " + std::to_string(data.size()) +
                         " does not match shape " + shape_str(shape));
    impl_->shape = std::move(shape);
    impl_->data = std::move(data);
}

Tensor Tensor::scalar(double v) { return Tensor(Shape{1}, std::vector<double>{v}); }

double Tensor::item() const {
    if (numel() != 1) throw ShapeError("item() on non-scalar tensor " + shape_str(shape()));
    return impl_->data[0];
}

Tensor& Tensor::set_requires_grad(bool v) {
    impl_->requires_grad = v;
    return *this;
}

const std::vector<double>& Tensor::grad() const {
    if (impl_->grad.empty())
        throw std::runtime_error("grad accessed before backward populated it");
    return impl_->grad;
}

std::vector<double>& Tensor::grad_buffer() {
    if (impl_->grad.empty()) impl_->grad.assign(impl_->data.size(), 0.0);
    return impl_->grad;
}

void Tensor::zero_grad() { impl_->grad.clear(); }

Tensor Tensor::from_op(Shape shape, std::vector<double> data, std::shared_ptr<Node> node,
                       bool needs_grad) {
    Tensor t(std::move(shape), std::move(data));
    t.impl_->requires_grad = needs_grad;
    if (needs_grad) t.impl_->node = std::move(node);
    return t;
}

bool any_requires_grad(const std::vector<Tensor>& ts) {
    for (const auto& t : ts)
        if (t.defined() && t.requires_grad()) return true;
    return false;
}

void accumulate_grad(Tensor& t, const std::vector<double>& g) {
    auto& buf = t.grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) buf[i] += g[i];
}

namespace {

void topo_visit(const Tensor& t, std::unordered_set<TensorImpl*>& seen,
                std::vector<Tensor>& order) {
    if (!t.defined() || !t.node()) return;
    if (!seen.insert(t.impl()).second) return;
    for (const auto& in : t.node()->inputs) topo_visit(in, seen, order);
    order.push_back(t);
}

}  // namespace

void Tensor::backward() const {
    if (numel() != 1)
        throw ShapeError("backward() requires a scalar loss, got shape " + shape_str(shape()));
    std::unordered_set<TensorImpl*> seen;
    std::vector<Tensor> order;
    topo_visit(*this, seen, order);

    // intermediates are owned by the graph; their grads reset every pass
    for (auto& t : order) t.impl()->grad.clear();

    Tensor self = *this;
    self.grad_buffer()[0] += 1.0;

    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        if (it->impl()->grad.empty()) continue;
        it->node()->backward(it->impl()->grad);
    }
}

}  // namespace nucleo
