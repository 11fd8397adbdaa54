#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

namespace nucleo {

using Shape = std::vector<std::size_t>;

std::string shape_str(const Shape& s);

struct ShapeError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

class Tensor;

// One recorded primitive application. `backward` accumulates into the
// grads of `inputs` given the grad of the output.
struct Node {
    const char* op_name = "?";
    std::vector<Tensor> inputs;
    std::function<void(const std::vector<double>& out_grad)> backward;
};

struct TensorImpl {
    Shape shape;
    std::vector<double> data;
    std::vector<double> grad;  // empty until first accumulation
    bool requires_grad = false;
    std::shared_ptr<Node> node;  // creator; null for leaves
};

// Value handle over a shared buffer. N-D, dense, row-major; image data is
// laid out N x C x H x W.
class Tensor {
  public:
    Tensor() = default;
    explicit Tensor(Shape shape, double fill = 0.0);
    Tensor(Shape shape, std::vector<double> data);

    static Tensor scalar(double v);

    bool defined() const { return impl_ != nullptr; }
    const Shape& shape() const { return impl_->shape; }
    std::size_t numel() const { return impl_->data.size(); }
    std::size_t dim(std::size_t i) const { return impl_->shape.at(i); }
    std::size_t rank() const { return impl_->shape.size(); }

    std::vector<double>& data() { return impl_->data; }
    const std::vector<double>& data() const { return impl_->data; }
    double item() const;

    bool requires_grad() const { return impl_->requires_grad; }
    Tensor& set_requires_grad(bool v);

    const std::vector<double>& grad() const;
    std::vector<double>& grad_buffer();  // allocates zeros on demand
    bool has_grad() const { return !impl_->grad.empty(); }
    void zero_grad();

    TensorImpl* impl() const { return impl_.get(); }
    const std::shared_ptr<Node>& node() const { return impl_->node; }

    // Runs reverse-mode accumulation from this (scalar) tensor into every
    // reachable leaf with requires_grad set. Visits each node once, in
    // reverse topological order.
    void backward() const;

    static Tensor from_op(Shape shape, std::vector<double> data,
                          std::shared_ptr<Node> node, bool needs_grad);

  private:
    std::shared_ptr<TensorImpl> impl_;
};

std::size_t shape_numel(const Shape& s);
bool any_requires_grad(const std::vector<Tensor>& ts);
void accumulate_grad(Tensor& t, const std::vector<double>& g);

}  // namespace nucleo
