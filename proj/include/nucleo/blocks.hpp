#pragma once

#include <memory>
#include <string>
#include <unordered_set>

#include "nucleo/ops.hpp"
#include "nucleo/rng.hpp"
#include "nucleo/tensor.hpp"

namespace nucleo {

// Named-parameter registry. Tensors shared between modules (e.g. batch-norm
// learnables reused across recurrent steps) register once.
struct BufferRef {
    std::string name;
    std::vector<double>* data;
    bool* live = nullptr;  // set on load (batch-norm stats count as seen)
};

class Registry {
  public:
    void add_param(const std::string& name, const Tensor& t);
    void add_buffer(const std::string& name, std::vector<double>* v, bool* live = nullptr);

    const std::vector<std::pair<std::string, Tensor>>& params() const { return params_; }
    const std::vector<BufferRef>& buffers() const { return buffers_; }
    std::size_t param_count() const;
    void zero_grads();

  private:
    std::vector<std::pair<std::string, Tensor>> params_;
    std::vector<BufferRef> buffers_;
    std::unordered_set<TensorImpl*> seen_;
    std::unordered_set<std::string> names_;
};

struct Conv2dLayer {
    Tensor w, b;
    int pad = 1;

    void init(std::size_t cout, std::size_t cin, std::size_t k, bool bias, int pad, Rng& rng);
    Tensor forward(const Tensor& x) const { return conv2d(x, w, b, pad); }
    void register_params(Registry& reg, const std::string& prefix) const;
};

struct ConvTranspose2Layer {
    Tensor w, b;  // cin x cout x 2 x 2, stride 2

    void init(std::size_t cin, std::size_t cout, Rng& rng);
    Tensor forward(const Tensor& x) const { return conv2d_transpose(x, w, b, 2); }
    void register_params(Registry& reg, const std::string& prefix) const;
};

struct BatchNormLayer {
    Tensor gamma, beta;
    mutable BatchNormStats stats;

    void init(std::size_t channels);
    Tensor forward(const Tensor& x, bool training) const {
        return batch_norm(x, gamma, beta, training, stats);
    }
    void register_params(Registry& reg, const std::string& prefix);
    void set_identity_eval_stats();  // running stats pinned to (mean 0, var 1)
};

enum class Sharing { shared, per_step };

// Recurrent convolutional layer: a 3x3 forward kernel applied once, plus t
// recurrent 3x3 applications over the activated hidden state. The BN->ReLU
// activation between steps shares its learnables across steps but keeps
// running statistics per step.
struct Rcl {
    int t = 2;
    Sharing sharing = Sharing::shared;
    Tensor w_f, b;
    std::vector<Tensor> w_r;         // one kernel when shared, t kernels when per_step
    Tensor bn_gamma, bn_beta;
    mutable std::vector<BatchNormStats> bn_stats;  // one per activation site (t+1)

    void init(std::size_t cin, std::size_t cout, int t, Sharing sharing, Rng& rng);
    Tensor forward(const Tensor& x, bool training) const;
    void register_params(Registry& reg, const std::string& prefix);
    void set_identity_eval_stats();
};

// One dense-block composite: pre-activation BN -> ReLU feeding either an RCL
// (recurrent variant) or a pair of feedforward convolutions (baseline).
enum class UnitKind { recurrent, feedforward };

struct DenseUnit {
    UnitKind kind;
    BatchNormLayer pre_bn;
    // recurrent variant
    Rcl rcl;
    // feedforward variant: conv(in->g, bias) then BN -> ReLU -> conv(g->g, no bias)
    Conv2dLayer conv1;
    BatchNormLayer mid_bn;
    Conv2dLayer conv2;

    void init(UnitKind kind, std::size_t cin, std::size_t growth, int t, Sharing sharing,
              Rng& rng);
    Tensor forward(const Tensor& x, bool training) const;
    void register_params(Registry& reg, const std::string& prefix);
};

// Dense block: unit i consumes the concatenation of the block input and all
// previous unit outputs; the block output is the final concatenation.
struct DenseBlock {
    std::vector<DenseUnit> units;
    std::size_t growth = 5;

    void init(UnitKind kind, std::size_t cin, std::size_t layers, std::size_t growth, int t,
              Sharing sharing, Rng& rng);
    Tensor forward(const Tensor& x, bool training) const;
    void register_params(Registry& reg, const std::string& prefix);
    std::size_t out_channels(std::size_t cin) const { return cin + units.size() * growth; }
};

// Transition: 1x1 conv -> BN -> 2x2 average pooling. Odd spatial extents are
// replication-padded to even first.
struct Transition {
    Conv2dLayer conv;
    BatchNormLayer bn;

    void init(std::size_t cin, std::size_t cout, Rng& rng);
    Tensor forward(const Tensor& x, bool training) const;
    void register_params(Registry& reg, const std::string& prefix);
};

// Recurrent residual unit: 1x1 entry projection e, two stacked RCLs F, output
// e + F(e).
struct Rru {
    Conv2dLayer entry;
    Rcl rcl1, rcl2;

    void init(std::size_t cin, std::size_t width, int t, Sharing sharing, Rng& rng);
    Tensor forward(const Tensor& x, bool training) const;
    void register_params(Registry& reg, const std::string& prefix);
    void set_identity_eval_stats();
};

}  // namespace nucleo
