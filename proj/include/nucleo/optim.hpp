#pragma once

#include "nucleo/blocks.hpp"

namespace nucleo {

struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct OptimConfig {
    std::string name = "sgd";  // sgd | adam
    double lr = 0.001;
    double momentum = 0.9;
    double weight_decay = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

// Weight decay is applied to conv/dense kernels only (rank >= 2 tensors);
// biases and batch-norm learnables are left undecayed.
class Optimizer {
  public:
    Optimizer(Registry& reg, OptimConfig cfg);

    // One update from the grads currently stored on the parameters. Throws
    // NumericError on a non-finite gradient, leaving parameters untouched.
    void step();
    void zero_grad();
    std::size_t step_count() const { return steps_; }

  private:
    Registry& reg_;
    OptimConfig cfg_;
    bool adam_;
    std::size_t steps_ = 0;
    std::vector<std::vector<double>> m1_;  // momentum / first moment
    std::vector<std::vector<double>> m2_;  // adam second moment
};

}  // namespace nucleo
