#pragma once

#include "nucleo/blocks.hpp"

namespace nucleo {

enum class Task { classification, segmentation, detection };
enum class Kind { densenet, dcrn, r2unet, udnet };

std::string task_name(Task t);
std::string kind_name(Kind k);
Task task_from_name(const std::string& s);
Kind kind_from_name(const std::string& s);

struct SpecError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ModelSpec {
    Task task = Task::classification;
    Kind kind = Kind::dcrn;
    int t = 2;
    Sharing sharing = Sharing::shared;
    // Full encoder/decoder channel chain for the U-shaped kinds, e.g.
    // 1,16,32,64,128,64,32,16,1. Must be palindromic around the bottleneck.
    std::vector<std::size_t> channel_plan;
    std::size_t growth_rate = 5;
    std::size_t blocks = 4;
    std::size_t layers_per_block = 3;
    std::size_t in_channels = 3;
    std::size_t num_classes = 4;
    std::uint64_t seed = 1;

    static ModelSpec defaults(Kind kind);
    void validate() const;
};

struct ClassifierNet {
    Conv2dLayer stem;
    std::vector<DenseBlock> dense_blocks;
    std::vector<Transition> transitions;
    BatchNormLayer head_bn;
    Tensor fc_w, fc_b;

    Tensor forward(const Tensor& x, bool training) const;
};

struct UNet {
    std::vector<Rru> encoders;
    Rru bottleneck;
    std::vector<ConvTranspose2Layer> ups;  // ups[i] feeds decoder level i
    std::vector<Rru> decoders;
    Conv2dLayer out_conv;
    bool sigmoid_out = true;

    Tensor forward(const Tensor& x, bool training) const;
    std::size_t levels() const { return encoders.size(); }
};

class Model {
  public:
    static Model build(const ModelSpec& spec);

    Tensor forward(const Tensor& batch, bool training) const;
    std::size_t param_count() const { return reg_.param_count(); }
    Registry& registry() { return reg_; }
    const Registry& registry() const { return reg_; }
    const ModelSpec& spec() const { return spec_; }

    UNet* unet() { return unet_.get(); }
    ClassifierNet* classifier() { return clf_.get(); }

  private:
    ModelSpec spec_;
    std::shared_ptr<ClassifierNet> clf_;
    std::shared_ptr<UNet> unet_;
    Registry reg_;
};

}  // namespace nucleo
