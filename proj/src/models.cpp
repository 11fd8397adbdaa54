#include "nucleo/models.hpp"

#include <algorithm>

namespace nucleo {

std::string task_name(Task t) {
    switch (t) {
        case Task::classification: return "classification";
        case Task::segmentation: return "segmentation";
        case Task::detection: return "detection";
    }
    return "?";
}

std::string kind_name(Kind k) {
    switch (k) {
        case Kind::densenet: return "densenet";
        case Kind::dcrn: return "dcrn";
        case Kind::r2unet: return "r2unet";
        case Kind::udnet: return "udnet";
    }
    return "?";
}

Task task_from_name(const std::string& s) {
    if (s == "classification") return Task::classification;
    if (s == "segmentation") return Task::segmentation;
    if (s == "detection") return Task::detection;
    throw SpecError("unknown task: " + s);
}

Kind kind_from_name(const std::string& s) {
    if (s == "densenet") return Kind::densenet;
    if (s == "dcrn") return Kind::dcrn;
    if (s == "r2unet") return Kind::r2unet;
    if (s == "udnet") return Kind::udnet;
    throw SpecError("unknown model kind: " + s);
}

ModelSpec ModelSpec::defaults(Kind kind) {
    ModelSpec s;
    s.kind = kind;
    switch (kind) {
        case Kind::densenet:
        case Kind::dcrn:
            s.task = Task::classification;
            s.t = 2;
            s.sharing = Sharing::shared;
            s.in_channels = 3;
            s.num_classes = 4;
            break;
        case Kind::r2unet:
            s.task = Task::segmentation;
            s.t = 2;
            s.sharing = Sharing::per_step;
            s.channel_plan = {1, 16, 32, 64, 128, 64, 32, 16, 1};
            s.in_channels = 1;
            break;
        case Kind::udnet:
            s.task = Task::detection;
            s.t = 3;
            s.sharing = Sharing::per_step;
            s.channel_plan = {1, 16, 32, 64, 128, 64, 32, 16, 1};
            s.in_channels = 1;
            break;
    }
    return s;
}

void ModelSpec::validate() const {
    if (t < 0) throw SpecError("t must be >= 0");
    if (kind == Kind::densenet || kind == Kind::dcrn) {
        if (blocks == 0 || layers_per_block == 0 || growth_rate == 0)
            throw SpecError("classifier spec needs positive blocks/layers/growth");
        if (num_classes < 2) throw SpecError("num_classes must be >= 2");
        return;
    }
    if (channel_plan.size() < 3 || channel_plan.size() % 2 == 0)
        throw SpecError("channel plan must have odd length >= 3, got " +
                        std::to_string(channel_plan.size()) + " entries");
    for (auto w : channel_plan)
        if (w == 0) throw SpecError("channel plan contains a zero width");
    for (std::size_t i = 0, j = channel_plan.size() - 1; i < j; ++i, --j)
        if (channel_plan[i] != channel_plan[j])
            throw SpecError("channel plan is not palindromic around the bottleneck");
    if (channel_plan.front() != in_channels)
        throw SpecError("channel plan must start with in_channels");
}

Tensor ClassifierNet::forward(const Tensor& x, bool training) const {
    Tensor h = stem.forward(x);
    for (std::size_t i = 0; i < dense_blocks.size(); ++i) {
        h = dense_blocks[i].forward(h, training);
        if (i + 1 < dense_blocks.size()) h = transitions[i].forward(h, training);
    }
    h = global_avg_pool(relu(head_bn.forward(h, training)));
    return softmax_channel(linear(h, fc_w, fc_b));
}

Tensor UNet::forward(const Tensor& x, bool training) const {
    const std::size_t l = levels();
    std::vector<Tensor> skips(l);
    Tensor cur = x;
    for (std::size_t i = 0; i < l; ++i) {
        skips[i] = encoders[i].forward(cur, training);
        cur = max_pool2x2(skips[i]);
    }
    cur = bottleneck.forward(cur, training);
    for (std::size_t i = l; i-- > 0;) {
        Tensor up = ups[i].forward(cur);
        cur = decoders[i].forward(concat_channels({up, skips[i]}), training);
    }
    Tensor out = out_conv.forward(cur);
    if (sigmoid_out) return sigmoid(out);
    // density head is linear in training; clamp negatives at inference only
    return training ? out : relu(out);
}

Model Model::build(const ModelSpec& spec) {
    spec.validate();
    Model m;
    m.spec_ = spec;
    Rng rng(spec.seed);

    if (spec.kind == Kind::densenet || spec.kind == Kind::dcrn) {
        const UnitKind uk =
            spec.kind == Kind::dcrn ? UnitKind::recurrent : UnitKind::feedforward;
        auto net = std::make_shared<ClassifierNet>();
        const std::size_t stem_out = 16;
        net->stem.init(stem_out, spec.in_channels, 3, /*bias=*/true, /*pad=*/1, rng);
        std::size_t ch = stem_out;
        net->dense_blocks.resize(spec.blocks);
        net->transitions.resize(spec.blocks - 1);
        for (std::size_t i = 0; i < spec.blocks; ++i) {
            net->dense_blocks[i].init(uk, ch, spec.layers_per_block, spec.growth_rate, spec.t,
                                      spec.sharing, rng);
            ch = net->dense_blocks[i].out_channels(ch);
            if (i + 1 < spec.blocks) net->transitions[i].init(ch, ch, rng);
        }
        net->head_bn.init(ch);
        const double stddev = std::sqrt(2.0 / static_cast<double>(ch));
        std::vector<double> wdata(spec.num_classes * ch);
        for (auto& v : wdata) v = stddev * rng.next_normal();
        net->fc_w = Tensor({spec.num_classes, ch}, std::move(wdata));
        net->fc_w.set_requires_grad(true);
        net->fc_b = Tensor(Shape{spec.num_classes});
        net->fc_b.set_requires_grad(true);

        net->stem.register_params(m.reg_, "stem");
        for (std::size_t i = 0; i < spec.blocks; ++i) {
            net->dense_blocks[i].register_params(m.reg_, "block" + std::to_string(i));
            if (i + 1 < spec.blocks)
                net->transitions[i].register_params(m.reg_, "trans" + std::to_string(i));
        }
        net->head_bn.register_params(m.reg_, "head.bn");
        m.reg_.add_param("head.fc.w", net->fc_w);
        m.reg_.add_param("head.fc.b", net->fc_b);
        m.clf_ = std::move(net);
        return m;
    }

    auto net = std::make_shared<UNet>();
    const auto& plan = spec.channel_plan;
    const std::size_t l = (plan.size() - 3) / 2;  // encoder depth, bottleneck excluded
    net->encoders.resize(l);
    net->ups.resize(l);
    net->decoders.resize(l);
    std::size_t ch = plan[0];
    for (std::size_t i = 0; i < l; ++i) {
        net->encoders[i].init(ch, plan[i + 1], spec.t, spec.sharing, rng);
        ch = plan[i + 1];
    }
    net->bottleneck.init(ch, plan[l + 1], spec.t, spec.sharing, rng);
    for (std::size_t i = l; i-- > 0;) {
        const std::size_t above = i + 1 == l ? plan[l + 1] : plan[i + 2];
        net->ups[i].init(above, plan[i + 1], rng);
        net->decoders[i].init(2 * plan[i + 1], plan[i + 1], spec.t, spec.sharing, rng);
    }
    net->out_conv.init(plan.back(), plan[1], 1, /*bias=*/true, /*pad=*/0, rng);
    net->sigmoid_out = spec.task != Task::detection;

    for (std::size_t i = 0; i < l; ++i)
        net->encoders[i].register_params(m.reg_, "enc" + std::to_string(i));
    net->bottleneck.register_params(m.reg_, "bottleneck");
    for (std::size_t i = 0; i < l; ++i) {
        net->ups[i].register_params(m.reg_, "up" + std::to_string(i));
        net->decoders[i].register_params(m.reg_, "dec" + std::to_string(i));
    }
    net->out_conv.register_params(m.reg_, "out");
    m.unet_ = std::move(net);
    return m;
}

Tensor Model::forward(const Tensor& batch, bool training) const {
    if (batch.rank() != 4)
        throw ShapeError("model forward expects N x C x H x W, got " +
                         shape_str(batch.shape()));
    if (batch.dim(1) != spec_.in_channels)
        throw ShapeError("model expects " + std::to_string(spec_.in_channels) +
                         " input channels, batch has " + std::to_string(batch.dim(1)) +
                         " (axis 1)");
    if (clf_) return clf_->forward(batch, training);
    const std::size_t div = std::size_t{1} << unet_->levels();
    if (batch.dim(2) % div || batch.dim(3) % div)
        throw ShapeError("u-net input spatial extents must be divisible by " +
                         std::to_string(div) + ", got " + shape_str(batch.shape()));
    return unet_->forward(batch, training);
}

}  // namespace nucleo
