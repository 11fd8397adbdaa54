#include "nucleo/run.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <limits>

#include <json.hpp>

namespace fs = std::filesystem;

namespace nucleo {

namespace {

std::string patch_name(const char* stem, std::size_t sample, std::size_t k, const char* suffix) {
    char buf[96];
    std::snprintf(buf, sizeof(buf), "%s_%04zu_%04zu%s", stem, sample, k, suffix);
    return buf;
}

std::string resolve(const std::string& base_dir, const std::string& p) {
    fs::path q(p);
    if (q.is_absolute()) return p;
    return (fs::path(base_dir) / q).string();
}

std::string dir_of(const std::string& file) {
    const auto d = fs::path(file).parent_path();
    return d.empty() ? std::string(".") : d.string();
}

// In-memory training sample: input volume plus the task target.
struct Sample {
    std::vector<double> x;
    Shape xshape;                // 1 x C x H x W
    std::size_t label = 0;       // classification
    std::vector<double> target;  // segmentation mask (0/1) or density values
};

std::vector<Sample> load_store(const RunConfig& cfg, const Manifest& m,
                               const std::string& base_dir) {
    std::vector<Sample> out;
    out.reserve(m.entries.size());
    for (const auto& e : m.entries) {
        Sample s;
        const Image img = read_png(resolve(base_dir, e.image));
        if (cfg.task == Task::classification) {
            Image rgb = img;
            if (rgb.c == 1) {  // grayscale input to an RGB model: replicate
                rgb = Image::make(img.h, img.w, 3);
                for (int y = 0; y < img.h; ++y)
                    for (int x = 0; x < img.w; ++x)
                        for (int ch = 0; ch < 3; ++ch) rgb.at(y, x, ch) = img.at(y, x);
            }
            Tensor t = normalize(rgb, false);
            s.x = t.data();
            s.xshape = t.shape();
            if (e.label < 0) throw DataError("classification sample without label: " + e.image);
            s.label = static_cast<std::size_t>(e.label);
        } else {
            Tensor t = normalize(img, true);
            s.x = t.data();
            s.xshape = t.shape();
            if (cfg.task == Task::segmentation) {
                if (e.mask.empty())
                    throw DataError("segmentation sample without mask: " + e.image);
                const Image mk = read_png(resolve(base_dir, e.mask));
                if (mk.h != img.h || mk.w != img.w || mk.c != 1)
                    throw DataError("mask/image shape mismatch for " + e.image);
                s.target.resize(static_cast<std::size_t>(mk.h) * mk.w);
                for (std::size_t i = 0; i < s.target.size(); ++i)
                    s.target[i] = mk.px[i] > 127 ? 1.0 : 0.0;
            } else {
                if (!e.density.empty()) {
                    const DensitySurface d = read_density(resolve(base_dir, e.density));
                    if (d.h != img.h || d.w != img.w)
                        throw DataError("density/image shape mismatch for " + e.image);
                    s.target = d.map;
                } else if (!e.dots.empty()) {
                    const auto dots = read_dots_csv(resolve(base_dir, e.dots));
                    s.target = dots_to_density(dots, img.h, img.w, cfg.sigma).map;
                } else {
                    throw DataError("detection sample without dots or density: " + e.image);
                }
                for (auto& v : s.target) v *= cfg.density_scale;
            }
        }
        out.push_back(std::move(s));
    }
    return out;
}

Tensor make_batch(const std::vector<Sample>& samples, const std::vector<std::size_t>& idx,
                  std::size_t b0, std::size_t b1) {
    const Shape& s0 = samples[idx[b0]].xshape;
    Shape shape = s0;
    shape[0] = b1 - b0;
    std::vector<double> data;
    data.reserve(shape_numel(shape));
    for (std::size_t i = b0; i < b1; ++i) {
        const Sample& s = samples[idx[i]];
        if (s.xshape != s0)
            throw DataError("store contains mixed patch shapes; re-run prepare");
        data.insert(data.end(), s.x.begin(), s.x.end());
    }
    return Tensor(std::move(shape), std::move(data));
}

Tensor make_target_batch(const std::vector<Sample>& samples, const std::vector<std::size_t>& idx,
                         std::size_t b0, std::size_t b1, std::size_t h, std::size_t w) {
    std::vector<double> data;
    data.reserve((b1 - b0) * h * w);
    for (std::size_t i = b0; i < b1; ++i) {
        const auto& t = samples[idx[i]].target;
        data.insert(data.end(), t.begin(), t.end());
    }
    return Tensor({b1 - b0, 1, h, w}, std::move(data));
}

double hard_dice(const std::vector<double>& pred, const std::vector<double>& gt,
                 std::size_t off, std::size_t n) {
    std::vector<std::uint8_t> p(n), g(n);
    for (std::size_t i = 0; i < n; ++i) {
        p[i] = pred[off + i] >= 0.5;
        g[i] = gt[off + i] >= 0.5;
    }
    return dice_coefficient(p, g);
}

struct EvalPass {
    double loss = 0.0;
    double metric = 0.0;
};

// Full pass in eval mode over `idx`, batched; metric is accuracy, mean hard
// Dice, or density MSE depending on the task.
EvalPass run_eval_pass(const RunConfig& cfg, const Model& model,
                       const std::vector<Sample>& samples, const std::vector<std::size_t>& idx,
                       std::size_t batch, const std::string& loss_name) {
    EvalPass ep;
    double metric_sum = 0.0;
    for (std::size_t b0 = 0; b0 < idx.size(); b0 += batch) {
        const std::size_t b1 = std::min(idx.size(), b0 + batch);
        Tensor x = make_batch(samples, idx, b0, b1);
        Tensor out = model.forward(x, false);
        if (cfg.task == Task::classification) {
            std::vector<std::size_t> labels;
            for (std::size_t i = b0; i < b1; ++i) labels.push_back(samples[idx[i]].label);
            ep.loss += cross_entropy(out, labels).item() * static_cast<double>(b1 - b0);
            const std::size_t c = out.dim(1);
            for (std::size_t i = 0; i < b1 - b0; ++i) {
                std::size_t arg = 0;
                for (std::size_t j = 1; j < c; ++j)
                    if (out.data()[i * c + j] > out.data()[i * c + arg]) arg = j;
                metric_sum += arg == labels[i];
            }
        } else {
            const std::size_t h = x.dim(2), w = x.dim(3);
            Tensor y = make_target_batch(samples, idx, b0, b1, h, w);
            Tensor loss = loss_name == "mse" ? mse_loss(out, y) : soft_dice_loss(out, y);
            ep.loss += loss.item() * static_cast<double>(b1 - b0);
            for (std::size_t i = 0; i < b1 - b0; ++i) {
                if (cfg.task == Task::segmentation) {
                    metric_sum += hard_dice(out.data(), y.data(), i * h * w, h * w);
                } else {
                    double se = 0.0;
                    for (std::size_t k = 0; k < h * w; ++k) {
                        const double d = out.data()[i * h * w + k] - y.data()[i * h * w + k];
                        se += d * d;
                    }
                    // report at the physical density scale
                    metric_sum += se / static_cast<double>(h * w) /
                                  (cfg.density_scale * cfg.density_scale);
                }
            }
        }
    }
    ep.loss /= static_cast<double>(idx.size());
    ep.metric = metric_sum / static_cast<double>(idx.size());
    return ep;
}

void draw_cross(Image& rgb, const Dot& d, int arm) {
    for (int o = -arm; o <= arm; ++o) {
        const int y = d.y + o, x = d.x + o;
        if (y >= 0 && y < rgb.h) {
            rgb.at(y, d.x, 0) = 255;
            rgb.at(y, d.x, 1) = 0;
            rgb.at(y, d.x, 2) = 0;
        }
        if (x >= 0 && x < rgb.w) {
            rgb.at(d.y, x, 0) = 255;
            rgb.at(d.y, x, 1) = 0;
            rgb.at(d.y, x, 2) = 0;
        }
    }
}

}  // namespace

RunConfig RunConfig::defaults(Task task) {
    RunConfig c;
    c.task = task;
    switch (task) {
        case Task::classification:
            c.kind = Kind::dcrn;
            c.t = 2;
            c.sharing = Sharing::shared;
            c.optim = {"sgd", 0.001, 0.9, 1e-4, 0.9, 0.999, 1e-8};
            c.epochs = 100;
            c.batch_size = 32;
            c.patch_size = 32;
            break;
        case Task::segmentation:
            c.kind = Kind::r2unet;
            c.t = 2;
            c.sharing = Sharing::per_step;
            c.optim = {"adam", 2e-4, 0.9, 0.0, 0.9, 0.999, 1e-8};
            c.epochs = 250;
            c.batch_size = 16;
            c.patch_size = 64;
            break;
        case Task::detection:
            c.kind = Kind::udnet;
            c.t = 3;
            c.sharing = Sharing::per_step;
            c.optim = {"adam", 2e-4, 0.9, 0.0, 0.9, 0.999, 1e-8};
            c.epochs = 500;
            c.batch_size = 64;
            c.patch_size = 96;
            break;
    }
    return c;
}

ModelSpec RunConfig::model_spec() const {
    ModelSpec s = ModelSpec::defaults(kind);
    s.task = task;
    s.t = t;
    s.sharing = sharing;
    if (!channel_plan.empty()) s.channel_plan = channel_plan;
    s.growth_rate = growth_rate;
    s.blocks = blocks;
    s.layers_per_block = layers_per_block;
    s.seed = seed;
    return s;
}

double RunConfig::peak_threshold() const {
    if (threshold > 0.0) return threshold;
    return 0.5 / (2.0 * M_PI * sigma * sigma);
}

void RunConfig::validate() const {
    if (epochs == 0 || batch_size == 0) throw SpecError("epochs and batch_size must be >= 1");
    if (patch_size < 1) throw SpecError("patch_size must be >= 1");
    if (patches_per_image < 1) throw SpecError("patches_per_image must be >= 1");
    if (split_frac < 0.0 || split_frac > 1.0) throw SpecError("split_frac must be in [0,1]");
    if (sigma <= 0.0) throw SpecError("sigma must be > 0");
    if (density_scale <= 0.0) throw SpecError("density_scale must be > 0");
    if (min_distance < 1) throw SpecError("min_distance must be >= 1");
    if (match_radius <= 0.0) throw SpecError("match_radius must be > 0");
    const ModelSpec ms = model_spec();
    ms.validate();
    if (kind == Kind::r2unet || kind == Kind::udnet) {
        const std::size_t div = std::size_t{1} << ((ms.channel_plan.size() - 3) / 2);
        if (patch_size % static_cast<int>(div))
            throw SpecError("patch_size must be divisible by " + std::to_string(div) +
                            " for this channel plan");
    }
    if (!loss.empty() && loss != "cross_entropy" && loss != "dice" && loss != "mse")
        throw SpecError("unknown loss: " + loss);
}

void apply_config_file(RunConfig& cfg, const std::string& path) {
    std::ifstream f(path);
    if (!f) throw DataError("cannot open config file: " + path);
    nlohmann::json j;
    try {
        f >> j;
    } catch (const nlohmann::json::exception& e) {
        throw DataError("malformed config " + path + ": " + e.what());
    }
    for (const auto& [key, val] : j.items()) {
        if (key == "task") {
            // re-derive task defaults first so later keys override them
            RunConfig base = RunConfig::defaults(task_from_name(val.get<std::string>()));
            base.manifest = cfg.manifest;
            base.out_dir = cfg.out_dir;
            base.seed = cfg.seed;
            cfg = base;
        }
    }
    for (const auto& [key, val] : j.items()) {
        try {
            if (key == "task") {
            } else if (key == "model") {
                cfg.kind = kind_from_name(val.get<std::string>());
            } else if (key == "t") {
                cfg.t = val.get<int>();
            } else if (key == "sharing") {
                const auto s = val.get<std::string>();
                if (s != "shared" && s != "per_step") throw SpecError("unknown sharing: " + s);
                cfg.sharing = s == "shared" ? Sharing::shared : Sharing::per_step;
            } else if (key == "channel_plan") {
                cfg.channel_plan = val.get<std::vector<std::size_t>>();
            } else if (key == "growth_rate") {
                cfg.growth_rate = val.get<std::size_t>();
            } else if (key == "blocks") {
                cfg.blocks = val.get<std::size_t>();
            } else if (key == "layers_per_block") {
                cfg.layers_per_block = val.get<std::size_t>();
            } else if (key == "optimizer") {
                for (const auto& [ok, ov] : val.items()) {
                    if (ok == "name")
                        cfg.optim.name = ov.get<std::string>();
                    else if (ok == "lr")
                        cfg.optim.lr = ov.get<double>();
                    else if (ok == "momentum")
                        cfg.optim.momentum = ov.get<double>();
                    else if (ok == "weight_decay")
                        cfg.optim.weight_decay = ov.get<double>();
                    else if (ok == "beta1")
                        cfg.optim.beta1 = ov.get<double>();
                    else if (ok == "beta2")
                        cfg.optim.beta2 = ov.get<double>();
                    else if (ok == "eps")
                        cfg.optim.eps = ov.get<double>();
                    else
                        throw SpecError("unknown optimizer key: " + ok);
                }
            } else if (key == "loss") {
                cfg.loss = val.get<std::string>();
            } else if (key == "epochs") {
                cfg.epochs = val.get<std::size_t>();
            } else if (key == "batch_size") {
                cfg.batch_size = val.get<std::size_t>();
            } else if (key == "seed") {
                cfg.seed = val.get<std::uint64_t>();
            } else if (key == "sigma") {
                cfg.sigma = val.get<double>();
            } else if (key == "patch_size") {
                cfg.patch_size = val.get<int>();
            } else if (key == "patches_per_image") {
                cfg.patches_per_image = val.get<int>();
            } else if (key == "split_frac") {
                cfg.split_frac = val.get<double>();
            } else if (key == "density_scale") {
                cfg.density_scale = val.get<double>();
            } else if (key == "threshold") {
                cfg.threshold = val.get<double>();
            } else if (key == "min_distance") {
                cfg.min_distance = val.get<int>();
            } else if (key == "match_radius") {
                cfg.match_radius = val.get<double>();
            } else if (key == "manifest") {
                cfg.manifest = val.get<std::string>();
            } else if (key == "out_dir") {
                cfg.out_dir = val.get<std::string>();
            } else {
                throw SpecError("unknown config key: " + key);
            }
        } catch (const nlohmann::json::exception& e) {
            throw SpecError("bad value for config key '" + key + "': " + e.what());
        }
    }
}

void cmd_prepare(const RunConfig& cfg) {
    cfg.validate();
    if (cfg.manifest.empty()) throw SpecError("prepare requires a manifest");
    const Manifest m = read_manifest(cfg.manifest);
    if (m.task != task_name(cfg.task))
        throw SpecError("manifest task '" + m.task + "' does not match configured task '" +
                        task_name(cfg.task) + "'");
    const std::string base = dir_of(cfg.manifest);
    fs::create_directories(cfg.out_dir);

    nlohmann::json index;
    index["task"] = m.task;
    index["patch_size"] = cfg.patch_size;
    index["sigma"] = cfg.sigma;
    auto& samples = index["samples"] = nlohmann::json::array();

    Rng root(cfg.seed);
    for (std::size_t i = 0; i < m.entries.size(); ++i) {
        const auto& e = m.entries[i];
        const Image img = read_png(resolve(base, e.image));
        if (cfg.task == Task::classification) {
            if (e.label < 0) throw DataError("sample without label: " + e.image);
            const PatchSet ps = extract_random_patches(img, cfg.patches_per_image,
                                                       cfg.patch_size, root.next_u64());
            for (std::size_t k = 0; k < ps.patches.size(); ++k) {
                const std::string name = patch_name("cls", i, k, ".png");
                write_png((fs::path(cfg.out_dir) / name).string(), ps.patches[k]);
                samples.push_back({{"image", name}, {"label", e.label}});
            }
        } else if (cfg.task == Task::segmentation) {
            if (e.mask.empty()) throw DataError("sample without mask: " + e.image);
            const Image mask = read_png(resolve(base, e.mask));
            if (mask.h != img.h || mask.w != img.w)
                throw DataError("mask/image shape mismatch for " + e.image);
            const PatchSet pi = extract_grid_patches(img, cfg.patch_size, PadMode::reflect);
            const PatchSet pm = extract_grid_patches(mask, cfg.patch_size, PadMode::reflect);
            for (std::size_t k = 0; k < pi.patches.size(); ++k) {
                const std::string iname = patch_name("seg", i, k, ".png");
                const std::string mname = patch_name("seg", i, k, "_mask.png");
                write_png((fs::path(cfg.out_dir) / iname).string(), pi.patches[k]);
                write_png((fs::path(cfg.out_dir) / mname).string(), pm.patches[k]);
                samples.push_back({{"image", iname}, {"mask", mname}});
            }
        } else {
            if (e.dots.empty()) throw DataError("sample without dot annotations: " + e.image);
            const auto dots = read_dots_csv(resolve(base, e.dots));
            const DensitySurface density = dots_to_density(dots, img.h, img.w, cfg.sigma);
            const PatchSet pi = extract_grid_patches(img, cfg.patch_size, PadMode::reflect);
            const auto planes =
                extract_grid_planes(density.map, img.h, img.w, *pi.layout);
            for (std::size_t k = 0; k < pi.patches.size(); ++k) {
                const std::string iname = patch_name("det", i, k, ".png");
                const std::string dname = patch_name("det", i, k, "_density.nucd");
                const std::string cname = patch_name("det", i, k, "_dots.csv");
                write_png((fs::path(cfg.out_dir) / iname).string(), pi.patches[k]);
                write_density((fs::path(cfg.out_dir) / dname).string(),
                              {cfg.patch_size, cfg.patch_size, cfg.sigma, planes[k]});
                const auto [x0, y0] = pi.offsets[k];
                std::vector<Dot> local;
                for (const Dot& d : dots)
                    if (d.x >= x0 && d.x < x0 + cfg.patch_size && d.y >= y0 &&
                        d.y < y0 + cfg.patch_size)
                        local.push_back({d.x - x0, d.y - y0});
                write_dots_csv((fs::path(cfg.out_dir) / cname).string(), local);
                samples.push_back({{"image", iname}, {"density", dname}, {"dots", cname}});
            }
        }
    }
    std::ofstream out((fs::path(cfg.out_dir) / "index.json").string(), std::ios::trunc);
    out << index.dump(2) << "\n";
    if (!out) throw DataError("cannot write index.json in " + cfg.out_dir);
}

TrainResult cmd_train(const RunConfig& cfg) {
    cfg.validate();
    const std::string index_path = (fs::path(cfg.out_dir) / "index.json").string();
    const Manifest store = read_manifest(index_path);
    if (store.task != task_name(cfg.task))
        throw SpecError("store task '" + store.task + "' does not match configured task");
    const std::vector<Sample> samples = load_store(cfg, store, cfg.out_dir);

    Model model = Model::build(cfg.model_spec());
    Optimizer opt(model.registry(), cfg.optim);
    auto [train_idx, val_idx] = split_dataset(samples.size(), cfg.split_frac, cfg.seed);
    if (train_idx.empty()) throw SpecError("split leaves no training samples");
    // with no held-out samples the training set doubles as validation
    const std::vector<std::size_t>& eval_idx = val_idx.empty() ? train_idx : val_idx;

    const std::string loss_name =
        !cfg.loss.empty() ? cfg.loss
        : cfg.task == Task::classification ? std::string("cross_entropy")
        : cfg.task == Task::segmentation   ? std::string("dice")
                                           : std::string("mse");
    if (cfg.task == Task::classification && loss_name != "cross_entropy")
        throw SpecError("classification trains with cross_entropy");
    if (cfg.task != Task::classification && loss_name == "cross_entropy")
        throw SpecError("cross_entropy requires the classification task");

    const std::string best_path = (fs::path(cfg.out_dir) / "best.ckpt").string();
    const std::string last_path = (fs::path(cfg.out_dir) / "last.ckpt").string();
    std::ofstream log((fs::path(cfg.out_dir) / "train_log.csv").string(), std::ios::trunc);
    if (!log) throw DataError("cannot write train_log.csv in " + cfg.out_dir);
    log << "epoch,train_loss,val_loss,metric\n";

    const bool lower_better = cfg.task == Task::detection;
    TrainResult res;
    res.best_metric = lower_better ? std::numeric_limits<double>::infinity()
                                   : -std::numeric_limits<double>::infinity();
    res.best_checkpoint = best_path;

    Rng shuffler(cfg.seed);
    std::vector<std::size_t> order = train_idx;
    for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
        Rng er(shuffler.next_u64());
        for (std::size_t i = order.size(); i-- > 1;)
            std::swap(order[i], order[er.next_below(i + 1)]);

        double train_loss = 0.0;
        for (std::size_t b0 = 0; b0 < order.size(); b0 += cfg.batch_size) {
            const std::size_t b1 = std::min(order.size(), b0 + cfg.batch_size);
            Tensor x = make_batch(samples, order, b0, b1);
            Tensor out = model.forward(x, true);
            Tensor loss;
            if (cfg.task == Task::classification) {
                std::vector<std::size_t> labels;
                for (std::size_t i = b0; i < b1; ++i) labels.push_back(samples[order[i]].label);
                loss = cross_entropy(out, labels);
            } else {
                Tensor y = make_target_batch(samples, order, b0, b1, x.dim(2), x.dim(3));
                loss = loss_name == "mse" ? mse_loss(out, y) : soft_dice_loss(out, y);
            }
            const double lv = loss.item();
            if (!std::isfinite(lv))
                throw NumericError("non-finite training loss at epoch " +
                                   std::to_string(epoch) + "; last checkpoints retained");
            loss.backward();
            opt.step();
            opt.zero_grad();
            train_loss += lv * static_cast<double>(b1 - b0);
        }
        train_loss /= static_cast<double>(order.size());

        const EvalPass ep = run_eval_pass(cfg, model, samples, eval_idx, cfg.batch_size,
                                          loss_name);
        log << epoch << "," << train_loss << "," << ep.loss << "," << ep.metric << "\n";
        log.flush();
        res.history.push_back({epoch, train_loss, ep.loss, ep.metric});

        save_checkpoint(model.registry(), last_path);
        const bool improved =
            lower_better ? ep.metric < res.best_metric : ep.metric > res.best_metric;
        if (improved) {
            res.best_metric = ep.metric;
            save_checkpoint(model.registry(), best_path);
        }
    }
    return res;
}

std::vector<double> predict_probs(const Model& model, const Image& img) {
    Image in = img;
    if (model.spec().in_channels == 3 && img.c == 1) {
        in = Image::make(img.h, img.w, 3);
        for (int y = 0; y < img.h; ++y)
            for (int x = 0; x < img.w; ++x)
                for (int ch = 0; ch < 3; ++ch) in.at(y, x, ch) = img.at(y, x);
    }
    Tensor x = normalize(in, model.spec().in_channels == 1);
    return model.forward(x, false).data();
}

std::vector<double> predict_plane(const Model& model, const Image& img, int patch_size) {
    const PatchSet ps = extract_grid_patches(img, patch_size, PadMode::reflect);
    std::vector<std::vector<double>> planes;
    planes.reserve(ps.patches.size());
    const std::size_t chunk = 8;
    for (std::size_t b0 = 0; b0 < ps.patches.size(); b0 += chunk) {
        const std::size_t b1 = std::min(ps.patches.size(), b0 + chunk);
        std::vector<double> data;
        for (std::size_t k = b0; k < b1; ++k) {
            Tensor t = normalize(ps.patches[k], true);
            data.insert(data.end(), t.data().begin(), t.data().end());
        }
        const std::size_t hw = static_cast<std::size_t>(patch_size) * patch_size;
        Tensor x({b1 - b0, 1, static_cast<std::size_t>(patch_size),
                  static_cast<std::size_t>(patch_size)},
                 std::move(data));
        Tensor out = model.forward(x, false);
        for (std::size_t k = 0; k < b1 - b0; ++k)
            planes.emplace_back(out.data().begin() + static_cast<std::ptrdiff_t>(k * hw),
                                out.data().begin() + static_cast<std::ptrdiff_t>((k + 1) * hw));
    }
    return stitch_planes(planes, *ps.layout);
}

MetricReport cmd_eval(const RunConfig& cfg, const std::string& checkpoint,
                      const std::string& manifest_path) {
    cfg.validate();
    const Manifest m = read_manifest(manifest_path);
    if (m.task != task_name(cfg.task))
        throw SpecError("manifest task '" + m.task + "' does not match configured task");
    const std::string base = dir_of(manifest_path);

    Model model = Model::build(cfg.model_spec());
    load_checkpoint(model.registry(), checkpoint);

    MetricReport rep;
    rep.task = task_name(cfg.task);
    rep.model = kind_name(cfg.kind);
    rep.n_samples = m.entries.size();
    rep.seed = cfg.seed;

    if (cfg.task == Task::classification) {
        std::vector<double> scores;
        std::vector<std::size_t> preds, labels;
        for (const auto& e : m.entries) {
            if (e.label < 0) throw DataError("sample without label: " + e.image);
            const auto probs = predict_probs(model, read_png(resolve(base, e.image)));
            scores.insert(scores.end(), probs.begin(), probs.end());
            preds.push_back(static_cast<std::size_t>(
                std::max_element(probs.begin(), probs.end()) - probs.begin()));
            labels.push_back(static_cast<std::size_t>(e.label));
        }
        const std::size_t nc = model.spec().num_classes;
        rep.accuracy = accuracy(preds, labels);
        rep.macro_f1 = macro_f1(preds, labels, nc);
        rep.auc = roc_auc(scores, labels, nc).macro;
    } else if (cfg.task == Task::segmentation) {
        double dc_sum = 0.0;
        for (const auto& e : m.entries) {
            const Image img = read_png(resolve(base, e.image));
            const Image mask = read_png(resolve(base, e.mask));
            if (mask.h != img.h || mask.w != img.w)
                throw DataError("mask/image shape mismatch for " + e.image);
            const auto plane = predict_plane(model, img, cfg.patch_size);
            const std::size_t n = plane.size();
            std::vector<std::uint8_t> p(n), g(n);
            for (std::size_t i = 0; i < n; ++i) {
                p[i] = plane[i] >= 0.5;
                g[i] = mask.px[i] > 127;
            }
            dc_sum += dice_coefficient(p, g);
        }
        rep.dc = dc_sum / static_cast<double>(m.entries.size());
    } else {
        double mse_sum = 0.0;
        std::size_t tp = 0, fp = 0, fn = 0;
        for (const auto& e : m.entries) {
            const Image img = read_png(resolve(base, e.image));
            if (e.dots.empty()) throw DataError("sample without dot annotations: " + e.image);
            const auto gt_dots = read_dots_csv(resolve(base, e.dots));
            const DensitySurface gt = dots_to_density(gt_dots, img.h, img.w, cfg.sigma);
            DensitySurface pred{img.h, img.w, cfg.sigma,
                                predict_plane(model, img, cfg.patch_size)};
            for (auto& v : pred.map) v /= cfg.density_scale;
            double se = 0.0;
            for (std::size_t i = 0; i < pred.map.size(); ++i) {
                const double d = pred.map[i] - gt.map[i];
                se += d * d;
            }
            mse_sum += se / static_cast<double>(pred.map.size());
            const auto peaks = detect_peaks(pred, cfg.peak_threshold(), cfg.min_distance);
            const auto match = match_detections(peaks, gt_dots, cfg.match_radius);
            tp += match.tp;
            fp += match.fp;
            fn += match.fn;
        }
        rep.mse = mse_sum / static_cast<double>(m.entries.size());
        rep.precision = tp + fp == 0 ? 0.0 : static_cast<double>(tp) / (tp + fp);
        rep.recall = tp + fn == 0 ? 0.0 : static_cast<double>(tp) / (tp + fn);
        rep.f1 = *rep.precision + *rep.recall == 0.0
                     ? 0.0
                     : 2.0 * *rep.precision * *rep.recall / (*rep.precision + *rep.recall);
    }
    return rep;
}

void cmd_predict(const RunConfig& cfg, const std::string& checkpoint,
                 const std::string& image_path, const std::string& out_prefix) {
    cfg.validate();
    Model model = Model::build(cfg.model_spec());
    load_checkpoint(model.registry(), checkpoint);
    const Image img = read_png(image_path);

    if (cfg.task == Task::classification) {
        const auto probs = predict_probs(model, img);
        nlohmann::json j;
        for (std::size_t c = 0; c < probs.size(); ++c) j[kClassNames[c]] = probs[c];
        const std::string text = j.dump(2);
        std::cout << text << "\n";
        std::ofstream f(out_prefix + ".json", std::ios::trunc);
        f << text << "\n";
        if (!f) throw DataError("cannot write " + out_prefix + ".json");
        return;
    }

    auto plane = predict_plane(model, img, cfg.patch_size);
    if (cfg.task == Task::detection)
        for (auto& v : plane) v /= cfg.density_scale;
    if (cfg.task == Task::segmentation) {
        Image mask = Image::make(img.h, img.w, 1);
        for (std::size_t i = 0; i < plane.size(); ++i) mask.px[i] = plane[i] >= 0.5 ? 255 : 0;
        write_png(out_prefix + "_mask.png", mask);
        return;
    }

    const DensitySurface pred{img.h, img.w, cfg.sigma, plane};
    write_density(out_prefix + "_density.nucd", pred);
    const double peak = *std::max_element(plane.begin(), plane.end());
    Image vis = Image::make(img.h, img.w, 1);
    if (peak > 0.0)
        for (std::size_t i = 0; i < plane.size(); ++i)
            vis.px[i] = static_cast<std::uint8_t>(
                std::clamp(255.0 * plane[i] / peak, 0.0, 255.0));
    write_png(out_prefix + "_density.png", vis);

    const auto dots = detect_peaks(pred, cfg.peak_threshold(), cfg.min_distance);
    write_dots_csv(out_prefix + "_dots.csv", dots);
    Image overlay = Image::make(img.h, img.w, 3);
    for (int y = 0; y < img.h; ++y)
        for (int x = 0; x < img.w; ++x)
            for (int ch = 0; ch < 3; ++ch)
                overlay.at(y, x, ch) = img.at(y, x, img.c == 3 ? ch : 0);
    for (const Dot& d : dots) draw_cross(overlay, d, 3);
    write_png(out_prefix + "_overlay.png", overlay);
}

std::string write_synthetic_dataset(Task task, int n, int size, std::uint64_t seed,
                                    const std::string& dir) {
    if (n < 1 || size < 8) throw SpecError("synthetic dataset needs n >= 1 and size >= 8");
    fs::create_directories(dir);
    nlohmann::json m;
    m["task"] = task_name(task);
    auto& samples = m["samples"] = nlohmann::json::array();
    Rng root(seed);
    for (int i = 0; i < n; ++i) {
        const std::uint64_t s = root.next_u64();
        const std::string stem = "sample" + std::to_string(i);
        if (task == Task::classification) {
            const auto t = make_texture_sample(size, i % 4, s);
            write_png((fs::path(dir) / (stem + ".png")).string(), t.image);
            samples.push_back({{"image", stem + ".png"}, {"label", t.label}});
        } else if (task == Task::segmentation) {
            const auto b = make_blob_sample(size, size, s);
            write_png((fs::path(dir) / (stem + ".png")).string(), b.image);
            write_png((fs::path(dir) / (stem + "_mask.png")).string(), b.mask);
            samples.push_back({{"image", stem + ".png"}, {"mask", stem + "_mask.png"}});
        } else {
            const auto d = make_dot_sample(size, size, std::max(3, size / 12), 8, s);
            write_png((fs::path(dir) / (stem + ".png")).string(), d.image);
            write_dots_csv((fs::path(dir) / (stem + "_dots.csv")).string(), d.dots);
            samples.push_back({{"image", stem + ".png"}, {"dots", stem + "_dots.csv"}});
        }
    }
    const std::string path = (fs::path(dir) / "manifest.json").string();
    std::ofstream f(path, std::ios::trunc);
    f << m.dump(2) << "\n";
    if (!f) throw DataError("cannot write " + path);
    return path;
}

void cmd_selftest(std::uint64_t seed) {
    auto check = [](bool ok, const std::string& what) {
        if (!ok) throw NumericError("selftest failed: " + what);
        std::cout << "ok: " << what << "\n";
    };

    Rng a(seed), b(seed);
    bool same = true;
    for (int i = 0; i < 1000; ++i) same &= a.next_u64() == b.next_u64();
    check(same, "seeded rng streams are identical");

    Rng rng(seed);
    Image img = Image::make(32, 48, 1);
    for (auto& p : img.px) p = static_cast<std::uint8_t>(rng.next_below(256));
    const PatchSet ps = extract_grid_patches(img, 16, PadMode::none);
    const Image back = stitch_patches(ps);
    check(back.px == img.px, "grid extract/stitch round-trips bit-exactly");

    const DensitySurface d = dots_to_density({{24, 16}}, 32, 48, 2.0);
    double integral = 0.0;
    for (double v : d.map) integral += v;
    check(std::abs(integral - 1.0) < 0.02, "density surface integrates to the dot count");

    ModelSpec spec = ModelSpec::defaults(Kind::dcrn);
    spec.blocks = 2;
    spec.layers_per_block = 1;
    spec.growth_rate = 2;
    spec.seed = seed;
    Model model = Model::build(spec);
    Tensor x({2, 3, 8, 8});
    for (auto& v : x.data()) v = rng.next_double();
    model.forward(x, true);  // populate batch-norm statistics
    const auto tmp = (fs::temp_directory_path() / "nucleo_selftest.ckpt").string();
    save_checkpoint(model.registry(), tmp);
    Model reload = Model::build(spec);
    load_checkpoint(reload.registry(), tmp);
    save_checkpoint(reload.registry(), tmp);
    Model reload2 = Model::build(spec);
    load_checkpoint(reload2.registry(), tmp);
    check(reload.forward(x, false).data() == reload2.forward(x, false).data(),
          "checkpoint save/load/forward is stable");
    fs::remove(tmp);

    Optimizer opt(model.registry(), {"sgd", 0.05, 0.9, 0.0, 0.9, 0.999, 1e-8});
    std::vector<std::size_t> labels{0, 1};
    const double l0 = cross_entropy(model.forward(x, true), labels).item();
    double ln = l0;
    for (int i = 0; i < 5; ++i) {
        Tensor loss = cross_entropy(model.forward(x, true), labels);
        ln = loss.item();
        loss.backward();
        opt.step();
        opt.zero_grad();
    }
    check(ln < l0, "a few optimizer steps reduce the training loss");
}

}  // namespace nucleo
