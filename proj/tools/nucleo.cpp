#include <cstdlib>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "nucleo/run.hpp"

namespace {

// flags > config file > per-task defaults; NUCLEO_SEED fills in when no
// --seed flag or file value is present
struct CliArgs {
    std::string task = "classification";
    std::string config_file;
    std::string model, sharing, loss;
    std::vector<std::size_t> channel_plan;
    int t = -1;
    long long growth_rate = -1, blocks = -1, layers_per_block = -1;
    long long epochs = -1, batch_size = -1, patch_size = -1, patches_per_image = -1;
    long long min_distance = -1;
    double lr = -1.0, momentum = -1.0, weight_decay = -1.0;
    double sigma = -1.0, split_frac = -1.0, threshold = -1.0, match_radius = -1.0;
    double density_scale = -1.0;
    std::string optimizer;
    std::string manifest, out_dir, checkpoint, image, out_prefix;
    long long seed = -1;
    bool seed_given = false;
    long long synth = 0, synth_size = 0;
};

void add_common(CLI::App* cmd, CliArgs& a) {
    cmd->add_option("--task", a.task, "classification | segmentation | detection");
    cmd->add_option("--config", a.config_file, "JSON config file");
    cmd->add_option("--model", a.model, "densenet | dcrn | r2unet | udnet");
    cmd->add_option("--t", a.t, "recurrence depth");
    cmd->add_option("--sharing", a.sharing, "shared | per_step");
    cmd->add_option("--channel-plan", a.channel_plan, "encoder/decoder channel chain");
    cmd->add_option("--growth-rate", a.growth_rate);
    cmd->add_option("--blocks", a.blocks);
    cmd->add_option("--layers-per-block", a.layers_per_block);
    cmd->add_option("--optimizer", a.optimizer, "sgd | adam");
    cmd->add_option("--lr", a.lr);
    cmd->add_option("--momentum", a.momentum);
    cmd->add_option("--weight-decay", a.weight_decay);
    cmd->add_option("--loss", a.loss, "cross_entropy | dice | mse");
    cmd->add_option("--epochs", a.epochs);
    cmd->add_option("--batch-size", a.batch_size);
    cmd->add_option("--seed", a.seed)->each([&a](const std::string&) { a.seed_given = true; });
    cmd->add_option("--sigma", a.sigma, "density kernel width");
    cmd->add_option("--patch-size", a.patch_size);
    cmd->add_option("--patches-per-image", a.patches_per_image);
    cmd->add_option("--split-frac", a.split_frac, "training fraction of the split");
    cmd->add_option("--threshold", a.threshold, "peak detection threshold");
    cmd->add_option("--density-scale", a.density_scale, "training scale for density targets");
    cmd->add_option("--min-distance", a.min_distance, "peak suppression radius");
    cmd->add_option("--match-radius", a.match_radius, "dot matching radius");
    cmd->add_option("--manifest", a.manifest, "dataset manifest JSON");
    cmd->add_option("--out-dir", a.out_dir, "store / run directory");
}

nucleo::RunConfig build_config(const CliArgs& a) {
    using namespace nucleo;
    RunConfig cfg = RunConfig::defaults(task_from_name(a.task));
    if (!a.config_file.empty()) apply_config_file(cfg, a.config_file);
    cfg.task = task_from_name(a.task);

    if (!a.model.empty()) cfg.kind = kind_from_name(a.model);
    if (a.t >= 0) cfg.t = a.t;
    if (!a.sharing.empty()) {
        if (a.sharing != "shared" && a.sharing != "per_step")
            throw SpecError("unknown sharing: " + a.sharing);
        cfg.sharing = a.sharing == "shared" ? Sharing::shared : Sharing::per_step;
    }
    if (!a.channel_plan.empty()) cfg.channel_plan = a.channel_plan;
    if (a.growth_rate >= 0) cfg.growth_rate = static_cast<std::size_t>(a.growth_rate);
    if (a.blocks >= 0) cfg.blocks = static_cast<std::size_t>(a.blocks);
    if (a.layers_per_block >= 0) cfg.layers_per_block = static_cast<std::size_t>(a.layers_per_block);
    if (!a.optimizer.empty()) cfg.optim.name = a.optimizer;
    if (a.lr >= 0.0) cfg.optim.lr = a.lr;
    if (a.momentum >= 0.0) cfg.optim.momentum = a.momentum;
    if (a.weight_decay >= 0.0) cfg.optim.weight_decay = a.weight_decay;
    if (!a.loss.empty()) cfg.loss = a.loss;
    if (a.epochs >= 0) cfg.epochs = static_cast<std::size_t>(a.epochs);
    if (a.batch_size >= 0) cfg.batch_size = static_cast<std::size_t>(a.batch_size);
    if (a.sigma > 0.0) cfg.sigma = a.sigma;
    if (a.patch_size > 0) cfg.patch_size = static_cast<int>(a.patch_size);
    if (a.patches_per_image > 0) cfg.patches_per_image = static_cast<int>(a.patches_per_image);
    if (a.split_frac >= 0.0) cfg.split_frac = a.split_frac;
    if (a.threshold > 0.0) cfg.threshold = a.threshold;
    if (a.density_scale > 0.0) cfg.density_scale = a.density_scale;
    if (a.min_distance > 0) cfg.min_distance = static_cast<int>(a.min_distance);
    if (a.match_radius > 0.0) cfg.match_radius = a.match_radius;
    if (!a.manifest.empty()) cfg.manifest = a.manifest;
    if (!a.out_dir.empty()) cfg.out_dir = a.out_dir;

    if (a.seed_given) {
        cfg.seed = static_cast<std::uint64_t>(a.seed);
    } else if (const char* env = std::getenv("NUCLEO_SEED")) {
        try {
            cfg.seed = std::stoull(env);
        } catch (const std::exception&) {
            throw SpecError("NUCLEO_SEED is not an integer: " + std::string(env));
        }
    }
    return cfg;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"recurrent-convolutional nucleus analysis toolkit"};
    app.require_subcommand(1);
    CliArgs args;

    auto* prepare = app.add_subcommand("prepare", "build the patch store from a manifest");
    auto* train = app.add_subcommand("train", "train on a prepared store");
    auto* eval = app.add_subcommand("eval", "evaluate a checkpoint against a manifest");
    auto* predict = app.add_subcommand("predict", "run one image through a checkpoint");
    auto* selftest = app.add_subcommand("selftest", "quick internal consistency checks");
    for (auto* cmd : {prepare, train, eval, predict}) add_common(cmd, args);
    prepare->add_option("--synth", args.synth,
                        "generate this many seeded synthetic samples instead of reading "
                        "an existing dataset");
    prepare->add_option("--synth-size", args.synth_size, "synthetic image extent");
    eval->add_option("--checkpoint", args.checkpoint)->required();
    predict->add_option("--checkpoint", args.checkpoint)->required();
    predict->add_option("--image", args.image)->required();
    predict->add_option("--out-prefix", args.out_prefix)->required();
    selftest->add_option("--seed", args.seed)->each(
        [&args](const std::string&) { args.seed_given = true; });

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : 2;
    }

    try {
        if (selftest->parsed()) {
            nucleo::cmd_selftest(args.seed_given ? static_cast<std::uint64_t>(args.seed) : 1);
            std::cout << "selftest passed\n";
            return 0;
        }
        nucleo::RunConfig cfg = build_config(args);
        if (prepare->parsed()) {
            if (args.synth > 0) {
                const int size = args.synth_size > 0 ? static_cast<int>(args.synth_size)
                                 : cfg.task == nucleo::Task::detection ? 96
                                                                       : 64;
                cfg.manifest = nucleo::write_synthetic_dataset(
                    cfg.task, static_cast<int>(args.synth), size, cfg.seed,
                    cfg.out_dir + "/dataset");
                std::cout << "synthetic dataset written to " << cfg.manifest << "\n";
            }
            nucleo::cmd_prepare(cfg);
            std::cout << "store written to " << cfg.out_dir << "\n";
        } else if (train->parsed()) {
            const auto res = nucleo::cmd_train(cfg);
            std::cout << "trained " << res.history.size() << " epochs, best metric "
                      << res.best_metric << ", checkpoint " << res.best_checkpoint << "\n";
        } else if (eval->parsed()) {
            const std::string manifest = cfg.manifest;
            if (manifest.empty()) throw nucleo::SpecError("eval requires --manifest");
            std::cout << nucleo::cmd_eval(cfg, args.checkpoint, manifest).to_json() << "\n";
        } else if (predict->parsed()) {
            nucleo::cmd_predict(cfg, args.checkpoint, args.image, args.out_prefix);
        }
        return 0;
    } catch (const nucleo::SpecError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const nucleo::ShapeError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const nucleo::DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 3;
    } catch (const nucleo::CheckpointError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 3;
    } catch (const nucleo::NumericError& e) {
        std::cerr << "numeric failure: " << e.what() << "\n";
        return 4;
    }
}
