#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include <json.hpp>

#include "nucleo/run.hpp"

using namespace nucleo;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const char* name) {
    const fs::path p = fs::temp_directory_path() / name;
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

std::string slurp(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    REQUIRE(f);
    std::ostringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

// dataset builders: tiny seeded synthetic sets written as real files

std::string write_cls_dataset(const fs::path& dir, int images, std::uint64_t seed) {
    nlohmann::json m;
    m["task"] = "classification";
    auto& samples = m["samples"] = nlohmann::json::array();
    for (int i = 0; i < images; ++i) {
        const auto s = make_texture_sample(64, i % 4, seed + i);
        const std::string name = "img" + std::to_string(i) + ".png";
        write_png((dir / name).string(), s.image);
        samples.push_back({{"image", name}, {"label", s.label}});
    }
    const auto path = (dir / "manifest.json").string();
    std::ofstream(path) << m.dump(2);
    return path;
}

std::string write_seg_dataset(const fs::path& dir, int images, std::uint64_t seed) {
    nlohmann::json m;
    m["task"] = "segmentation";
    auto& samples = m["samples"] = nlohmann::json::array();
    for (int i = 0; i < images; ++i) {
        const auto s = make_blob_sample(32, 32, seed + i);
        const std::string img = "img" + std::to_string(i) + ".png";
        const std::string mask = "mask" + std::to_string(i) + ".png";
        write_png((dir / img).string(), s.image);
        write_png((dir / mask).string(), s.mask);
        samples.push_back({{"image", img}, {"mask", mask}});
    }
    const auto path = (dir / "manifest.json").string();
    std::ofstream(path) << m.dump(2);
    return path;
}

std::string write_det_dataset(const fs::path& dir, int images, std::uint64_t seed) {
    nlohmann::json m;
    m["task"] = "detection";
    auto& samples = m["samples"] = nlohmann::json::array();
    for (int i = 0; i < images; ++i) {
        const auto s = make_dot_sample(32, 32, 3, 6, seed + i);
        const std::string img = "img" + std::to_string(i) + ".png";
        const std::string dots = "dots" + std::to_string(i) + ".csv";
        write_png((dir / img).string(), s.image);
        write_dots_csv((dir / dots).string(), s.dots);
        samples.push_back({{"image", img}, {"dots", dots}});
    }
    const auto path = (dir / "manifest.json").string();
    std::ofstream(path) << m.dump(2);
    return path;
}

RunConfig tiny_cls_config() {
    RunConfig cfg = RunConfig::defaults(Task::classification);
    cfg.blocks = 2;
    cfg.layers_per_block = 1;
    cfg.growth_rate = 2;
    cfg.epochs = 2;
    cfg.batch_size = 8;
    cfg.patches_per_image = 12;
    cfg.split_frac = 1.0;
    cfg.seed = 5;
    return cfg;
}

RunConfig tiny_seg_config() {
    RunConfig cfg = RunConfig::defaults(Task::segmentation);
    cfg.channel_plan = {1, 4, 6, 4, 1};
    cfg.patch_size = 32;
    cfg.epochs = 2;
    cfg.batch_size = 4;
    cfg.split_frac = 1.0;
    cfg.seed = 5;
    return cfg;
}

std::map<std::string, std::string> dir_bytes(const fs::path& dir) {
    std::map<std::string, std::string> out;
    for (const auto& e : fs::directory_iterator(dir))
        if (e.is_regular_file()) out[e.path().filename().string()] = slurp(e.path());
    return out;
}

}  // namespace

TEST_CASE("prepare writes the expected patch counts and is byte-identical on re-run") {
    const fs::path data = fresh_dir("nucleo_run_cls_data");
    const std::string manifest = write_cls_dataset(data, 1, 11);

    RunConfig cfg = tiny_cls_config();
    cfg.manifest = manifest;
    cfg.out_dir = fresh_dir("nucleo_run_cls_store_a").string();
    cmd_prepare(cfg);
    const Manifest store =
        read_manifest((fs::path(cfg.out_dir) / "index.json").string());
    CHECK(store.entries.size() == 12);  // one image, patches_per_image entries
    for (const auto& e : store.entries) CHECK(e.label >= 0);

    RunConfig cfg2 = cfg;
    cfg2.out_dir = fresh_dir("nucleo_run_cls_store_b").string();
    cmd_prepare(cfg2);
    CHECK(dir_bytes(cfg.out_dir) == dir_bytes(cfg2.out_dir));
}

TEST_CASE("prepare covers detection images with a reflect-padded grid") {
    const fs::path data = fresh_dir("nucleo_run_det_data");
    nlohmann::json m;
    m["task"] = "detection";
    const auto s = make_dot_sample(50, 70, 4, 6, 3);
    write_png((data / "img.png").string(), s.image);
    write_dots_csv((data / "dots.csv").string(), s.dots);
    m["samples"] = {{{"image", "img.png"}, {"dots", "dots.csv"}}};
    std::ofstream((data / "manifest.json").string()) << m.dump(2);

    RunConfig cfg = RunConfig::defaults(Task::detection);
    cfg.channel_plan = {1, 4, 6, 4, 1};
    cfg.patch_size = 32;
    cfg.manifest = (data / "manifest.json").string();
    cfg.out_dir = fresh_dir("nucleo_run_det_store").string();
    cmd_prepare(cfg);
    const Manifest store =
        read_manifest((fs::path(cfg.out_dir) / "index.json").string());
    CHECK(store.entries.size() == 6);  // ceil(50/32) x ceil(70/32)
    for (const auto& e : store.entries) {
        CHECK(!e.density.empty());
        const DensitySurface d =
            read_density((fs::path(cfg.out_dir) / e.density).string());
        CHECK(d.h == 32);
        CHECK(d.w == 32);
    }
}

TEST_CASE("training logs per-epoch rows and repeats bit-identically under a fixed seed") {
    const fs::path data = fresh_dir("nucleo_run_seg_data");
    const std::string manifest = write_seg_dataset(data, 2, 21);

    auto run = [&](const char* store_name) {
        RunConfig cfg = tiny_seg_config();
        cfg.manifest = manifest;
        cfg.out_dir = fresh_dir(store_name).string();
        cmd_prepare(cfg);
        const TrainResult res = cmd_train(cfg);
        REQUIRE(res.history.size() == 2);
        return std::pair{cfg.out_dir, res};
    };
    const auto [dir_a, res_a] = run("nucleo_run_seg_store_a");
    const auto [dir_b, res_b] = run("nucleo_run_seg_store_b");
    CHECK(slurp(fs::path(dir_a) / "train_log.csv") == slurp(fs::path(dir_b) / "train_log.csv"));
    CHECK(slurp(fs::path(dir_a) / "best.ckpt") == slurp(fs::path(dir_b) / "best.ckpt"));
    CHECK(res_a.best_metric == res_b.best_metric);
    CHECK(fs::exists(fs::path(dir_a) / "last.ckpt"));

    const std::string log = slurp(fs::path(dir_a) / "train_log.csv");
    CHECK(log.rfind("epoch,train_loss,val_loss,metric\n", 0) == 0);
}

TEST_CASE("eval reports task metrics and leaves the inputs untouched") {
    const fs::path data = fresh_dir("nucleo_run_eval_data");
    const std::string manifest = write_seg_dataset(data, 2, 31);
    RunConfig cfg = tiny_seg_config();
    cfg.manifest = manifest;
    cfg.out_dir = fresh_dir("nucleo_run_eval_store").string();
    cmd_prepare(cfg);
    cmd_train(cfg);

    const auto before = dir_bytes(data);
    const auto store_before = dir_bytes(cfg.out_dir);
    const MetricReport rep =
        cmd_eval(cfg, (fs::path(cfg.out_dir) / "best.ckpt").string(), manifest);
    CHECK(rep.task == "segmentation");
    CHECK(rep.model == "r2unet");
    REQUIRE(rep.dc.has_value());
    CHECK(*rep.dc >= 0.0);
    CHECK(*rep.dc <= 1.0);
    CHECK(rep.n_samples == 2);
    CHECK(dir_bytes(data) == before);
    CHECK(dir_bytes(cfg.out_dir) == store_before);
}

TEST_CASE("classification eval fills accuracy, macro f1, and auc") {
    const fs::path data = fresh_dir("nucleo_run_cls_eval_data");
    const std::string manifest = write_cls_dataset(data, 4, 41);
    RunConfig cfg = tiny_cls_config();
    cfg.manifest = manifest;
    cfg.patches_per_image = 4;
    cfg.out_dir = fresh_dir("nucleo_run_cls_eval_store").string();
    cmd_prepare(cfg);
    cmd_train(cfg);
    const MetricReport rep =
        cmd_eval(cfg, (fs::path(cfg.out_dir) / "best.ckpt").string(), manifest);
    REQUIRE(rep.accuracy.has_value());
    REQUIRE(rep.macro_f1.has_value());
    REQUIRE(rep.auc.has_value());
    CHECK(*rep.accuracy >= 0.0);
    CHECK(*rep.auc <= 1.0);
}

TEST_CASE("predict writes the task artifacts at the input dimensions") {
    const fs::path data = fresh_dir("nucleo_run_pred_data");
    const std::string manifest = write_seg_dataset(data, 1, 51);
    RunConfig cfg = tiny_seg_config();
    cfg.manifest = manifest;
    cfg.out_dir = fresh_dir("nucleo_run_pred_store").string();
    cmd_prepare(cfg);
    cmd_train(cfg);

    const fs::path out = fresh_dir("nucleo_run_pred_out");
    const std::string prefix = (out / "sample").string();
    cmd_predict(cfg, (fs::path(cfg.out_dir) / "best.ckpt").string(),
                (data / "img0.png").string(), prefix);
    const Image mask = read_png(prefix + "_mask.png");
    CHECK(mask.h == 32);
    CHECK(mask.w == 32);
    for (auto p : mask.px) CHECK((p == 0 || p == 255));

    // detection artifacts from the same input via a density model
    RunConfig det = RunConfig::defaults(Task::detection);
    det.channel_plan = {1, 4, 6, 4, 1};
    det.patch_size = 32;
    det.epochs = 1;
    det.batch_size = 4;
    det.split_frac = 1.0;
    det.seed = 5;
    const fs::path ddata = fresh_dir("nucleo_run_pred_det_data");
    det.manifest = write_det_dataset(ddata, 1, 61);
    det.out_dir = fresh_dir("nucleo_run_pred_det_store").string();
    cmd_prepare(det);
    cmd_train(det);
    const std::string dprefix = (out / "dots").string();
    cmd_predict(det, (fs::path(det.out_dir) / "best.ckpt").string(),
                (ddata / "img0.png").string(), dprefix);
    CHECK(fs::exists(dprefix + "_density.nucd"));
    CHECK(fs::exists(dprefix + "_density.png"));
    CHECK(fs::exists(dprefix + "_dots.csv"));
    const Image overlay = read_png(dprefix + "_overlay.png");
    CHECK(overlay.c == 3);
    CHECK(overlay.h == 32);
}

TEST_CASE("config files override defaults and reject unknown keys") {
    const fs::path dir = fresh_dir("nucleo_run_cfg");
    const std::string path = (dir / "cfg.json").string();
    std::ofstream(path) << R"({"task":"segmentation","epochs":7,"optimizer":{"lr":0.5},)"
                        << R"("channel_plan":[1,4,6,4,1],"patch_size":32})";
    RunConfig cfg = RunConfig::defaults(Task::classification);
    apply_config_file(cfg, path);
    CHECK(cfg.task == Task::segmentation);
    CHECK(cfg.kind == Kind::r2unet);  // task switch re-derives the task defaults
    CHECK(cfg.epochs == 7);
    CHECK(cfg.optim.lr == 0.5);
    CHECK(cfg.batch_size == 16);  // segmentation default survives
    cfg.validate();

    std::ofstream(path) << R"({"epochz":7})";
    CHECK_THROWS_AS(apply_config_file(cfg, path), SpecError);
    std::ofstream(path) << R"({"epochs":"many"})";
    CHECK_THROWS_AS(apply_config_file(cfg, path), SpecError);
    std::ofstream(path) << "{broken";
    CHECK_THROWS_AS(apply_config_file(cfg, path), DataError);
}

TEST_CASE("invalid run configurations are rejected up front") {
    RunConfig cfg = RunConfig::defaults(Task::segmentation);
    cfg.patch_size = 30;  // not divisible by the pooling factor
    CHECK_THROWS_AS(cfg.validate(), SpecError);
    cfg = RunConfig::defaults(Task::classification);
    cfg.epochs = 0;
    CHECK_THROWS_AS(cfg.validate(), SpecError);
    cfg = RunConfig::defaults(Task::detection);
    cfg.sigma = -1.0;
    CHECK_THROWS_AS(cfg.validate(), SpecError);
    cfg = RunConfig::defaults(Task::classification);
    cfg.loss = "dice";
    cfg.out_dir = fresh_dir("nucleo_run_badloss").string();
    CHECK_THROWS_AS(cmd_train(cfg), std::exception);
}

TEST_CASE("prepare rejects manifests for a different task") {
    const fs::path data = fresh_dir("nucleo_run_mismatch_data");
    const std::string manifest = write_seg_dataset(data, 1, 71);
    RunConfig cfg = tiny_cls_config();
    cfg.manifest = manifest;
    cfg.out_dir = fresh_dir("nucleo_run_mismatch_store").string();
    CHECK_THROWS_AS(cmd_prepare(cfg), SpecError);
}
