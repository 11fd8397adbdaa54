#pragma once

#include "nucleo/checkpoint.hpp"
#include "nucleo/losses.hpp"
#include "nucleo/metrics.hpp"
#include "nucleo/models.hpp"
#include "nucleo/optim.hpp"
#include "nucleo/synthetic.hpp"

namespace nucleo {

// One training/evaluation run. Defaults follow the per-task training setups
// (classification: SGD lr 0.001, momentum 0.9, weight decay 1e-4, 100 epochs,
// batch 32; segmentation: Adam lr 2e-4, 250 epochs, batch 16; detection:
// Adam lr 2e-4, 500 epochs, batch 64). Precedence: flags > config file >
// defaults.
struct RunConfig {
    Task task = Task::classification;
    Kind kind = Kind::dcrn;
    int t = 2;
    Sharing sharing = Sharing::shared;
    std::vector<std::size_t> channel_plan;  // empty = kind default
    std::size_t growth_rate = 5;
    std::size_t blocks = 4;
    std::size_t layers_per_block = 3;
    OptimConfig optim;
    std::string loss;  // empty = task default (cross_entropy | dice | mse)
    std::size_t epochs = 100;
    std::size_t batch_size = 32;
    std::uint64_t seed = 1;
    double sigma = 2.0;
    int patch_size = 32;
    int patches_per_image = 200;
    double split_frac = 0.8;
    double threshold = -1.0;  // <= 0 derives half the single-dot peak height
    // density targets train at this multiple of their physical scale; raw
    // values near 1/(2 pi sigma^2) are far below the initialization scale of
    // the network and converge slowly. Predictions are divided back down.
    double density_scale = 100.0;
    int min_distance = 3;
    double match_radius = 6.0;
    std::string manifest;
    std::string out_dir = ".";

    static RunConfig defaults(Task task);
    ModelSpec model_spec() const;
    double peak_threshold() const;  // resolved detection threshold
    void validate() const;
};

void apply_config_file(RunConfig& cfg, const std::string& path);

struct EpochLog {
    std::size_t epoch = 0;
    double train_loss = 0.0, val_loss = 0.0, metric = 0.0;
};

struct TrainResult {
    std::vector<EpochLog> history;
    double best_metric = 0.0;
    std::string best_checkpoint;
};

// Writes the patch store (patches, targets, index.json) under out_dir.
// Re-running with the same config is byte-identical.
void cmd_prepare(const RunConfig& cfg);

// Trains on the prepared store in out_dir; writes train_log.csv, last.ckpt,
// and the best-by-validation best.ckpt. Throws NumericError on a non-finite
// loss, leaving the last good checkpoints on disk.
TrainResult cmd_train(const RunConfig& cfg);

// Evaluates a checkpoint against a manifest of full-size samples. Pure: no
// files are modified.
MetricReport cmd_eval(const RunConfig& cfg, const std::string& checkpoint,
                      const std::string& manifest_path);

// Single-image inference. Classification prints class probabilities and
// writes <out_prefix>.json; segmentation writes <out_prefix>_mask.png at the
// input dimensions; detection writes the density surface, a rendered density
// PNG, detected dots, and a dot overlay PNG.
void cmd_predict(const RunConfig& cfg, const std::string& checkpoint,
                 const std::string& image_path, const std::string& out_prefix);

// Quick internal consistency checks; throws on the first failure.
void cmd_selftest(std::uint64_t seed);

// Writes a seeded synthetic dataset (images, targets, manifest.json) for the
// task into dir and returns the manifest path. Classification gets size x
// size texture patches labeled by family, segmentation blob images with
// masks, detection dotted fields with dot lists.
std::string write_synthetic_dataset(Task task, int n, int size, std::uint64_t seed,
                                    const std::string& dir);

// Patch-wise full-image inference for the single-channel tasks: grid patches
// with reflect padding, one forward pass per batch, stitched back to the
// source extent.
std::vector<double> predict_plane(const Model& model, const Image& img, int patch_size);

// Class probabilities for one image (softmax over the class axis).
std::vector<double> predict_probs(const Model& model, const Image& img);

}  // namespace nucleo
