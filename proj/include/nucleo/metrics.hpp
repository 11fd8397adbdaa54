#pragma once

#include <optional>
#include <string>
#include <vector>

#include "nucleo/pipeline.hpp"

namespace nucleo {

double accuracy(const std::vector<std::size_t>& preds, const std::vector<std::size_t>& labels);

// Unweighted mean of per-class F1 from the confusion matrix.
double macro_f1(const std::vector<std::size_t>& preds, const std::vector<std::size_t>& labels,
                std::size_t num_classes);

struct AucResult {
    std::vector<double> per_class;  // NaN where the class is degenerate
    double macro = 0.0;             // mean over defined classes
};

// One-vs-rest AUC via the rank statistic, ties counted half. `scores` is
// n x num_classes, row-major.
AucResult roc_auc(const std::vector<double>& scores, const std::vector<std::size_t>& labels,
                  std::size_t num_classes);

// Local maxima over a (2*min_distance+1)^2 window with value >= threshold,
// greedily suppressed in descending value order.
std::vector<Dot> detect_peaks(const DensitySurface& d, double threshold, int min_distance);

struct DetectionMatchReport {
    std::size_t tp = 0, fp = 0, fn = 0;
    double precision = 0.0, recall = 0.0, f1 = 0.0;
    struct Match {
        Dot pred, gt;
        double distance;
    };
    std::vector<Match> matches;
};

enum class MatchStrategy { greedy, optimal };

// Greedy matching by ascending pairwise distance among pairs within radius;
// each side matches at most once. `optimal` solves the max-cardinality
// min-distance assignment exhaustively (small instances only).
DetectionMatchReport match_detections(const std::vector<Dot>& pred, const std::vector<Dot>& gt,
                                      double radius = 6.0,
                                      MatchStrategy strategy = MatchStrategy::greedy);

struct MetricReport {
    std::string task;
    std::string model;
    std::optional<double> dc, mse, accuracy, macro_f1, auc, precision, recall, f1;
    std::size_t n_samples = 0;
    std::uint64_t seed = 0;

    std::string to_json() const;
};

}  // namespace nucleo
