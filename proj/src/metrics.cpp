#include "nucleo/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <limits>

#include <json.hpp>

namespace nucleo {

double accuracy(const std::vector<std::size_t>& preds, const std::vector<std::size_t>& labels) {
    if (preds.size() != labels.size() || preds.empty())
        throw DataError("accuracy: prediction/label size mismatch");
    std::size_t correct = 0;
    for (std::size_t i = 0; i < preds.size(); ++i) correct += preds[i] == labels[i];
    return static_cast<double>(correct) / static_cast<double>(preds.size());
}

double macro_f1(const std::vector<std::size_t>& preds, const std::vector<std::size_t>& labels,
                std::size_t num_classes) {
    if (preds.size() != labels.size() || preds.empty())
        throw DataError("macro_f1: prediction/label size mismatch");
    std::vector<std::size_t> tp(num_classes, 0), fp(num_classes, 0), fn(num_classes, 0);
    for (std::size_t i = 0; i < preds.size(); ++i) {
        if (preds[i] == labels[i]) {
            ++tp[preds[i]];
        } else {
            ++fp[preds[i]];
            ++fn[labels[i]];
        }
    }
    double acc = 0.0;
    for (std::size_t c = 0; c < num_classes; ++c) {
        const double denom = static_cast<double>(2 * tp[c] + fp[c] + fn[c]);
        acc += denom == 0.0 ? 0.0 : 2.0 * static_cast<double>(tp[c]) / denom;
    }
    return acc / static_cast<double>(num_classes);
}

AucResult roc_auc(const std::vector<double>& scores, const std::vector<std::size_t>& labels,
                  std::size_t num_classes) {
    const std::size_t n = labels.size();
    if (scores.size() != n * num_classes)
        throw DataError("roc_auc: score matrix size mismatch");
    AucResult res;
    res.per_class.assign(num_classes, std::numeric_limits<double>::quiet_NaN());
    double sum = 0.0;
    std::size_t defined = 0;
    for (std::size_t c = 0; c < num_classes; ++c) {
        std::vector<std::pair<double, bool>> v;  // (score, is_positive)
        std::size_t pos = 0;
        for (std::size_t i = 0; i < n; ++i) {
            const bool p = labels[i] == c;
            pos += p;
            v.emplace_back(scores[i * num_classes + c], p);
        }
        if (pos == 0 || pos == n) {
            std::cerr << "[nucleo] roc_auc: class " << c
                      << " has no positives or no negatives; AUC undefined, excluded from "
                         "the macro average\n";
            continue;
        }
        std::sort(v.begin(), v.end(),
                  [](const auto& a, const auto& b) { return a.first < b.first; });
        // rank statistic with average ranks over ties
        double rank_sum_pos = 0.0;
        std::size_t i = 0;
        while (i < v.size()) {
            std::size_t j = i;
            while (j < v.size() && v[j].first == v[i].first) ++j;
            const double avg_rank = 0.5 * static_cast<double>(i + 1 + j);  // 1-based
            for (std::size_t k = i; k < j; ++k)
                if (v[k].second) rank_sum_pos += avg_rank;
            i = j;
        }
        const double p = static_cast<double>(pos), q = static_cast<double>(n - pos);
        const double u = rank_sum_pos - p * (p + 1.0) / 2.0;
        res.per_class[c] = u / (p * q);
        sum += res.per_class[c];
        ++defined;
    }
    if (defined == 0) throw DataError("roc_auc: every class is degenerate");
    res.macro = sum / static_cast<double>(defined);
    return res;
}

std::vector<Dot> detect_peaks(const DensitySurface& d, double threshold, int min_distance) {
    if (threshold <= 0.0) throw DataError("detect_peaks: threshold must be > 0");
    struct Cand {
        double v;
        int y, x;
    };
    std::vector<Cand> cands;
    for (int y = 0; y < d.h; ++y)
        for (int x = 0; x < d.w; ++x) {
            const double v = d.at(y, x);
            if (v < threshold) continue;
            bool is_max = true;
            for (int dy = -min_distance; dy <= min_distance && is_max; ++dy)
                for (int dx = -min_distance; dx <= min_distance; ++dx) {
                    const int yy = y + dy, xx = x + dx;
                    if (yy < 0 || yy >= d.h || xx < 0 || xx >= d.w) continue;
                    if (d.at(yy, xx) > v) {
                        is_max = false;
                        break;
                    }
                }
            if (is_max) cands.push_back({v, y, x});
        }
    std::sort(cands.begin(), cands.end(), [](const Cand& a, const Cand& b) {
        if (a.v != b.v) return a.v > b.v;
        if (a.y != b.y) return a.y < b.y;
        return a.x < b.x;
    });
    std::vector<Dot> peaks;
    for (const Cand& c : cands) {
        bool suppressed = false;
        for (const Dot& p : peaks)
            if (std::abs(p.x - c.x) <= min_distance && std::abs(p.y - c.y) <= min_distance) {
                suppressed = true;
                break;
            }
        if (!suppressed) peaks.push_back({c.x, c.y});
    }
    return peaks;
}

namespace {

double dot_dist(const Dot& a, const Dot& b) {
    const double dx = a.x - b.x, dy = a.y - b.y;
    return std::sqrt(dx * dx + dy * dy);
}

void finish_report(DetectionMatchReport& r, std::size_t n_pred, std::size_t n_gt) {
    r.tp = r.matches.size();
    r.fp = n_pred - r.tp;
    r.fn = n_gt - r.tp;
    r.precision = r.tp + r.fp == 0 ? 0.0 : static_cast<double>(r.tp) / (r.tp + r.fp);
    r.recall = r.tp + r.fn == 0 ? 0.0 : static_cast<double>(r.tp) / (r.tp + r.fn);
    r.f1 = r.precision + r.recall == 0.0
               ? 0.0
               : 2.0 * r.precision * r.recall / (r.precision + r.recall);
}

// Exhaustive assignment: maximize match count, then minimize total distance.
void optimal_search(const std::vector<std::vector<std::pair<std::size_t, double>>>& adj,
                    std::size_t pi, std::vector<bool>& used,
                    std::vector<std::pair<std::size_t, std::size_t>>& cur, double cur_dist,
                    std::vector<std::pair<std::size_t, std::size_t>>& best, double& best_dist) {
    if (pi == adj.size()) {
        if (cur.size() > best.size() || (cur.size() == best.size() && cur_dist < best_dist)) {
            best = cur;
            best_dist = cur_dist;
        }
        return;
    }
    optimal_search(adj, pi + 1, used, cur, cur_dist, best, best_dist);  // leave pi unmatched
    for (const auto& [gi, dist] : adj[pi]) {
        if (used[gi]) continue;
        used[gi] = true;
        cur.emplace_back(pi, gi);
        optimal_search(adj, pi + 1, used, cur, cur_dist + dist, best, best_dist);
        cur.pop_back();
        used[gi] = false;
    }
}

}  // namespace

DetectionMatchReport match_detections(const std::vector<Dot>& pred, const std::vector<Dot>& gt,
                                      double radius, MatchStrategy strategy) {
    if (radius <= 0.0) throw DataError("match_detections: radius must be > 0");
    DetectionMatchReport r;
    if (strategy == MatchStrategy::greedy) {
        struct Pair {
            double d;
            std::size_t pi, gi;
        };
        std::vector<Pair> pairs;
        for (std::size_t pi = 0; pi < pred.size(); ++pi)
            for (std::size_t gi = 0; gi < gt.size(); ++gi) {
                const double dist = dot_dist(pred[pi], gt[gi]);
                if (dist <= radius) pairs.push_back({dist, pi, gi});
            }
        std::sort(pairs.begin(), pairs.end(), [](const Pair& a, const Pair& b) {
            if (a.d != b.d) return a.d < b.d;
            if (a.pi != b.pi) return a.pi < b.pi;
            return a.gi < b.gi;
        });
        std::vector<bool> pu(pred.size(), false), gu(gt.size(), false);
        for (const Pair& p : pairs) {
            if (pu[p.pi] || gu[p.gi]) continue;
            pu[p.pi] = gu[p.gi] = true;
            r.matches.push_back({pred[p.pi], gt[p.gi], p.d});
        }
    } else {
        std::vector<std::vector<std::pair<std::size_t, double>>> adj(pred.size());
        for (std::size_t pi = 0; pi < pred.size(); ++pi)
            for (std::size_t gi = 0; gi < gt.size(); ++gi) {
                const double dist = dot_dist(pred[pi], gt[gi]);
                if (dist <= radius) adj[pi].emplace_back(gi, dist);
            }
        std::vector<bool> used(gt.size(), false);
        std::vector<std::pair<std::size_t, std::size_t>> cur, best;
        double best_dist = std::numeric_limits<double>::infinity();
        optimal_search(adj, 0, used, cur, 0.0, best, best_dist);
        for (const auto& [pi, gi] : best)
            r.matches.push_back({pred[pi], gt[gi], dot_dist(pred[pi], gt[gi])});
    }
    finish_report(r, pred.size(), gt.size());
    return r;
}

std::string MetricReport::to_json() const {
    nlohmann::json j;
    j["task"] = task;
    j["model"] = model;
    auto put = [&](const char* key, const std::optional<double>& v) {
        if (v)
            j[key] = *v;
        else
            j[key] = nullptr;
    };
    put("dc", dc);
    put("mse", mse);
    put("accuracy", accuracy);
    put("macro_f1", macro_f1);
    put("auc", auc);
    put("precision", precision);
    put("recall", recall);
    put("f1", f1);
    j["n_samples"] = n_samples;
    j["seed"] = seed;
    return j.dump(2);
}

}  // namespace nucleo
