#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "knnue/core.hpp"

namespace knnue::metrics {

struct ScoredPrediction {
    double confidence = 0.0;
    bool correct = false;
};

namespace detail {

inline void check_preds(std::span<const ScoredPrediction> preds) {
    require(!preds.empty(), ErrorKind::empty_input, "metric over empty prediction set");
    for (const auto& p : preds) {
        require(std::isfinite(p.confidence) && p.confidence >= 0.0 && p.confidence <= 1.0, ErrorKind::invalid_argument,
                "confidence must be finite and in [0, 1]");
    }
}

// Bin b covers (b/B, (b+1)/B]; 0.0 lands in bin 0.
inline std::size_t bin_of(double confidence, std::size_t bins) {
    const double b = static_cast<double>(bins);
    auto idx = static_cast<std::ptrdiff_t>(std::ceil(confidence * b)) - 1;
    idx = std::clamp<std::ptrdiff_t>(idx, 0, static_cast<std::ptrdiff_t>(bins) - 1);
    while (idx > 0 && confidence <= static_cast<double>(idx) / b) --idx;
    while (idx + 1 < static_cast<std::ptrdiff_t>(bins) && confidence > static_cast<double>(idx + 1) / b) ++idx;
    return static_cast<std::size_t>(idx);
}

struct BinStats {
    std::size_t count = 0;
    double correct = 0.0;
    double confidence = 0.0;
};

inline std::vector<BinStats> binned(std::span<const ScoredPrediction> preds, std::size_t bins) {
    require(bins >= 1, ErrorKind::invalid_argument, "number of bins must be >= 1");
    std::vector<BinStats> stats(bins);
    for (const auto& p : preds) {
        auto& s = stats[bin_of(p.confidence, bins)];
        ++s.count;
        s.correct += p.correct ? 1.0 : 0.0;
        s.confidence += p.confidence;
    }
    return stats;
}

// P(pos > neg) + 0.5 P(pos == neg) via average ranks.
inline double mann_whitney(std::span<const double> pos, std::span<const double> neg) {
    struct Item {
        double score;
        bool positive;
    };
    std::vector<Item> all;
    all.reserve(pos.size() + neg.size());
    for (double s : pos) all.push_back({s, true});
    for (double s : neg) all.push_back({s, false});
    std::sort(all.begin(), all.end(), [](const Item& a, const Item& b) { return a.score < b.score; });
    double rank_sum = 0.0;
    std::size_t i = 0;
    while (i < all.size()) {
        std::size_t j = i;
        while (j < all.size() && all[j].score == all[i].score) ++j;
        const double avg_rank = 0.5 * static_cast<double>(i + 1 + j);  // ranks i+1..j
        for (std::size_t t = i; t < j; ++t)
            if (all[t].positive) rank_sum += avg_rank;
        i = j;
    }
    const double np = static_cast<double>(pos.size());
    const double nn = static_cast<double>(neg.size());
    return (rank_sum - np * (np + 1.0) / 2.0) / (np * nn);
}

// Step-wise average precision: sum over distinct thresholds of (R_k - R_{k-1}) * P_k.
inline double average_precision(std::span<const double> pos, std::span<const double> neg) {
    struct Item {
        double score;
        bool positive;
    };
    std::vector<Item> all;
    for (double s : pos) all.push_back({s, true});
    for (double s : neg) all.push_back({s, false});
    std::sort(all.begin(), all.end(), [](const Item& a, const Item& b) { return a.score > b.score; });
    double tp = 0.0, fp = 0.0, prev_recall = 0.0, ap = 0.0;
    const double total_pos = static_cast<double>(pos.size());
    std::size_t i = 0;
    while (i < all.size()) {
        std::size_t j = i;
        while (j < all.size() && all[j].score == all[i].score) {
            (all[j].positive ? tp : fp) += 1.0;
            ++j;
        }
        const double recall = tp / total_pos;
        const double precision = tp / (tp + fp);
        ap += (recall - prev_recall) * precision;
        prev_recall = recall;
        i = j;
    }
    return ap;
}

}  // namespace detail

/// Expected calibration error over B equal-width bins.
inline double ece(std::span<const ScoredPrediction> preds, std::size_t bins = 10) {
    detail::check_preds(preds);
    const double n = static_cast<double>(preds.size());
    double total = 0.0;
    for (const auto& s : detail::binned(preds, bins)) {
        if (s.count == 0) continue;
        const double c = static_cast<double>(s.count);
        total += (c / n) * std::abs(s.correct / c - s.confidence / c);
    }
    return total;
}

/// Maximum calibration error: largest per-bin |accuracy - confidence| over nonempty bins.
inline double mce(std::span<const ScoredPrediction> preds, std::size_t bins = 10) {
    detail::check_preds(preds);
    double worst = 0.0;
    for (const auto& s : detail::binned(preds, bins)) {
        if (s.count == 0) continue;
        const double c = static_cast<double>(s.count);
        worst = std::max(worst, std::abs(s.correct / c - s.confidence / c));
    }
    return worst;
}

/// Area under the risk-coverage curve: sum_i (errors among the i most confident) / (i * n).
/// Equal confidences keep input order.
inline double aurc(std::span<const ScoredPrediction> preds) {
    detail::check_preds(preds);
    std::vector<std::size_t> order(preds.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return preds[a].confidence > preds[b].confidence; });
    const double n = static_cast<double>(preds.size());
    double errors = 0.0, area = 0.0;
    for (std::size_t i = 0; i < order.size(); ++i) {
        errors += preds[order[i]].correct ? 0.0 : 1.0;
        area += errors / (static_cast<double>(i + 1) * n);
    }
    return area;
}

/// Optimal AURC for error rate r: r + (1 - r) ln(1 - r), with the r -> 1 limit of 1.
inline double optimal_aurc(double error_rate) {
    if (error_rate <= 0.0) return 0.0;
    if (error_rate >= 1.0) return 1.0;
    return error_rate + (1.0 - error_rate) * std::log(1.0 - error_rate);
}

/// Excess AURC, reported x1000.
inline double e_aurc(std::span<const ScoredPrediction> preds) {
    const double area = aurc(preds);
    double errors = 0.0;
    for (const auto& p : preds) errors += p.correct ? 0.0 : 1.0;
    return (area - optimal_aurc(errors / static_cast<double>(preds.size()))) * 1000.0;
}

/// AUROC with correct predictions as positives; nullopt when only one class is present.
inline std::optional<double> auroc_selective(std::span<const ScoredPrediction> preds) {
    detail::check_preds(preds);
    std::vector<double> pos, neg;
    for (const auto& p : preds) (p.correct ? pos : neg).push_back(p.confidence);
    if (pos.empty() || neg.empty()) return std::nullopt;
    return detail::mann_whitney(pos, neg);
}

struct OodMetrics {
    double fpr_at_95 = 0.0;
    double auroc = 0.0;
    double aupr_in = 0.0;
    double aupr_out = 0.0;
};

/// OOD detection with ID as positive under the rule "ID if score >= threshold". FPR@95 is
/// taken at the highest threshold whose TPR reaches 0.95.
inline OodMetrics ood_metrics(std::span<const double> id_scores, std::span<const double> ood_scores) {
    require(!id_scores.empty() && !ood_scores.empty(), ErrorKind::empty_input, "OOD metrics need both ID and OOD scores");
    require(all_finite(id_scores) && all_finite(ood_scores), ErrorKind::non_finite, "OOD scores must be finite");

    OodMetrics m;
    std::vector<double> id_sorted(id_scores.begin(), id_scores.end());
    std::sort(id_sorted.begin(), id_sorted.end(), std::greater<>());
    // Smallest count c with c / n >= 0.95, in integer arithmetic.
    const std::size_t n_id = id_sorted.size();
    const std::size_t needed = (95 * n_id + 99) / 100;
    const double threshold = id_sorted[std::max<std::size_t>(needed, 1) - 1];
    const auto false_pos = std::count_if(ood_scores.begin(), ood_scores.end(), [&](double s) { return s >= threshold; });
    m.fpr_at_95 = static_cast<double>(false_pos) / static_cast<double>(ood_scores.size());

    m.auroc = detail::mann_whitney(id_scores, ood_scores);
    m.aupr_in = detail::average_precision(id_scores, ood_scores);
    std::vector<double> neg_id, neg_ood;
    for (double s : id_scores) neg_id.push_back(-s);
    for (double s : ood_scores) neg_ood.push_back(-s);
    m.aupr_out = detail::average_precision(neg_ood, neg_id);
    return m;
}

inline nlohmann::json to_json(const OodMetrics& m) {
    return {{"fpr_at_95", m.fpr_at_95}, {"auroc", m.auroc}, {"aupr_in", m.aupr_in}, {"aupr_out", m.aupr_out}};
}

struct LatencyStats {
    double mean_s = 0.0;
    double std_s = 0.0;
    std::size_t repeats = 0;
    std::size_t threads = 1;
    std::vector<double> samples_s;
};

inline nlohmann::json to_json(const LatencyStats& l) {
    return {{"mean_s", l.mean_s}, {"std_s", l.std_s}, {"repeats", l.repeats}, {"threads", l.threads},
            {"samples_s", l.samples_s}};
}

/// Wall-clock timing of `pass` (one full pass over the query set), mean and sample std
/// over `repeats` runs.
template <typename Pass>
LatencyStats bench_latency(Pass&& pass, std::size_t query_count, std::size_t repeats, std::size_t threads = 1) {
    require(query_count > 0, ErrorKind::empty_input, "latency benchmark needs at least one query");
    require(repeats >= 3, ErrorKind::invalid_argument, "latency benchmark needs >= 3 repeats");
    LatencyStats stats;
    stats.repeats = repeats;
    stats.threads = threads;
    for (std::size_t r = 0; r < repeats; ++r) {
        const auto start = std::chrono::steady_clock::now();
        pass();
        const std::chrono::duration<double> elapsed = std::chrono::steady_clock::now() - start;
        stats.samples_s.push_back(elapsed.count());
    }
    stats.mean_s = std::accumulate(stats.samples_s.begin(), stats.samples_s.end(), 0.0) / static_cast<double>(repeats);
    double ss = 0.0;
    for (double s : stats.samples_s) ss += (s - stats.mean_s) * (s - stats.mean_s);
    stats.std_s = std::sqrt(ss / static_cast<double>(repeats - 1));
    return stats;
}

/// Everything reported for one (method, index config, split).
struct MetricsReport {
    std::string split;
    std::string method;
    std::size_t n = 0;
    std::size_t bins = 10;
    double accuracy = 0.0;
    double ece = 0.0;
    double mce = 0.0;
    std::optional<double> auroc;
    double aurc = 0.0;
    double e_aurc = 0.0;
    std::optional<OodMetrics> ood;
    std::optional<LatencyStats> latency;
    std::optional<double> coverage;
};

inline MetricsReport evaluate(std::span<const ScoredPrediction> preds, std::size_t bins = 10) {
    MetricsReport r;
    r.n = preds.size();
    r.bins = bins;
    double correct = 0.0;
    for (const auto& p : preds) correct += p.correct ? 1.0 : 0.0;
    r.accuracy = correct / static_cast<double>(preds.size());
    r.ece = ece(preds, bins);
    r.mce = mce(preds, bins);
    r.auroc = auroc_selective(preds);
    r.aurc = aurc(preds);
    r.e_aurc = e_aurc(preds);
    return r;
}

inline nlohmann::json to_json(const MetricsReport& r) {
    nlohmann::json j = {{"split", r.split}, {"method", r.method}, {"n", r.n},        {"B", r.bins},
                        {"accuracy", r.accuracy}, {"ece", r.ece}, {"mce", r.mce},   {"aurc", r.aurc},
                        {"e_aurc", r.e_aurc}};
    j["auroc"] = r.auroc ? nlohmann::json(*r.auroc) : nlohmann::json(nullptr);
    j["ood"] = r.ood ? to_json(*r.ood) : nlohmann::json(nullptr);
    j["latency"] = r.latency ? to_json(*r.latency) : nlohmann::json(nullptr);
    j["coverage"] = r.coverage ? nlohmann::json(*r.coverage) : nlohmann::json(nullptr);
    return j;
}

}  // namespace knnue::metrics
