#pragma once

#include <cmath>
#include <numeric>
#include <vector>

#include "json.hpp"
#include "knnue/ann/index.hpp"
#include "knnue/calibration/softmax.hpp"
#include "knnue/optim.hpp"

namespace knnue::calib {

inline constexpr double kWeightFloor = 1e-6;
inline constexpr std::size_t kDefaultK = 32;

struct KnnUeBounds {
    double alpha_max = 10.0;
    double tau_min = 1e-3;
    double tau_max = 1e3;
    double lambda_max = 10.0;
    double b_max = 10.0;

    nlohmann::json to_json() const {
        return {{"alpha", {0.0, alpha_max}}, {"tau", {tau_min, tau_max}}, {"lambda", {0.0, lambda_max}}, {"b", {0.0, b_max}}};
    }
};

struct KnnUeParams {
    double alpha = 1.0;
    double tau = 1.0;
    double lambda = 1.0;
    double b = 0.0;
    std::size_t k = kDefaultK;

    void validate() const {
        require(alpha >= 0.0 && lambda >= 0.0 && b >= 0.0, ErrorKind::invalid_argument, "alpha, lambda, b must be >= 0");
        require(tau > 0.0, ErrorKind::invalid_argument, "tau must be > 0");
        require(k >= 1, ErrorKind::invalid_argument, "K must be >= 1");
    }

    nlohmann::json to_json() const { return {{"alpha", alpha}, {"tau", tau}, {"lambda", lambda}, {"b", b}, {"K", k}}; }

    static KnnUeParams from_json(const nlohmann::json& j) {
        KnnUeParams p{j.at("alpha").get<double>(), j.at("tau").get<double>(), j.at("lambda").get<double>(),
                      j.at("b").get<double>(), j.at("K").get<std::size_t>()};
        p.validate();
        return p;
    }
};

/// Weight from raw neighbor distances and the count of neighbors sharing the predicted label:
///   W = (alpha / K) * sum_k exp(-d_k / tau) + lambda * (S / K + b), floored at 1e-6.
/// K is the number of distances supplied, so under-filled neighborhoods average over what
/// was actually returned.
inline double knnue_weight(std::span<const double> dists, std::size_t same_label, const KnnUeParams& params) {
    require(!dists.empty(), ErrorKind::invalid_argument, "kNN-UE weight needs K >= 1 neighbors");
    const double k = static_cast<double>(dists.size());
    double distance_term = 0.0;
    for (double d : dists) distance_term += std::exp(-d / params.tau);
    distance_term *= params.alpha / k;
    const double label_term = params.lambda * (static_cast<double>(same_label) / k + params.b);
    return std::max(distance_term + label_term, kWeightFloor);
}

/// Number of neighbors whose stored label equals `predicted`.
inline std::size_t same_label_count(const ann::Neighborhood& nbh, std::int32_t predicted,
                                    std::span<const std::int32_t> labels) {
    std::size_t s = 0;
    for (auto id : nbh.ids) s += labels[static_cast<std::size_t>(id)] == predicted ? 1 : 0;
    return s;
}

inline double knnue_weight(const ann::Neighborhood& nbh, std::int32_t predicted, std::span<const std::int32_t> labels,
                           const KnnUeParams& params) {
    require(nbh.size() > 0, ErrorKind::invalid_argument, "kNN-UE weight needs K >= 1 neighbors");
    require(nbh.size() == params.k || nbh.short_result, ErrorKind::dimension_mismatch,
            "neighborhood has " + std::to_string(nbh.size()) + " entries, params expect K=" + std::to_string(params.k));
    return knnue_weight(nbh.dists, same_label_count(nbh, predicted, labels), params);
}

inline std::vector<double> knnue_apply(std::span<const float> logits, double weight) {
    require(weight > 0.0, ErrorKind::invalid_argument, "kNN-UE weight must be positive");
    return scaled_softmax(logits, weight);
}

/// What kNN-UE needs from one dev/test instance: its neighbor distances and label agreement.
struct KnnFeatures {
    std::vector<double> dists;
    std::size_t same_label = 0;
};

inline std::vector<KnnFeatures> knn_features(const EvalSet& set, const std::vector<ann::Neighborhood>& neighborhoods,
                                             std::span<const std::int32_t> labels) {
    require(neighborhoods.size() == set.records.size(), ErrorKind::dimension_mismatch, "one neighborhood per record");
    std::vector<KnnFeatures> out(set.records.size());
    for (std::size_t i = 0; i < out.size(); ++i) {
        const auto predicted = argmax(set.records[i].logits);
        out[i] = {neighborhoods[i].dists, same_label_count(neighborhoods[i], predicted, labels)};
    }
    return out;
}

inline double knnue_nll(std::span<const EvalRecord> dev, const std::vector<KnnFeatures>& features,
                        const KnnUeParams& params) {
    double total = 0.0;
    for (std::size_t i = 0; i < dev.size(); ++i) {
        const double w = knnue_weight(features[i].dists, features[i].same_label, params);
        total += scaled_nll(dev[i].logits, w, dev[i].gold);
    }
    return total / static_cast<double>(dev.size());
}

struct KnnUeFit {
    KnnUeParams params;
    double dev_nll = 0.0;
    double default_start_nll = 0.0;  // NLL reached from the default initialization alone
    KnnUeBounds bounds;
    bool with_label = true;
};

struct KnnUeFitOptions {
    KnnUeBounds bounds;
    int grid_points = 5;  // per dimension for the warm-start grid; 0 disables it
};

/// Minimizes dev NLL over bounded (alpha, tau, lambda, b). Runs from the default start
/// (alpha=1, tau=mean dev neighbor distance, lambda=1, b=0) and from a grid warm start
/// (tau on a log grid), keeping the better optimum. Without the label term lambda and b
/// are pinned at 0.
inline KnnUeFit knnue_fit(std::span<const EvalRecord> dev, const std::vector<KnnFeatures>& features, std::size_t k,
                          bool with_label, const KnnUeFitOptions& options = {}) {
    require(!dev.empty(), ErrorKind::empty_input, "kNN-UE needs a nonempty dev set");
    require(features.size() == dev.size(), ErrorKind::dimension_mismatch, "one feature row per dev record");
    const auto& bounds = options.bounds;

    double dist_sum = 0.0;
    std::size_t dist_count = 0;
    for (const auto& f : features) {
        dist_sum += std::accumulate(f.dists.begin(), f.dists.end(), 0.0);
        dist_count += f.dists.size();
    }
    const double mean_dist = dist_count ? dist_sum / static_cast<double>(dist_count) : 1.0;

    auto make = [&](std::span<const double> x) { return KnnUeParams{x[0], x[1], x[2], x[3], k}; };

    optim::BoundedProblem problem;
    problem.dim = 4;
    problem.lower = {0.0, bounds.tau_min, 0.0, 0.0};
    problem.upper = {bounds.alpha_max, bounds.tau_max, with_label ? bounds.lambda_max : 0.0,
                     with_label ? bounds.b_max : 0.0};
    problem.objective = [&](std::span<const double> x) { return knnue_nll(dev, features, make(x)); };

    std::vector<double> start{1.0, std::clamp(mean_dist, bounds.tau_min, bounds.tau_max), with_label ? 1.0 : 0.0, 0.0};
    const auto from_default = optim::minimize_bounded(problem, start);
    auto best = from_default;

    if (options.grid_points >= 2) {
        // Grid over (alpha, log10 tau[, lambda, b]).
        const std::size_t grid_dim = with_label ? 4 : 2;
        std::vector<double> lo{0.0, std::log10(bounds.tau_min), 0.0, 0.0};
        std::vector<double> hi{bounds.alpha_max, std::log10(bounds.tau_max), bounds.lambda_max, bounds.b_max};
        lo.resize(grid_dim);
        hi.resize(grid_dim);
        auto grid_objective = [&](std::span<const double> g) {
            std::vector<double> x{g[0], std::pow(10.0, g[1]), 0.0, 0.0};
            if (grid_dim == 4) {
                x[2] = g[2];
                x[3] = g[3];
            }
            return problem.objective(x);
        };
        const auto g = optim::grid_refine(grid_objective, lo, hi, options.grid_points);
        std::vector<double> warm{g[0], std::clamp(std::pow(10.0, g[1]), bounds.tau_min, bounds.tau_max), 0.0, 0.0};
        if (grid_dim == 4) {
            warm[2] = g[2];
            warm[3] = g[3];
        }
        const auto from_grid = optim::minimize_bounded(problem, warm);
        if (from_grid.f < best.f) best = from_grid;
    }

    KnnUeFit fit;
    fit.params = make(best.x);
    fit.dev_nll = best.f;
    fit.default_start_nll = from_default.f;
    fit.bounds = bounds;
    fit.with_label = with_label;
    return fit;
}

}  // namespace knnue::calib
