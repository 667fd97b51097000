#pragma once

#include <span>
#include <vector>

#include "json.hpp"
#include "knnue/calibration/softmax.hpp"
#include "knnue/datastore.hpp"
#include "knnue/optim.hpp"

namespace knnue::calib {

inline constexpr double kTemperatureMin = 1e-2;
inline constexpr double kTemperatureMax = 1e2;

struct TsParams {
    double temperature = 1.0;
    double dev_nll = 0.0;
};

inline std::vector<double> ts_apply(std::span<const float> logits, double temperature) {
    require(temperature > 0.0 && std::isfinite(temperature), ErrorKind::invalid_argument, "temperature must be > 0");
    return scaled_softmax(logits, 1.0 / temperature);
}

inline double ts_nll(std::span<const EvalRecord> dev, double temperature) {
    double total = 0.0;
    for (const auto& r : dev) total += scaled_nll(r.logits, 1.0 / temperature, r.gold);
    return total / static_cast<double>(dev.size());
}

// d/dT of the mean NLL: (z_gold - E_p[z]) / T^2, averaged over records.
inline double ts_nll_gradient(std::span<const EvalRecord> dev, double temperature) {
    double total = 0.0;
    for (const auto& r : dev) {
        const auto p = scaled_softmax(std::span<const float>(r.logits), 1.0 / temperature);
        double expected = 0.0;
        for (std::size_t i = 0; i < p.size(); ++i) expected += p[i] * r.logits[i];
        total += (r.logits[static_cast<std::size_t>(r.gold)] - expected) / (temperature * temperature);
    }
    return total / static_cast<double>(dev.size());
}

/// Fits T in [1e-2, 1e2] by minimizing dev NLL, starting from T = 1.
inline TsParams ts_fit(std::span<const EvalRecord> dev) {
    require(!dev.empty(), ErrorKind::empty_input, "temperature scaling needs a nonempty dev set");
    optim::BoundedProblem problem;
    problem.dim = 1;
    problem.lower = {kTemperatureMin};
    problem.upper = {kTemperatureMax};
    problem.objective = [&](std::span<const double> x) { return ts_nll(dev, x[0]); };
    problem.gradient = [&](std::span<const double> x, std::span<double> g) { g[0] = ts_nll_gradient(dev, x[0]); };
    const std::vector<double> x0{1.0};
    const auto result = optim::minimize_bounded(problem, x0);
    return {result.x[0], result.f};
}

inline nlohmann::json to_json(const TsParams& p) { return {{"T", p.temperature}}; }

}  // namespace knnue::calib
