#pragma once

#include <cmath>
#include <memory>
#include <numbers>
#include <vector>

#include "json.hpp"
#include "knnue/ann/kmeans.hpp"
#include "knnue/calibration/softmax.hpp"
#include "knnue/datastore.hpp"

namespace knnue::calib {

inline constexpr double kVarianceFloor = 1e-8;
inline constexpr double kDensityScaleFloor = 1e-6;

/// Scores embeddings by log-likelihood under a density fitted on the datastore.
/// Normalization maps the train-set log-likelihood range onto [0, 1].
class DensityModel {
public:
    virtual ~DensityModel() = default;
    virtual double log_likelihood(std::span<const float> x) const = 0;

    double ll_min() const { return ll_min_; }
    double ll_max() const { return ll_max_; }

    /// Min-max normalized log-likelihood, clamped to [0, 1].
    double normalized_ll(std::span<const float> x) const {
        if (ll_max_ <= ll_min_) return 1.0;
        return std::clamp((log_likelihood(x) - ll_min_) / (ll_max_ - ll_min_), 0.0, 1.0);
    }

    void set_bounds(double lo, double hi) {
        require(lo <= hi, ErrorKind::invalid_argument, "density normalization bounds: min > max");
        ll_min_ = lo;
        ll_max_ = hi;
    }

    void calibrate_bounds(const Matrix& train) {
        double lo = std::numeric_limits<double>::infinity();
        double hi = -lo;
        for (std::size_t i = 0; i < train.rows; ++i) {
            const double ll = log_likelihood(train.row(i));
            lo = std::min(lo, ll);
            hi = std::max(hi, ll);
        }
        set_bounds(lo, hi);
    }

private:
    double ll_min_ = 0.0;
    double ll_max_ = 0.0;
};

/// Diagonal-covariance Gaussian mixture.
class GaussianMixture final : public DensityModel {
public:
    std::vector<double> weights;
    std::vector<std::vector<double>> means;
    std::vector<std::vector<double>> variances;
    std::vector<double> ll_trace;  // mean train log-likelihood after each EM iteration

    std::size_t components() const { return weights.size(); }

    double log_likelihood(std::span<const float> x) const override {
        std::vector<double> parts(components());
        component_log_densities(x, parts);
        return log_sum(parts);
    }

    nlohmann::json to_json() const {
        return {{"weights", weights},   {"means", means},   {"variances", variances},
                {"ll_min", ll_min()},   {"ll_max", ll_max()}};
    }

    static GaussianMixture from_json(const nlohmann::json& j) {
        GaussianMixture g;
        g.weights = j.at("weights").get<std::vector<double>>();
        g.means = j.at("means").get<std::vector<std::vector<double>>>();
        g.variances = j.at("variances").get<std::vector<std::vector<double>>>();
        require(g.means.size() == g.weights.size() && g.variances.size() == g.weights.size(),
                ErrorKind::dimension_mismatch, "mixture component arrays differ in length");
        g.set_bounds(j.at("ll_min").get<double>(), j.at("ll_max").get<double>());
        return g;
    }

    void component_log_densities(std::span<const float> x, std::span<double> out) const {
        constexpr double log2pi = 1.8378770664093453;
        for (std::size_t c = 0; c < components(); ++c) {
            require(means[c].size() == x.size(), ErrorKind::dimension_mismatch, "density input dimension");
            double acc = std::log(weights[c]);
            for (std::size_t j = 0; j < x.size(); ++j) {
                const double diff = x[j] - means[c][j];
                acc -= 0.5 * (log2pi + std::log(variances[c][j]) + diff * diff / variances[c][j]);
            }
            out[c] = acc;
        }
    }

    static double log_sum(std::span<const double> xs) {
        const double mx = *std::max_element(xs.begin(), xs.end());
        if (!std::isfinite(mx)) return mx;
        double s = 0.0;
        for (double v : xs) s += std::exp(v - mx);
        return mx + std::log(s);
    }
};

/// EM fit of a diagonal Gaussian mixture on the datastore keys, initialized from k-means.
/// Variances are floored at 1e-8 instead of failing on degenerate components.
inline GaussianMixture fit_density(const Datastore& ds, std::size_t n_components, std::uint64_t seed,
                                   int max_iters = 100, double tol = 1e-8) {
    const Matrix& x = ds.keys();
    require(n_components >= 1 && n_components <= x.rows, ErrorKind::invalid_argument,
            "n_components must be in [1, N]");
    const std::size_t n = x.rows;
    const std::size_t d = x.cols;

    const auto km = ann::fit_kmeans(x, n_components, 10, seed);
    GaussianMixture g;
    g.weights.assign(n_components, 1.0 / static_cast<double>(n_components));
    std::vector<double> global_mean(d, 0.0), global_var(d, 0.0);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < d; ++j) global_mean[j] += x(i, j);
    for (auto& m : global_mean) m /= static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < d; ++j) global_var[j] += (x(i, j) - global_mean[j]) * (x(i, j) - global_mean[j]);
    for (auto& v : global_var) v = std::max(v / static_cast<double>(n), kVarianceFloor);
    for (std::size_t c = 0; c < n_components; ++c) {
        g.means.emplace_back(km.centroids.row(c).begin(), km.centroids.row(c).end());
        g.variances.push_back(global_var);
    }

    std::vector<double> resp(n * n_components);
    std::vector<double> parts(n_components);
    double previous = -std::numeric_limits<double>::infinity();
    for (int it = 0; it < max_iters; ++it) {
        // E-step; also yields the log-likelihood of the current parameters.
        double total_ll = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            g.component_log_densities(x.row(i), parts);
            const double ll = GaussianMixture::log_sum(parts);
            total_ll += ll;
            for (std::size_t c = 0; c < n_components; ++c) resp[i * n_components + c] = std::exp(parts[c] - ll);
        }
        const double mean_ll = total_ll / static_cast<double>(n);
        g.ll_trace.push_back(mean_ll);
        if (it > 0 && std::abs(mean_ll - previous) <= tol * std::max(1.0, std::abs(mean_ll))) break;
        previous = mean_ll;

        // M-step.
        for (std::size_t c = 0; c < n_components; ++c) {
            double nk = 0.0;
            std::vector<double> mu(d, 0.0), var(d, 0.0);
            for (std::size_t i = 0; i < n; ++i) {
                const double r = resp[i * n_components + c];
                nk += r;
                for (std::size_t j = 0; j < d; ++j) mu[j] += r * x(i, j);
            }
            if (nk <= 0.0) continue;
            for (auto& m : mu) m /= nk;
            for (std::size_t i = 0; i < n; ++i) {
                const double r = resp[i * n_components + c];
                for (std::size_t j = 0; j < d; ++j) var[j] += r * (x(i, j) - mu[j]) * (x(i, j) - mu[j]);
            }
            for (auto& v : var) v = std::max(v / nk, kVarianceFloor);
            g.weights[c] = nk / static_cast<double>(n);
            g.means[c] = std::move(mu);
            g.variances[c] = std::move(var);
        }
    }
    g.calibrate_bounds(x);
    return g;
}

inline double normalized_ll(const DensityModel& model, std::span<const float> embedding) {
    return model.normalized_ll(embedding);
}

/// Logit scale used by the calibrator: the normalized log-likelihood floored at 1e-6, so
/// tail points get a near-uniform distribution that keeps the raw argmax.
inline double density_scale(const DensityModel& model, std::span<const float> embedding) {
    return std::max(model.normalized_ll(embedding), kDensityScaleFloor);
}

/// softmax(norm_ll * logits); norm_ll = 0 gives the uniform distribution.
inline std::vector<double> density_softmax_apply(std::span<const float> logits, double norm_ll) {
    require(norm_ll >= 0.0 && norm_ll <= 1.0, ErrorKind::invalid_argument,
            "normalized log-likelihood must be in [0, 1], got " + std::to_string(norm_ll));
    return scaled_softmax(logits, norm_ll);
}

}  // namespace knnue::calib
