#pragma once

#include <cstdint>
#include <limits>
#include <random>
#include <vector>

#include "knnue/core.hpp"

namespace knnue::ann {

struct KMeansResult {
    Matrix centroids;
    std::vector<std::uint32_t> assignment;
    // Quantization objective (sum of squared distances to the assigned centroid) after
    // each assignment step. Lloyd iterations never increase it.
    std::vector<double> objective_trace;

    double objective() const { return objective_trace.empty() ? 0.0 : objective_trace.back(); }
};

namespace detail {

// Platform-independent uniform double in [0, 1) from a standard engine.
inline double unit_uniform(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

inline std::uint32_t nearest_centroid(std::span<const float> x, const Matrix& centroids, double* dist_out = nullptr) {
    std::uint32_t best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < centroids.rows; ++c) {
        const double d = squared_l2(x, centroids.row(c));
        if (d < best_d) {
            best_d = d;
            best = static_cast<std::uint32_t>(c);
        }
    }
    if (dist_out) *dist_out = best_d;
    return best;
}

}  // namespace detail

/// Deterministic row subsample (without replacement, original order kept) used to cap
/// training cost on large datastores.
inline Matrix sample_rows(const Matrix& data, std::size_t max_rows, std::uint64_t seed) {
    if (data.rows <= max_rows) return data;
    std::vector<std::size_t> idx(data.rows);
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    std::mt19937_64 rng(seed);
    // Partial Fisher-Yates with explicit modulo keeps the sequence platform-independent.
    for (std::size_t i = 0; i < max_rows; ++i) {
        const std::size_t j = i + static_cast<std::size_t>(rng() % (idx.size() - i));
        std::swap(idx[i], idx[j]);
    }
    idx.resize(max_rows);
    std::sort(idx.begin(), idx.end());
    Matrix out(max_rows, data.cols);
    for (std::size_t i = 0; i < max_rows; ++i) {
        std::copy(data.row(idx[i]).begin(), data.row(idx[i]).end(), out.row(i).begin());
    }
    return out;
}

/// Lloyd's k-means from k-means++ seeding.
inline KMeansResult fit_kmeans(const Matrix& data, std::size_t k, int iters, std::uint64_t seed,
                               std::size_t threads = 1) {
    require(data.rows > 0, ErrorKind::empty_input, "k-means on empty data");
    require(k >= 1 && k <= data.rows, ErrorKind::invalid_argument,
            "k-means: k=" + std::to_string(k) + " must be in [1, rows=" + std::to_string(data.rows) + "]");
    require(iters >= 1, ErrorKind::invalid_argument, "k-means: iters must be >= 1");

    const std::size_t n = data.rows;
    const std::size_t dim = data.cols;
    std::mt19937_64 rng(seed);

    KMeansResult result;
    result.centroids = Matrix(k, dim);
    std::vector<double> nearest(n, std::numeric_limits<double>::infinity());
    std::vector<bool> chosen(n, false);

    auto take = [&](std::size_t c, std::size_t row) {
        chosen[row] = true;
        std::copy(data.row(row).begin(), data.row(row).end(), result.centroids.row(c).begin());
        for (std::size_t i = 0; i < n; ++i) nearest[i] = std::min(nearest[i], squared_l2(data.row(i), data.row(row)));
    };

    take(0, static_cast<std::size_t>(rng() % n));
    for (std::size_t c = 1; c < k; ++c) {
        double total = 0.0;
        for (double d : nearest) total += d;
        std::size_t pick = n;
        if (total > 0.0) {
            const double target = detail::unit_uniform(rng) * total;
            double acc = 0.0;
            for (std::size_t i = 0; i < n; ++i) {
                acc += nearest[i];
                if (nearest[i] > 0.0 && acc > target) {
                    pick = i;
                    break;
                }
            }
            if (pick == n) {
                for (std::size_t i = n; i-- > 0;) {
                    if (nearest[i] > 0.0) {
                        pick = i;
                        break;
                    }
                }
            }
        } else {
            // Every point coincides with a chosen centroid; fall back to the first unused row.
            for (std::size_t i = 0; i < n; ++i) {
                if (!chosen[i]) {
                    pick = i;
                    break;
                }
            }
        }
        take(c, pick);
    }

    result.assignment.assign(n, 0);
    std::vector<double> dist(n);
    auto assign = [&] {
        parallel_for(n, threads, [&](std::size_t i) {
            result.assignment[i] = detail::nearest_centroid(data.row(i), result.centroids, &dist[i]);
        });
        double obj = 0.0;
        for (double d : dist) obj += d;
        result.objective_trace.push_back(obj);
    };

    assign();
    std::vector<double> sums(k * dim);
    std::vector<std::size_t> counts(k);
    for (int it = 0; it < iters; ++it) {
        std::fill(sums.begin(), sums.end(), 0.0);
        std::fill(counts.begin(), counts.end(), 0);
        for (std::size_t i = 0; i < n; ++i) {
            const auto c = result.assignment[i];
            ++counts[c];
            const auto row = data.row(i);
            for (std::size_t j = 0; j < dim; ++j) sums[c * dim + j] += row[j];
        }
        for (std::size_t c = 0; c < k; ++c) {
            if (counts[c] == 0) continue;  // empty cluster keeps its centroid
            for (std::size_t j = 0; j < dim; ++j) {
                result.centroids(c, j) = static_cast<float>(sums[c * dim + j] / static_cast<double>(counts[c]));
            }
        }
        const auto previous = result.assignment;
        assign();
        if (result.assignment == previous) break;
    }
    return result;
}

}  // namespace knnue::ann
