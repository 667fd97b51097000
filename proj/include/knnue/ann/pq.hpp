#pragma once

#include <cstdint>
#include <vector>

#include "knnue/ann/kmeans.hpp"
#include "knnue/core.hpp"

namespace knnue::ann {

inline constexpr std::size_t kMaxPqCentroids = 256;

/// Product quantizer: the D-dim space is split into n_sub contiguous subspaces, each with
/// its own k-means codebook. Codes are one byte per subspace.
struct PQCodebook {
    std::size_t n_sub = 0;
    std::size_t n_centroids = 0;
    std::size_t sub_dim = 0;
    Matrix centroids;  // (n_sub * n_centroids) x sub_dim; sub-codebook m occupies rows [m*nc, (m+1)*nc)

    std::size_t dim() const { return n_sub * sub_dim; }

    std::span<const float> centroid(std::size_t sub, std::size_t c) const { return centroids.row(sub * n_centroids + c); }

    std::vector<std::uint8_t> encode(std::span<const float> x) const {
        std::vector<std::uint8_t> code(n_sub);
        for (std::size_t m = 0; m < n_sub; ++m) {
            const auto part = x.subspan(m * sub_dim, sub_dim);
            std::size_t best = 0;
            double best_d = std::numeric_limits<double>::infinity();
            for (std::size_t c = 0; c < n_centroids; ++c) {
                const double d = squared_l2(part, centroid(m, c));
                if (d < best_d) {
                    best_d = d;
                    best = c;
                }
            }
            code[m] = static_cast<std::uint8_t>(best);
        }
        return code;
    }

    /// Asymmetric distance table: entry [m * nc + c] = ||q_m - C_{m,c}||^2.
    std::vector<double> adc_table(std::span<const float> query) const {
        require(query.size() == dim(), ErrorKind::dimension_mismatch, "PQ query dimension");
        std::vector<double> table(n_sub * n_centroids);
        for (std::size_t m = 0; m < n_sub; ++m) {
            const auto part = query.subspan(m * sub_dim, sub_dim);
            for (std::size_t c = 0; c < n_centroids; ++c) table[m * n_centroids + c] = squared_l2(part, centroid(m, c));
        }
        return table;
    }

    double adc_distance(const std::vector<double>& table, const std::uint8_t* code) const {
        double d = 0.0;
        for (std::size_t m = 0; m < n_sub; ++m) d += table[m * n_centroids + code[m]];
        return d;
    }
};

inline PQCodebook train_pq(const Matrix& train, std::size_t n_sub, std::size_t n_centroids, int iters,
                           std::uint64_t seed, std::size_t threads = 1) {
    require(n_sub >= 1, ErrorKind::invalid_argument, "N_sub must be >= 1");
    require(train.cols % n_sub == 0, ErrorKind::invalid_argument,
            "D=" + std::to_string(train.cols) + " is not divisible by N_sub=" + std::to_string(n_sub));
    require(n_centroids >= 1 && n_centroids <= kMaxPqCentroids, ErrorKind::invalid_argument,
            "PQ centroids must be in [1, 256]");
    require(n_centroids <= train.rows, ErrorKind::invalid_argument,
            "PQ centroids (" + std::to_string(n_centroids) + ") exceed training rows (" + std::to_string(train.rows) + ")");

    PQCodebook pq;
    pq.n_sub = n_sub;
    pq.n_centroids = n_centroids;
    pq.sub_dim = train.cols / n_sub;
    pq.centroids = Matrix(n_sub * n_centroids, pq.sub_dim);

    Matrix sub(train.rows, pq.sub_dim);
    for (std::size_t m = 0; m < n_sub; ++m) {
        for (std::size_t i = 0; i < train.rows; ++i) {
            const auto src = train.row(i).subspan(m * pq.sub_dim, pq.sub_dim);
            std::copy(src.begin(), src.end(), sub.row(i).begin());
        }
        const auto km = fit_kmeans(sub, n_centroids, iters, derive_seed(seed, m), threads);
        for (std::size_t c = 0; c < n_centroids; ++c) {
            std::copy(km.centroids.row(c).begin(), km.centroids.row(c).end(), pq.centroids.row(m * n_centroids + c).begin());
        }
    }
    return pq;
}

}  // namespace knnue::ann
