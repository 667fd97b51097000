#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <vector>

#include "knnue/core.hpp"

namespace knnue::ann {

/// Linear projection onto the top principal components of a centered data set.
/// `components` rows are orthonormal, ordered by decreasing explained variance.
struct PCAProjection {
    std::vector<float> mean;
    Matrix components;  // out_dim x in_dim
    std::vector<double> explained_variance;

    std::size_t in_dim() const { return components.cols; }
    std::size_t out_dim() const { return components.rows; }

    std::vector<float> apply(std::span<const float> x) const {
        require(x.size() == in_dim(), ErrorKind::dimension_mismatch,
                "PCA input has dimension " + std::to_string(x.size()) + ", expected " + std::to_string(in_dim()));
        std::vector<float> out(out_dim());
        for (std::size_t r = 0; r < out_dim(); ++r) {
            const auto comp = components.row(r);
            double acc = 0.0;
            for (std::size_t j = 0; j < x.size(); ++j) acc += (static_cast<double>(x[j]) - mean[j]) * comp[j];
            out[r] = static_cast<float>(acc);
        }
        return out;
    }

    Matrix apply(const Matrix& data) const {
        Matrix out(data.rows, out_dim());
        for (std::size_t i = 0; i < data.rows; ++i) {
            const auto v = apply(data.row(i));
            std::copy(v.begin(), v.end(), out.row(i).begin());
        }
        return out;
    }
};

inline std::vector<float> apply_pca(const PCAProjection& proj, std::span<const float> x) { return proj.apply(x); }

/// Fits PCA by symmetric eigendecomposition of the (1/N) covariance. Component signs are
/// fixed so the largest-magnitude entry of each row is positive.
inline PCAProjection fit_pca(const Matrix& data, std::size_t out_dim) {
    require(data.rows > 0, ErrorKind::empty_input, "PCA on empty data");
    require(out_dim >= 1 && out_dim <= data.cols, ErrorKind::invalid_argument,
            "D_pca=" + std::to_string(out_dim) + " must be in [1, D=" + std::to_string(data.cols) + "]");
    const auto n = static_cast<Eigen::Index>(data.rows);
    const auto d = static_cast<Eigen::Index>(data.cols);

    Eigen::Map<const Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> raw(data.values.data(), n, d);
    const Eigen::MatrixXd x = raw.cast<double>();
    const Eigen::RowVectorXd mu = x.colwise().mean();
    const Eigen::MatrixXd centered = x.rowwise() - mu;
    const Eigen::MatrixXd cov = (centered.transpose() * centered) / static_cast<double>(n);

    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(cov);
    require(solver.info() == Eigen::Success, ErrorKind::invalid_argument, "PCA eigendecomposition failed");

    PCAProjection proj;
    proj.mean.resize(data.cols);
    for (Eigen::Index j = 0; j < d; ++j) proj.mean[j] = static_cast<float>(mu(j));
    proj.components = Matrix(out_dim, data.cols);
    // Eigen returns ascending eigenvalues.
    for (std::size_t r = 0; r < out_dim; ++r) {
        const Eigen::Index col = d - 1 - static_cast<Eigen::Index>(r);
        Eigen::VectorXd v = solver.eigenvectors().col(col);
        Eigen::Index arg = 0;
        v.cwiseAbs().maxCoeff(&arg);
        if (v(arg) < 0) v = -v;
        for (Eigen::Index j = 0; j < d; ++j) proj.components(r, j) = static_cast<float>(v(j));
        proj.explained_variance.push_back(solver.eigenvalues()(col));
    }
    return proj;
}

}  // namespace knnue::ann
