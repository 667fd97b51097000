#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <vector>

#include "knnue/core.hpp"

namespace knnue::calib {

namespace detail {

template <typename T>
void check_logits(std::span<const T> logits) {
    require(!logits.empty(), ErrorKind::empty_input, "empty logits");
    for (T v : logits) require(std::isfinite(v), ErrorKind::non_finite, "logits contain NaN/Inf");
}

template <typename T>
double log_sum_exp(std::span<const T> logits, double scale) {
    double mx = -std::numeric_limits<double>::infinity();
    for (T v : logits) mx = std::max(mx, scale * static_cast<double>(v));
    double sum = 0.0;
    for (T v : logits) sum += std::exp(scale * static_cast<double>(v) - mx);
    return mx + std::log(sum);
}

template <typename T>
std::vector<double> softmax_scaled(std::span<const T> logits, double scale) {
    check_logits(logits);
    double mx = -std::numeric_limits<double>::infinity();
    for (T v : logits) mx = std::max(mx, scale * static_cast<double>(v));
    std::vector<double> p(logits.size());
    double sum = 0.0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        p[i] = std::exp(scale * static_cast<double>(logits[i]) - mx);
        sum += p[i];
    }
    for (auto& v : p) v /= sum;
    return p;
}

}  // namespace detail

inline std::vector<double> softmax(std::span<const double> logits) { return detail::softmax_scaled(logits, 1.0); }
inline std::vector<double> softmax(std::span<const float> logits) { return detail::softmax_scaled(logits, 1.0); }

/// softmax(scale * logits). Every calibrator here is one of these with a positive scale.
inline std::vector<double> scaled_softmax(std::span<const float> logits, double scale) {
    return detail::softmax_scaled(logits, scale);
}
inline std::vector<double> scaled_softmax(std::span<const double> logits, double scale) {
    return detail::softmax_scaled(logits, scale);
}

/// Lowest index among the maxima.
template <typename T>
std::int32_t argmax(std::span<const T> xs) {
    require(!xs.empty(), ErrorKind::empty_input, "argmax of empty vector");
    std::size_t best = 0;
    for (std::size_t i = 1; i < xs.size(); ++i) {
        if (xs[i] > xs[best]) best = i;
    }
    return static_cast<std::int32_t>(best);
}

inline std::int32_t argmax(const std::vector<double>& xs) { return argmax(std::span<const double>(xs)); }
inline std::int32_t argmax(const std::vector<float>& xs) { return argmax(std::span<const float>(xs)); }

struct Prediction {
    std::int32_t label = 0;
    double confidence = 0.0;
};

/// Softmax Response: argmax label and its softmax probability.
inline Prediction sr_confidence(std::span<const float> logits) {
    const auto p = softmax(logits);
    const auto label = argmax(std::span<const float>(logits));
    return {label, p[static_cast<std::size_t>(label)]};
}

inline Prediction top_prediction(const std::vector<double>& probs) {
    const auto label = argmax(probs);
    return {label, probs[static_cast<std::size_t>(label)]};
}

namespace detail {
template <typename T>
double scaled_nll(std::span<const T> logits, double scale, std::int32_t gold) {
    require(gold >= 0 && static_cast<std::size_t>(gold) < logits.size(), ErrorKind::label_out_of_range,
            "gold label out of range");
    return detail::log_sum_exp(logits, scale) - scale * static_cast<double>(logits[static_cast<std::size_t>(gold)]);
}
}  // namespace detail

/// -log softmax(scale * logits)[gold], computed stably.
inline double scaled_nll(std::span<const float> logits, double scale, std::int32_t gold) {
    return detail::scaled_nll(logits, scale, gold);
}
inline double scaled_nll(std::span<const double> logits, double scale, std::int32_t gold) {
    return detail::scaled_nll(logits, scale, gold);
}

}  // namespace knnue::calib
