#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <thread>
#include <utility>
#include <vector>

namespace knnue {

enum class ErrorKind {
    invalid_argument,
    empty_input,
    dimension_mismatch,
    label_out_of_range,
    non_finite,
    bad_magic,
    version_mismatch,
    truncated,
    io,
    not_fitted,
};

inline const char* to_string(ErrorKind kind) {
    switch (kind) {
        case ErrorKind::invalid_argument: return "invalid argument";
        case ErrorKind::empty_input: return "empty input";
        case ErrorKind::dimension_mismatch: return "dimension mismatch";
        case ErrorKind::label_out_of_range: return "label out of range";
        case ErrorKind::non_finite: return "non-finite value";
        case ErrorKind::bad_magic: return "bad magic";
        case ErrorKind::version_mismatch: return "version mismatch";
        case ErrorKind::truncated: return "truncated";
        case ErrorKind::io: return "io error";
        case ErrorKind::not_fitted: return "not fitted";
    }
    return "unknown";
}

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& what)
        : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind) {}

    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& what) { throw Error(kind, what); }

inline void require(bool condition, ErrorKind kind, const std::string& what) {
    if (!condition) fail(kind, what);
}

// Dense row-major float matrix.
struct Matrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<float> values;

    Matrix() = default;
    Matrix(std::size_t r, std::size_t c) : rows(r), cols(c), values(r * c, 0.0f) {}

    std::span<const float> row(std::size_t i) const { return {values.data() + i * cols, cols}; }
    std::span<float> row(std::size_t i) { return {values.data() + i * cols, cols}; }

    float& operator()(std::size_t i, std::size_t j) { return values[i * cols + j]; }
    float operator()(std::size_t i, std::size_t j) const { return values[i * cols + j]; }

    bool empty() const { return rows == 0; }

    friend bool operator==(const Matrix&, const Matrix&) = default;
};

inline bool all_finite(std::span<const float> xs) {
    return std::all_of(xs.begin(), xs.end(), [](float v) { return std::isfinite(v); });
}

inline bool all_finite(std::span<const double> xs) {
    return std::all_of(xs.begin(), xs.end(), [](double v) { return std::isfinite(v); });
}

// Squared Euclidean distance, accumulated in double.
inline double squared_l2(std::span<const float> a, std::span<const float> b) {
    double sum = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = static_cast<double>(a[i]) - static_cast<double>(b[i]);
        sum += d * d;
    }
    return sum;
}

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

// Counter-based seed expansion: independent reproducible streams from one top-level seed.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
    return splitmix64(splitmix64(seed) ^ splitmix64(stream + 0x632be59bd9b4e019ULL));
}

inline std::size_t default_threads() {
    const unsigned hw = std::thread::hardware_concurrency();
    return hw == 0 ? 1 : hw;
}

// Runs fn(i) for i in [0, n) over `threads` workers in contiguous blocks. fn must not
// touch shared mutable state except its own output slot.
template <typename Fn>
void parallel_for(std::size_t n, std::size_t threads, Fn&& fn) {
    threads = std::max<std::size_t>(1, std::min(threads, n));
    if (threads <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::vector<std::jthread> pool;
    pool.reserve(threads);
    const std::size_t block = (n + threads - 1) / threads;
    for (std::size_t t = 0; t < threads; ++t) {
        const std::size_t begin = t * block;
        const std::size_t end = std::min(n, begin + block);
        if (begin >= end) break;
        pool.emplace_back([begin, end, &fn] {
            for (std::size_t i = begin; i < end; ++i) fn(i);
        });
    }
}

inline std::vector<double> to_double(std::span<const float> xs) { return {xs.begin(), xs.end()}; }

}  // namespace knnue
