#pragma once

// Slow, literal reference implementations used to check the library.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <random>
#include <set>
#include <string>
#include <utility>
#include <vector>

namespace oracle {

struct Pred {
    double confidence;
    bool correct;
};

// Full sort of every (distance, id) pair.
inline std::vector<std::pair<double, std::int64_t>> knn(const std::vector<float>& keys, std::size_t dim,
                                                        const std::vector<float>& query, std::size_t k) {
    const std::size_t n = keys.size() / dim;
    std::vector<std::pair<double, std::int64_t>> all(n);
    for (std::size_t i = 0; i < n; ++i) {
        double d = 0.0;
        for (std::size_t j = 0; j < dim; ++j) {
            const double diff = static_cast<double>(keys[i * dim + j]) - static_cast<double>(query[j]);
            d += diff * diff;
        }
        all[i] = {d, static_cast<std::int64_t>(i)};
    }
    std::sort(all.begin(), all.end());
    all.resize(std::min(k, n));
    return all;
}

// Bins walked one at a time with explicit edge tests.
inline std::vector<std::vector<Pred>> bins(const std::vector<Pred>& preds, std::size_t b) {
    std::vector<std::vector<Pred>> out(b);
    for (const auto& p : preds) {
        for (std::size_t m = 0; m < b; ++m) {
            const double lo = static_cast<double>(m) / static_cast<double>(b);
            const double hi = static_cast<double>(m + 1) / static_cast<double>(b);
            const bool in = (m == 0) ? (p.confidence >= lo && p.confidence <= hi) : (p.confidence > lo && p.confidence <= hi);
            if (in) {
                out[m].push_back(p);
                break;
            }
        }
    }
    return out;
}

inline double gap(const std::vector<Pred>& bin) {
    double acc = 0.0, conf = 0.0;
    for (const auto& p : bin) {
        acc += p.correct ? 1.0 : 0.0;
        conf += p.confidence;
    }
    return std::abs(acc / static_cast<double>(bin.size()) - conf / static_cast<double>(bin.size()));
}

inline double ece(const std::vector<Pred>& preds, std::size_t b) {
    double total = 0.0;
    for (const auto& bin : bins(preds, b)) {
        if (!bin.empty()) total += static_cast<double>(bin.size()) / static_cast<double>(preds.size()) * gap(bin);
    }
    return total;
}

inline double mce(const std::vector<Pred>& preds, std::size_t b) {
    double worst = 0.0;
    for (const auto& bin : bins(preds, b)) {
        if (!bin.empty()) worst = std::max(worst, gap(bin));
    }
    return worst;
}

// Rank of each prediction recomputed from scratch; risk at every coverage level by a fresh scan.
inline double aurc(const std::vector<Pred>& preds) {
    const std::size_t n = preds.size();
    std::vector<std::size_t> rank(n);
    for (std::size_t a = 0; a < n; ++a) {
        std::size_t r = 0;
        for (std::size_t b = 0; b < n; ++b) {
            if (preds[b].confidence > preds[a].confidence || (preds[b].confidence == preds[a].confidence && b < a)) ++r;
        }
        rank[a] = r;
    }
    double area = 0.0;
    for (std::size_t i = 1; i <= n; ++i) {
        double errors = 0.0;
        for (std::size_t a = 0; a < n; ++a) {
            if (rank[a] < i && !preds[a].correct) errors += 1.0;
        }
        area += errors / (static_cast<double>(i) * static_cast<double>(n));
    }
    return area;
}

inline double pairwise_auroc(const std::vector<double>& pos, const std::vector<double>& neg) {
    double wins = 0.0;
    for (double p : pos) {
        for (double q : neg) {
            if (p > q) wins += 1.0;
            else if (p == q) wins += 0.5;
        }
    }
    return wins / (static_cast<double>(pos.size()) * static_cast<double>(neg.size()));
}

struct Ood {
    double fpr_at_95, auroc, aupr_in, aupr_out;
};

// Step-wise average precision from every distinct threshold, descending.
inline double sweep_ap(const std::vector<double>& pos, const std::vector<double>& neg) {
    std::set<double, std::greater<>> thresholds(pos.begin(), pos.end());
    thresholds.insert(neg.begin(), neg.end());
    double prev_recall = 0.0, ap = 0.0;
    for (double t : thresholds) {
        double tp = 0.0, fp = 0.0;
        for (double s : pos) tp += s >= t ? 1.0 : 0.0;
        for (double s : neg) fp += s >= t ? 1.0 : 0.0;
        const double recall = tp / static_cast<double>(pos.size());
        if (tp + fp > 0.0) ap += (recall - prev_recall) * (tp / (tp + fp));
        prev_recall = recall;
    }
    return ap;
}

inline Ood ood(const std::vector<double>& id, const std::vector<double>& out) {
    std::set<double, std::greater<>> thresholds(id.begin(), id.end());
    thresholds.insert(out.begin(), out.end());
    Ood r{};
    bool found = false;
    // ROC traced from the highest threshold down; trapezoids handle tied blocks.
    double prev_tpr = 0.0, prev_fpr = 0.0, area = 0.0;
    for (double t : thresholds) {
        std::size_t tp = 0, fp = 0;
        for (double s : id) tp += s >= t ? 1 : 0;
        for (double s : out) fp += s >= t ? 1 : 0;
        const double tpr = static_cast<double>(tp) / static_cast<double>(id.size());
        const double fpr = static_cast<double>(fp) / static_cast<double>(out.size());
        if (!found && tp * 100 >= 95 * id.size()) {
            r.fpr_at_95 = fpr;
            found = true;
        }
        area += (fpr - prev_fpr) * (tpr + prev_tpr) / 2.0;
        prev_tpr = tpr;
        prev_fpr = fpr;
    }
    r.auroc = area;
    r.aupr_in = sweep_ap(id, out);
    std::vector<double> nid, nout;
    for (double s : id) nid.push_back(-s);
    for (double s : out) nout.push_back(-s);
    r.aupr_out = sweep_ap(nout, nid);
    return r;
}

// Cyclic Jacobi eigendecomposition of a symmetric matrix (row-major n x n).
// Returns eigenvalues descending and matching unit eigenvectors (as rows).
inline std::pair<std::vector<double>, std::vector<std::vector<double>>> jacobi_eigen(std::vector<double> a, std::size_t n) {
    std::vector<double> v(n * n, 0.0);
    for (std::size_t i = 0; i < n; ++i) v[i * n + i] = 1.0;
    for (int sweep = 0; sweep < 100; ++sweep) {
        double off = 0.0;
        for (std::size_t p = 0; p < n; ++p)
            for (std::size_t q = p + 1; q < n; ++q) off += a[p * n + q] * a[p * n + q];
        if (off < 1e-22) break;
        for (std::size_t p = 0; p < n; ++p) {
            for (std::size_t q = p + 1; q < n; ++q) {
                const double apq = a[p * n + q];
                if (std::abs(apq) < 1e-300) continue;
                const double theta = (a[q * n + q] - a[p * n + p]) / (2.0 * apq);
                const double t = (theta >= 0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
                const double c = 1.0 / std::sqrt(t * t + 1.0);
                const double s = t * c;
                for (std::size_t k = 0; k < n; ++k) {
                    const double akp = a[k * n + p], akq = a[k * n + q];
                    a[k * n + p] = c * akp - s * akq;
                    a[k * n + q] = s * akp + c * akq;
                }
                for (std::size_t k = 0; k < n; ++k) {
                    const double apk = a[p * n + k], aqk = a[q * n + k];
                    a[p * n + k] = c * apk - s * aqk;
                    a[q * n + k] = s * apk + c * aqk;
                }
                for (std::size_t k = 0; k < n; ++k) {
                    const double vkp = v[k * n + p], vkq = v[k * n + q];
                    v[k * n + p] = c * vkp - s * vkq;
                    v[k * n + q] = s * vkp + c * vkq;
                }
            }
        }
    }
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) { return a[x * n + x] > a[y * n + y]; });
    std::vector<double> values;
    std::vector<std::vector<double>> vectors;
    for (auto i : order) {
        values.push_back(a[i * n + i]);
        std::vector<double> vec(n);
        for (std::size_t k = 0; k < n; ++k) vec[k] = v[k * n + i];
        vectors.push_back(vec);
    }
    return {values, vectors};
}

// Gaussian elimination with partial pivoting.
inline std::vector<double> solve(std::vector<double> a, std::vector<double> b) {
    const std::size_t n = b.size();
    for (std::size_t c = 0; c < n; ++c) {
        std::size_t piv = c;
        for (std::size_t r = c + 1; r < n; ++r)
            if (std::abs(a[r * n + c]) > std::abs(a[piv * n + c])) piv = r;
        for (std::size_t k = 0; k < n; ++k) std::swap(a[c * n + k], a[piv * n + k]);
        std::swap(b[c], b[piv]);
        for (std::size_t r = c + 1; r < n; ++r) {
            const double f = a[r * n + c] / a[c * n + c];
            for (std::size_t k = c; k < n; ++k) a[r * n + k] -= f * a[c * n + k];
            b[r] -= f * b[c];
        }
    }
    std::vector<double> x(n);
    for (std::size_t r = n; r-- > 0;) {
        double s = b[r];
        for (std::size_t k = r + 1; k < n; ++k) s -= a[r * n + k] * x[k];
        x[r] = s / a[r * n + r];
    }
    return x;
}

inline double nll_at(const std::vector<float>& logits, double scale, int gold) {
    double mx = -std::numeric_limits<double>::infinity();
    for (float z : logits) mx = std::max(mx, scale * z);
    double s = 0.0;
    for (float z : logits) s += std::exp(scale * z - mx);
    return mx + std::log(s) - scale * logits[static_cast<std::size_t>(gold)];
}

inline std::vector<double> softmax(const std::vector<double>& z) {
    double mx = *std::max_element(z.begin(), z.end());
    std::vector<double> p(z.size());
    double s = 0.0;
    for (std::size_t i = 0; i < z.size(); ++i) s += (p[i] = std::exp(z[i] - mx));
    for (auto& v : p) v /= s;
    return p;
}

inline std::vector<Pred> random_preds(std::mt19937_64& rng, std::size_t n, bool quantize = false) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::vector<Pred> out(n);
    for (auto& p : out) {
        p.confidence = quantize ? std::round(u(rng) * 20.0) / 20.0 : u(rng);
        p.correct = u(rng) < p.confidence;
    }
    return out;
}

// Fresh directory under the system temp dir, removed on destruction.
struct TempDir {
    std::filesystem::path path;
    explicit TempDir(const std::string& tag) {
        std::random_device rd;
        path = std::filesystem::temp_directory_path() / ("knnue_" + tag + "_" + std::to_string(rd()));
        std::filesystem::create_directories(path);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path, ec);
    }
    std::string file(const std::string& name) const { return (path / name).string(); }
};

}  // namespace oracle
