#pragma once

#include <algorithm>
#include <cstdint>
#include <limits>
#include <queue>
#include <unordered_set>
#include <utility>
#include <vector>

#include "knnue/core.hpp"

namespace knnue::ann {

/// K nearest rows: ids with squared-L2 distances, ascending, ties by ascending id.
/// `short_result` is set when fewer than the requested K candidates were reachable.
struct Neighborhood {
    std::vector<std::int64_t> ids;
    std::vector<double> dists;
    std::size_t requested = 0;
    bool short_result = false;

    std::size_t size() const { return ids.size(); }

    friend bool operator==(const Neighborhood&, const Neighborhood&) = default;
};

// Bounded max-heap over (distance, id); lexicographic order gives the tie rule for free.
class TopK {
public:
    explicit TopK(std::size_t k) : k_(k) {}

    void push(double dist, std::int64_t id) {
        if (k_ == 0) return;
        const Entry e{dist, id};
        if (heap_.size() < k_) {
            heap_.push(e);
        } else if (e < heap_.top()) {
            heap_.pop();
            heap_.push(e);
        }
    }

    // Worst retained distance once full; +inf otherwise.
    double bound() const {
        return heap_.size() < k_ ? std::numeric_limits<double>::infinity() : heap_.top().first;
    }

    Neighborhood finish() && {
        Neighborhood out;
        out.requested = k_;
        std::vector<Entry> sorted;
        sorted.reserve(heap_.size());
        while (!heap_.empty()) {
            sorted.push_back(heap_.top());
            heap_.pop();
        }
        std::reverse(sorted.begin(), sorted.end());
        for (const auto& [d, id] : sorted) {
            out.ids.push_back(id);
            out.dists.push_back(d);
        }
        out.short_result = out.ids.size() < k_;
        return out;
    }

private:
    using Entry = std::pair<double, std::int64_t>;
    std::size_t k_;
    std::priority_queue<Entry> heap_;
};

inline void sort_neighborhood(Neighborhood& nbh) {
    std::vector<std::size_t> order(nbh.ids.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return std::pair(nbh.dists[a], nbh.ids[a]) < std::pair(nbh.dists[b], nbh.ids[b]);
    });
    Neighborhood sorted;
    sorted.requested = nbh.requested;
    sorted.short_result = nbh.short_result;
    for (auto i : order) {
        sorted.ids.push_back(nbh.ids[i]);
        sorted.dists.push_back(nbh.dists[i]);
    }
    nbh = std::move(sorted);
}

/// Percentage of reference neighbor ids recovered by the approximate search:
/// 100 * mean over queries of |ref ∩ approx| / K.
inline double coverage(const std::vector<Neighborhood>& reference, const std::vector<Neighborhood>& approx) {
    require(reference.size() == approx.size(), ErrorKind::dimension_mismatch,
            "coverage: query counts differ (" + std::to_string(reference.size()) + " vs " +
                std::to_string(approx.size()) + ")");
    require(!reference.empty(), ErrorKind::empty_input, "coverage: no queries");
    double total = 0.0;
    for (std::size_t q = 0; q < reference.size(); ++q) {
        const std::size_t k = reference[q].requested ? reference[q].requested : reference[q].size();
        require(k > 0, ErrorKind::invalid_argument, "coverage: K = 0");
        require(approx[q].requested == 0 || approx[q].requested == k, ErrorKind::dimension_mismatch,
                "coverage: K differs between reference and approximate neighborhoods");
        const std::unordered_set<std::int64_t> ref(reference[q].ids.begin(), reference[q].ids.end());
        std::size_t hits = 0;
        for (auto id : approx[q].ids) hits += ref.count(id);
        total += static_cast<double>(hits) / static_cast<double>(k);
    }
    return 100.0 * total / static_cast<double>(reference.size());
}

}  // namespace knnue::ann
