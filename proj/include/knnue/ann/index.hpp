#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "knnue/ann/kmeans.hpp"
#include "knnue/ann/neighborhood.hpp"
#include "knnue/ann/pca.hpp"
#include "knnue/ann/pq.hpp"
#include "knnue/binary_io.hpp"
#include "knnue/datastore.hpp"

namespace knnue::ann {

enum class IndexKind { flat, ivf, pq, composed };

inline const char* to_string(IndexKind kind) {
    switch (kind) {
        case IndexKind::flat: return "flat";
        case IndexKind::ivf: return "ivf";
        case IndexKind::pq: return "pq";
        case IndexKind::composed: return "composed";
    }
    return "?";
}

/// Which stages an index uses. A stage is enabled by a nonzero size: n_probe > 0 enables
/// IVF, n_sub > 0 enables PQ, d_pca > 0 enables PCA. Stages apply in the order
/// PCA -> IVF -> PQ, with IVF and PQ trained in the reduced space.
struct IndexConfig {
    std::size_t n_list = 100;
    std::size_t n_probe = 0;
    std::size_t n_sub = 0;
    std::size_t n_centroids = 32;
    std::size_t d_pca = 0;
    bool recompute = false;
    int kmeans_iters = 25;
    std::uint64_t seed = 0;
    // k-means training sample cap, per centroid.
    std::size_t train_points_per_centroid = 256;
    std::size_t threads = 1;

    bool use_ivf() const { return n_probe > 0; }
    bool use_pq() const { return n_sub > 0; }
    bool use_pca() const { return d_pca > 0; }

    IndexKind kind() const {
        const int stages = int(use_ivf()) + int(use_pq()) + int(use_pca());
        if (stages == 0) return IndexKind::flat;
        if (stages > 1 || use_pca()) return IndexKind::composed;
        return use_ivf() ? IndexKind::ivf : IndexKind::pq;
    }

    void validate(std::size_t dim, std::size_t rows) const {
        require(kmeans_iters >= 1, ErrorKind::invalid_argument, "kmeans_iters must be >= 1");
        require(d_pca <= dim, ErrorKind::invalid_argument,
                "d_pca=" + std::to_string(d_pca) + " exceeds D=" + std::to_string(dim));
        const std::size_t search_dim = use_pca() ? d_pca : dim;
        if (use_ivf()) {
            require(n_list >= 1, ErrorKind::invalid_argument, "n_list must be >= 1");
            require(n_probe <= n_list, ErrorKind::invalid_argument,
                    "n_probe=" + std::to_string(n_probe) + " exceeds n_list=" + std::to_string(n_list));
            require(n_list <= rows, ErrorKind::invalid_argument, "n_list exceeds datastore rows");
        }
        if (use_pq()) {
            require(search_dim % n_sub == 0, ErrorKind::invalid_argument,
                    "D=" + std::to_string(search_dim) + " is not divisible by n_sub=" + std::to_string(n_sub));
            require(n_centroids >= 1 && n_centroids <= kMaxPqCentroids, ErrorKind::invalid_argument,
                    "n_centroids must be in [1, 256]");
            require(n_centroids <= rows, ErrorKind::invalid_argument, "n_centroids exceeds datastore rows");
        }
    }

    nlohmann::json to_json() const {
        return {{"kind", to_string(kind())}, {"n_list", n_list},           {"n_probe", n_probe},
                {"n_sub", n_sub},           {"n_centroids", n_centroids}, {"d_pca", d_pca},
                {"recompute", recompute},   {"kmeans_iters", kmeans_iters}, {"seed", seed}};
    }
};

inline constexpr std::uint32_t kIndexVersion = 1;

/// Nearest-neighbor index over a datastore's keys. Immutable after build; concurrent
/// searches are safe.
class Index {
public:
    const IndexConfig& config() const { return config_; }
    std::size_t input_dim() const { return input_dim_; }
    std::size_t search_dim() const { return pca_ ? pca_->out_dim() : input_dim_; }
    std::size_t size() const { return n_; }
    const std::optional<PCAProjection>& pca() const { return pca_; }
    const std::optional<PQCodebook>& pq() const { return pq_; }
    const Matrix& ivf_centroids() const { return ivf_centroids_; }
    const std::vector<std::vector<std::int64_t>>& ivf_lists() const { return lists_; }
    const std::vector<std::uint8_t>& codes() const { return codes_; }

    /// K nearest by squared L2 (ADC estimate when PQ is enabled). `n_probe` overrides the
    /// configured probe count for IVF indexes.
    Neighborhood search(std::span<const float> query, std::size_t k, std::optional<std::size_t> n_probe = {}) const {
        require(query.size() == input_dim_, ErrorKind::dimension_mismatch,
                "query dimension " + std::to_string(query.size()) + " != index dimension " + std::to_string(input_dim_));
        require(k >= 1 && k <= n_, ErrorKind::invalid_argument,
                "K=" + std::to_string(k) + " must be in [1, N=" + std::to_string(n_) + "]");
        require(all_finite(query), ErrorKind::non_finite, "query has NaN/Inf");

        std::vector<float> reduced;
        std::span<const float> q = query;
        if (pca_) {
            reduced = pca_->apply(query);
            q = reduced;
        }

        std::vector<double> table;
        if (pq_) table = pq_->adc_table(q);
        auto score = [&](std::int64_t id) {
            if (pq_) return pq_->adc_distance(table, codes_.data() + static_cast<std::size_t>(id) * pq_->n_sub);
            return squared_l2(q, vectors_.row(static_cast<std::size_t>(id)));
        };

        TopK top(k);
        if (!lists_.empty()) {
            const std::size_t probes = n_probe.value_or(config_.n_probe);
            require(probes >= 1 && probes <= lists_.size(), ErrorKind::invalid_argument,
                    "n_probe=" + std::to_string(probes) + " must be in [1, n_list=" + std::to_string(lists_.size()) + "]");
            TopK cells(probes);
            for (std::size_t c = 0; c < ivf_centroids_.rows; ++c) {
                cells.push(squared_l2(q, ivf_centroids_.row(c)), static_cast<std::int64_t>(c));
            }
            const auto probed = std::move(cells).finish();
            for (auto cell : probed.ids) {
                for (auto id : lists_[static_cast<std::size_t>(cell)]) top.push(score(id), id);
            }
        } else {
            for (std::size_t i = 0; i < n_; ++i) top.push(score(static_cast<std::int64_t>(i)), static_cast<std::int64_t>(i));
        }
        return std::move(top).finish();
    }

    void write(const std::string& path) const;
    static Index read(const std::string& path);

    friend Index compose(const Datastore& ds, const IndexConfig& config);

private:
    void rebuild_lists(const std::vector<std::uint32_t>& assignment) {
        lists_.assign(ivf_centroids_.rows, {});
        for (std::size_t i = 0; i < assignment.size(); ++i) lists_[assignment[i]].push_back(static_cast<std::int64_t>(i));
    }

    std::vector<std::uint32_t> assignment() const {
        std::vector<std::uint32_t> out(n_, 0);
        for (std::size_t c = 0; c < lists_.size(); ++c)
            for (auto id : lists_[c]) out[static_cast<std::size_t>(id)] = static_cast<std::uint32_t>(c);
        return out;
    }

    IndexConfig config_;
    std::size_t input_dim_ = 0;
    std::size_t n_ = 0;
    std::optional<PCAProjection> pca_;
    Matrix vectors_;  // search-space vectors; empty when PQ replaces them
    Matrix ivf_centroids_;
    std::vector<std::vector<std::int64_t>> lists_;
    std::optional<PQCodebook> pq_;
    std::vector<std::uint8_t> codes_;
};

/// Builds an index applying PCA, then IVF partitioning, then PQ encoding, as configured.
inline Index compose(const Datastore& ds, const IndexConfig& config) {
    config.validate(ds.dim(), ds.size());
    Index index;
    index.config_ = config;
    index.input_dim_ = ds.dim();
    index.n_ = ds.size();

    const Matrix* space = &ds.keys();
    Matrix reduced;
    if (config.use_pca()) {
        const auto sample = sample_rows(ds.keys(), 100000, derive_seed(config.seed, 1));
        index.pca_ = fit_pca(sample, config.d_pca);
        reduced = index.pca_->apply(ds.keys());
        space = &reduced;
    }

    if (config.use_ivf()) {
        const auto sample =
            sample_rows(*space, config.n_list * config.train_points_per_centroid, derive_seed(config.seed, 2));
        auto km = fit_kmeans(sample, config.n_list, config.kmeans_iters, derive_seed(config.seed, 3), config.threads);
        index.ivf_centroids_ = std::move(km.centroids);
        std::vector<std::uint32_t> assignment(space->rows);
        parallel_for(space->rows, config.threads, [&](std::size_t i) {
            assignment[i] = detail::nearest_centroid(space->row(i), index.ivf_centroids_);
        });
        index.rebuild_lists(assignment);
    }

    if (config.use_pq()) {
        const auto sample =
            sample_rows(*space, config.n_centroids * config.train_points_per_centroid, derive_seed(config.seed, 4));
        index.pq_ = train_pq(sample, config.n_sub, config.n_centroids, config.kmeans_iters, derive_seed(config.seed, 5),
                             config.threads);
        index.codes_.resize(space->rows * config.n_sub);
        parallel_for(space->rows, config.threads, [&](std::size_t i) {
            const auto code = index.pq_->encode(space->row(i));
            std::copy(code.begin(), code.end(), index.codes_.begin() + static_cast<std::ptrdiff_t>(i * config.n_sub));
        });
    } else {
        index.vectors_ = *space;
    }
    return index;
}

inline Index build_flat(const Datastore& ds) { return compose(ds, IndexConfig{}); }

inline Index build_ivf(const Datastore& ds, std::size_t n_list, std::uint64_t seed, std::size_t n_probe = 1) {
    IndexConfig cfg;
    cfg.n_list = n_list;
    cfg.n_probe = n_probe;
    cfg.seed = seed;
    return compose(ds, cfg);
}

inline Neighborhood ivf_search(const Index& index, std::span<const float> query, std::size_t k, std::size_t n_probe) {
    require(!index.ivf_lists().empty(), ErrorKind::invalid_argument, "ivf_search on an index without IVF");
    return index.search(query, k, n_probe);
}

inline Index build_pq(const Datastore& ds, std::size_t n_sub, std::size_t n_centroids, std::uint64_t seed) {
    IndexConfig cfg;
    cfg.n_sub = n_sub;
    cfg.n_centroids = n_centroids;
    cfg.seed = seed;
    return compose(ds, cfg);
}

inline Neighborhood adc_search(const Index& index, std::span<const float> query, std::size_t k) {
    require(index.pq().has_value(), ErrorKind::invalid_argument, "adc_search on an index without PQ");
    return index.search(query, k);
}

inline Neighborhood search(const Index& index, std::span<const float> query, std::size_t k) {
    return index.search(query, k);
}

/// Exact squared L2 from the raw datastore rows for the given ids, re-sorted with the tie rule.
inline Neighborhood recompute_distances(const Datastore& ds, std::span<const std::int64_t> ids,
                                        std::span<const float> query) {
    require(query.size() == ds.dim(), ErrorKind::dimension_mismatch, "recompute: query dimension");
    Neighborhood out;
    out.requested = ids.size();
    for (auto id : ids) {
        require(id >= 0 && static_cast<std::size_t>(id) < ds.size(), ErrorKind::invalid_argument,
                "recompute: id " + std::to_string(id) + " out of range");
        out.ids.push_back(id);
        out.dists.push_back(squared_l2(query, ds.keys().row(static_cast<std::size_t>(id))));
    }
    sort_neighborhood(out);
    return out;
}

/// An index bound to its datastore, so results can carry labels and exact distances.
class Searcher {
public:
    Searcher(std::shared_ptr<const Datastore> ds, Index index) : ds_(std::move(ds)), index_(std::move(index)) {
        require(ds_ != nullptr, ErrorKind::invalid_argument, "searcher needs a datastore");
        require(index_.size() == ds_->size() && index_.input_dim() == ds_->dim(), ErrorKind::dimension_mismatch,
                "index does not match datastore shape");
    }

    Searcher(std::shared_ptr<const Datastore> ds, const IndexConfig& config)
        : Searcher(ds, compose(*ds, config)) {}

    Neighborhood search(std::span<const float> query, std::size_t k) const {
        auto nbh = index_.search(query, k);
        if (index_.config().recompute) {
            auto exact = recompute_distances(*ds_, nbh.ids, query);
            exact.requested = nbh.requested;
            exact.short_result = nbh.short_result;
            return exact;
        }
        return nbh;
    }

    std::vector<Neighborhood> search_all(const EvalSet& set, std::size_t k, std::size_t threads = 1) const {
        std::vector<Neighborhood> out(set.records.size());
        for (const auto& rec : set.records) {
            require(rec.embedding.size() == ds_->dim(), ErrorKind::dimension_mismatch, "query embedding dimension");
        }
        parallel_for(out.size(), threads, [&](std::size_t i) { out[i] = search(set.records[i].embedding, k); });
        return out;
    }

    const Datastore& datastore() const { return *ds_; }
    const Index& index() const { return index_; }

private:
    std::shared_ptr<const Datastore> ds_;
    Index index_;
};

// File layout: "KUX1" | version u32 | stage flags u32 (1 pca, 2 ivf, 4 pq) | input_dim u32 | search_dim u32 | N u64
//   | n_list u32 | n_probe u32 | n_sub u32 | n_centroids u32 | recompute u32 | kmeans_iters u32 | seed u64
//   | [pca: mean f32[input_dim], components f32[search_dim*input_dim]]
//   | [ivf: centroids f32[n_list*search_dim], assignment u32[N]]
//   | [pq: codebooks f32[n_sub*n_centroids*sub_dim], codes u8[N*n_sub]] or vectors f32[N*search_dim]
inline void Index::write(const std::string& path) const {
    io::Writer w(path);
    w.magic("KUX1");
    w.scalar<std::uint32_t>(kIndexVersion);
    const std::uint32_t flags = (pca_ ? 1u : 0u) | (!lists_.empty() ? 2u : 0u) | (pq_ ? 4u : 0u);
    w.scalar<std::uint32_t>(flags);
    w.scalar<std::uint32_t>(static_cast<std::uint32_t>(input_dim_));
    w.scalar<std::uint32_t>(static_cast<std::uint32_t>(search_dim()));
    w.scalar<std::uint64_t>(n_);
    w.scalar<std::uint32_t>(static_cast<std::uint32_t>(config_.n_list));
    w.scalar<std::uint32_t>(static_cast<std::uint32_t>(config_.n_probe));
    w.scalar<std::uint32_t>(static_cast<std::uint32_t>(config_.n_sub));
    w.scalar<std::uint32_t>(static_cast<std::uint32_t>(config_.n_centroids));
    w.scalar<std::uint32_t>(config_.recompute ? 1u : 0u);
    w.scalar<std::uint32_t>(static_cast<std::uint32_t>(config_.kmeans_iters));
    w.scalar<std::uint64_t>(config_.seed);
    if (pca_) {
        w.array<float>(pca_->mean);
        w.array<float>(pca_->components.values);
    }
    if (!lists_.empty()) {
        w.array<float>(ivf_centroids_.values);
        w.array<std::uint32_t>(assignment());
    }
    if (pq_) {
        w.array<float>(pq_->centroids.values);
        w.array<std::uint8_t>(codes_);
    } else {
        w.array<float>(vectors_.values);
    }
    w.finish();
}

inline Index Index::read(const std::string& path) {
    io::Reader r(path);
    r.expect_magic("KUX1");
    const auto version = r.scalar<std::uint32_t>();
    require(version == kIndexVersion, ErrorKind::version_mismatch, path + ": index format version " + std::to_string(version));
    Index index;
    const auto flags = r.scalar<std::uint32_t>();
    index.input_dim_ = r.scalar<std::uint32_t>();
    const std::size_t search_dim = r.scalar<std::uint32_t>();
    index.n_ = r.scalar<std::uint64_t>();
    auto& cfg = index.config_;
    cfg.n_list = r.scalar<std::uint32_t>();
    cfg.n_probe = r.scalar<std::uint32_t>();
    cfg.n_sub = r.scalar<std::uint32_t>();
    cfg.n_centroids = r.scalar<std::uint32_t>();
    cfg.recompute = r.scalar<std::uint32_t>() != 0;
    cfg.kmeans_iters = static_cast<int>(r.scalar<std::uint32_t>());
    cfg.seed = r.scalar<std::uint64_t>();
    cfg.d_pca = (flags & 1u) ? search_dim : 0;
    if (!(flags & 2u)) cfg.n_probe = 0;
    if (!(flags & 4u)) cfg.n_sub = 0;

    if (flags & 1u) {
        PCAProjection pca;
        pca.mean = r.array<float>(index.input_dim_);
        pca.components.rows = search_dim;
        pca.components.cols = index.input_dim_;
        pca.components.values = r.array<float>(r.count(search_dim, index.input_dim_));
        index.pca_ = std::move(pca);
    }
    if (flags & 2u) {
        index.ivf_centroids_.rows = cfg.n_list;
        index.ivf_centroids_.cols = search_dim;
        index.ivf_centroids_.values = r.array<float>(r.count(cfg.n_list, search_dim));
        const auto assignment = r.array<std::uint32_t>(index.n_);
        for (auto a : assignment) require(a < cfg.n_list, ErrorKind::invalid_argument, path + ": IVF assignment out of range");
        index.rebuild_lists(assignment);
    }
    if (flags & 4u) {
        require(cfg.n_sub > 0 && search_dim % cfg.n_sub == 0, ErrorKind::invalid_argument, path + ": bad PQ shape");
        PQCodebook pq;
        pq.n_sub = cfg.n_sub;
        pq.n_centroids = cfg.n_centroids;
        pq.sub_dim = search_dim / cfg.n_sub;
        pq.centroids.rows = cfg.n_sub * cfg.n_centroids;
        pq.centroids.cols = pq.sub_dim;
        pq.centroids.values = r.array<float>(r.count(pq.centroids.rows, pq.sub_dim));
        index.codes_ = r.array<std::uint8_t>(r.count(index.n_, cfg.n_sub));
        for (auto c : index.codes_) require(c < cfg.n_centroids, ErrorKind::invalid_argument, path + ": PQ code out of range");
        index.pq_ = std::move(pq);
    } else {
        index.vectors_.rows = index.n_;
        index.vectors_.cols = search_dim;
        index.vectors_.values = r.array<float>(r.count(index.n_, search_dim));
    }
    return index;
}

}  // namespace knnue::ann
