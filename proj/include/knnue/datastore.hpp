#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "knnue/binary_io.hpp"
#include "knnue/core.hpp"

namespace knnue {

inline constexpr std::uint32_t kDatastoreVersion = 1;
inline constexpr std::uint32_t kRecordsVersion = 1;

struct DatastoreMeta {
    std::uint64_t n = 0;
    std::uint32_t dim = 0;
    std::uint32_t num_classes = 0;
    std::uint32_t layer_count = 0;
    std::uint64_t seed = 0;
    std::string source;
};

/// Stored train-set representations and labels searched at inference time.
///
/// Keys are N x D; labels are in [0, J). Optional layer groups hold per-layer
/// representations (N x D_l each) for layer-wise distance features. Immutable once
/// built, so it can be shared freely across search threads.
class Datastore {
public:
    Datastore(Matrix keys, std::vector<std::int32_t> labels, std::uint32_t num_classes,
              std::vector<Matrix> layers = {}, std::uint64_t seed = 0, std::string source = {})
        : keys_(std::move(keys)),
          labels_(std::move(labels)),
          layers_(std::move(layers)),
          num_classes_(num_classes),
          seed_(seed),
          source_(std::move(source)) {
        validate();
    }

    const Matrix& keys() const { return keys_; }
    const std::vector<std::int32_t>& labels() const { return labels_; }
    const std::vector<Matrix>& layers() const { return layers_; }
    std::size_t size() const { return keys_.rows; }
    std::size_t dim() const { return keys_.cols; }
    std::uint32_t num_classes() const { return num_classes_; }

    DatastoreMeta meta() const {
        return {keys_.rows, static_cast<std::uint32_t>(keys_.cols), num_classes_,
                static_cast<std::uint32_t>(layers_.size()), seed_, source_};
    }

    friend bool operator==(const Datastore& a, const Datastore& b) {
        return a.keys_ == b.keys_ && a.labels_ == b.labels_ && a.layers_ == b.layers_ &&
               a.num_classes_ == b.num_classes_;
    }

private:
    void validate() const {
        require(keys_.rows > 0, ErrorKind::empty_input, "datastore has no rows");
        require(keys_.cols > 0, ErrorKind::dimension_mismatch, "datastore has zero dimension");
        require(num_classes_ > 0, ErrorKind::invalid_argument, "num_classes must be positive");
        require(keys_.values.size() == keys_.rows * keys_.cols, ErrorKind::dimension_mismatch,
                "key storage does not match N x D");
        require(labels_.size() == keys_.rows, ErrorKind::dimension_mismatch,
                "labels length " + std::to_string(labels_.size()) + " != N " + std::to_string(keys_.rows));
        for (std::size_t i = 0; i < labels_.size(); ++i) {
            require(labels_[i] >= 0 && static_cast<std::uint32_t>(labels_[i]) < num_classes_,
                    ErrorKind::label_out_of_range,
                    "label out of range at row " + std::to_string(i) + ": " + std::to_string(labels_[i]));
        }
        require(all_finite(keys_.values), ErrorKind::non_finite, "NaN/Inf in datastore keys");
        for (std::size_t l = 0; l < layers_.size(); ++l) {
            require(layers_[l].rows == keys_.rows, ErrorKind::dimension_mismatch,
                    "layer " + std::to_string(l) + " has " + std::to_string(layers_[l].rows) + " rows, expected " +
                        std::to_string(keys_.rows));
            require(layers_[l].cols > 0, ErrorKind::dimension_mismatch, "layer with zero dimension");
            require(all_finite(layers_[l].values), ErrorKind::non_finite, "NaN/Inf in layer " + std::to_string(l));
        }
    }

    Matrix keys_;
    std::vector<std::int32_t> labels_;
    std::vector<Matrix> layers_;
    std::uint32_t num_classes_;
    std::uint64_t seed_;
    std::string source_;
};

struct DatastoreRecord {
    std::vector<float> embedding;
    std::int32_t label = 0;
    std::vector<std::vector<float>> layer_embeddings;
};

/// One prediction instance: logits over J classes, query embedding(s), gold label and an
/// optional entity span id (-1 when the record is not part of a multi-token entity).
struct EvalRecord {
    std::vector<float> logits;
    std::vector<float> embedding;
    std::vector<std::vector<float>> layer_embeddings;
    std::int32_t gold = 0;
    std::int32_t span_id = -1;

    friend bool operator==(const EvalRecord&, const EvalRecord&) = default;
};

struct EvalSet {
    std::uint32_t num_classes = 0;
    std::uint32_t dim = 0;
    std::vector<std::uint32_t> layer_dims;
    std::vector<EvalRecord> records;

    bool has_spans() const {
        return std::any_of(records.begin(), records.end(), [](const EvalRecord& r) { return r.span_id >= 0; });
    }

    void validate() const {
        require(num_classes > 0, ErrorKind::invalid_argument, "num_classes must be positive");
        for (std::size_t i = 0; i < records.size(); ++i) {
            const auto& r = records[i];
            const std::string where = "record " + std::to_string(i);
            require(r.logits.size() == num_classes, ErrorKind::dimension_mismatch, where + ": logits length");
            require(r.embedding.size() == dim, ErrorKind::dimension_mismatch, where + ": embedding length");
            require(all_finite(r.logits), ErrorKind::non_finite, where + ": NaN/Inf logits");
            require(all_finite(r.embedding), ErrorKind::non_finite, where + ": NaN/Inf embedding");
            require(r.gold >= 0 && static_cast<std::uint32_t>(r.gold) < num_classes, ErrorKind::label_out_of_range,
                    where + ": gold label out of range");
            require(r.layer_embeddings.size() == layer_dims.size(), ErrorKind::dimension_mismatch,
                    where + ": layer count");
            for (std::size_t l = 0; l < layer_dims.size(); ++l) {
                require(r.layer_embeddings[l].size() == layer_dims[l], ErrorKind::dimension_mismatch,
                        where + ": layer " + std::to_string(l) + " length");
            }
        }
    }

    friend bool operator==(const EvalSet&, const EvalSet&) = default;
};

inline Datastore build_datastore(std::span<const DatastoreRecord> records, std::uint32_t num_classes,
                                 std::uint64_t seed = 0, std::string source = "build") {
    require(!records.empty(), ErrorKind::empty_input, "no records");
    const std::size_t n = records.size();
    const std::size_t dim = records.front().embedding.size();
    const std::size_t layer_count = records.front().layer_embeddings.size();

    Matrix keys(n, dim);
    std::vector<std::int32_t> labels(n);
    std::vector<Matrix> layers;
    for (std::size_t l = 0; l < layer_count; ++l) layers.emplace_back(n, records.front().layer_embeddings[l].size());

    for (std::size_t i = 0; i < n; ++i) {
        const auto& r = records[i];
        require(r.embedding.size() == dim, ErrorKind::dimension_mismatch,
                "record " + std::to_string(i) + " has dimension " + std::to_string(r.embedding.size()) +
                    ", expected " + std::to_string(dim));
        require(r.label >= 0 && static_cast<std::uint32_t>(r.label) < num_classes, ErrorKind::label_out_of_range,
                "label out of range at record " + std::to_string(i));
        require(r.layer_embeddings.size() == layer_count, ErrorKind::dimension_mismatch,
                "record " + std::to_string(i) + " layer count");
        std::copy(r.embedding.begin(), r.embedding.end(), keys.row(i).begin());
        labels[i] = r.label;
        for (std::size_t l = 0; l < layer_count; ++l) {
            require(r.layer_embeddings[l].size() == layers[l].cols, ErrorKind::dimension_mismatch,
                    "record " + std::to_string(i) + " layer " + std::to_string(l) + " dimension");
            std::copy(r.layer_embeddings[l].begin(), r.layer_embeddings[l].end(), layers[l].row(i).begin());
        }
    }
    return Datastore(std::move(keys), std::move(labels), num_classes, std::move(layers), seed, std::move(source));
}

inline std::filesystem::path meta_sidecar_path(const std::filesystem::path& path) {
    auto sidecar = path;
    sidecar.replace_extension(".meta.json");
    return sidecar;
}

inline nlohmann::json meta_to_json(const DatastoreMeta& meta) {
    return {{"N", meta.n},           {"D", meta.dim},   {"J", meta.num_classes}, {"layer_count", meta.layer_count},
            {"seed", meta.seed},     {"source", meta.source}, {"format", "KUE1"},  {"version", kDatastoreVersion}};
}

// File layout: "KUE1" | version u32 | N u64 | D u32 | J u32 | layer_count u32 | D_l u32 * layer_count
//              | keys f32[N*D] | layer matrices f32[N*D_l] ... | labels i32[N]
inline void write_datastore(const Datastore& ds, const std::string& path) {
    io::Writer w(path);
    w.magic("KUE1");
    w.scalar<std::uint32_t>(kDatastoreVersion);
    w.scalar<std::uint64_t>(ds.size());
    w.scalar<std::uint32_t>(static_cast<std::uint32_t>(ds.dim()));
    w.scalar<std::uint32_t>(ds.num_classes());
    w.scalar<std::uint32_t>(static_cast<std::uint32_t>(ds.layers().size()));
    for (const auto& layer : ds.layers()) w.scalar<std::uint32_t>(static_cast<std::uint32_t>(layer.cols));
    w.array<float>(ds.keys().values);
    for (const auto& layer : ds.layers()) w.array<float>(layer.values);
    w.array<std::int32_t>(ds.labels());
    w.finish();

    std::ofstream sidecar(meta_sidecar_path(path));
    sidecar << meta_to_json(ds.meta()).dump(2) << '\n';
}

inline Datastore read_datastore(const std::string& path) {
    io::Reader r(path);
    r.expect_magic("KUE1");
    const auto version = r.scalar<std::uint32_t>();
    require(version == kDatastoreVersion, ErrorKind::version_mismatch,
            path + ": format version " + std::to_string(version) + ", expected " + std::to_string(kDatastoreVersion));
    const auto n = r.scalar<std::uint64_t>();
    const auto dim = r.scalar<std::uint32_t>();
    const auto num_classes = r.scalar<std::uint32_t>();
    const auto layer_count = r.scalar<std::uint32_t>();
    std::vector<std::uint32_t> layer_dims(layer_count);
    for (auto& d : layer_dims) d = r.scalar<std::uint32_t>();

    Matrix keys(0, 0);
    keys.rows = n;
    keys.cols = dim;
    keys.values = r.array<float>(r.count(n, dim));
    std::vector<Matrix> layers;
    for (auto d : layer_dims) {
        Matrix m;
        m.rows = n;
        m.cols = d;
        m.values = r.array<float>(r.count(n, d));
        layers.push_back(std::move(m));
    }
    auto labels = r.array<std::int32_t>(n);

    std::uint64_t seed = 0;
    std::string source = "file";
    if (const auto sidecar = meta_sidecar_path(path); std::filesystem::exists(sidecar)) {
        std::ifstream in(sidecar);
        const auto meta = nlohmann::json::parse(in, nullptr, false);
        if (!meta.is_discarded()) {
            seed = meta.value("seed", std::uint64_t{0});
            source = meta.value("source", source);
        }
    }
    return Datastore(std::move(keys), std::move(labels), num_classes, std::move(layers), seed, std::move(source));
}

// File layout: "KUR1" | version u32 | count u64 | J u32 | D u32 | layer_count u32 | D_l u32 * layer_count
//              | logits f32[n*J] | embeddings f32[n*D] | layer matrices f32[n*D_l] ... | gold i32[n] | span i32[n]
inline void write_records(const EvalSet& set, const std::string& path) {
    set.validate();
    const std::size_t n = set.records.size();
    io::Writer w(path);
    w.magic("KUR1");
    w.scalar<std::uint32_t>(kRecordsVersion);
    w.scalar<std::uint64_t>(n);
    w.scalar<std::uint32_t>(set.num_classes);
    w.scalar<std::uint32_t>(set.dim);
    w.scalar<std::uint32_t>(static_cast<std::uint32_t>(set.layer_dims.size()));
    for (auto d : set.layer_dims) w.scalar<std::uint32_t>(d);
    for (const auto& rec : set.records) w.array<float>(rec.logits);
    for (const auto& rec : set.records) w.array<float>(rec.embedding);
    for (std::size_t l = 0; l < set.layer_dims.size(); ++l)
        for (const auto& rec : set.records) w.array<float>(rec.layer_embeddings[l]);
    for (const auto& rec : set.records) w.scalar<std::int32_t>(rec.gold);
    for (const auto& rec : set.records) w.scalar<std::int32_t>(rec.span_id);
    w.finish();
}

inline EvalSet read_records(const std::string& path) {
    io::Reader r(path);
    r.expect_magic("KUR1");
    const auto version = r.scalar<std::uint32_t>();
    require(version == kRecordsVersion, ErrorKind::version_mismatch,
            path + ": format version " + std::to_string(version) + ", expected " + std::to_string(kRecordsVersion));
    EvalSet set;
    const auto n = r.scalar<std::uint64_t>();
    set.num_classes = r.scalar<std::uint32_t>();
    set.dim = r.scalar<std::uint32_t>();
    set.layer_dims.resize(r.scalar<std::uint32_t>());
    for (auto& d : set.layer_dims) d = r.scalar<std::uint32_t>();

    const auto logits = r.array<float>(r.count(n, set.num_classes));
    const auto embeddings = r.array<float>(r.count(n, set.dim));
    std::vector<std::vector<float>> layers;
    for (auto d : set.layer_dims) layers.push_back(r.array<float>(r.count(n, d)));
    const auto gold = r.array<std::int32_t>(n);
    const auto spans = r.array<std::int32_t>(n);

    set.records.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        auto& rec = set.records[i];
        rec.logits.assign(logits.begin() + i * set.num_classes, logits.begin() + (i + 1) * set.num_classes);
        rec.embedding.assign(embeddings.begin() + i * set.dim, embeddings.begin() + (i + 1) * set.dim);
        for (std::size_t l = 0; l < set.layer_dims.size(); ++l) {
            const auto d = set.layer_dims[l];
            rec.layer_embeddings.emplace_back(layers[l].begin() + i * d, layers[l].begin() + (i + 1) * d);
        }
        rec.gold = gold[i];
        rec.span_id = spans[i];
    }
    set.validate();
    return set;
}

}  // namespace knnue
