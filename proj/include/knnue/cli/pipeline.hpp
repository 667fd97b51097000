#pragma once

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "knnue/ann/index.hpp"
#include "knnue/calibration/dac.hpp"
#include "knnue/calibration/density.hpp"
#include "knnue/calibration/entity.hpp"
#include "knnue/calibration/knn_ue.hpp"
#include "knnue/calibration/temperature.hpp"
#include "knnue/metrics.hpp"

namespace knnue::cli {

enum class Method { sr, ts, density_softmax, dac, knn_ue, knn_ue_no_label };

inline const char* to_string(Method m) {
    switch (m) {
        case Method::sr: return "sr";
        case Method::ts: return "ts";
        case Method::density_softmax: return "density_softmax";
        case Method::dac: return "dac";
        case Method::knn_ue: return "knn_ue";
        case Method::knn_ue_no_label: return "knn_ue_no_label";
    }
    return "?";
}

inline Method parse_method(const std::string& name) {
    for (auto m : {Method::sr, Method::ts, Method::density_softmax, Method::dac, Method::knn_ue, Method::knn_ue_no_label}) {
        if (name == to_string(m)) return m;
    }
    fail(ErrorKind::invalid_argument, "unknown method '" + name + "'");
}

inline bool uses_knn(Method m) { return m == Method::knn_ue || m == Method::knn_ue_no_label; }

/// Serialized calibrator: {method, params, bounds, dev_nll, seed} plus the K and index
/// configuration it was fitted with.
struct FittedParams {
    Method method = Method::sr;
    nlohmann::json params = nlohmann::json::object();
    nlohmann::json bounds = nlohmann::json::object();
    double dev_nll = 0.0;
    std::uint64_t seed = 0;
    std::size_t k = calib::kDefaultK;
    nlohmann::json index = nlohmann::json::object();

    nlohmann::json to_json() const {
        return {{"method", to_string(method)}, {"params", params}, {"bounds", bounds}, {"dev_nll", dev_nll},
                {"seed", seed},                {"K", k},           {"index", index}};
    }

    static FittedParams from_json(const nlohmann::json& j) {
        FittedParams p;
        require(j.contains("method"), ErrorKind::invalid_argument, "params file: missing field 'method'");
        p.method = parse_method(j.at("method").get<std::string>());
        p.params = j.value("params", nlohmann::json::object());
        p.bounds = j.value("bounds", nlohmann::json::object());
        p.dev_nll = j.value("dev_nll", 0.0);
        p.seed = j.value("seed", std::uint64_t{0});
        p.k = j.value("K", calib::kDefaultK);
        p.index = j.value("index", nlohmann::json::object());
        return p;
    }
};

/// Per-record outcome of a calibrator over an evaluation set.
struct Scored {
    std::vector<std::int32_t> predicted;      // argmax of calibrated probabilities
    std::vector<std::int32_t> raw_predicted;  // argmax of raw logits
    std::vector<double> confidence;
    std::vector<bool> correct;
    std::vector<std::int32_t> span_ids;

    std::vector<metrics::ScoredPrediction> predictions() const {
        std::vector<metrics::ScoredPrediction> out(confidence.size());
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = {confidence[i], correct[i]};
        return out;
    }

    /// Entity-level predictions: token confidences multiplied within each span.
    std::vector<metrics::ScoredPrediction> entity_predictions() const {
        std::vector<calib::ScoredToken> tokens(confidence.size());
        for (std::size_t i = 0; i < tokens.size(); ++i) tokens[i] = {confidence[i], correct[i], span_ids[i]};
        std::vector<metrics::ScoredPrediction> out;
        for (const auto& e : calib::aggregate_entities(tokens)) out.push_back({e.confidence, e.correct});
        return out;
    }
};

/// Datastore plus lazily built search structures; fits and applies every calibrator.
class Pipeline {
public:
    Pipeline(std::shared_ptr<const Datastore> ds, ann::IndexConfig index_config, std::size_t k, std::size_t threads = 1,
             std::optional<ann::Index> prebuilt = std::nullopt)
        : ds_(std::move(ds)), index_config_(index_config), k_(k), threads_(threads), prebuilt_(std::move(prebuilt)) {
        require(ds_ != nullptr, ErrorKind::invalid_argument, "pipeline needs a datastore");
        require(k_ >= 1 && k_ <= ds_->size(), ErrorKind::invalid_argument,
                "K=" + std::to_string(k_) + " must be in [1, N=" + std::to_string(ds_->size()) + "]");
        if (prebuilt_) index_config_ = prebuilt_->config();
        index_config_.threads = threads_;
    }

    const Datastore& datastore() const { return *ds_; }
    const ann::IndexConfig& index_config() const { return index_config_; }
    std::size_t k() const { return k_; }

    const ann::Searcher& searcher() const {
        if (!searcher_) {
            if (prebuilt_) {
                searcher_.emplace(ds_, *prebuilt_);
            } else {
                searcher_.emplace(ds_, index_config_);
            }
        }
        return *searcher_;
    }

    const calib::DacLayers& dac_layers() const {
        if (!dac_layers_) dac_layers_.emplace(ds_);
        return *dac_layers_;
    }

    void check_set(const EvalSet& set) const {
        require(set.num_classes == ds_->num_classes(), ErrorKind::dimension_mismatch,
                "record set has J=" + std::to_string(set.num_classes) + ", datastore has J=" +
                    std::to_string(ds_->num_classes()));
        require(set.dim == ds_->dim(), ErrorKind::dimension_mismatch,
                "record set has D=" + std::to_string(set.dim) + ", datastore has D=" + std::to_string(ds_->dim()));
        require(!set.records.empty(), ErrorKind::empty_input, "record set is empty");
    }

    std::vector<calib::KnnFeatures> knn_features(const EvalSet& set) const {
        const auto nbhs = searcher().search_all(set, k_, threads_);
        return calib::knn_features(set, nbhs, ds_->labels());
    }

    FittedParams fit(Method method, const EvalSet& dev, std::uint64_t seed, std::size_t density_components = 8) const {
        check_set(dev);
        FittedParams out;
        out.method = method;
        out.seed = seed;
        out.k = k_;
        out.index = index_config_.to_json();
        const std::span<const EvalRecord> records = dev.records;
        switch (method) {
            case Method::sr: {
                out.dev_nll = calib::ts_nll(records, 1.0);
                break;
            }
            case Method::ts: {
                const auto p = calib::ts_fit(records);
                out.params = calib::to_json(p);
                out.bounds = {{"T", {calib::kTemperatureMin, calib::kTemperatureMax}}};
                out.dev_nll = p.dev_nll;
                break;
            }
            case Method::density_softmax: {
                const auto gmm = calib::fit_density(*ds_, std::min(density_components, ds_->size()), seed);
                out.params = gmm.to_json();
                double total = 0.0;
                for (const auto& r : records) total += calib::scaled_nll(r.logits, calib::density_scale(gmm, r.embedding), r.gold);
                out.dev_nll = total / static_cast<double>(records.size());
                break;
            }
            case Method::dac: {
                const auto features = dac_layers().features(dev, k_, threads_);
                const auto p = calib::dac_fit(records, features);
                out.params = calib::to_json(p);
                out.bounds = {{"w", {0.0, calib::kDacWeightMax}}};
                out.dev_nll = p.dev_nll;
                break;
            }
            case Method::knn_ue:
            case Method::knn_ue_no_label: {
                const auto features = knn_features(dev);
                const auto fit = calib::knnue_fit(records, features, k_, method == Method::knn_ue);
                out.params = fit.params.to_json();
                out.bounds = fit.bounds.to_json();
                out.dev_nll = fit.dev_nll;
                break;
            }
        }
        return out;
    }

    /// Calibrated probabilities for every record.
    std::vector<std::vector<double>> probabilities(const FittedParams& fitted, const EvalSet& set) const {
        check_set(set);
        std::vector<std::vector<double>> probs(set.records.size());
        const auto& records = set.records;
        switch (fitted.method) {
            case Method::sr:
                for (std::size_t i = 0; i < records.size(); ++i) probs[i] = calib::softmax(records[i].logits);
                break;
            case Method::ts: {
                const double t = fitted.params.at("T").get<double>();
                for (std::size_t i = 0; i < records.size(); ++i) probs[i] = calib::ts_apply(records[i].logits, t);
                break;
            }
            case Method::density_softmax: {
                const auto gmm = calib::GaussianMixture::from_json(fitted.params);
                for (std::size_t i = 0; i < records.size(); ++i) {
                    probs[i] = calib::density_softmax_apply(records[i].logits, calib::density_scale(gmm, records[i].embedding));
                }
                break;
            }
            case Method::dac: {
                calib::DacParams p{fitted.params.at("w").get<std::vector<double>>()};
                const auto features = dac_layers().features(set, k_, threads_);
                for (std::size_t i = 0; i < records.size(); ++i) {
                    probs[i] = calib::dac_apply(records[i].logits, calib::dac_phi(features[i], p));
                }
                break;
            }
            case Method::knn_ue:
            case Method::knn_ue_no_label: {
                const auto p = calib::KnnUeParams::from_json(fitted.params);
                require(p.k == k_, ErrorKind::invalid_argument,
                        "params were fitted with K=" + std::to_string(p.k) + ", pipeline uses K=" + std::to_string(k_));
                const auto features = knn_features(set);
                for (std::size_t i = 0; i < records.size(); ++i) {
                    const double w = calib::knnue_weight(features[i].dists, features[i].same_label, p);
                    probs[i] = calib::knnue_apply(records[i].logits, w);
                }
                break;
            }
        }
        return probs;
    }

    Scored score(const FittedParams& fitted, const EvalSet& set) const {
        const auto probs = probabilities(fitted, set);
        Scored s;
        for (std::size_t i = 0; i < probs.size(); ++i) {
            const auto top = calib::top_prediction(probs[i]);
            s.predicted.push_back(top.label);
            s.raw_predicted.push_back(calib::argmax(set.records[i].logits));
            s.confidence.push_back(top.confidence);
            s.correct.push_back(top.label == set.records[i].gold);
            s.span_ids.push_back(set.records[i].span_id);
        }
        return s;
    }

private:
    std::shared_ptr<const Datastore> ds_;
    ann::IndexConfig index_config_;
    std::size_t k_;
    std::size_t threads_;
    std::optional<ann::Index> prebuilt_;
    mutable std::optional<ann::Searcher> searcher_;
    mutable std::optional<calib::DacLayers> dac_layers_;
};

}  // namespace knnue::cli
