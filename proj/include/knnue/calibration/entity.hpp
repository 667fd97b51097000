#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <vector>

#include "json.hpp"
#include "knnue/ann/index.hpp"
#include "knnue/calibration/knn_ue.hpp"
#include "knnue/calibration/softmax.hpp"

namespace knnue::calib {

/// Entity confidence is the product of its tokens' confidences.
inline double entity_confidence(std::span<const double> token_confidences) {
    require(!token_confidences.empty(), ErrorKind::empty_input, "entity span has no tokens");
    double product = 1.0;
    for (double c : token_confidences) {
        require(c > 0.0 && c <= 1.0, ErrorKind::invalid_argument, "token confidence must be in (0, 1]");
        product *= c;
    }
    return product;
}

struct ScoredToken {
    double confidence = 0.0;
    bool correct = false;
    std::int32_t span_id = -1;
};

struct ScoredEntity {
    double confidence = 0.0;
    bool correct = false;
};

/// Groups tokens by span id (in order of first appearance). An entity is correct only when
/// every token is. Tokens with span_id < 0 stand alone.
inline std::vector<ScoredEntity> aggregate_entities(std::span<const ScoredToken> tokens) {
    std::vector<ScoredEntity> out;
    std::vector<std::vector<double>> confidences;
    std::map<std::int32_t, std::size_t> slot;
    for (const auto& t : tokens) {
        std::size_t at;
        if (t.span_id < 0) {
            at = out.size();
            out.push_back({0.0, true});
            confidences.emplace_back();
        } else if (auto it = slot.find(t.span_id); it != slot.end()) {
            at = it->second;
        } else {
            at = out.size();
            slot.emplace(t.span_id, at);
            out.push_back({0.0, true});
            confidences.emplace_back();
        }
        confidences[at].push_back(t.confidence);
        out[at].correct = out[at].correct && t.correct;
    }
    for (std::size_t i = 0; i < out.size(); ++i) out[i].confidence = entity_confidence(confidences[i]);
    return out;
}

/// Introspection for one instance: SR and kNN-UE confidences side by side with the
/// neighbor evidence behind them.
struct CaseReport {
    std::int32_t prediction = 0;
    std::int32_t gold = 0;
    double sr_conf = 0.0;
    double knnue_conf = 0.0;
    double knnue_wo_label_conf = 0.0;
    double weight = 0.0;
    double weight_wo_label = 0.0;
    std::size_t same_label = 0;
    std::size_t k = 0;
    std::vector<std::int64_t> neighbor_ids;
    std::vector<double> neighbor_dists;

    friend bool operator==(const CaseReport&, const CaseReport&) = default;
};

inline nlohmann::json to_json(const CaseReport& r) {
    return {{"prediction", r.prediction},
            {"gold", r.gold},
            {"sr_conf", r.sr_conf},
            {"knnue_conf", r.knnue_conf},
            {"knnue_wo_label_conf", r.knnue_wo_label_conf},
            {"weight", r.weight},
            {"weight_wo_label", r.weight_wo_label},
            {"S", r.same_label},
            {"K", r.k},
            {"neighbor_ids", r.neighbor_ids},
            {"neighbor_dists", r.neighbor_dists}};
}

inline CaseReport case_report_from_json(const nlohmann::json& j) {
    CaseReport r;
    r.prediction = j.at("prediction").get<std::int32_t>();
    r.gold = j.at("gold").get<std::int32_t>();
    r.sr_conf = j.at("sr_conf").get<double>();
    r.knnue_conf = j.at("knnue_conf").get<double>();
    r.knnue_wo_label_conf = j.at("knnue_wo_label_conf").get<double>();
    r.weight = j.at("weight").get<double>();
    r.weight_wo_label = j.at("weight_wo_label").get<double>();
    r.same_label = j.at("S").get<std::size_t>();
    r.k = j.at("K").get<std::size_t>();
    r.neighbor_ids = j.at("neighbor_ids").get<std::vector<std::int64_t>>();
    r.neighbor_dists = j.at("neighbor_dists").get<std::vector<double>>();
    return r;
}

inline CaseReport case_report(const EvalRecord& record, const ann::Searcher& searcher,
                              const std::optional<KnnUeParams>& with_label,
                              const std::optional<KnnUeParams>& without_label) {
    require(with_label.has_value() && without_label.has_value(), ErrorKind::not_fitted,
            "case report needs fitted kNN-UE parameters (with and without label term)");
    require(with_label->k == without_label->k, ErrorKind::invalid_argument, "parameter sets disagree on K");
    const auto nbh = searcher.search(record.embedding, with_label->k);
    const auto sr = sr_confidence(record.logits);
    const auto& labels = searcher.datastore().labels();

    CaseReport r;
    r.prediction = sr.label;
    r.gold = record.gold;
    r.sr_conf = sr.confidence;
    r.same_label = same_label_count(nbh, sr.label, labels);
    r.k = nbh.size();
    r.weight = knnue_weight(nbh, sr.label, labels, *with_label);
    r.weight_wo_label = knnue_weight(nbh, sr.label, labels, *without_label);
    r.knnue_conf = knnue_apply(record.logits, r.weight)[static_cast<std::size_t>(sr.label)];
    r.knnue_wo_label_conf = knnue_apply(record.logits, r.weight_wo_label)[static_cast<std::size_t>(sr.label)];
    r.neighbor_ids = nbh.ids;
    r.neighbor_dists = nbh.dists;
    return r;
}

}  // namespace knnue::calib
