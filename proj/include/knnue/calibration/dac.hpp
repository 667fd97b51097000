#pragma once

#include <memory>
#include <vector>

#include "json.hpp"
#include "knnue/ann/index.hpp"
#include "knnue/calibration/softmax.hpp"
#include "knnue/optim.hpp"

namespace knnue::calib {

inline constexpr double kPhiFloor = 1e-3;
inline constexpr double kDacWeightMax = 1e3;

/// w[0] is the bias, w[1..L] the per-layer weights.
struct DacParams {
    std::vector<double> w;
    double dev_nll = 0.0;

    std::size_t layers() const { return w.empty() ? 0 : w.size() - 1; }
};

/// Sample-dependent temperature: sum_l w_l s_l + w_0, floored at 1e-3.
inline double dac_phi(std::span<const double> layer_dists, const DacParams& params) {
    require(params.w.size() == layer_dists.size() + 1, ErrorKind::dimension_mismatch,
            "DAC expects " + std::to_string(params.layers()) + " layer distances, got " +
                std::to_string(layer_dists.size()));
    double phi = params.w[0];
    for (std::size_t l = 0; l < layer_dists.size(); ++l) phi += params.w[l + 1] * layer_dists[l];
    return std::max(phi, kPhiFloor);
}

inline std::vector<double> dac_apply(std::span<const float> logits, double phi) {
    require(phi > 0.0, ErrorKind::invalid_argument, "DAC temperature must be positive");
    return scaled_softmax(logits, 1.0 / phi);
}

/// Per-layer flat searchers. Uses the datastore's layer groups when present, otherwise its
/// keys as a single layer.
class DacLayers {
public:
    explicit DacLayers(const std::shared_ptr<const Datastore>& ds) {
        if (ds->layers().empty()) {
            searchers_.emplace_back(ds, ann::IndexConfig{});
            return;
        }
        for (const auto& layer : ds->layers()) {
            auto layer_ds = std::make_shared<const Datastore>(layer, ds->labels(), ds->num_classes());
            searchers_.emplace_back(layer_ds, ann::IndexConfig{});
        }
        use_layers_ = true;
    }

    std::size_t count() const { return searchers_.size(); }

    /// s_l = mean of the K squared distances on layer l.
    std::vector<double> features(const EvalRecord& rec, std::size_t k) const {
        std::vector<double> s(count());
        if (use_layers_) {
            require(rec.layer_embeddings.size() == count(), ErrorKind::dimension_mismatch,
                    "record has " + std::to_string(rec.layer_embeddings.size()) + " layers, datastore has " +
                        std::to_string(count()));
        }
        for (std::size_t l = 0; l < count(); ++l) {
            const auto& query = use_layers_ ? rec.layer_embeddings[l] : rec.embedding;
            const auto nbh = searchers_[l].search(query, k);
            double sum = 0.0;
            for (double d : nbh.dists) sum += d;
            s[l] = sum / static_cast<double>(nbh.size());
        }
        return s;
    }

    std::vector<std::vector<double>> features(const EvalSet& set, std::size_t k, std::size_t threads = 1) const {
        std::vector<std::vector<double>> out(set.records.size());
        parallel_for(out.size(), threads, [&](std::size_t i) { out[i] = features(set.records[i], k); });
        return out;
    }

private:
    std::vector<ann::Searcher> searchers_;
    bool use_layers_ = false;
};

inline double dac_nll(std::span<const EvalRecord> dev, const std::vector<std::vector<double>>& features,
                      const DacParams& params) {
    double total = 0.0;
    for (std::size_t i = 0; i < dev.size(); ++i) {
        total += scaled_nll(dev[i].logits, 1.0 / dac_phi(features[i], params), dev[i].gold);
    }
    return total / static_cast<double>(dev.size());
}

/// Minimizes dev NLL over w >= 0 from w_0 = 1, w_l = 0.
inline DacParams dac_fit(std::span<const EvalRecord> dev, const std::vector<std::vector<double>>& features) {
    require(!dev.empty(), ErrorKind::empty_input, "DAC needs a nonempty dev set");
    require(features.size() == dev.size(), ErrorKind::dimension_mismatch, "one feature row per dev record");
    const std::size_t layers = features.front().size();
    optim::BoundedProblem problem;
    problem.dim = layers + 1;
    problem.lower.assign(problem.dim, 0.0);
    problem.upper.assign(problem.dim, kDacWeightMax);
    problem.objective = [&](std::span<const double> w) {
        return dac_nll(dev, features, DacParams{{w.begin(), w.end()}});
    };
    std::vector<double> x0(problem.dim, 0.0);
    x0[0] = 1.0;
    const auto result = optim::minimize_bounded(problem, x0);
    return {result.x, result.f};
}

inline nlohmann::json to_json(const DacParams& p) { return {{"w", p.w}}; }

}  // namespace knnue::calib
