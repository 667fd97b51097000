#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <vector>

#include "json.hpp"
#include "knnue/calibration/softmax.hpp"
#include "knnue/datastore.hpp"
#include "knnue/optim.hpp"

namespace knnue {

/// Parameters of the Gaussian-blob stand-in for an ID/OOD classification corpus.
///
/// Each class c has mean separation * u_c (u_c a random unit vector) and isotropic
/// spread noise_sd * scale(c); scale ramps linearly from 1 to 2 across classes unless
/// class_scales is given. Logits come from a multinomial logistic regression
/// fitted on the train split, multiplied by `overconfidence`. OOD points are drawn from
/// the same classes with every mean moved by ood_shift * noise_sd along one fixed random
/// direction.
struct SynthSpec {
    std::uint32_t num_classes = 3;
    std::uint32_t dim = 32;
    double separation = 2.0;
    double noise_sd = 1.0;
    std::vector<double> class_scales;  // empty = linear ramp from 1 to 2 over classes
    double label_noise = 0.05;
    double ood_shift = 4.0;
    std::size_t n_train = 5000;
    std::size_t n_dev = 1000;
    std::size_t n_test = 1000;
    std::size_t n_ood = 1000;
    double overconfidence = 3.0;
    std::uint32_t layer_count = 0;
    std::uint32_t span_length = 0;  // > 0 groups consecutive eval records into entities
    std::uint64_t seed = 0;

    void validate() const {
        require(num_classes > 0, ErrorKind::invalid_argument, "num_classes must be > 0");
        require(dim > 0, ErrorKind::invalid_argument, "dim must be > 0");
        require(n_train > 0 && n_dev > 0 && n_test > 0 && n_ood > 0, ErrorKind::invalid_argument,
                "split sizes must be > 0");
        require(label_noise >= 0.0 && label_noise <= 1.0, ErrorKind::invalid_argument, "label_noise must be in [0, 1]");
        require(noise_sd > 0.0, ErrorKind::invalid_argument, "noise_sd must be > 0");
        require(overconfidence > 0.0, ErrorKind::invalid_argument, "overconfidence must be > 0");
        require(class_scales.empty() || class_scales.size() == num_classes, ErrorKind::dimension_mismatch,
                "class_scales must have one entry per class");
        for (double s : class_scales) require(s > 0.0, ErrorKind::invalid_argument, "class scales must be > 0");
    }

    double scale(std::size_t c) const {
        if (!class_scales.empty()) return class_scales[c];
        return num_classes > 1 ? 1.0 + static_cast<double>(c) / static_cast<double>(num_classes - 1) : 1.0;
    }
};

inline nlohmann::json to_json(const SynthSpec& s) {
    return {{"num_classes", s.num_classes}, {"dim", s.dim},           {"separation", s.separation},
            {"noise_sd", s.noise_sd},       {"class_scales", s.class_scales}, {"label_noise", s.label_noise},
            {"ood_shift", s.ood_shift},     {"n_train", s.n_train},   {"n_dev", s.n_dev},
            {"n_test", s.n_test},           {"n_ood", s.n_ood},       {"overconfidence", s.overconfidence},
            {"layer_count", s.layer_count}, {"span_length", s.span_length}, {"seed", s.seed}};
}

inline SynthSpec synth_spec_from_json(const nlohmann::json& j) {
    SynthSpec s;
    auto take = [&](const char* key, auto& field) {
        if (j.contains(key)) field = j.at(key).get<std::decay_t<decltype(field)>>();
    };
    take("num_classes", s.num_classes);
    take("dim", s.dim);
    take("separation", s.separation);
    take("noise_sd", s.noise_sd);
    take("class_scales", s.class_scales);
    take("label_noise", s.label_noise);
    take("ood_shift", s.ood_shift);
    take("n_train", s.n_train);
    take("n_dev", s.n_dev);
    take("n_test", s.n_test);
    take("n_ood", s.n_ood);
    take("overconfidence", s.overconfidence);
    take("layer_count", s.layer_count);
    take("span_length", s.span_length);
    take("seed", s.seed);
    return s;
}

/// Linear softmax classifier: logits = weights * x + bias.
struct LinearModel {
    std::size_t num_classes = 0;
    std::size_t dim = 0;
    std::vector<double> weights;  // num_classes x dim
    std::vector<double> bias;

    std::vector<float> logits(std::span<const float> x, double scale = 1.0) const {
        std::vector<float> out(num_classes);
        for (std::size_t c = 0; c < num_classes; ++c) {
            double acc = bias[c];
            for (std::size_t j = 0; j < dim; ++j) acc += weights[c * dim + j] * x[j];
            out[c] = static_cast<float>(scale * acc);
        }
        return out;
    }
};

/// L2-regularized multinomial logistic regression fitted with the bounded quasi-Newton solver.
inline LinearModel fit_logistic(const Matrix& x, std::span<const std::int32_t> y, std::size_t num_classes,
                                double l2 = 1e-3) {
    const std::size_t n = x.rows;
    const std::size_t d = x.cols;
    const std::size_t params = num_classes * (d + 1);

    auto unpack_logits = [&](std::span<const double> theta, std::size_t i, std::vector<double>& z) {
        const auto row = x.row(i);
        for (std::size_t c = 0; c < num_classes; ++c) {
            double acc = theta[num_classes * d + c];
            for (std::size_t j = 0; j < d; ++j) acc += theta[c * d + j] * row[j];
            z[c] = acc;
        }
    };

    optim::BoundedProblem problem;
    problem.dim = params;
    problem.lower.assign(params, -50.0);
    problem.upper.assign(params, 50.0);
    problem.pgtol = 1e-7;
    problem.max_iterations = 300;
    problem.objective = [&](std::span<const double> theta) {
        std::vector<double> z(num_classes);
        double total = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            unpack_logits(theta, i, z);
            total += calib::scaled_nll(std::span<const double>(z), 1.0, y[i]);
        }
        double reg = 0.0;
        for (std::size_t k = 0; k < num_classes * d; ++k) reg += theta[k] * theta[k];
        return total / static_cast<double>(n) + 0.5 * l2 * reg;
    };
    problem.gradient = [&](std::span<const double> theta, std::span<double> grad) {
        std::fill(grad.begin(), grad.end(), 0.0);
        std::vector<double> z(num_classes);
        for (std::size_t i = 0; i < n; ++i) {
            unpack_logits(theta, i, z);
            const auto p = calib::softmax(std::span<const double>(z));
            const auto row = x.row(i);
            for (std::size_t c = 0; c < num_classes; ++c) {
                const double r = p[c] - (static_cast<std::int32_t>(c) == y[i] ? 1.0 : 0.0);
                for (std::size_t j = 0; j < d; ++j) grad[c * d + j] += r * row[j];
                grad[num_classes * d + c] += r;
            }
        }
        for (auto& g : grad) g /= static_cast<double>(n);
        for (std::size_t k = 0; k < num_classes * d; ++k) grad[k] += l2 * theta[k];
    };
    const std::vector<double> x0(params, 0.0);
    const auto result = optim::minimize_bounded(problem, x0);

    LinearModel model;
    model.num_classes = num_classes;
    model.dim = d;
    model.weights.assign(result.x.begin(), result.x.begin() + static_cast<std::ptrdiff_t>(num_classes * d));
    model.bias.assign(result.x.begin() + static_cast<std::ptrdiff_t>(num_classes * d), result.x.end());
    return model;
}

struct SyntheticData {
    Datastore train;
    EvalSet dev;
    EvalSet test_id;
    EvalSet test_ood;
    Matrix class_means;
    LinearModel model;  // unscaled; record logits are overconfidence * model.logits
};

namespace detail {

// Platform-independent standard normal draws (Box-Muller over raw 64-bit engine output).
class NormalSource {
public:
    explicit NormalSource(std::uint64_t seed) : rng_(seed) {}

    double next() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = 0.0;
        while (u1 <= 0.0) u1 = uniform();
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        spare_ = r * std::sin(2.0 * std::numbers::pi * u2);
        has_spare_ = true;
        return r * std::cos(2.0 * std::numbers::pi * u2);
    }

    double uniform() { return static_cast<double>(rng_() >> 11) * 0x1.0p-53; }
    std::uint64_t bits() { return rng_(); }

private:
    std::mt19937_64 rng_;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

struct Draw {
    std::vector<float> x;
    std::int32_t cls = 0;
    std::int32_t label = 0;
};

inline Draw draw_point(const SynthSpec& spec, const Matrix& means, std::span<const double> shift, NormalSource& src) {
    Draw d;
    d.cls = static_cast<std::int32_t>(src.bits() % spec.num_classes);
    d.label = d.cls;
    if (spec.num_classes > 1 && src.uniform() < spec.label_noise) {
        const auto offset = 1 + src.bits() % (spec.num_classes - 1);
        d.label = static_cast<std::int32_t>((static_cast<std::uint64_t>(d.cls) + offset) % spec.num_classes);
    }
    const double sd = spec.noise_sd * spec.scale(static_cast<std::size_t>(d.cls));
    d.x.resize(spec.dim);
    for (std::size_t j = 0; j < spec.dim; ++j) {
        d.x[j] = static_cast<float>(means(static_cast<std::size_t>(d.cls), j) + shift[j] + sd * src.next());
    }
    return d;
}

// Layer l (0-based) of L sees the final embedding plus noise shrinking towards the last layer.
inline std::vector<std::vector<float>> layer_views(const SynthSpec& spec, std::span<const float> x, NormalSource& src) {
    std::vector<std::vector<float>> layers(spec.layer_count);
    for (std::uint32_t l = 0; l < spec.layer_count; ++l) {
        const double sd = spec.noise_sd * static_cast<double>(spec.layer_count - 1 - l) / spec.layer_count;
        layers[l].resize(x.size());
        for (std::size_t j = 0; j < x.size(); ++j) layers[l][j] = static_cast<float>(x[j] + sd * src.next());
    }
    return layers;
}

}  // namespace detail

/// Deterministic function of the spec (including its seed).
inline SyntheticData generate_synthetic(const SynthSpec& spec) {
    spec.validate();
    const std::size_t dim = spec.dim;

    detail::NormalSource mean_src(derive_seed(spec.seed, 100));
    Matrix means(spec.num_classes, dim);
    for (std::size_t c = 0; c < spec.num_classes; ++c) {
        std::vector<double> u(dim);
        double norm = 0.0;
        for (auto& v : u) {
            v = mean_src.next();
            norm += v * v;
        }
        norm = std::sqrt(norm);
        for (std::size_t j = 0; j < dim; ++j) means(c, j) = static_cast<float>(spec.separation * spec.noise_sd * u[j] / norm);
    }
    std::vector<double> ood_direction(dim);
    {
        double norm = 0.0;
        for (auto& v : ood_direction) {
            v = mean_src.next();
            norm += v * v;
        }
        norm = std::sqrt(norm);
        for (auto& v : ood_direction) v = spec.ood_shift * spec.noise_sd * v / norm;
    }
    const std::vector<double> no_shift(dim, 0.0);

    // Train split.
    detail::NormalSource train_src(derive_seed(spec.seed, 1));
    Matrix keys(spec.n_train, dim);
    std::vector<std::int32_t> labels(spec.n_train);
    std::vector<Matrix> layers(spec.layer_count, Matrix(spec.n_train, dim));
    for (std::size_t i = 0; i < spec.n_train; ++i) {
        const auto d = detail::draw_point(spec, means, no_shift, train_src);
        std::copy(d.x.begin(), d.x.end(), keys.row(i).begin());
        labels[i] = d.label;
        const auto views = detail::layer_views(spec, d.x, train_src);
        for (std::size_t l = 0; l < views.size(); ++l) std::copy(views[l].begin(), views[l].end(), layers[l].row(i).begin());
    }

    const auto model = fit_logistic(keys, labels, spec.num_classes);

    auto make_split = [&](std::size_t count, std::uint64_t stream, std::span<const double> shift) {
        detail::NormalSource src(derive_seed(spec.seed, stream));
        EvalSet set;
        set.num_classes = spec.num_classes;
        set.dim = spec.dim;
        set.layer_dims.assign(spec.layer_count, spec.dim);
        set.records.reserve(count);
        for (std::size_t i = 0; i < count; ++i) {
            const auto d = detail::draw_point(spec, means, shift, src);
            EvalRecord rec;
            rec.logits = model.logits(d.x, spec.overconfidence);
            rec.layer_embeddings = detail::layer_views(spec, d.x, src);
            rec.embedding = d.x;
            rec.gold = d.label;
            rec.span_id = spec.span_length > 0 ? static_cast<std::int32_t>(i / spec.span_length) : -1;
            set.records.push_back(std::move(rec));
        }
        return set;
    };

    return SyntheticData{
        Datastore(std::move(keys), std::move(labels), spec.num_classes, std::move(layers), spec.seed, "synthetic"),
        make_split(spec.n_dev, 2, no_shift),
        make_split(spec.n_test, 3, no_shift),
        make_split(spec.n_ood, 4, ood_direction),
        std::move(means),
        model,
    };
}

/// Bayes posterior of the generator for an unshifted point (equal class priors, no label noise).
inline std::vector<double> true_posterior(const SynthSpec& spec, const Matrix& means, std::span<const float> x) {
    std::vector<double> log_p(spec.num_classes);
    for (std::size_t c = 0; c < spec.num_classes; ++c) {
        const double sd = spec.noise_sd * spec.scale(c);
        log_p[c] = -squared_l2(x, means.row(c)) / (2.0 * sd * sd) - static_cast<double>(spec.dim) * std::log(sd);
    }
    return calib::softmax(std::span<const double>(log_p));
}

}  // namespace knnue
