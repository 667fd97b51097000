#pragma once

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "knnue/cli/pipeline.hpp"
#include "knnue/synthetic.hpp"

namespace knnue::cli {

namespace fs = std::filesystem;

/// Everything a subcommand needs. Precedence when populated by the CLI:
/// flags > config file > these defaults.
struct RunConfig {
    std::string datastore;
    std::string dev;
    std::string test_id;
    std::string test_ood;
    std::string out = "out";
    std::string params;
    std::string spec;
    std::string index_path;
    Method method = Method::knn_ue;
    ann::IndexConfig index;
    std::size_t k = calib::kDefaultK;
    std::uint64_t seed = 0;
    bool seed_set = false;
    bool method_set = false;
    std::size_t repeats = 3;
    std::size_t threads = 1;
    std::size_t bins = 10;
    std::size_t density_components = 8;

    std::string sweep = "k";
    std::vector<std::size_t> sweep_k{8, 16, 32, 64, 128};
    std::vector<std::size_t> sweep_nsub{4, 8, 16, 32};
    std::vector<std::size_t> sweep_nprobe{8, 16, 32, 64};
    std::vector<std::size_t> sweep_dpca{4, 8, 16, 32};

    std::size_t bench_n = 100000;
    std::size_t bench_d = 768;
    std::size_t bench_queries = 100;

    std::uint64_t index_seed() const { return derive_seed(seed, 10); }
    std::uint64_t fit_seed() const { return derive_seed(seed, 11); }
    std::uint64_t bench_seed() const { return derive_seed(seed, 12); }
};

/// Applies fields present in a JSON config document on top of `cfg`.
inline void apply_config_json(RunConfig& cfg, const nlohmann::json& j) {
    auto take = [&](const char* key, auto& field) {
        if (j.contains(key)) field = j.at(key).get<std::decay_t<decltype(field)>>();
    };
    take("datastore", cfg.datastore);
    take("dev", cfg.dev);
    take("test_id", cfg.test_id);
    take("test_ood", cfg.test_ood);
    take("out", cfg.out);
    take("params", cfg.params);
    take("spec", cfg.spec);
    take("index_path", cfg.index_path);
    if (j.contains("method")) {
        cfg.method = parse_method(j.at("method").get<std::string>());
        cfg.method_set = true;
    }
    take("k", cfg.k);
    if (j.contains("seed")) {
        cfg.seed = j.at("seed").get<std::uint64_t>();
        cfg.seed_set = true;
    }
    take("repeats", cfg.repeats);
    take("threads", cfg.threads);
    take("bins", cfg.bins);
    take("density_components", cfg.density_components);
    if (j.contains("index")) {
        const auto& ij = j.at("index");
        auto itake = [&](const char* key, auto& field) {
            if (ij.contains(key)) field = ij.at(key).get<std::decay_t<decltype(field)>>();
        };
        itake("n_list", cfg.index.n_list);
        itake("n_probe", cfg.index.n_probe);
        itake("n_sub", cfg.index.n_sub);
        itake("n_centroids", cfg.index.n_centroids);
        itake("d_pca", cfg.index.d_pca);
        itake("recompute", cfg.index.recompute);
        itake("kmeans_iters", cfg.index.kmeans_iters);
    }
    if (j.contains("sweep")) {
        const auto& sj = j.at("sweep");
        if (sj.is_string()) {
            cfg.sweep = sj.get<std::string>();
        } else {
            auto stake = [&](const char* key, auto& field) {
                if (sj.contains(key)) field = sj.at(key).get<std::decay_t<decltype(field)>>();
            };
            stake("param", cfg.sweep);
            stake("k", cfg.sweep_k);
            stake("nsub", cfg.sweep_nsub);
            stake("nprobe", cfg.sweep_nprobe);
            stake("dpca", cfg.sweep_dpca);
        }
    }
    if (j.contains("bench")) {
        const auto& bj = j.at("bench");
        if (bj.contains("n")) cfg.bench_n = bj.at("n").get<std::size_t>();
        if (bj.contains("d")) cfg.bench_d = bj.at("d").get<std::size_t>();
        if (bj.contains("queries")) cfg.bench_queries = bj.at("queries").get<std::size_t>();
    }
}

inline void require_file(const std::string& path, const std::string& field) {
    require(!path.empty(), ErrorKind::invalid_argument, "missing required path '" + field + "'");
    require(fs::exists(path), ErrorKind::invalid_argument, field + ": no such file '" + path + "'");
}

inline void write_json(const fs::path& path, const nlohmann::json& j) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path);
    require(out.good(), ErrorKind::io, "cannot write " + path.string());
    out << j.dump(2) << '\n';
}

inline nlohmann::json read_json(const std::string& path, const std::string& field) {
    require_file(path, field);
    std::ifstream in(path);
    const auto j = nlohmann::json::parse(in, nullptr, false);
    require(!j.is_discarded(), ErrorKind::invalid_argument, field + ": '" + path + "' is not valid JSON");
    return j;
}

// ---------------------------------------------------------------------------- synth

inline nlohmann::json cmd_synth(const RunConfig& cfg) {
    SynthSpec spec;
    if (!cfg.spec.empty()) spec = synth_spec_from_json(read_json(cfg.spec, "spec"));
    if (cfg.seed_set) spec.seed = cfg.seed;
    const auto data = generate_synthetic(spec);

    const fs::path out(cfg.out);
    fs::create_directories(out);
    const auto train = (out / "train.kue").string();
    const auto dev = (out / "dev.kur").string();
    const auto test_id = (out / "test_id.kur").string();
    const auto test_ood = (out / "test_ood.kur").string();
    write_datastore(data.train, train);
    write_records(data.dev, dev);
    write_records(data.test_id, test_id);
    write_records(data.test_ood, test_ood);
    write_json(out / "spec.json", to_json(spec));
    return {{"datastore", train}, {"dev", dev}, {"test_id", test_id}, {"test_ood", test_ood}, {"spec", to_json(spec)}};
}

// ---------------------------------------------------------------------------- build-index

inline ann::IndexConfig seeded_index(const RunConfig& cfg) {
    auto ic = cfg.index;
    ic.seed = cfg.index_seed();
    ic.threads = cfg.threads;
    return ic;
}

inline nlohmann::json cmd_build_index(const RunConfig& cfg) {
    require_file(cfg.datastore, "datastore");
    const auto ds = read_datastore(cfg.datastore);
    const auto index = ann::compose(ds, seeded_index(cfg));
    const fs::path out = cfg.index_path.empty() ? fs::path(cfg.out) / "index.kux" : fs::path(cfg.index_path);
    if (out.has_parent_path()) fs::create_directories(out.parent_path());
    index.write(out.string());
    return {{"index", out.string()}, {"config", index.config().to_json()}, {"N", index.size()},
            {"input_dim", index.input_dim()}, {"search_dim", index.search_dim()}};
}

inline Pipeline make_pipeline(const RunConfig& cfg, std::size_t k, const ann::IndexConfig& index) {
    require_file(cfg.datastore, "datastore");
    auto ds = std::make_shared<const Datastore>(read_datastore(cfg.datastore));
    std::optional<ann::Index> prebuilt;
    if (!cfg.index_path.empty()) {
        require_file(cfg.index_path, "index_path");
        prebuilt = ann::Index::read(cfg.index_path);
    }
    return Pipeline(std::move(ds), index, k, cfg.threads, std::move(prebuilt));
}

// ---------------------------------------------------------------------------- fit

inline nlohmann::json cmd_fit(const RunConfig& cfg) {
    require_file(cfg.dev, "dev");
    const auto pipeline = make_pipeline(cfg, cfg.k, seeded_index(cfg));
    const auto dev = read_records(cfg.dev);
    auto fitted = pipeline.fit(cfg.method, dev, cfg.fit_seed(), cfg.density_components);
    auto j = fitted.to_json();
    if (cfg.method == Method::sr) j["note"] = "softmax response has no parameters; nothing to fit";
    const fs::path out = cfg.params.empty() ? fs::path(cfg.out) / ("params_" + std::string(to_string(cfg.method)) + ".json")
                                            : fs::path(cfg.params);
    write_json(out, j);
    j["path"] = out.string();
    return j;
}

// ---------------------------------------------------------------------------- eval

struct SplitEvaluation {
    metrics::MetricsReport report;
    std::vector<double> scores;  // confidences used for OOD detection (entity-level in entity mode)
    Scored scored;
};

inline SplitEvaluation evaluate_split(const Pipeline& pipeline, const FittedParams& fitted, const EvalSet& set,
                                      const std::string& split, std::size_t repeats, std::size_t bins) {
    SplitEvaluation ev;
    const auto latency = metrics::bench_latency([&] { ev.scored = pipeline.score(fitted, set); }, set.records.size(),
                                                std::max<std::size_t>(repeats, 3), pipeline.index_config().threads);
    const auto preds = set.has_spans() ? ev.scored.entity_predictions() : ev.scored.predictions();
    ev.report = metrics::evaluate(preds, bins);
    ev.report.split = split;
    ev.report.method = to_string(fitted.method);
    ev.report.latency = latency;
    for (const auto& p : preds) ev.scores.push_back(p.confidence);
    return ev;
}

inline FittedParams load_or_default_params(const RunConfig& cfg) {
    if (cfg.params.empty()) {
        require(cfg.method == Method::sr, ErrorKind::invalid_argument,
                "params: method '" + std::string(to_string(cfg.method)) + "' needs a fitted params file");
        FittedParams p;
        p.method = Method::sr;
        p.k = cfg.k;
        return p;
    }
    auto p = FittedParams::from_json(read_json(cfg.params, "params"));
    require(!cfg.method_set || cfg.method == p.method, ErrorKind::invalid_argument,
            "method: '" + std::string(to_string(cfg.method)) + "' does not match params file method '" +
                to_string(p.method) + "'");
    return p;
}

inline nlohmann::json cmd_eval(const RunConfig& cfg) {
    require_file(cfg.test_id, "test_id");
    const auto fitted = load_or_default_params(cfg);
    const std::size_t k = cfg.params.empty() ? cfg.k : fitted.k;
    const auto pipeline = make_pipeline(cfg, k, seeded_index(cfg));

    const auto test_id = read_records(cfg.test_id);
    auto id_eval = evaluate_split(pipeline, fitted, test_id, "id", cfg.repeats, cfg.bins);
    nlohmann::json reports = nlohmann::json::array();
    if (!cfg.test_ood.empty()) {
        require_file(cfg.test_ood, "test_ood");
        const auto test_ood = read_records(cfg.test_ood);
        auto ood_eval = evaluate_split(pipeline, fitted, test_ood, "ood", cfg.repeats, cfg.bins);
        ood_eval.report.ood = metrics::ood_metrics(id_eval.scores, ood_eval.scores);
        reports.push_back(metrics::to_json(id_eval.report));
        reports.push_back(metrics::to_json(ood_eval.report));
    } else {
        reports.push_back(metrics::to_json(id_eval.report));
    }
    nlohmann::json j = {{"method", to_string(fitted.method)},
                        {"K", k},
                        {"index", pipeline.index_config().to_json()},
                        {"entity_mode", test_id.has_spans()},
                        {"reports", reports}};
    write_json(fs::path(cfg.out) / ("report_" + std::string(to_string(fitted.method)) + ".json"), j);
    return j;
}

// ---------------------------------------------------------------------------- coverage

inline std::vector<ann::Neighborhood> search_set(const ann::Searcher& s, const EvalSet& set, std::size_t k,
                                                 std::size_t threads) {
    return s.search_all(set, k, threads);
}

/// The ablation ladder: exact, +PQ, +IVF, +PCA applied cumulatively, plus PCA alone.
inline std::vector<std::pair<std::string, ann::IndexConfig>> composition_stages(const ann::IndexConfig& base,
                                                                                std::size_t dim) {
    auto pick_nsub = [&](std::size_t d) {
        std::size_t want = base.n_sub ? base.n_sub : std::max<std::size_t>(1, dim / 4);
        while (want > 1 && d % want != 0) --want;
        return want;
    };
    const std::size_t dpca = base.d_pca ? base.d_pca : std::max<std::size_t>(1, dim / 4);
    const std::size_t nprobe = base.n_probe ? base.n_probe : std::min<std::size_t>(32, base.n_list);

    ann::IndexConfig exact = base;
    exact.n_probe = exact.n_sub = exact.d_pca = 0;
    ann::IndexConfig pq = exact;
    pq.n_sub = pick_nsub(dim);
    ann::IndexConfig pq_ivf = pq;
    pq_ivf.n_probe = nprobe;
    ann::IndexConfig all = pq_ivf;
    all.d_pca = dpca;
    all.n_sub = pick_nsub(dpca);
    ann::IndexConfig only_pca = exact;
    only_pca.d_pca = dpca;
    return {{"exact", exact}, {"+pq", pq}, {"+ivf", pq_ivf}, {"+pca", all}, {"pca_only", only_pca}};
}

inline nlohmann::json cmd_coverage(const RunConfig& cfg) {
    require_file(cfg.datastore, "datastore");
    require_file(cfg.test_id, "test_id");
    auto ds = std::make_shared<const Datastore>(read_datastore(cfg.datastore));
    const auto test = read_records(cfg.test_id);
    require(test.dim == ds->dim(), ErrorKind::dimension_mismatch, "test_id dimension differs from datastore");
    require(cfg.k >= 1 && cfg.k <= ds->size(), ErrorKind::invalid_argument, "k must be in [1, N]");

    auto base = seeded_index(cfg);
    ann::IndexConfig exact_cfg = base;
    exact_cfg.n_probe = exact_cfg.n_sub = exact_cfg.d_pca = 0;
    const ann::Searcher exact(ds, exact_cfg);
    const auto reference = search_set(exact, test, cfg.k, cfg.threads);

    const ann::Searcher approx(ds, base);
    const double configured = ann::coverage(reference, search_set(approx, test, cfg.k, cfg.threads));

    nlohmann::json stages = nlohmann::json::array();
    for (const auto& [name, ic] : composition_stages(base, ds->dim())) {
        const ann::Searcher s(ds, ic);
        stages.push_back({{"stage", name}, {"config", ic.to_json()},
                          {"coverage", ann::coverage(reference, search_set(s, test, cfg.k, cfg.threads))}});
    }
    nlohmann::json j = {{"K", cfg.k},          {"queries", test.records.size()}, {"config", base.to_json()},
                        {"coverage", configured}, {"stages", stages}};
    write_json(fs::path(cfg.out) / "coverage.json", j);
    return j;
}

// ---------------------------------------------------------------------------- sweep

inline const std::vector<std::size_t>& sweep_values(const RunConfig& cfg) {
    if (cfg.sweep == "k") return cfg.sweep_k;
    if (cfg.sweep == "nsub") return cfg.sweep_nsub;
    if (cfg.sweep == "nprobe") return cfg.sweep_nprobe;
    if (cfg.sweep == "dpca") return cfg.sweep_dpca;
    fail(ErrorKind::invalid_argument, "sweep: unknown parameter '" + cfg.sweep + "' (k|nsub|nprobe|dpca|composition)");
}

inline const char* kSweepCsvHeader = "param,value,split,ece,mce,e_aurc,time_s,coverage";

/// Fits and evaluates the configured kNN method once per sweep point. Writes one report per
/// point (sweep_<param>_<ordinal>_<value>.json) and a combined CSV.
inline nlohmann::json cmd_sweep(const RunConfig& cfg) {
    require_file(cfg.datastore, "datastore");
    require_file(cfg.dev, "dev");
    require_file(cfg.test_id, "test_id");
    require(uses_knn(cfg.method), ErrorKind::invalid_argument, "sweep: method must be knn_ue or knn_ue_no_label");
    auto ds = std::make_shared<const Datastore>(read_datastore(cfg.datastore));
    const auto dev = read_records(cfg.dev);
    const auto test_id = read_records(cfg.test_id);
    std::optional<EvalSet> test_ood;
    if (!cfg.test_ood.empty()) {
        require_file(cfg.test_ood, "test_ood");
        test_ood = read_records(cfg.test_ood);
    }

    std::vector<std::pair<std::string, ann::IndexConfig>> points;
    std::vector<std::size_t> ks;
    const auto base = seeded_index(cfg);
    if (cfg.sweep == "composition") {
        points = composition_stages(base, ds->dim());
        ks.assign(points.size(), cfg.k);
    } else {
        const auto& values = sweep_values(cfg);
        require(!values.empty(), ErrorKind::invalid_argument, "sweep: value list is empty");
        for (auto v : values) {
            auto ic = base;
            std::size_t k = cfg.k;
            if (cfg.sweep == "k") {
                require(v >= 1 && v <= ds->size(), ErrorKind::invalid_argument,
                        "sweep: K=" + std::to_string(v) + " exceeds N=" + std::to_string(ds->size()));
                k = v;
            } else if (cfg.sweep == "nsub") {
                ic.n_sub = v;
            } else if (cfg.sweep == "nprobe") {
                ic.n_probe = v;
            } else {
                ic.d_pca = v;
            }
            ic.validate(ds->dim(), ds->size());
            points.emplace_back(std::to_string(v), ic);
            ks.push_back(k);
        }
    }

    ann::IndexConfig exact_cfg = base;
    exact_cfg.n_probe = exact_cfg.n_sub = exact_cfg.d_pca = 0;

    const fs::path out(cfg.out);
    fs::create_directories(out);
    std::ostringstream csv;
    csv << kSweepCsvHeader << '\n';
    nlohmann::json series = nlohmann::json::array();
    for (std::size_t p = 0; p < points.size(); ++p) {
        const auto& [label, ic] = points[p];
        const Pipeline pipeline(ds, ic, ks[p], cfg.threads);
        const auto fitted = pipeline.fit(cfg.method, dev, cfg.fit_seed());

        // Coverage of this point's neighbor ids against exact search at the same K.
        const ann::Searcher exact(ds, exact_cfg);
        const double cov =
            ann::coverage(exact.search_all(test_id, ks[p], cfg.threads), pipeline.searcher().search_all(test_id, ks[p], cfg.threads));

        auto id_eval = evaluate_split(pipeline, fitted, test_id, "id", cfg.repeats, cfg.bins);
        id_eval.report.coverage = cov;
        nlohmann::json reports = nlohmann::json::array();
        std::vector<metrics::MetricsReport> split_reports{id_eval.report};
        if (test_ood) {
            auto ood_eval = evaluate_split(pipeline, fitted, *test_ood, "ood", cfg.repeats, cfg.bins);
            ood_eval.report.ood = metrics::ood_metrics(id_eval.scores, ood_eval.scores);
            split_reports.push_back(ood_eval.report);
        }
        for (const auto& r : split_reports) {
            reports.push_back(metrics::to_json(r));
            csv << cfg.sweep << ',' << label << ',' << r.split << ',' << std::setprecision(10) << r.ece << ',' << r.mce
                << ',' << r.e_aurc << ',' << r.latency->mean_s << ',' << cov << '\n';
        }

        std::ostringstream name;
        name << "sweep_" << cfg.sweep << '_' << std::setw(2) << std::setfill('0') << p << '_' << label << ".json";
        nlohmann::json point = {{"param", cfg.sweep}, {"value", label},          {"K", ks[p]},
                                {"index", ic.to_json()}, {"params", fitted.to_json()}, {"reports", reports}};
        write_json(out / name.str(), point);
        point["path"] = (out / name.str()).string();
        series.push_back(point);
    }
    const auto csv_path = out / ("sweep_" + cfg.sweep + ".csv");
    std::ofstream(csv_path) << csv.str();
    return {{"param", cfg.sweep}, {"csv", csv_path.string()}, {"points", series}};
}

// ---------------------------------------------------------------------------- bench

/// Latency of full query-set passes through flat search vs the configured approximate
/// index, on random Gaussian keys.
inline nlohmann::json cmd_bench(const RunConfig& cfg) {
    require(cfg.bench_n > 0 && cfg.bench_d > 0, ErrorKind::invalid_argument, "bench: n and d must be > 0");
    require(cfg.bench_queries > 0, ErrorKind::invalid_argument, "bench: queries must be > 0");
    detail::NormalSource src(cfg.bench_seed());
    Matrix keys(cfg.bench_n, cfg.bench_d);
    for (auto& v : keys.values) v = static_cast<float>(src.next());
    std::vector<std::int32_t> labels(cfg.bench_n);
    for (auto& l : labels) l = static_cast<std::int32_t>(src.bits() % 2);
    auto ds = std::make_shared<const Datastore>(std::move(keys), std::move(labels), 2u);

    std::vector<std::vector<float>> queries(cfg.bench_queries, std::vector<float>(cfg.bench_d));
    for (auto& q : queries)
        for (auto& v : q) v = static_cast<float>(src.next());

    auto approx_cfg = seeded_index(cfg);
    if (approx_cfg.kind() == ann::IndexKind::flat) {
        approx_cfg.n_sub = 32;
        while (cfg.bench_d % approx_cfg.n_sub != 0) --approx_cfg.n_sub;
        approx_cfg.n_probe = std::min<std::size_t>(32, approx_cfg.n_list);
    }
    ann::IndexConfig flat_cfg;
    flat_cfg.threads = cfg.threads;

    const auto k = std::min(cfg.k, cfg.bench_n);
    nlohmann::json results = nlohmann::json::array();
    for (const auto& [name, ic] : {std::pair{std::string("flat"), flat_cfg}, std::pair{std::string("approx"), approx_cfg}}) {
        const auto build_start = std::chrono::steady_clock::now();
        const ann::Searcher searcher(ds, ic);
        const std::chrono::duration<double> build = std::chrono::steady_clock::now() - build_start;
        std::vector<ann::Neighborhood> sink(queries.size());
        const auto stats = metrics::bench_latency(
            [&] { parallel_for(queries.size(), cfg.threads, [&](std::size_t i) { sink[i] = searcher.search(queries[i], k); }); },
            queries.size(), cfg.repeats, cfg.threads);
        results.push_back({{"pipeline", name}, {"config", ic.to_json()}, {"build_s", build.count()},
                           {"latency", metrics::to_json(stats)}});
    }
    nlohmann::json j = {{"N", cfg.bench_n}, {"D", cfg.bench_d}, {"queries", queries.size()}, {"K", k},
                        {"threads", cfg.threads}, {"results", results}};
    write_json(fs::path(cfg.out) / "bench.json", j);
    return j;
}

}  // namespace knnue::cli
