#include <iostream>

#include "CLI11.hpp"
#include "knnue/cli/commands.hpp"

namespace {

using knnue::cli::RunConfig;

constexpr int kExitUsage = 2;
constexpr int kExitData = 3;

int exit_code_for(knnue::ErrorKind kind) {
    switch (kind) {
        case knnue::ErrorKind::invalid_argument:
        case knnue::ErrorKind::not_fitted:
            return kExitUsage;
        default:
            return kExitData;
    }
}

struct Flags {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> method;
    std::optional<std::size_t> k, nsub, nprobe, dpca, nlist, ncentroids, kmeans_iters, threads, repeats, bins;
    std::optional<std::size_t> components, bench_n, bench_d, bench_queries;
    bool recompute = false;
    std::optional<std::string> out, datastore, dev, test_id, test_ood, params, spec, index, sweep;
    std::vector<std::size_t> values;
};

void add_common(CLI::App* cmd, Flags& f) {
    cmd->add_option("--config", f.config, "JSON config file (flags override it)");
    cmd->add_option("--seed", f.seed, "Master seed");
    cmd->add_option("--out", f.out, "Output directory");
    cmd->add_option("--threads", f.threads, "Worker threads");
}

void add_data(CLI::App* cmd, Flags& f) {
    cmd->add_option("--datastore", f.datastore, "Datastore file (.kue)");
    cmd->add_option("--index", f.index, "Prebuilt index file (.kux)");
}

void add_index(CLI::App* cmd, Flags& f) {
    cmd->add_option("--nlist", f.nlist, "IVF cell count");
    cmd->add_option("--nprobe", f.nprobe, "IVF cells probed (0 disables IVF)");
    cmd->add_option("--nsub", f.nsub, "PQ subspaces (0 disables PQ)");
    cmd->add_option("--ncentroids", f.ncentroids, "PQ centroids per subspace");
    cmd->add_option("--dpca", f.dpca, "PCA output dim (0 disables PCA)");
    cmd->add_option("--kmeans-iters", f.kmeans_iters, "Lloyd iterations");
    cmd->add_flag("--recompute", f.recompute, "Recompute exact distances for returned ids");
    cmd->add_option("--k", f.k, "Neighbors per query");
}

RunConfig resolve(const Flags& f) {
    RunConfig cfg;
    if (!f.config.empty()) knnue::cli::apply_config_json(cfg, knnue::cli::read_json(f.config, "config"));
    auto set = [](auto& field, const auto& opt) {
        if (opt) field = *opt;
    };
    if (f.seed) {
        cfg.seed = *f.seed;
        cfg.seed_set = true;
    }
    if (f.method) {
        cfg.method = knnue::cli::parse_method(*f.method);
        cfg.method_set = true;
    }
    set(cfg.k, f.k);
    set(cfg.index.n_sub, f.nsub);
    set(cfg.index.n_probe, f.nprobe);
    set(cfg.index.d_pca, f.dpca);
    set(cfg.index.n_list, f.nlist);
    set(cfg.index.n_centroids, f.ncentroids);
    set(cfg.index.kmeans_iters, f.kmeans_iters);
    if (f.recompute) cfg.index.recompute = true;
    set(cfg.threads, f.threads);
    set(cfg.repeats, f.repeats);
    set(cfg.bins, f.bins);
    set(cfg.density_components, f.components);
    set(cfg.bench_n, f.bench_n);
    set(cfg.bench_d, f.bench_d);
    set(cfg.bench_queries, f.bench_queries);
    set(cfg.out, f.out);
    set(cfg.datastore, f.datastore);
    set(cfg.dev, f.dev);
    set(cfg.test_id, f.test_id);
    set(cfg.test_ood, f.test_ood);
    set(cfg.params, f.params);
    set(cfg.spec, f.spec);
    set(cfg.index_path, f.index);
    set(cfg.sweep, f.sweep);
    if (!f.values.empty()) {
        if (cfg.sweep == "k") cfg.sweep_k = f.values;
        else if (cfg.sweep == "nsub") cfg.sweep_nsub = f.values;
        else if (cfg.sweep == "nprobe") cfg.sweep_nprobe = f.values;
        else if (cfg.sweep == "dpca") cfg.sweep_dpca = f.values;
    }
    return cfg;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"kNN-based uncertainty estimation toolkit"};
    app.require_subcommand(1);
    Flags f;

    auto* synth = app.add_subcommand("synth", "Generate a synthetic datastore and record splits");
    add_common(synth, f);
    synth->add_option("--spec", f.spec, "Synthetic spec JSON");

    auto* build = app.add_subcommand("build-index", "Build and save a search index");
    add_common(build, f);
    add_data(build, f);
    add_index(build, f);

    auto* fit = app.add_subcommand("fit", "Fit a calibrator on the dev split");
    add_common(fit, f);
    add_data(fit, f);
    add_index(fit, f);
    fit->add_option("--method", f.method, "sr|ts|density_softmax|dac|knn_ue|knn_ue_no_label");
    fit->add_option("--dev", f.dev, "Dev records (.kur)");
    fit->add_option("--params", f.params, "Output params JSON");
    fit->add_option("--components", f.components, "Density mixture components");

    auto* eval = app.add_subcommand("eval", "Evaluate a fitted calibrator");
    add_common(eval, f);
    add_data(eval, f);
    add_index(eval, f);
    eval->add_option("--method", f.method, "Method when no params file is given (sr only)");
    eval->add_option("--params", f.params, "Fitted params JSON");
    eval->add_option("--test-id", f.test_id, "In-domain test records");
    eval->add_option("--test-ood", f.test_ood, "Out-of-domain test records");
    eval->add_option("--repeats", f.repeats, "Timing repeats (>= 3)");
    eval->add_option("--bins", f.bins, "Calibration bins");

    auto* sweep = app.add_subcommand("sweep", "Sweep K or an index parameter");
    add_common(sweep, f);
    add_data(sweep, f);
    add_index(sweep, f);
    sweep->add_option("--method", f.method, "knn_ue|knn_ue_no_label");
    sweep->add_option("--dev", f.dev, "Dev records");
    sweep->add_option("--test-id", f.test_id, "In-domain test records");
    sweep->add_option("--test-ood", f.test_ood, "Out-of-domain test records");
    sweep->add_option("--param", f.sweep, "k|nsub|nprobe|dpca|composition");
    sweep->add_option("--values", f.values, "Values to sweep");
    sweep->add_option("--repeats", f.repeats, "Timing repeats (>= 3)");

    auto* coverage = app.add_subcommand("coverage", "Neighbor coverage of approximate vs exact search");
    add_common(coverage, f);
    add_data(coverage, f);
    add_index(coverage, f);
    coverage->add_option("--test-id", f.test_id, "Query records");

    auto* bench = app.add_subcommand("bench", "Search latency on random keys");
    add_common(bench, f);
    add_index(bench, f);
    bench->add_option("--n", f.bench_n, "Keys");
    bench->add_option("--d", f.bench_d, "Dimension");
    bench->add_option("--queries", f.bench_queries, "Queries per pass");
    bench->add_option("--repeats", f.repeats, "Timing repeats (>= 3)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : kExitUsage;
    }

    try {
        const auto cfg = resolve(f);
        nlohmann::json result;
        if (*synth) result = knnue::cli::cmd_synth(cfg);
        else if (*build) result = knnue::cli::cmd_build_index(cfg);
        else if (*fit) result = knnue::cli::cmd_fit(cfg);
        else if (*eval) result = knnue::cli::cmd_eval(cfg);
        else if (*sweep) result = knnue::cli::cmd_sweep(cfg);
        else if (*coverage) result = knnue::cli::cmd_coverage(cfg);
        else if (*bench) result = knnue::cli::cmd_bench(cfg);
        std::cout << result.dump(2) << '\n';
        return 0;
    } catch (const knnue::Error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return exit_code_for(e.kind());
    } catch (const nlohmann::json::exception& e) {
        std::cerr << "error: config: " << e.what() << '\n';
        return kExitUsage;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitData;
    }
}
