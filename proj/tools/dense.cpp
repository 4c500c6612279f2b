// dense: demonstration-ensembling CLI.
//
// Subcommands:
//   run       - execute the configured evaluation grid and write reports
//   allocate  - print a bucket allocation without touching the LM backend
//   score-one - trace one test input through scoring, weighting, ensembling
//
// Exit codes: 0 success, 1 invalid config/usage, 2 grid finished with
// failed cells (report still written).

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "dense/alloc.hpp"
#include "dense/config.hpp"
#include "dense/ensemble.hpp"
#include "dense/eval.hpp"
#include "dense/score.hpp"
#include "dense/weight.hpp"
#include "dense/wire.hpp"

namespace {

struct CliConfig {
    std::string config_path;
    std::vector<std::string> overrides;
    std::string output_dir = ".";
    std::string log_level = "info";
};

struct LoadedConfig {
    dense::ConfigDoc doc;
    dense::RunConfig run;
    std::vector<dense::DatasetSpec> specs;
};

LoadedConfig load_and_validate(const CliConfig& cli) {
    LoadedConfig lc;
    lc.doc = dense::parse_config_file(cli.config_path);
    for (const auto& kv : cli.overrides) dense::apply_override(lc.doc, kv);
    lc.run = dense::build_run_config(lc.doc);
    lc.specs = dense::build_dataset_specs(lc.doc);
    return lc;
}

bool verbose(const CliConfig& cli) {
    return cli.log_level == "info" || cli.log_level == "debug";
}

int cmd_run(const CliConfig& cli) {
    LoadedConfig lc;
    try {
        lc = load_and_validate(cli);
    } catch (const std::exception& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 1;
    }
    try {
        auto backend = dense::make_backend(lc.run.backend);
        auto embed = dense::make_embed_provider(lc.run.embedder);
        std::unique_ptr<dense::ResponseCache> cache;
        if (lc.run.backend.cache_path)
            cache = std::make_unique<dense::ResponseCache>(*lc.run.backend.cache_path);
        auto report = dense::run_grid(lc.run, lc.specs, *backend, embed, cache.get());
        std::filesystem::create_directories(cli.output_dir);
        dense::emit_report(report, cli.output_dir);
        if (verbose(cli))
            std::cout << "wrote " << cli.output_dir << "/cells.csv and aggregate.json ("
                      << report.cells.size() << " cells)\n";
        if (report.any_failed()) {
            std::cerr << "failed cells:\n";
            for (const auto& c : report.cells)
                if (c.failed)
                    std::cerr << "  " << c.dataset << "/" << c.method << "/" << c.weighting
                              << "/" << c.allocation << "/b=" << c.b << "/seed=" << c.seed
                              << ": " << c.error << "\n";
            return 2;
        }
        return 0;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}

double mean_intra_bucket_cosine(const dense::Bucket& bucket, const dense::EmbeddingStore& store) {
    const auto& ids = bucket.demo_ids;
    if (ids.size() < 2) return 1.0;
    double sum = 0.0;
    std::size_t pairs = 0;
    for (std::size_t i = 0; i < ids.size(); ++i)
        for (std::size_t j = i + 1; j < ids.size(); ++j) {
            sum += dense::cosine(store.get(ids[i]), store.get(ids[j]));
            ++pairs;
        }
    return sum / static_cast<double>(pairs);
}

int cmd_allocate(const CliConfig& cli, const std::string& strategy_name, std::size_t b,
                 std::uint64_t seed_flag, bool seed_set) {
    LoadedConfig lc;
    dense::AllocationStrategy strategy;
    try {
        lc = load_and_validate(cli);
        strategy = dense::cfgdetail::parse_allocation(strategy_name);
    } catch (const std::exception& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 1;
    }
    try {
        const auto& spec = lc.specs.front();
        auto ds = dense::load_dataset(spec);
        std::uint64_t seed = seed_set ? seed_flag : lc.run.seeds.front();
        auto demos = dense::sample_demos(ds.pool, lc.run.n_shots, seed);
        dense::EmbeddingStore store;
        if (strategy != dense::AllocationStrategy::contiguous) {
            auto embed = dense::make_embed_provider(lc.run.embedder);
            store = embed(demos, {});
        }
        dense::Allocation alloc;
        switch (strategy) {
            case dense::AllocationStrategy::contiguous:
                alloc = dense::allocate_contiguous(demos, b);
                break;
            case dense::AllocationStrategy::similar_together:
                alloc = dense::allocate_similar_together(demos, store, b);
                break;
            case dense::AllocationStrategy::diverse:
                alloc = dense::allocate_diverse(demos, store, b);
                break;
        }
        for (std::size_t i = 0; i < alloc.bucket_count(); ++i) {
            std::cout << "bucket " << i << ":";
            for (const auto& id : alloc.buckets[i].demo_ids) std::cout << " " << id;
            if (strategy != dense::AllocationStrategy::contiguous) {
                std::printf("  (mean intra-bucket cosine %.4f)",
                            mean_intra_bucket_cosine(alloc.buckets[i], store));
            }
            std::cout << "\n";
        }
        return 0;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}

int cmd_score_one(const CliConfig& cli, const std::string& test_input,
                  const std::string& strategy_name, std::size_t b) {
    LoadedConfig lc;
    dense::AllocationStrategy strategy;
    try {
        lc = load_and_validate(cli);
        strategy = dense::cfgdetail::parse_allocation(strategy_name);
    } catch (const std::exception& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 1;
    }
    try {
        const auto& spec = lc.specs.front();
        auto ds = dense::load_dataset(spec);
        auto demos = dense::sample_demos(ds.pool, lc.run.n_shots, lc.run.seeds.front());
        dense::TestInstance test{"query", test_input, std::nullopt, std::nullopt};

        bool needs_embeddings =
            strategy != dense::AllocationStrategy::contiguous ||
            std::find(lc.run.weightings.begin(), lc.run.weightings.end(),
                      dense::WeightingMode::similarity) != lc.run.weightings.end();
        dense::EmbeddingStore store;
        if (needs_embeddings) {
            dense::EvalInstance qi;
            qi.test = test;
            auto embed = dense::make_embed_provider(lc.run.embedder);
            store = embed(demos, {qi});
        }
        dense::Allocation alloc;
        switch (strategy) {
            case dense::AllocationStrategy::contiguous:
                alloc = dense::allocate_contiguous(demos, b);
                break;
            case dense::AllocationStrategy::similar_together:
                alloc = dense::allocate_similar_together(demos, store, b);
                break;
            case dense::AllocationStrategy::diverse:
                alloc = dense::allocate_diverse(demos, store, b);
                break;
        }

        auto backend = dense::make_backend(lc.run.backend);
        std::unique_ptr<dense::ResponseCache> cache;
        if (lc.run.backend.cache_path)
            cache = std::make_unique<dense::ResponseCache>(*lc.run.backend.cache_path);

        const auto& labels = spec.label_set;
        auto table = dense::score_allocation(alloc, demos, test, labels, spec.prompt, *backend,
                                             cache.get());
        for (std::size_t i = 0; i < table.bucket_count(); ++i) {
            std::cout << "bucket " << i << ":";
            for (const auto& l : labels.labels())
                std::printf(" %s=%.4f", l.c_str(), table.per_bucket[i].at(l));
            std::cout << "\n";
        }

        for (auto wmode : lc.run.weightings) {
            dense::WeightingConfig wcfg;
            wcfg.mode = wmode;
            dense::WeightVector w =
                wmode == dense::WeightingMode::uniform
                    ? dense::uniform_weights(alloc.bucket_count())
                    : dense::similarity_weights(alloc, store, test, wcfg);
            std::cout << "weights (" << dense::to_string(wmode) << "):";
            for (double x : w.weights) std::printf(" %.4f", x);
            std::cout << "\n";
            for (auto kind : {dense::EnsembleKind::poe, dense::EnsembleKind::moe,
                              dense::EnsembleKind::max}) {
                auto pred = dense::predict(table, w, kind, labels, test.id);
                std::cout << "  " << dense::to_string(kind) << ":";
                for (const auto& l : labels.labels())
                    std::printf(" %s=%.4f", l.c_str(), pred.normalized.at(l));
                std::cout << " -> " << pred.predicted_label << "\n";
            }
        }
        return 0;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Demonstration ensembling for in-context learning"};
    app.require_subcommand(1);

    CliConfig cli;
    app.add_option("--config", cli.config_path, "Run configuration file")->required();
    app.add_option("--output-dir", cli.output_dir, "Directory for reports");
    app.add_option("--override", cli.overrides, "section.key=value override (repeatable)");
    app.add_option("--log-level", cli.log_level, "error|warn|info|debug")
        ->check(CLI::IsMember({"error", "warn", "info", "debug"}));

    auto* run = app.add_subcommand("run", "Execute the evaluation grid");

    std::string strategy = "contiguous";
    std::size_t b = 2;
    std::uint64_t seed = 0;
    auto* allocate = app.add_subcommand("allocate", "Print a bucket allocation");
    allocate->add_option("--strategy", strategy, "contiguous|similar_together|diverse");
    allocate->add_option("-b,--buckets", b, "Bucket count");
    auto* seed_opt = allocate->add_option("--seed", seed, "Demo sampling seed");

    std::string test_input;
    std::string s1_strategy = "contiguous";
    std::size_t s1_b = 2;
    auto* score_one = app.add_subcommand("score-one", "Trace one test input");
    score_one->add_option("input", test_input, "Test input text")->required();
    score_one->add_option("--strategy", s1_strategy, "contiguous|similar_together|diverse");
    score_one->add_option("-b,--buckets", s1_b, "Bucket count");

    CLI11_PARSE(app, argc, argv);

    if (run->parsed()) return cmd_run(cli);
    if (allocate->parsed()) return cmd_allocate(cli, strategy, b, seed, seed_opt->count() > 0);
    if (score_one->parsed()) return cmd_score_one(cli, test_input, s1_strategy, s1_b);
    return 1;
}
