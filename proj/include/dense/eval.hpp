#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <functional>
#include <map>
#include <numeric>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "dense/alloc.hpp"
#include "dense/core.hpp"
#include "dense/embed.hpp"
#include "dense/ensemble.hpp"
#include "dense/errors.hpp"
#include "dense/hash.hpp"
#include "dense/score.hpp"
#include "dense/weight.hpp"

namespace dense {

enum class TaskKind { classification, multiple_choice };
enum class MetricKind { macro_f1, accuracy };

inline const char* to_string(MetricKind m) {
    return m == MetricKind::macro_f1 ? "macro_f1" : "accuracy";
}

struct DatasetSpec {
    std::string name;
    TaskKind task_kind = TaskKind::classification;
    std::string path;
    LabelSet label_set;  // classification only; multiple-choice is per-instance
    MetricKind metric = MetricKind::macro_f1;
    PromptTemplate prompt;
    double eval_fraction = 0.1;  // trailing fraction of rows held out for eval
    std::size_t max_eval = 0;    // 0 = no truncation
};

/// One evaluation example; `choices` present for multiple-choice rows and
/// becomes the per-instance label set.
struct EvalInstance {
    TestInstance test;
    std::optional<std::vector<std::string>> choices;

    LabelSet label_set(const DatasetSpec& spec) const {
        if (choices) return LabelSet::identity(*choices);
        return spec.label_set;
    }
};

struct LoadedDataset {
    std::vector<Demonstration> pool;
    std::vector<EvalInstance> eval;
};

/// JSON Lines ingestion. Classification rows: {"input", "label"};
/// multiple-choice rows: {"input", "choices", "answer_index"}. Leading
/// rows form the demo pool, trailing `eval_fraction` the eval split.
inline LoadedDataset load_dataset(const DatasetSpec& spec) {
    std::ifstream in(spec.path);
    if (!in) throw IoError("load_dataset: cannot open '" + spec.path + "'");
    struct Row {
        std::string input;
        std::string label;
        std::optional<std::vector<std::string>> choices;
    };
    std::vector<Row> rows;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            throw FormatError("load_dataset: " + spec.path + ":" + std::to_string(lineno) +
                              ": " + e.what());
        }
        Row row;
        row.input = j.at("input").get<std::string>();
        if (spec.task_kind == TaskKind::classification) {
            row.label = j.at("label").get<std::string>();
            if (!spec.label_set.contains(row.label))
                throw ValidationError("load_dataset: " + spec.path + ":" +
                                      std::to_string(lineno) + ": unknown label '" + row.label +
                                      "'");
        } else {
            auto choices = j.at("choices").get<std::vector<std::string>>();
            auto idx = j.at("answer_index").get<std::size_t>();
            if (idx >= choices.size())
                throw ValidationError("load_dataset: " + spec.path + ":" +
                                      std::to_string(lineno) + ": answer_index out of range");
            row.label = choices[idx];
            row.choices = std::move(choices);
        }
        rows.push_back(std::move(row));
    }
    std::size_t n = rows.size();
    std::size_t n_eval = static_cast<std::size_t>(std::llround(n * spec.eval_fraction));
    n_eval = std::min(n_eval, n);
    std::size_t n_pool = n - n_eval;
    LoadedDataset ds;
    for (std::size_t i = 0; i < n_pool; ++i) {
        ds.pool.push_back(Demonstration{"d" + std::to_string(i), rows[i].input, rows[i].label,
                                        std::nullopt});
    }
    for (std::size_t i = n_pool; i < n; ++i) {
        EvalInstance inst;
        inst.test = TestInstance{"t" + std::to_string(i), rows[i].input, rows[i].label,
                                 std::nullopt};
        inst.choices = rows[i].choices;
        ds.eval.push_back(std::move(inst));
        if (spec.max_eval > 0 && ds.eval.size() >= spec.max_eval) break;
    }
    if (ds.eval.empty()) throw ValidationError("load_dataset: empty eval split for '" +
                                               spec.name + "'");
    return ds;
}

/// Uniform sample without replacement; the sampled order is the order the
/// concat baseline sees. Deterministic in (pool, seed).
inline std::vector<Demonstration> sample_demos(const std::vector<Demonstration>& pool,
                                               std::size_t n_shots, std::uint64_t seed) {
    if (n_shots > pool.size())
        throw ValidationError("sample_demos: n_shots=" + std::to_string(n_shots) + " > pool of " +
                              std::to_string(pool.size()));
    std::vector<std::size_t> idx(pool.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::mt19937_64 rng(seed);
    // Partial Fisher-Yates; rng()%k keeps the stream reproducible across
    // standard libraries (uniform_int_distribution is not portable).
    for (std::size_t i = 0; i < n_shots; ++i) {
        std::size_t j = i + static_cast<std::size_t>(rng() % (idx.size() - i));
        std::swap(idx[i], idx[j]);
    }
    std::vector<Demonstration> out;
    out.reserve(n_shots);
    for (std::size_t i = 0; i < n_shots; ++i) out.push_back(pool[idx[i]]);
    return out;
}

/// Unweighted mean of per-class F1. Classes present in golds but never
/// predicted score 0; classes absent from golds are excluded.
inline double macro_f1(const std::vector<std::string>& golds,
                       const std::vector<std::string>& preds,
                       const std::vector<std::string>& labels) {
    if (golds.size() != preds.size())
        throw ValidationError("macro_f1: golds/preds length mismatch");
    if (golds.empty()) throw ValidationError("macro_f1: empty input");
    double sum = 0.0;
    std::size_t counted = 0;
    for (const auto& label : labels) {
        std::size_t tp = 0, fp = 0, fn = 0, support = 0;
        for (std::size_t i = 0; i < golds.size(); ++i) {
            bool g = golds[i] == label, p = preds[i] == label;
            if (g) ++support;
            if (g && p) ++tp;
            if (!g && p) ++fp;
            if (g && !p) ++fn;
        }
        if (support == 0) continue;
        double f1 = (2 * tp + fp + fn) == 0
                        ? 0.0
                        : 2.0 * tp / static_cast<double>(2 * tp + fp + fn);
        sum += f1;
        ++counted;
    }
    return counted == 0 ? 0.0 : sum / static_cast<double>(counted);
}

inline double accuracy(const std::vector<std::string>& golds,
                       const std::vector<std::string>& preds) {
    if (golds.size() != preds.size())
        throw ValidationError("accuracy: golds/preds length mismatch");
    if (golds.empty()) throw ValidationError("accuracy: empty input");
    std::size_t correct = 0;
    for (std::size_t i = 0; i < golds.size(); ++i)
        if (golds[i] == preds[i]) ++correct;
    return static_cast<double>(correct) / static_cast<double>(golds.size());
}

struct RunConfig {
    std::size_t n_shots = 6;
    std::vector<std::size_t> bucket_counts = {2, 3, 6};
    std::vector<Method> methods = {Method::concat, Method::poe, Method::moe, Method::max};
    std::vector<WeightingMode> weightings = {WeightingMode::uniform};
    std::vector<AllocationStrategy> allocations = {AllocationStrategy::contiguous};
    std::vector<std::uint64_t> seeds = {0};
    BackendConfig backend;
    EmbedderConfig embedder;

    void validate() const {
        if (seeds.empty()) throw ValidationError("RunConfig: seeds must be non-empty");
        if (n_shots == 0) throw ValidationError("RunConfig: n_shots must be positive");
        for (auto b : bucket_counts)
            if (b == 0 || b > n_shots)
                throw ValidationError("RunConfig: bucket_counts entry " + std::to_string(b) +
                                      " must be in [1, n_shots=" + std::to_string(n_shots) + "]");
        if (methods.empty()) throw ValidationError("RunConfig: methods must be non-empty");
        backend.validate();
        embedder.validate();
    }

    nlohmann::json to_json() const {
        nlohmann::json j;
        j["n_shots"] = n_shots;
        j["bucket_counts"] = bucket_counts;
        std::vector<std::string> ms, ws, as;
        for (auto m : methods) ms.push_back(to_string(m));
        for (auto w : weightings) ws.push_back(to_string(w));
        for (auto a : allocations) as.push_back(to_string(a));
        j["methods"] = ms;
        j["weightings"] = ws;
        j["allocations"] = as;
        j["seeds"] = seeds;
        return j;
    }
};

struct Cell {
    std::string dataset;
    std::string method;
    std::string weighting;   // "none" for baselines
    std::string allocation;  // "none" for baselines
    std::size_t b = 1;
    std::uint64_t seed = 0;
    std::string metric;
    double value = 0.0;
    bool failed = false;
    std::string error;
};

struct RunReport {
    std::vector<Cell> cells;
    std::string config_hash;
    std::string backend_identity;
    std::string timestamp;
    std::vector<std::string> datasets;

    bool any_failed() const {
        return std::any_of(cells.begin(), cells.end(), [](const Cell& c) { return c.failed; });
    }

    // Mean per (dataset, method, weighting, allocation, b) across seeds.
    std::map<std::string, double> seed_means() const {
        std::map<std::string, std::pair<double, std::size_t>> acc;
        for (const auto& c : cells) {
            if (c.failed) continue;
            std::string key = c.dataset + "," + c.method + "," + c.weighting + "," +
                              c.allocation + "," + std::to_string(c.b);
            acc[key].first += c.value;
            acc[key].second += 1;
        }
        std::map<std::string, double> out;
        for (const auto& [k, v] : acc) out[k] = v.first / static_cast<double>(v.second);
        return out;
    }

    // Mean per method across every non-failed cell of that method.
    std::map<std::string, double> method_means() const {
        std::map<std::string, std::pair<double, std::size_t>> acc;
        for (const auto& c : cells) {
            if (c.failed) continue;
            acc[c.method].first += c.value;
            acc[c.method].second += 1;
        }
        std::map<std::string, double> out;
        for (const auto& [k, v] : acc) out[k] = v.first / static_cast<double>(v.second);
        return out;
    }
};

/// Supplies embeddings for the given demos and test instances, keyed by id.
using EmbedProvider = std::function<EmbeddingStore(const std::vector<Demonstration>&,
                                                   const std::vector<EvalInstance>&)>;

inline EmbedProvider file_embed_provider(const std::string& path) {
    return [path](const std::vector<Demonstration>& demos,
                  const std::vector<EvalInstance>& tests) {
        auto full = load_embeddings_file(path);
        EmbeddingStore store;
        for (const auto& d : demos)
            if (full.contains(d.id)) store.insert(d.id, full.get(d.id));
        for (const auto& t : tests)
            if (full.contains(t.test.id)) store.insert(t.test.id, full.get(t.test.id));
        return store;
    };
}

inline EmbedProvider http_embed_provider(const EmbedderConfig& cfg,
                                         HttpEmbedder::Transport transport) {
    auto embedder = std::make_shared<HttpEmbedder>(cfg, std::move(transport));
    return [embedder](const std::vector<Demonstration>& demos,
                      const std::vector<EvalInstance>& tests) {
        std::vector<std::string> texts;
        for (const auto& d : demos) texts.push_back(d.input);
        for (const auto& t : tests) texts.push_back(t.test.input);
        auto vecs = embedder->fetch(texts);
        EmbeddingStore store;
        std::size_t i = 0;
        for (const auto& d : demos) store.insert(d.id, vecs[i++]);
        for (const auto& t : tests) store.insert(t.test.id, vecs[i++]);
        return store;
    };
}

namespace detail {

inline double eval_cell_metric(const DatasetSpec& spec, const std::vector<std::string>& golds,
                               const std::vector<std::string>& preds) {
    if (spec.metric == MetricKind::accuracy) return accuracy(golds, preds);
    std::vector<std::string> labels;
    if (spec.task_kind == TaskKind::classification) {
        labels = spec.label_set.labels();
    } else {
        std::set<std::string> seen(golds.begin(), golds.end());
        labels.assign(seen.begin(), seen.end());
    }
    return macro_f1(golds, preds, labels);
}

// Evaluates one grid cell: a prediction for every eval instance, then the
// dataset's metric.
inline double eval_predictions(
    const DatasetSpec& spec, const LoadedDataset& ds,
    const std::function<std::string(const EvalInstance&)>& predict_one) {
    std::vector<std::string> golds, preds;
    for (const auto& inst : ds.eval) {
        golds.push_back(*inst.test.gold_label);
        preds.push_back(predict_one(inst));
    }
    return eval_cell_metric(spec, golds, preds);
}

inline EnsembleKind kind_of(Method m) {
    switch (m) {
        case Method::poe: return EnsembleKind::poe;
        case Method::moe: return EnsembleKind::moe;
        case Method::max: return EnsembleKind::max;
        default: break;
    }
    throw ValidationError("not an ensembling method");
}

}  // namespace detail

/// Runs the full (dataset x seed x method x weighting x allocation x b)
/// grid. Within a (dataset, seed) pair every cell shares the same demo
/// sample, so comparisons isolate the method. Failures are recorded per
/// cell; the grid continues.
inline RunReport run_grid(const RunConfig& cfg, const std::vector<DatasetSpec>& specs,
                          ScoringBackend& backend, const EmbedProvider& embed,
                          ResponseCache* cache = nullptr) {
    cfg.validate();
    RunReport report;
    report.config_hash = content_hash(cfg.to_json().dump());
    report.backend_identity = backend.identity();
    {
        auto now = std::chrono::system_clock::now();
        auto t = std::chrono::system_clock::to_time_t(now);
        char buf[32];
        std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&t));
        report.timestamp = buf;
    }

    bool needs_embeddings =
        std::find(cfg.methods.begin(), cfg.methods.end(), Method::concat_sort) !=
            cfg.methods.end() ||
        std::find(cfg.weightings.begin(), cfg.weightings.end(), WeightingMode::similarity) !=
            cfg.weightings.end() ||
        std::any_of(cfg.allocations.begin(), cfg.allocations.end(), [](AllocationStrategy s) {
            return s != AllocationStrategy::contiguous;
        });

    for (const auto& spec : specs) {
        report.datasets.push_back(spec.name);
        LoadedDataset ds = load_dataset(spec);
        for (auto seed : cfg.seeds) {
            auto demos = sample_demos(ds.pool, cfg.n_shots, seed);
            EmbeddingStore store;
            if (needs_embeddings) store = embed(demos, ds.eval);

            auto run_cell = [&](Cell cell, const std::function<double()>& fn) {
                try {
                    cell.value = fn();
                } catch (const std::exception& e) {
                    cell.failed = true;
                    cell.error = e.what();
                }
                report.cells.push_back(std::move(cell));
            };

            for (auto method : cfg.methods) {
                Cell base;
                base.dataset = spec.name;
                base.method = to_string(method);
                base.seed = seed;
                base.metric = to_string(spec.metric);

                if (method == Method::concat) {
                    Cell cell = base;
                    cell.weighting = "none";
                    cell.allocation = "none";
                    cell.b = 1;
                    run_cell(cell, [&] {
                        auto alloc = allocate_contiguous(demos, 1);
                        return detail::eval_predictions(spec, ds, [&](const EvalInstance& inst) {
                            auto ls = inst.label_set(spec);
                            auto table = score_allocation(alloc, demos, inst.test, ls,
                                                          spec.prompt, backend, cache);
                            return predict(table, uniform_weights(1), EnsembleKind::moe, ls,
                                           inst.test.id)
                                .predicted_label;
                        });
                    });
                    continue;
                }
                if (method == Method::concat_sort) {
                    Cell cell = base;
                    cell.weighting = "none";
                    cell.allocation = "none";
                    cell.b = 1;
                    run_cell(cell, [&] {
                        return detail::eval_predictions(spec, ds, [&](const EvalInstance& inst) {
                            auto ls = inst.label_set(spec);
                            auto ordered = order_concat_sort(demos, store, inst.test);
                            auto alloc = allocate_contiguous(ordered, 1);
                            auto table = score_allocation(alloc, ordered, inst.test, ls,
                                                          spec.prompt, backend, cache);
                            return predict(table, uniform_weights(1), EnsembleKind::moe, ls,
                                           inst.test.id)
                                .predicted_label;
                        });
                    });
                    continue;
                }

                EnsembleKind kind = detail::kind_of(method);
                for (auto strategy : cfg.allocations) {
                    for (auto b : cfg.bucket_counts) {
                        for (auto wmode : cfg.weightings) {
                            Cell cell = base;
                            cell.weighting = to_string(wmode);
                            cell.allocation = to_string(strategy);
                            cell.b = b;
                            run_cell(cell, [&] {
                                Allocation alloc;
                                switch (strategy) {
                                    case AllocationStrategy::contiguous:
                                        alloc = allocate_contiguous(demos, b);
                                        break;
                                    case AllocationStrategy::similar_together:
                                        alloc = allocate_similar_together(demos, store, b);
                                        break;
                                    case AllocationStrategy::diverse:
                                        alloc = allocate_diverse(demos, store, b);
                                        break;
                                }
                                WeightingConfig wcfg;
                                wcfg.mode = wmode;
                                return detail::eval_predictions(
                                    spec, ds, [&](const EvalInstance& inst) {
                                        auto ls = inst.label_set(spec);
                                        auto table =
                                            score_allocation(alloc, demos, inst.test, ls,
                                                             spec.prompt, backend, cache);
                                        auto w = compute_weights(alloc, store, inst.test, wcfg);
                                        return predict(table, w, kind, ls, inst.test.id)
                                            .predicted_label;
                                    });
                            });
                        }
                    }
                }
            }
        }
    }
    return report;
}

/// Writes the per-cell CSV, the aggregate JSON, and a relative-improvement
/// table over the concat baseline when a concat cell exists.
inline void emit_report(const RunReport& report, const std::string& out_dir) {
    if (report.cells.empty()) throw ValidationError("emit_report: empty report");
    {
        std::ofstream csv(out_dir + "/cells.csv");
        if (!csv) throw IoError("emit_report: cannot write to '" + out_dir + "'");
        csv << "dataset,method,weighting,allocation,b,seed,metric,value\n";
        for (const auto& c : report.cells) {
            csv << c.dataset << "," << c.method << "," << c.weighting << "," << c.allocation
                << "," << c.b << "," << c.seed << "," << c.metric << ",";
            if (c.failed) {
                csv << "FAILED";
            } else {
                char buf[32];
                std::snprintf(buf, sizeof(buf), "%.9g", c.value);
                csv << buf;
            }
            csv << "\n";
        }
    }
    {
        nlohmann::json j;
        j["config_hash"] = report.config_hash;
        j["backend_identity"] = report.backend_identity;
        j["timestamp"] = report.timestamp;
        j["datasets"] = report.datasets;
        j["seed_means"] = report.seed_means();
        j["method_means"] = report.method_means();
        nlohmann::json failed = nlohmann::json::array();
        for (const auto& c : report.cells)
            if (c.failed)
                failed.push_back({{"dataset", c.dataset},
                                  {"method", c.method},
                                  {"weighting", c.weighting},
                                  {"allocation", c.allocation},
                                  {"b", c.b},
                                  {"seed", c.seed},
                                  {"error", c.error}});
        j["failed_cells"] = failed;

        // Per-dataset relative improvement over concat, aggregated over b
        // and seeds.
        std::map<std::string, std::map<std::string, std::pair<double, std::size_t>>> agg;
        for (const auto& c : report.cells) {
            if (c.failed) continue;
            auto& slot = agg[c.dataset][c.method];
            slot.first += c.value;
            slot.second += 1;
        }
        nlohmann::json improvement;
        for (const auto& [dataset, by_method] : agg) {
            auto it = by_method.find("concat");
            if (it == by_method.end() || it->second.second == 0) continue;
            double concat_mean = it->second.first / it->second.second;
            if (concat_mean <= 0.0) continue;
            for (const auto& [method, slot] : by_method) {
                if (method == "concat") continue;
                double mean = slot.first / slot.second;
                improvement[dataset][method] = (mean - concat_mean) / concat_mean;
            }
        }
        j["relative_improvement_over_concat"] = improvement;

        std::ofstream out(out_dir + "/aggregate.json");
        if (!out) throw IoError("emit_report: cannot write to '" + out_dir + "'");
        out << j.dump(2) << "\n";
    }
}

}  // namespace dense
