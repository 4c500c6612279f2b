#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <functional>
#include <limits>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include <json.hpp>

#include "dense/core.hpp"
#include "dense/embed.hpp"
#include "dense/errors.hpp"
#include "dense/hash.hpp"

namespace dense {

struct PromptTemplate {
    std::string demo_format = "Input: {input}\nLabel: {label_verbalized}";
    std::string separator = "\n\n";
    std::string test_format = "Input: {input}\nLabel:";
    // Prepended to the verbalizer when it is scored as a continuation.
    std::string continuation_prefix = " ";

    void validate() const {
        auto count = [](const std::string& s, const std::string& ph) {
            std::size_t n = 0, pos = 0;
            while ((pos = s.find(ph, pos)) != std::string::npos) {
                ++n;
                pos += ph.size();
            }
            return n;
        };
        if (count(demo_format, "{input}") != 1 ||
            count(demo_format, "{label_verbalized}") != 1)
            throw ValidationError("PromptTemplate: demo_format must contain {input} and "
                                  "{label_verbalized} exactly once");
        if (count(test_format, "{input}") != 1)
            throw ValidationError("PromptTemplate: test_format must contain {input} exactly once");
    }
};

namespace detail {

inline std::string replace_once(std::string s, const std::string& ph, const std::string& val) {
    auto pos = s.find(ph);
    if (pos != std::string::npos) s.replace(pos, ph.size(), val);
    return s;
}

}  // namespace detail

/// Renders bucket demos in bucket order, joined by the separator, then the
/// test stub. Byte-deterministic.
inline std::string render_prompt(const Bucket& bucket, const std::vector<Demonstration>& demos,
                                 const TestInstance& test, const LabelSet& labels,
                                 const PromptTemplate& tmpl) {
    std::unordered_map<std::string, const Demonstration*> by_id;
    for (const auto& d : demos) by_id[d.id] = &d;
    std::string out;
    for (std::size_t i = 0; i < bucket.demo_ids.size(); ++i) {
        auto it = by_id.find(bucket.demo_ids[i]);
        if (it == by_id.end())
            throw ValidationError("render_prompt: unknown demo id '" + bucket.demo_ids[i] + "'");
        const Demonstration& d = *it->second;
        if (i > 0) out += tmpl.separator;
        std::string rendered = detail::replace_once(tmpl.demo_format, "{input}", d.input);
        // Multiple-choice demos carry labels outside the per-instance
        // label set; those verbalize as themselves.
        const std::string& verbalized =
            labels.contains(d.label) ? labels.verbalizer(d.label) : d.label;
        rendered = detail::replace_once(rendered, "{label_verbalized}", verbalized);
        out += rendered;
    }
    if (!bucket.demo_ids.empty()) out += tmpl.separator;
    out += detail::replace_once(tmpl.test_format, "{input}", test.input);
    return out;
}

/// On-disk content-addressed store of scored (prompt, label) pairs, so
/// sweeps over b reuse bucket scores where prompts coincide. JSON Lines of
/// {"prompt_hash", "label", "loglik"}.
class ResponseCache {
public:
    ResponseCache() = default;

    explicit ResponseCache(std::string path) : path_(std::move(path)) {
        std::ifstream in(path_);
        std::string line;
        std::size_t lineno = 0;
        while (std::getline(in, line)) {
            ++lineno;
            if (line.empty()) continue;
            nlohmann::json j;
            try {
                j = nlohmann::json::parse(line);
            } catch (const nlohmann::json::exception& e) {
                throw FormatError("ResponseCache: " + path_ + ":" + std::to_string(lineno) +
                                  ": " + e.what());
            }
            entries_[key(j.at("prompt_hash").get<std::string>(),
                         j.at("label").get<std::string>())] = j.at("loglik").get<double>();
        }
    }

    std::optional<double> get(const std::string& prompt_hash, const std::string& label) const {
        std::lock_guard<std::mutex> lock(mu_);
        auto it = entries_.find(key(prompt_hash, label));
        if (it == entries_.end()) return std::nullopt;
        return it->second;
    }

    void put(const std::string& prompt_hash, const std::string& label, double loglik) {
        std::lock_guard<std::mutex> lock(mu_);
        auto [it, inserted] = entries_.emplace(key(prompt_hash, label), loglik);
        if (!inserted) return;  // same key implies same value; keep first
        if (!path_.empty()) {
            std::ofstream out(path_, std::ios::app);
            nlohmann::json j{{"prompt_hash", prompt_hash}, {"label", label}, {"loglik", loglik}};
            out << j.dump() << "\n";
        }
    }

    std::size_t size() const {
        std::lock_guard<std::mutex> lock(mu_);
        return entries_.size();
    }

private:
    static std::string key(const std::string& h, const std::string& l) { return h + "\x1f" + l; }

    std::string path_;
    std::unordered_map<std::string, double> entries_;
    mutable std::mutex mu_;
};

/// Interface every scoring path implements: total log-likelihood of a
/// label's verbalizer continuation under a prompt.
class ScoringBackend {
public:
    virtual ~ScoringBackend() = default;
    virtual double loglik(const std::string& prompt, const std::string& label,
                          const std::string& continuation) = 0;
    virtual std::string identity() const = 0;
};

/// Hermetic backend: exact lookup keyed by (prompt content hash, label).
/// A miss is an error, never a silent default.
class MockBackend : public ScoringBackend {
public:
    MockBackend() = default;

    static MockBackend from_file(const std::string& path) {
        std::ifstream in(path);
        if (!in) throw IoError("MockBackend: cannot open fixture '" + path + "'");
        MockBackend b;
        std::string line;
        std::size_t lineno = 0;
        while (std::getline(in, line)) {
            ++lineno;
            if (line.empty()) continue;
            nlohmann::json j;
            try {
                j = nlohmann::json::parse(line);
            } catch (const nlohmann::json::exception& e) {
                throw FormatError("MockBackend: " + path + ":" + std::to_string(lineno) + ": " +
                                  e.what());
            }
            b.add_hashed(j.at("prompt_hash").get<std::string>(),
                         j.at("label").get<std::string>(), j.at("loglik").get<double>());
        }
        return b;
    }

    void add(const std::string& prompt, const std::string& label, double loglik) {
        add_hashed(content_hash(prompt), label, loglik);
    }

    void add_hashed(const std::string& prompt_hash, const std::string& label, double loglik) {
        table_[prompt_hash + "\x1f" + label] = loglik;
    }

    void save(const std::string& path) const {
        std::ofstream out(path);
        if (!out) throw IoError("MockBackend: cannot write fixture '" + path + "'");
        for (const auto& [k, v] : table_) {
            auto sep = k.find('\x1f');
            nlohmann::json j{{"prompt_hash", k.substr(0, sep)},
                             {"label", k.substr(sep + 1)},
                             {"loglik", v}};
            out << j.dump() << "\n";
        }
    }

    double loglik(const std::string& prompt, const std::string& label,
                  const std::string&) override {
        std::string h = content_hash(prompt);
        auto it = table_.find(h + "\x1f" + label);
        if (it == table_.end())
            throw MissingFixtureError("mock backend: no fixture entry for prompt hash " + h +
                                      ", label '" + label + "'");
        return it->second;
    }

    std::string identity() const override { return "mock"; }

private:
    std::map<std::string, double> table_;
};

enum class BackendKind { mock, http };

struct BackendConfig {
    BackendKind kind = BackendKind::mock;
    std::optional<std::string> endpoint;
    std::optional<std::string> model_name;
    std::optional<std::string> fixture_path;  // mock only
    std::chrono::milliseconds timeout{30000};
    std::size_t max_retries = 2;
    std::optional<std::string> cache_path;
    bool echo_style = false;  // http only: completion endpoint adapter

    void validate() const {
        if (kind == BackendKind::http && !endpoint)
            throw ValidationError("BackendConfig: http backend requires an endpoint");
    }
};

/// Wire client. Default contract: POST {"model", "prompt", "continuation"}
/// -> {"logprobs": [...]}; total log-likelihood is the sum. The echo-style
/// adapter instead sends prompt+continuation, reads back per-token
/// logprobs with text offsets, and sums the continuation span.
class HttpBackend : public ScoringBackend {
public:
    using Transport = std::function<nlohmann::json(const nlohmann::json&)>;

    HttpBackend(BackendConfig cfg, Transport transport)
        : cfg_(std::move(cfg)), transport_(std::move(transport)) {
        cfg_.validate();
    }

    double loglik(const std::string& prompt, const std::string& label,
                  const std::string& continuation) override {
        (void)label;
        return cfg_.echo_style ? loglik_echo(prompt, continuation)
                               : loglik_direct(prompt, continuation);
    }

    std::string identity() const override {
        return "http:" + cfg_.endpoint.value_or("") + ":" + cfg_.model_name.value_or("");
    }

private:
    nlohmann::json post_with_retries(const nlohmann::json& req) {
        std::string last_error;
        for (std::size_t attempt = 0; attempt <= cfg_.max_retries; ++attempt) {
            try {
                return transport_(req);
            } catch (const TransportError& e) {
                last_error = e.what();
            }
        }
        throw TransportError("backend request failed after " +
                             std::to_string(cfg_.max_retries + 1) + " attempts: " + last_error);
    }

    double loglik_direct(const std::string& prompt, const std::string& continuation) {
        nlohmann::json req{{"model", cfg_.model_name.value_or("")},
                           {"prompt", prompt},
                           {"continuation", continuation}};
        nlohmann::json resp = post_with_retries(req);
        if (!resp.contains("logprobs") || !resp["logprobs"].is_array())
            throw ProtocolError("backend: response missing logprobs array");
        double total = 0.0;
        for (const auto& lp : resp["logprobs"]) total += lp.get<double>();
        return total;
    }

    double loglik_echo(const std::string& prompt, const std::string& continuation) {
        nlohmann::json req{{"model", cfg_.model_name.value_or("")},
                           {"prompt", prompt + continuation},
                           {"echo", true},
                           {"max_tokens", 0},
                           {"logprobs", 0}};
        nlohmann::json resp = post_with_retries(req);
        const nlohmann::json* lp = nullptr;
        // Either a bare {"logprobs": {...}} or a completions-style choice.
        if (resp.contains("choices") && resp["choices"].is_array() && !resp["choices"].empty())
            lp = &resp["choices"][0]["logprobs"];
        else if (resp.contains("logprobs"))
            lp = &resp["logprobs"];
        if (lp == nullptr || !lp->contains("token_logprobs") || !lp->contains("text_offset"))
            throw ProtocolError("backend: echo response missing token_logprobs/text_offset");
        const auto& tlp = (*lp)["token_logprobs"];
        const auto& off = (*lp)["text_offset"];
        if (tlp.size() != off.size())
            throw ProtocolError("backend: token_logprobs and text_offset length mismatch");
        double total = 0.0;
        for (std::size_t i = 0; i < tlp.size(); ++i) {
            if (off[i].get<std::size_t>() >= prompt.size() && !tlp[i].is_null())
                total += tlp[i].get<double>();
        }
        return total;
    }

    BackendConfig cfg_;
    Transport transport_;
};

/// Per-label probabilities via summed continuation log-likelihood and a
/// softmax restricted to the candidate label set.
inline LabelProbs score_labels(const std::string& prompt, const LabelSet& labels,
                               ScoringBackend& backend, const PromptTemplate& tmpl,
                               ResponseCache* cache = nullptr) {
    std::string prompt_hash = content_hash(prompt);
    std::map<std::string, double> logliks;
    for (const auto& label : labels.labels()) {
        std::optional<double> cached =
            cache ? cache->get(prompt_hash, label) : std::nullopt;
        double ll;
        if (cached) {
            ll = *cached;
        } else {
            ll = backend.loglik(prompt, label, tmpl.continuation_prefix + labels.verbalizer(label));
            if (cache) cache->put(prompt_hash, label, ll);
        }
        logliks[label] = ll;
    }
    // Restricted softmax, max-shifted.
    double max_ll = -std::numeric_limits<double>::infinity();
    for (const auto& [_, ll] : logliks) max_ll = std::max(max_ll, ll);
    double z = 0.0;
    LabelProbs probs;
    for (const auto& [label, ll] : logliks) {
        probs[label] = std::exp(ll - max_ll);
        z += probs[label];
    }
    for (auto& [_, p] : probs) p /= z;
    return probs;
}

/// One score_labels call per bucket; rows ordered by bucket index.
inline ProbTable score_allocation(const Allocation& alloc,
                                  const std::vector<Demonstration>& demos,
                                  const TestInstance& test, const LabelSet& labels,
                                  const PromptTemplate& tmpl, ScoringBackend& backend,
                                  ResponseCache* cache = nullptr) {
    ProbTable table;
    for (std::size_t i = 0; i < alloc.bucket_count(); ++i) {
        auto tag = [i](const char* what) {
            return "bucket " + std::to_string(i) + ": " + what;
        };
        try {
            std::string prompt = render_prompt(alloc.buckets[i], demos, test, labels, tmpl);
            table.per_bucket.push_back(score_labels(prompt, labels, backend, tmpl, cache));
        } catch (const MissingFixtureError& e) {
            throw MissingFixtureError(tag(e.what()));
        } catch (const TransportError& e) {
            throw TransportError(tag(e.what()));
        } catch (const ProtocolError& e) {
            throw ProtocolError(tag(e.what()));
        } catch (const ValidationError& e) {
            throw ValidationError(tag(e.what()));
        }
    }
    return table;
}

/// Concat-sort ordering: ascending similarity to the test input, canonical
/// id on ties, so the most similar demo sits adjacent to the test stub.
inline std::vector<Demonstration> order_concat_sort(const std::vector<Demonstration>& demos,
                                                    const EmbeddingStore& store,
                                                    const TestInstance& test) {
    if (!test.embedding && !store.contains(test.id))
        throw ValidationError("order_concat_sort: no embedding for test '" + test.id + "'");
    const Vector& test_vec = test.embedding ? *test.embedding : store.get(test.id);
    std::vector<std::pair<double, std::string>> keyed;
    std::unordered_map<std::string, const Demonstration*> by_id;
    for (const auto& d : demos) {
        if (!store.contains(d.id))
            throw ValidationError("order_concat_sort: no embedding for demo '" + d.id + "'");
        keyed.emplace_back(cosine(store.get(d.id), test_vec), d.id);
        by_id[d.id] = &d;
    }
    std::sort(keyed.begin(), keyed.end());
    std::vector<Demonstration> out;
    out.reserve(demos.size());
    for (const auto& [_, id] : keyed) out.push_back(*by_id[id]);
    return out;
}

}  // namespace dense
