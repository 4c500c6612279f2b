#pragma once

#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <optional>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "dense/core.hpp"
#include "dense/errors.hpp"
#include "dense/hash.hpp"

namespace dense {

/// Read-only id -> vector map with a single enforced dimensionality.
class EmbeddingStore {
public:
    EmbeddingStore() = default;

    void insert(const std::string& id, Vector v) {
        if (vectors_.find(id) != vectors_.end())
            throw FormatError("EmbeddingStore: duplicate id '" + id + "'");
        if (dim_ == 0) {
            dim_ = v.size();
        } else if (v.size() != dim_) {
            throw FormatError("EmbeddingStore: vector for '" + id + "' has dim " +
                              std::to_string(v.size()) + ", expected " + std::to_string(dim_));
        }
        vectors_.emplace(id, std::move(v));
    }

    bool contains(const std::string& id) const { return vectors_.count(id) != 0; }

    const Vector& get(const std::string& id) const {
        auto it = vectors_.find(id);
        if (it == vectors_.end())
            throw ValidationError("EmbeddingStore: no embedding for id '" + id + "'");
        return it->second;
    }

    std::size_t dim() const { return dim_; }
    std::size_t size() const { return vectors_.size(); }
    const std::unordered_map<std::string, Vector>& vectors() const { return vectors_; }

private:
    std::size_t dim_ = 0;
    std::unordered_map<std::string, Vector> vectors_;
};

enum class EmbedderSource { file, http };

struct EmbedderConfig {
    EmbedderSource source = EmbedderSource::file;
    std::optional<std::string> endpoint;
    std::optional<std::string> model_name;
    std::optional<std::string> path;  // file source
    std::size_t batch_size = 16;

    void validate() const {
        if (source == EmbedderSource::http && !endpoint)
            throw ValidationError("EmbedderConfig: http source requires an endpoint");
        if (batch_size == 0)
            throw ValidationError("EmbedderConfig: batch_size must be positive");
    }
};

inline double cosine(const Vector& u, const Vector& v) {
    if (u.size() != v.size())
        throw ValidationError("cosine: dimension mismatch (" + std::to_string(u.size()) +
                              " vs " + std::to_string(v.size()) + ")");
    double dot = 0.0, nu = 0.0, nv = 0.0;
    for (std::size_t i = 0; i < u.size(); ++i) {
        dot += u[i] * v[i];
        nu += u[i] * u[i];
        nv += v[i] * v[i];
    }
    if (nu <= 0.0 || nv <= 0.0)
        throw NumericError("cosine: zero-norm vector");
    double c = dot / (std::sqrt(nu) * std::sqrt(nv));
    return std::max(-1.0, std::min(1.0, c));
}

/// JSON Lines, one {"id": ..., "vector": [...]} per line.
inline EmbeddingStore load_embeddings_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("load_embeddings_file: cannot open '" + path + "'");
    EmbeddingStore store;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            throw FormatError("load_embeddings_file: " + path + ":" + std::to_string(lineno) +
                              ": " + e.what());
        }
        if (!j.contains("id") || !j.contains("vector"))
            throw FormatError("load_embeddings_file: " + path + ":" + std::to_string(lineno) +
                              ": missing id/vector");
        store.insert(j["id"].get<std::string>(), j["vector"].get<Vector>());
    }
    return store;
}

inline void save_embeddings_file(const EmbeddingStore& store, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw IoError("save_embeddings_file: cannot open '" + path + "'");
    // Sorted ids, 9 significant digits.
    std::vector<std::string> ids;
    ids.reserve(store.size());
    for (const auto& [id, _] : store.vectors()) ids.push_back(id);
    std::sort(ids.begin(), ids.end());
    for (const auto& id : ids) {
        nlohmann::json row;
        row["id"] = id;
        nlohmann::json vec = nlohmann::json::array();
        for (double x : store.get(id)) {
            char buf[32];
            std::snprintf(buf, sizeof(buf), "%.9g", x);
            vec.push_back(std::strtod(buf, nullptr));
        }
        row["vector"] = std::move(vec);
        out << row.dump() << "\n";
    }
}

/// Client for a sentence-embedding service. Batches requests, preserves
/// input order, and caches results by content hash for the lifetime of
/// the client.
class HttpEmbedder {
public:
    // Transport is injectable so tests can run without a socket.
    // Takes a JSON request body, returns the JSON response body.
    using Transport = std::function<nlohmann::json(const nlohmann::json&)>;

    HttpEmbedder(EmbedderConfig cfg, Transport transport)
        : cfg_(std::move(cfg)), transport_(std::move(transport)) {
        cfg_.validate();
    }

    std::vector<Vector> fetch(const std::vector<std::string>& texts) {
        std::vector<Vector> out(texts.size());
        std::vector<std::size_t> missing;  // indices needing a request
        for (std::size_t i = 0; i < texts.size(); ++i) {
            auto it = cache_.find(content_hash(texts[i]));
            if (it != cache_.end()) {
                out[i] = it->second;
            } else {
                missing.push_back(i);
            }
        }
        for (std::size_t start = 0; start < missing.size(); start += cfg_.batch_size) {
            std::size_t end = std::min(missing.size(), start + cfg_.batch_size);
            std::vector<std::string> batch;
            for (std::size_t j = start; j < end; ++j) batch.push_back(texts[missing[j]]);
            auto vecs = request_batch(batch);
            for (std::size_t j = start; j < end; ++j) {
                out[missing[j]] = vecs[j - start];
                cache_[content_hash(texts[missing[j]])] = vecs[j - start];
            }
        }
        return out;
    }

    std::size_t request_count() const { return request_count_; }

private:
    std::vector<Vector> request_batch(const std::vector<std::string>& batch) {
        nlohmann::json req;
        req["model"] = cfg_.model_name.value_or("");
        req["input"] = batch;
        ++request_count_;
        nlohmann::json resp = transport_(req);
        if (!resp.contains("data") || !resp["data"].is_array())
            throw ProtocolError("embedder: response missing data array");
        if (resp["data"].size() != batch.size())
            throw ProtocolError("embedder: got " + std::to_string(resp["data"].size()) +
                                " vectors for " + std::to_string(batch.size()) + " inputs");
        std::vector<Vector> vecs(batch.size());
        std::vector<bool> seen(batch.size(), false);
        for (const auto& item : resp["data"]) {
            std::size_t idx = item.at("index").get<std::size_t>();
            if (idx >= batch.size() || seen[idx])
                throw ProtocolError("embedder: bad index " + std::to_string(idx));
            seen[idx] = true;
            vecs[idx] = item.at("embedding").get<Vector>();
        }
        for (bool s : seen)
            if (!s) throw ProtocolError("embedder: response missing an index");
        return vecs;
    }

    EmbedderConfig cfg_;
    Transport transport_;
    std::unordered_map<std::string, Vector> cache_;
    std::size_t request_count_ = 0;
};

}  // namespace dense
