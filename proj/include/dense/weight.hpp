#pragma once

#include <string>
#include <vector>

#include "dense/core.hpp"
#include "dense/embed.hpp"
#include "dense/errors.hpp"

namespace dense {

enum class WeightingMode { uniform, similarity };

inline const char* to_string(WeightingMode m) {
    return m == WeightingMode::uniform ? "uniform" : "similarity";
}

struct WeightingConfig {
    WeightingMode mode = WeightingMode::uniform;
    double epsilon = 1e-12;  // below this raw mass, fall back to uniform
};

inline WeightVector uniform_weights(std::size_t b) {
    if (b == 0) throw ValidationError("uniform_weights: b must be positive");
    return WeightVector{std::vector<double>(b, 1.0 / static_cast<double>(b))};
}

/// Per-bucket weight = mean cosine of the bucket's demos with the test
/// input. Negative means are clamped to zero, then the vector is divided
/// by its sum; if everything clamps away, weights fall back to uniform.
inline WeightVector similarity_weights(const Allocation& alloc, const EmbeddingStore& store,
                                       const TestInstance& test,
                                       const WeightingConfig& cfg = {}) {
    if (!test.embedding && !store.contains(test.id))
        throw ValidationError("similarity_weights: no embedding for test '" + test.id + "'");
    const Vector& test_vec = test.embedding ? *test.embedding : store.get(test.id);
    std::vector<double> raw;
    raw.reserve(alloc.bucket_count());
    for (const auto& bucket : alloc.buckets) {
        double sum = 0.0;
        for (const auto& id : bucket.demo_ids) {
            if (!store.contains(id))
                throw ValidationError("similarity_weights: no embedding for demo '" + id + "'");
            sum += cosine(store.get(id), test_vec);
        }
        double mean = sum / static_cast<double>(bucket.demo_ids.size());
        raw.push_back(mean < 0.0 ? 0.0 : mean);
    }
    double total = 0.0;
    for (double r : raw) total += r;
    if (total <= cfg.epsilon) return uniform_weights(alloc.bucket_count());
    for (double& r : raw) r /= total;
    return WeightVector{std::move(raw)};
}

inline WeightVector compute_weights(const Allocation& alloc, const EmbeddingStore& store,
                                    const TestInstance& test, const WeightingConfig& cfg) {
    if (cfg.mode == WeightingMode::uniform) return uniform_weights(alloc.bucket_count());
    return similarity_weights(alloc, store, test, cfg);
}

}  // namespace dense
