#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "dense/core.hpp"
#include "dense/errors.hpp"

namespace dense {

enum class EnsembleKind { poe, moe, max };

inline const char* to_string(EnsembleKind k) {
    switch (k) {
        case EnsembleKind::poe: return "poe";
        case EnsembleKind::moe: return "moe";
        case EnsembleKind::max: return "max";
    }
    return "?";
}

// Probabilities at or below this floor enter the PoE product as the floor
// itself, so a hard zero from one bucket cannot produce log(0).
inline constexpr double kPoeFloor = 1e-12;

namespace detail {

inline void check_shapes(const ProbTable& table, const WeightVector& w) {
    if (table.bucket_count() != w.weights.size())
        throw ValidationError("ensemble: " + std::to_string(table.bucket_count()) +
                              " buckets vs " + std::to_string(w.weights.size()) + " weights");
    if (table.bucket_count() == 0) throw ValidationError("ensemble: empty table");
}

}  // namespace detail

/// score(y) = prod_i p_i(y)^{w_i}, computed in log space. Unnormalized.
inline LabelProbs combine_poe(const ProbTable& table, const WeightVector& w) {
    detail::check_shapes(table, w);
    LabelProbs scores;
    for (const auto& [label, _] : table.per_bucket[0]) {
        double log_score = 0.0;
        for (std::size_t i = 0; i < table.bucket_count(); ++i) {
            double p = std::max(table.per_bucket[i].at(label), kPoeFloor);
            log_score += w.weights[i] * std::log(p);
        }
        scores[label] = std::exp(log_score);
    }
    return scores;
}

/// score(y) = sum_i w_i * p_i(y). Sums to 1 over labels when each bucket
/// row does.
inline LabelProbs combine_moe(const ProbTable& table, const WeightVector& w) {
    detail::check_shapes(table, w);
    LabelProbs scores;
    for (const auto& [label, _] : table.per_bucket[0]) {
        double s = 0.0;
        for (std::size_t i = 0; i < table.bucket_count(); ++i)
            s += w.weights[i] * table.per_bucket[i].at(label);
        scores[label] = s;
    }
    return scores;
}

/// score(y) = max_j w_j * p_j(y). The weight sits inside the max, so a
/// low-weight bucket only wins when its confidence compensates.
inline LabelProbs combine_max(const ProbTable& table, const WeightVector& w) {
    detail::check_shapes(table, w);
    LabelProbs scores;
    for (const auto& [label, _] : table.per_bucket[0]) {
        double s = -std::numeric_limits<double>::infinity();
        for (std::size_t i = 0; i < table.bucket_count(); ++i)
            s = std::max(s, w.weights[i] * table.per_bucket[i].at(label));
        scores[label] = s;
    }
    return scores;
}

inline LabelProbs combine(const ProbTable& table, const WeightVector& w, EnsembleKind kind) {
    switch (kind) {
        case EnsembleKind::poe: return combine_poe(table, w);
        case EnsembleKind::moe: return combine_moe(table, w);
        case EnsembleKind::max: return combine_max(table, w);
    }
    throw ValidationError("ensemble: unknown kind");
}

inline Method method_of(EnsembleKind kind) {
    switch (kind) {
        case EnsembleKind::poe: return Method::poe;
        case EnsembleKind::moe: return Method::moe;
        case EnsembleKind::max: return Method::max;
    }
    return Method::poe;
}

inline Prediction predict(const ProbTable& table, const WeightVector& w, EnsembleKind kind,
                          const LabelSet& labels, const std::string& instance_id = "") {
    Prediction pred;
    pred.scores = combine(table, w, kind);
    pred.method_tag = method_of(kind);
    double total = 0.0;
    for (const auto& [_, s] : pred.scores) total += s;
    if (!(total > 0.0))
        throw DegenerateDistributionError("predict: zero total score mass" +
                                          (instance_id.empty() ? std::string()
                                                               : " for instance '" + instance_id + "'"));
    for (const auto& [label, s] : pred.scores) pred.normalized[label] = s / total;
    pred.predicted_label = argmax_label(pred.scores, labels);
    return pred;
}

}  // namespace dense
