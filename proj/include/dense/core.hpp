#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "dense/errors.hpp"

namespace dense {

using Vector = std::vector<double>;

/// One labeled example shown in-context.
struct Demonstration {
    std::string id;
    std::string input;
    std::string label;
    std::optional<Vector> embedding;
};

struct TestInstance {
    std::string id;
    std::string input;
    std::optional<std::string> gold_label;
    std::optional<Vector> embedding;
};

/// The finite label space of a task, with the surface strings scored as
/// LM continuations.
class LabelSet {
public:
    LabelSet() = default;
    LabelSet(std::vector<std::string> labels,
             std::unordered_map<std::string, std::string> verbalizers)
        : labels_(std::move(labels)), verbalizers_(std::move(verbalizers)) {
        if (labels_.empty()) throw ValidationError("LabelSet: empty label list");
        std::unordered_set<std::string> seen;
        for (const auto& l : labels_) {
            if (!seen.insert(l).second)
                throw ValidationError("LabelSet: duplicate label '" + l + "'");
            if (verbalizers_.find(l) == verbalizers_.end())
                throw ValidationError("LabelSet: no verbalizer for label '" + l + "'");
        }
        if (verbalizers_.size() != labels_.size())
            throw ValidationError("LabelSet: verbalizer for unknown label");
    }

    /// Labels verbalize as themselves.
    static LabelSet identity(std::vector<std::string> labels) {
        std::unordered_map<std::string, std::string> v;
        for (const auto& l : labels) v.emplace(l, l);
        return LabelSet(std::move(labels), std::move(v));
    }

    const std::vector<std::string>& labels() const { return labels_; }
    std::size_t size() const { return labels_.size(); }

    bool contains(const std::string& label) const {
        return verbalizers_.find(label) != verbalizers_.end();
    }

    const std::string& verbalizer(const std::string& label) const {
        auto it = verbalizers_.find(label);
        if (it == verbalizers_.end())
            throw ValidationError("LabelSet: unknown label '" + label + "'");
        return it->second;
    }

private:
    std::vector<std::string> labels_;
    std::unordered_map<std::string, std::string> verbalizers_;
};

struct Bucket {
    std::vector<std::string> demo_ids;  // ordered, non-empty, no duplicates

    void validate() const {
        if (demo_ids.empty()) throw ValidationError("Bucket: empty bucket");
        std::unordered_set<std::string> seen;
        for (const auto& id : demo_ids)
            if (!seen.insert(id).second)
                throw ValidationError("Bucket: duplicate demo id '" + id + "'");
    }
};

enum class AllocationStrategy { contiguous, similar_together, diverse };

inline const char* to_string(AllocationStrategy s) {
    switch (s) {
        case AllocationStrategy::contiguous: return "contiguous";
        case AllocationStrategy::similar_together: return "similar_together";
        case AllocationStrategy::diverse: return "diverse";
    }
    return "?";
}

/// An ordered partition of a demo set into non-empty buckets.
struct Allocation {
    std::vector<Bucket> buckets;
    AllocationStrategy strategy_tag = AllocationStrategy::contiguous;

    std::size_t bucket_count() const { return buckets.size(); }

    /// Checks the partition invariant against the full demo id set.
    void validate(const std::vector<std::string>& all_demo_ids) const {
        std::unordered_set<std::string> covered;
        for (const auto& b : buckets) {
            b.validate();
            for (const auto& id : b.demo_ids)
                if (!covered.insert(id).second)
                    throw ValidationError("Allocation: demo '" + id + "' in two buckets");
        }
        if (covered.size() != all_demo_ids.size())
            throw ValidationError("Allocation: bucket union does not match demo set");
        for (const auto& id : all_demo_ids)
            if (covered.find(id) == covered.end())
                throw ValidationError("Allocation: demo '" + id + "' missing from buckets");
    }
};

using LabelProbs = std::map<std::string, double>;

/// Per-bucket, per-label probabilities for one test instance.
struct ProbTable {
    std::vector<LabelProbs> per_bucket;

    std::size_t bucket_count() const { return per_bucket.size(); }

    void validate(const LabelSet& labels, double tol = 1e-6) const {
        for (const auto& row : per_bucket) {
            if (row.size() != labels.size())
                throw ValidationError("ProbTable: row size != label set size");
            double sum = 0.0;
            for (const auto& l : labels.labels()) {
                auto it = row.find(l);
                if (it == row.end())
                    throw ValidationError("ProbTable: missing label '" + l + "'");
                if (it->second < 0.0 || it->second > 1.0)
                    throw ValidationError("ProbTable: probability out of [0,1]");
                sum += it->second;
            }
            if (std::abs(sum - 1.0) > tol)
                throw ValidationError("ProbTable: row does not sum to 1");
        }
    }
};

struct WeightVector {
    std::vector<double> weights;

    void validate(double tol = 1e-9) const {
        double sum = 0.0;
        for (double w : weights) {
            if (w < 0.0) throw ValidationError("WeightVector: negative weight");
            sum += w;
        }
        if (std::abs(sum - 1.0) > tol)
            throw ValidationError("WeightVector: weights do not sum to 1");
    }
};

enum class Method { poe, moe, max, concat, concat_sort };

inline const char* to_string(Method m) {
    switch (m) {
        case Method::poe: return "poe";
        case Method::moe: return "moe";
        case Method::max: return "max";
        case Method::concat: return "concat";
        case Method::concat_sort: return "concat_sort";
    }
    return "?";
}

struct Prediction {
    LabelProbs scores;      // possibly unnormalized
    LabelProbs normalized;  // sums to 1
    std::string predicted_label;
    Method method_tag = Method::concat;
};

/// Ids sorted ascending by string value; the tie-breaking substrate used
/// everywhere ordering must be reproducible.
inline std::vector<std::string> canonical_demo_order(const std::vector<Demonstration>& demos) {
    std::vector<std::string> ids;
    ids.reserve(demos.size());
    for (const auto& d : demos) ids.push_back(d.id);
    std::sort(ids.begin(), ids.end());
    for (std::size_t i = 1; i < ids.size(); ++i)
        if (ids[i] == ids[i - 1])
            throw ValidationError("canonical_demo_order: duplicate id '" + ids[i] + "'");
    return ids;
}

/// Argmax over per-label scores; ties go to the label that appears first
/// in the LabelSet.
inline std::string argmax_label(const LabelProbs& scores, const LabelSet& labels) {
    if (scores.size() != labels.size())
        throw ValidationError("argmax_label: score count != label count");
    const std::string* best = nullptr;
    double best_score = 0.0;
    for (const auto& l : labels.labels()) {
        auto it = scores.find(l);
        if (it == scores.end())
            throw ValidationError("argmax_label: missing score for label '" + l + "'");
        if (std::isnan(it->second))
            throw NumericError("argmax_label: NaN score for label '" + l + "'");
        if (best == nullptr || it->second > best_score) {
            best = &l;
            best_score = it->second;
        }
    }
    return *best;
}

}  // namespace dense
