#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <string>
#include <unordered_map>
#include <vector>

#include "dense/core.hpp"
#include "dense/embed.hpp"
#include "dense/errors.hpp"

namespace dense {

struct KMeansParams {
    std::size_t k = 1;
    std::size_t max_iters = 100;
    double tol = 1e-6;  // on centroid movement
};

struct ClusterResult {
    std::map<std::string, std::size_t> assignments;  // point id -> cluster index
    std::vector<Vector> centroids;
    double inertia = 0.0;
};

namespace detail {

inline double sq_dist(const Vector& a, const Vector& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        double d = a[i] - b[i];
        s += d * d;
    }
    return s;
}

// Points in canonical (sorted-id) order; everything downstream keys off
// this ordering so results are invariant to the caller's map iteration.
struct PointList {
    std::vector<std::string> ids;
    std::vector<Vector> vecs;
};

inline PointList sorted_points(const std::map<std::string, Vector>& points) {
    PointList pl;
    pl.ids.reserve(points.size());
    for (const auto& [id, _] : points) pl.ids.push_back(id);
    // std::map is already sorted; keep the explicit sort for clarity with
    // other containers feeding in.
    std::sort(pl.ids.begin(), pl.ids.end());
    std::size_t dim = 0;
    for (const auto& id : pl.ids) {
        const Vector& v = points.at(id);
        if (dim == 0)
            dim = v.size();
        else if (v.size() != dim)
            throw ValidationError("kmeans: dimension mismatch at point '" + id + "'");
        pl.vecs.push_back(v);
    }
    return pl;
}

// First center: the point farthest from the mean, smallest id on ties.
// Each next center: the point farthest from its nearest chosen center,
// smallest id on ties.
inline std::vector<std::size_t> farthest_point_init(const PointList& pl, std::size_t k) {
    std::size_t n = pl.ids.size();
    std::size_t dim = pl.vecs.empty() ? 0 : pl.vecs[0].size();
    Vector mean(dim, 0.0);
    for (const auto& v : pl.vecs)
        for (std::size_t d = 0; d < dim; ++d) mean[d] += v[d];
    for (double& m : mean) m /= static_cast<double>(n);

    std::vector<std::size_t> centers;
    std::vector<double> nearest(n, std::numeric_limits<double>::infinity());
    for (std::size_t c = 0; c < k; ++c) {
        std::size_t best = 0;
        double best_d = -1.0;
        for (std::size_t i = 0; i < n; ++i) {
            double d = (c == 0) ? sq_dist(pl.vecs[i], mean) : nearest[i];
            if (d > best_d) {  // ids sorted, so first max has smallest id
                best_d = d;
                best = i;
            }
        }
        centers.push_back(best);
        for (std::size_t i = 0; i < n; ++i)
            nearest[i] = std::min(nearest[i], sq_dist(pl.vecs[i], pl.vecs[best]));
    }
    return centers;
}

inline std::vector<Vector> update_centroids(const PointList& pl,
                                            const std::vector<std::size_t>& assign,
                                            std::size_t k) {
    std::size_t dim = pl.vecs[0].size();
    std::vector<Vector> centroids(k, Vector(dim, 0.0));
    std::vector<std::size_t> counts(k, 0);
    for (std::size_t i = 0; i < pl.ids.size(); ++i) {
        ++counts[assign[i]];
        for (std::size_t d = 0; d < dim; ++d) centroids[assign[i]][d] += pl.vecs[i][d];
    }
    for (std::size_t c = 0; c < k; ++c)
        if (counts[c] > 0)
            for (double& x : centroids[c]) x /= static_cast<double>(counts[c]);
    return centroids;
}

// Min-cost perfect matching via shortest augmenting paths with potentials.
// cost is n_rows x n_cols with n_rows <= n_cols; returns col index per row.
inline std::vector<std::size_t> min_cost_assignment(
    const std::vector<std::vector<double>>& cost) {
    std::size_t n = cost.size();
    std::size_t m = cost[0].size();
    const double INF = std::numeric_limits<double>::infinity();
    std::vector<double> u(n + 1, 0.0), v(m + 1, 0.0);
    std::vector<std::size_t> p(m + 1, 0), way(m + 1, 0);
    for (std::size_t i = 1; i <= n; ++i) {
        p[0] = i;
        std::size_t j0 = 0;
        std::vector<double> minv(m + 1, INF);
        std::vector<bool> used(m + 1, false);
        do {
            used[j0] = true;
            std::size_t i0 = p[j0], j1 = 0;
            double delta = INF;
            for (std::size_t j = 1; j <= m; ++j) {
                if (used[j]) continue;
                double cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                if (cur < minv[j]) {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if (minv[j] < delta) {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for (std::size_t j = 0; j <= m; ++j) {
                if (used[j]) {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
        } while (p[j0] != 0);
        do {
            std::size_t j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
        } while (j0 != 0);
    }
    std::vector<std::size_t> row_to_col(n, 0);
    for (std::size_t j = 1; j <= m; ++j)
        if (p[j] != 0) row_to_col[p[j] - 1] = j - 1;
    return row_to_col;
}

}  // namespace detail

/// Lloyd's algorithm with deterministic farthest-point initialization.
/// Empty clusters are repaired by stealing the farthest point from the
/// largest cluster.
inline ClusterResult kmeans(const std::map<std::string, Vector>& points,
                            const KMeansParams& params) {
    if (params.k == 0) throw ValidationError("kmeans: k must be positive");
    if (params.k > points.size())
        throw ValidationError("kmeans: k=" + std::to_string(params.k) + " exceeds " +
                              std::to_string(points.size()) + " points");
    auto pl = detail::sorted_points(points);
    std::size_t n = pl.ids.size(), k = params.k;

    auto center_idx = detail::farthest_point_init(pl, k);
    std::vector<Vector> centroids;
    for (auto ci : center_idx) centroids.push_back(pl.vecs[ci]);

    std::vector<std::size_t> assign(n, 0);
    for (std::size_t iter = 0; iter < params.max_iters; ++iter) {
        // Assignment: nearest centroid, lowest index on ties.
        for (std::size_t i = 0; i < n; ++i) {
            std::size_t best = 0;
            double best_d = std::numeric_limits<double>::infinity();
            for (std::size_t c = 0; c < k; ++c) {
                double d = detail::sq_dist(pl.vecs[i], centroids[c]);
                if (d < best_d) {
                    best_d = d;
                    best = c;
                }
            }
            assign[i] = best;
        }
        // Repair empty clusters.
        for (std::size_t c = 0; c < k; ++c) {
            std::vector<std::size_t> counts(k, 0);
            for (auto a : assign) ++counts[a];
            if (counts[c] > 0) continue;
            std::size_t donor = static_cast<std::size_t>(
                std::max_element(counts.begin(), counts.end()) - counts.begin());
            std::size_t victim = n;
            double far_d = -1.0;
            for (std::size_t i = 0; i < n; ++i) {
                if (assign[i] != donor) continue;
                double d = detail::sq_dist(pl.vecs[i], centroids[donor]);
                if (d > far_d) {
                    far_d = d;
                    victim = i;
                }
            }
            assign[victim] = c;
        }
        auto next = detail::update_centroids(pl, assign, k);
        double movement = 0.0;
        for (std::size_t c = 0; c < k; ++c)
            movement = std::max(movement, std::sqrt(detail::sq_dist(centroids[c], next[c])));
        centroids = std::move(next);
        if (movement < params.tol) break;
    }

    ClusterResult res;
    res.centroids = centroids;
    for (std::size_t i = 0; i < n; ++i) {
        res.assignments[pl.ids[i]] = assign[i];
        res.inertia += detail::sq_dist(pl.vecs[i], centroids[assign[i]]);
    }
    return res;
}

/// Exact balanced assignment: each of the |centroids| clusters receives
/// exactly `size` points, minimizing total squared distance. Clusters are
/// expanded into `size` slots and matched optimally.
inline std::map<std::string, std::size_t> balanced_assign(
    const std::map<std::string, Vector>& points, const std::vector<Vector>& centroids,
    std::size_t size) {
    std::size_t k = centroids.size();
    if (size == 0) throw ValidationError("balanced_assign: size must be positive");
    if (points.size() != k * size)
        throw ValidationError("balanced_assign: " + std::to_string(points.size()) +
                              " points cannot fill " + std::to_string(k) + " clusters of " +
                              std::to_string(size));
    auto pl = detail::sorted_points(points);
    std::size_t n = pl.ids.size();
    std::vector<std::vector<double>> cost(n, std::vector<double>(n));
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t slot = 0; slot < n; ++slot)
            cost[i][slot] = detail::sq_dist(pl.vecs[i], centroids[slot / size]);
    auto match = detail::min_cost_assignment(cost);
    std::map<std::string, std::size_t> out;
    for (std::size_t i = 0; i < n; ++i) out[pl.ids[i]] = match[i] / size;
    return out;
}

/// K-means whose assignment step is the exact balanced assignment; every
/// cluster ends with exactly `size` points.
inline ClusterResult constrained_kmeans(const std::map<std::string, Vector>& points,
                                        std::size_t k, std::size_t size,
                                        const KMeansParams& params = {}) {
    if (k == 0) throw ValidationError("constrained_kmeans: k must be positive");
    if (points.size() != k * size)
        throw ValidationError("constrained_kmeans: need exactly k*size points");
    auto pl = detail::sorted_points(points);
    std::size_t n = pl.ids.size();

    auto center_idx = detail::farthest_point_init(pl, k);
    std::vector<Vector> centroids;
    for (auto ci : center_idx) centroids.push_back(pl.vecs[ci]);

    std::vector<std::size_t> assign(n, 0);
    for (std::size_t iter = 0; iter < params.max_iters; ++iter) {
        auto amap = balanced_assign(points, centroids, size);
        for (std::size_t i = 0; i < n; ++i) assign[i] = amap.at(pl.ids[i]);
        auto next = detail::update_centroids(pl, assign, k);
        double movement = 0.0;
        for (std::size_t c = 0; c < k; ++c)
            movement = std::max(movement, std::sqrt(detail::sq_dist(centroids[c], next[c])));
        centroids = std::move(next);
        if (movement < params.tol) break;
    }

    ClusterResult res;
    res.centroids = centroids;
    for (std::size_t i = 0; i < n; ++i) {
        res.assignments[pl.ids[i]] = assign[i];
        res.inertia += detail::sq_dist(pl.vecs[i], centroids[assign[i]]);
    }
    return res;
}

/// Bucket i gets demos [gamma*i, gamma*(i+1)) in the input order, gamma =
/// floor(n/b); any remainder goes to the last bucket.
inline Allocation allocate_contiguous(const std::vector<Demonstration>& demos, std::size_t b) {
    std::size_t n = demos.size();
    if (b == 0 || b > n)
        throw ValidationError("allocate_contiguous: need 1 <= b <= n (b=" + std::to_string(b) +
                              ", n=" + std::to_string(n) + ")");
    std::size_t gamma = n / b;
    Allocation alloc;
    alloc.strategy_tag = AllocationStrategy::contiguous;
    for (std::size_t i = 0; i < b; ++i) {
        Bucket bucket;
        std::size_t lo = gamma * i;
        std::size_t hi = (i + 1 == b) ? n : gamma * (i + 1);
        for (std::size_t j = lo; j < hi; ++j) bucket.demo_ids.push_back(demos[j].id);
        alloc.buckets.push_back(std::move(bucket));
    }
    return alloc;
}

namespace detail {

inline std::map<std::string, Vector> demo_points(const std::vector<Demonstration>& demos,
                                                 const EmbeddingStore& store) {
    std::map<std::string, Vector> points;
    for (const auto& d : demos) {
        if (!store.contains(d.id))
            throw ValidationError("allocation: no embedding for demo '" + d.id + "'");
        points[d.id] = store.get(d.id);
    }
    if (points.size() != demos.size())
        throw ValidationError("allocation: duplicate demo id");
    return points;
}

// Cluster members sorted by distance to their centroid, canonical id on
// ties; clusters themselves sorted by their smallest canonical member id.
inline std::vector<std::vector<std::string>> ordered_clusters(
    const ClusterResult& res, const std::map<std::string, Vector>& points, std::size_t k) {
    std::vector<std::vector<std::string>> members(k);
    for (const auto& [id, c] : res.assignments) members[c].push_back(id);
    for (std::size_t c = 0; c < k; ++c) {
        auto& m = members[c];
        std::sort(m.begin(), m.end());  // canonical first, stable dist sort after
        std::stable_sort(m.begin(), m.end(), [&](const std::string& a, const std::string& b2) {
            return sq_dist(points.at(a), res.centroids[c]) <
                   sq_dist(points.at(b2), res.centroids[c]);
        });
    }
    std::vector<std::vector<std::string>> nonempty;
    for (auto& m : members)
        if (!m.empty()) nonempty.push_back(std::move(m));
    std::sort(nonempty.begin(), nonempty.end(),
              [](const auto& a, const auto& b2) {
                  return *std::min_element(a.begin(), a.end()) <
                         *std::min_element(b2.begin(), b2.end());
              });
    return nonempty;
}

}  // namespace detail

/// Each k-means cluster becomes one bucket. Buckets may differ in size.
inline Allocation allocate_similar_together(const std::vector<Demonstration>& demos,
                                            const EmbeddingStore& store, std::size_t b) {
    if (b == 0 || b > demos.size())
        throw ValidationError("allocate_similar_together: need 1 <= b <= n");
    auto points = detail::demo_points(demos, store);
    KMeansParams params;
    params.k = b;
    auto res = kmeans(points, params);
    auto clusters = detail::ordered_clusters(res, points, b);
    if (clusters.size() != b)
        throw ValidationError("allocate_similar_together: clustering produced empty bucket");
    Allocation alloc;
    alloc.strategy_tag = AllocationStrategy::similar_together;
    for (auto& c : clusters) alloc.buckets.push_back(Bucket{std::move(c)});
    return alloc;
}

/// Balanced clustering into n/b clusters of b demos each, then bucket j
/// takes the j-th member of every cluster. Requires b | n.
inline Allocation allocate_diverse(const std::vector<Demonstration>& demos,
                                   const EmbeddingStore& store, std::size_t b) {
    std::size_t n = demos.size();
    if (b == 0 || b > n) throw ValidationError("allocate_diverse: need 1 <= b <= n");
    if (n % b != 0)
        throw ValidationError("allocate_diverse: b=" + std::to_string(b) +
                              " does not divide n=" + std::to_string(n));
    std::size_t k = n / b;
    auto points = detail::demo_points(demos, store);
    auto res = constrained_kmeans(points, k, b);
    auto clusters = detail::ordered_clusters(res, points, k);
    Allocation alloc;
    alloc.strategy_tag = AllocationStrategy::diverse;
    alloc.buckets.resize(b);
    for (std::size_t j = 0; j < b; ++j)
        for (const auto& cluster : clusters) alloc.buckets[j].demo_ids.push_back(cluster[j]);
    return alloc;
}

}  // namespace dense
