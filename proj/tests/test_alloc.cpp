#include <doctest.h>

#include <algorithm>
#include <map>
#include <random>
#include <set>

#include "dense/alloc.hpp"

using namespace dense;

// ---- independent oracles -------------------------------------------------

static double oracle_sq_dist(const Vector& a, const Vector& b) {
    double s = 0;
    for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
    return s;
}

static double oracle_sse(const std::vector<Vector>& pts, const std::vector<std::size_t>& assign,
                         std::size_t k) {
    double sse = 0;
    for (std::size_t c = 0; c < k; ++c) {
        Vector mean(pts[0].size(), 0.0);
        std::size_t cnt = 0;
        for (std::size_t i = 0; i < pts.size(); ++i)
            if (assign[i] == c) {
                ++cnt;
                for (std::size_t d = 0; d < mean.size(); ++d) mean[d] += pts[i][d];
            }
        if (cnt == 0) continue;
        for (double& m : mean) m /= cnt;
        for (std::size_t i = 0; i < pts.size(); ++i)
            if (assign[i] == c) sse += oracle_sq_dist(pts[i], mean);
    }
    return sse;
}

// Exhaustive minimum-SSE partition into k non-empty clusters, as the
// canonical set-of-sets of point indices.
static std::pair<double, std::set<std::set<std::size_t>>> oracle_best_partition(
    const std::vector<Vector>& pts, std::size_t k, bool balanced) {
    std::size_t n = pts.size();
    std::vector<std::size_t> assign(n, 0);
    double best = std::numeric_limits<double>::infinity();
    std::set<std::set<std::size_t>> best_family;
    while (true) {
        std::vector<std::size_t> counts(k, 0);
        for (auto a : assign) ++counts[a];
        bool ok = std::all_of(counts.begin(), counts.end(), [&](std::size_t c) {
            return balanced ? c == n / k : c > 0;
        });
        if (ok) {
            double sse = oracle_sse(pts, assign, k);
            if (sse < best) {
                best = sse;
                best_family.clear();
                std::map<std::size_t, std::set<std::size_t>> groups;
                for (std::size_t i = 0; i < n; ++i) groups[assign[i]].insert(i);
                for (auto& [_, g] : groups) best_family.insert(g);
            }
        }
        std::size_t pos = 0;
        while (pos < n && assign[pos] == k - 1) assign[pos++] = 0;
        if (pos == n) break;
        ++assign[pos];
    }
    return {best, best_family};
}

// Brute-force optimal balanced assignment cost against fixed centroids.
static double oracle_balanced_cost(const std::vector<Vector>& pts,
                                   const std::vector<Vector>& centroids, std::size_t size) {
    std::vector<std::size_t> labels;
    for (std::size_t c = 0; c < centroids.size(); ++c)
        for (std::size_t s = 0; s < size; ++s) labels.push_back(c);
    std::sort(labels.begin(), labels.end());
    double best = std::numeric_limits<double>::infinity();
    do {
        double cost = 0;
        for (std::size_t i = 0; i < pts.size(); ++i)
            cost += oracle_sq_dist(pts[i], centroids[labels[i]]);
        best = std::min(best, cost);
    } while (std::next_permutation(labels.begin(), labels.end()));
    return best;
}

// ---- helpers -------------------------------------------------------------

static std::map<std::string, Vector> points_1d(const std::vector<double>& xs) {
    std::map<std::string, Vector> out;
    for (std::size_t i = 0; i < xs.size(); ++i) out["p" + std::to_string(i)] = Vector{xs[i]};
    return out;
}

static std::set<std::set<std::string>> cluster_family(const ClusterResult& res) {
    std::map<std::size_t, std::set<std::string>> groups;
    for (const auto& [id, c] : res.assignments) groups[c].insert(id);
    std::set<std::set<std::string>> family;
    for (auto& [_, g] : groups) family.insert(g);
    return family;
}

static std::set<std::set<std::string>> bucket_family(const Allocation& alloc) {
    std::set<std::set<std::string>> family;
    for (const auto& b : alloc.buckets)
        family.insert(std::set<std::string>(b.demo_ids.begin(), b.demo_ids.end()));
    return family;
}

static std::vector<Demonstration> demos_1d(const std::vector<double>& xs,
                                           EmbeddingStore& store) {
    std::vector<Demonstration> demos;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        std::string id = "d" + std::to_string(i);
        demos.push_back({id, "text " + id, "A", std::nullopt});
        store.insert(id, Vector{xs[i], 1.0});
    }
    return demos;
}

// ---- contiguous ----------------------------------------------------------

TEST_CASE("allocate_contiguous splits evenly") {
    std::vector<Demonstration> demos;
    for (int i = 0; i < 6; ++i)
        demos.push_back({"d" + std::to_string(i), "", "A", std::nullopt});
    auto alloc = allocate_contiguous(demos, 3);
    REQUIRE(alloc.bucket_count() == 3);
    CHECK(alloc.buckets[0].demo_ids == std::vector<std::string>{"d0", "d1"});
    CHECK(alloc.buckets[1].demo_ids == std::vector<std::string>{"d2", "d3"});
    CHECK(alloc.buckets[2].demo_ids == std::vector<std::string>{"d4", "d5"});
}

TEST_CASE("allocate_contiguous b=1 is the concat configuration") {
    std::vector<Demonstration> demos;
    for (int i = 0; i < 6; ++i)
        demos.push_back({"d" + std::to_string(i), "", "A", std::nullopt});
    auto alloc = allocate_contiguous(demos, 1);
    REQUIRE(alloc.bucket_count() == 1);
    CHECK(alloc.buckets[0].demo_ids ==
          std::vector<std::string>{"d0", "d1", "d2", "d3", "d4", "d5"});
}

TEST_CASE("allocate_contiguous puts the remainder in the last bucket") {
    std::vector<Demonstration> demos;
    for (int i = 0; i < 7; ++i)
        demos.push_back({"d" + std::to_string(i), "", "A", std::nullopt});
    auto alloc = allocate_contiguous(demos, 3);
    REQUIRE(alloc.bucket_count() == 3);
    CHECK(alloc.buckets[0].demo_ids == std::vector<std::string>{"d0", "d1"});
    CHECK(alloc.buckets[1].demo_ids == std::vector<std::string>{"d2", "d3"});
    CHECK(alloc.buckets[2].demo_ids == std::vector<std::string>{"d4", "d5", "d6"});
    std::vector<std::string> ids;
    for (const auto& d : demos) ids.push_back(d.id);
    CHECK_NOTHROW(alloc.validate(ids));
}

TEST_CASE("allocate_contiguous rejects b > n") {
    std::vector<Demonstration> demos = {{"d0", "", "A", std::nullopt}};
    CHECK_THROWS_AS(allocate_contiguous(demos, 2), ValidationError);
}

// ---- kmeans --------------------------------------------------------------

TEST_CASE("kmeans recovers two obvious 1-D groups") {
    auto pts = points_1d({0.0, 0.1, 10.0, 10.1});
    KMeansParams params;
    params.k = 2;
    auto res = kmeans(pts, params);
    std::vector<Vector> raw;
    for (const auto& [_, v] : pts) raw.push_back(v);
    auto [best_sse, best_family] = oracle_best_partition(raw, 2, false);
    CHECK(res.inertia == doctest::Approx(best_sse).epsilon(1e-9));
    CHECK(cluster_family(res) ==
          std::set<std::set<std::string>>{{"p0", "p1"}, {"p2", "p3"}});
}

TEST_CASE("kmeans with k = |points| gives singletons, inertia 0") {
    auto pts = points_1d({1.0, 2.0, 3.0});
    KMeansParams params;
    params.k = 3;
    auto res = kmeans(pts, params);
    CHECK(res.inertia == doctest::Approx(0.0));
    CHECK(cluster_family(res).size() == 3);
}

TEST_CASE("kmeans repairs empty clusters on identical points") {
    auto pts = points_1d({5.0, 5.0, 5.0, 5.0});
    KMeansParams params;
    params.k = 2;
    auto res = kmeans(pts, params);
    CHECK(res.inertia == doctest::Approx(0.0));
    CHECK(cluster_family(res).size() == 2);  // both clusters non-empty
}

TEST_CASE("kmeans validation") {
    auto pts = points_1d({1.0, 2.0});
    KMeansParams params;
    params.k = 3;
    CHECK_THROWS_AS(kmeans(pts, params), ValidationError);

    std::map<std::string, Vector> ragged{{"a", {1.0}}, {"b", {1.0, 2.0}}};
    params.k = 1;
    CHECK_THROWS_AS(kmeans(ragged, params), ValidationError);
}

TEST_CASE("kmeans inertia is consistent with assignments") {
    std::mt19937 rng(13);
    std::uniform_real_distribution<double> u(-5.0, 5.0);
    std::map<std::string, Vector> pts;
    for (int i = 0; i < 10; ++i)
        pts["p" + std::to_string(i)] = Vector{u(rng), u(rng)};
    KMeansParams params;
    params.k = 3;
    auto res = kmeans(pts, params);
    double recomputed = 0;
    for (const auto& [id, c] : res.assignments)
        recomputed += oracle_sq_dist(pts.at(id), res.centroids[c]);
    CHECK(res.inertia == doctest::Approx(recomputed).epsilon(1e-9));
}

// ---- balanced_assign -----------------------------------------------------

TEST_CASE("balanced_assign worked example") {
    auto pts = points_1d({0.0, 1.0, 10.0, 11.0});
    std::vector<Vector> centroids = {{0.5}, {10.5}};
    auto assign = balanced_assign(pts, centroids, 2);
    CHECK(assign.at("p0") == 0);
    CHECK(assign.at("p1") == 0);
    CHECK(assign.at("p2") == 1);
    CHECK(assign.at("p3") == 1);
    double cost = 0;
    for (const auto& [id, c] : assign) cost += oracle_sq_dist(pts.at(id), centroids[c]);
    CHECK(cost == doctest::Approx(1.0));
}

TEST_CASE("balanced_assign breaks exact ties by canonical id") {
    // Both points equidistant from both centroids; the smaller id gets
    // cluster 0.
    std::map<std::string, Vector> pts{{"a", {0.0, 1.0}}, {"b", {0.0, -1.0}}};
    std::vector<Vector> centroids = {{1.0, 0.0}, {-1.0, 0.0}};
    auto assign = balanced_assign(pts, centroids, 1);
    CHECK(assign.at("a") == 0);
    CHECK(assign.at("b") == 1);
}

TEST_CASE("balanced_assign beats greedy on an adversarial case") {
    // Greedy nearest-centroid sends p0 and p1 both to centroid 0 and is
    // forced to pay for p2; the exact solver splits optimally.
    auto pts = points_1d({0.0, 0.4, 0.8});
    std::vector<Vector> centroids = {{0.0}, {1.0}, {5.0}};
    auto assign = balanced_assign(pts, centroids, 1);
    double cost = 0;
    for (const auto& [id, c] : assign) cost += oracle_sq_dist(pts.at(id), centroids[c]);
    std::vector<Vector> raw;
    for (const auto& [_, v] : pts) raw.push_back(v);
    CHECK(cost == doctest::Approx(oracle_balanced_cost(raw, centroids, 1)).epsilon(1e-12));
}

TEST_CASE("balanced_assign matches brute force on random instances") {
    std::mt19937 rng(29);
    std::uniform_real_distribution<double> u(-3.0, 3.0);
    for (int trial = 0; trial < 100; ++trial) {
        std::size_t k = 2 + rng() % 3;           // 2..4 clusters
        std::size_t size = 1 + rng() % (8 / k);  // n <= 8
        std::map<std::string, Vector> pts;
        std::vector<Vector> raw;
        for (std::size_t i = 0; i < k * size; ++i) {
            Vector v{u(rng), u(rng)};
            pts["p" + std::to_string(i)] = v;
            raw.push_back(v);
        }
        std::vector<Vector> centroids;
        for (std::size_t c = 0; c < k; ++c) centroids.push_back(Vector{u(rng), u(rng)});
        auto assign = balanced_assign(pts, centroids, size);
        std::vector<std::size_t> counts(k, 0);
        double cost = 0;
        for (const auto& [id, c] : assign) {
            ++counts[c];
            cost += oracle_sq_dist(pts.at(id), centroids[c]);
        }
        for (auto c : counts) CHECK(c == size);
        CHECK(cost == doctest::Approx(oracle_balanced_cost(raw, centroids, size))
                          .epsilon(1e-12));
    }
}

TEST_CASE("balanced_assign rejects indivisible point counts") {
    auto pts = points_1d({0.0, 1.0, 2.0});
    std::vector<Vector> centroids = {{0.0}, {2.0}};
    CHECK_THROWS_AS(balanced_assign(pts, centroids, 2), ValidationError);
}

// ---- constrained_kmeans --------------------------------------------------

TEST_CASE("constrained_kmeans recovers balanced groups") {
    auto pts = points_1d({0.0, 0.1, 10.0, 10.1});
    auto res = constrained_kmeans(pts, 2, 2);
    std::vector<Vector> raw;
    for (const auto& [_, v] : pts) raw.push_back(v);
    auto [best_sse, _] = oracle_best_partition(raw, 2, true);
    CHECK(res.inertia == doctest::Approx(best_sse).epsilon(1e-9));
    CHECK(cluster_family(res) ==
          std::set<std::set<std::string>>{{"p0", "p1"}, {"p2", "p3"}});
}

TEST_CASE("constrained_kmeans with k=1 puts everything together") {
    auto pts = points_1d({1.0, 2.0, 3.0});
    auto res = constrained_kmeans(pts, 1, 3);
    CHECK(cluster_family(res) == std::set<std::set<std::string>>{{"p0", "p1", "p2"}});
}

TEST_CASE("constrained_kmeans pairs adjacent collinear points") {
    auto pts = points_1d({0.0, 1.0, 2.0, 3.0, 4.0, 5.0});
    auto res = constrained_kmeans(pts, 3, 2);
    std::vector<Vector> raw;
    for (const auto& [_, v] : pts) raw.push_back(v);
    auto [best_sse, _] = oracle_best_partition(raw, 3, true);
    CHECK(res.inertia == doctest::Approx(best_sse).epsilon(1e-9));
    CHECK(cluster_family(res) ==
          std::set<std::set<std::string>>{{"p0", "p1"}, {"p2", "p3"}, {"p4", "p5"}});
}

TEST_CASE("constrained_kmeans rejects n != k*size") {
    auto pts = points_1d({0.0, 1.0, 2.0});
    CHECK_THROWS_AS(constrained_kmeans(pts, 2, 2), ValidationError);
}

// ---- similar-together allocation -----------------------------------------

TEST_CASE("allocate_similar_together recovers two tight groups") {
    EmbeddingStore store;
    auto demos = demos_1d({0.0, 0.2, 0.1, 9.9, 10.0, 10.1}, store);
    auto alloc = allocate_similar_together(demos, store, 2);
    CHECK(bucket_family(alloc) ==
          std::set<std::set<std::string>>{{"d0", "d1", "d2"}, {"d3", "d4", "d5"}});
    std::vector<std::string> ids;
    for (const auto& d : demos) ids.push_back(d.id);
    CHECK_NOTHROW(alloc.validate(ids));
}

TEST_CASE("allocate_similar_together b=1 is one bucket") {
    EmbeddingStore store;
    auto demos = demos_1d({0.0, 1.0, 2.0}, store);
    auto alloc = allocate_similar_together(demos, store, 1);
    REQUIRE(alloc.bucket_count() == 1);
    CHECK(alloc.buckets[0].demo_ids.size() == 3);
}

TEST_CASE("allocate_similar_together requires embeddings") {
    EmbeddingStore store;
    std::vector<Demonstration> demos = {{"d0", "", "A", std::nullopt}};
    CHECK_THROWS_AS(allocate_similar_together(demos, store, 1), ValidationError);
}

// ---- diverse allocation --------------------------------------------------

TEST_CASE("allocate_diverse: n=6, b=2 gives 2 buckets of 3, one per cluster") {
    EmbeddingStore store;
    auto demos = demos_1d({0.0, 0.1, 5.0, 5.1, 10.0, 10.1}, store);
    auto alloc = allocate_diverse(demos, store, 2);
    REQUIRE(alloc.bucket_count() == 2);
    auto res = constrained_kmeans(
        [&] {
            std::map<std::string, Vector> pts;
            for (const auto& d : demos) pts[d.id] = store.get(d.id);
            return pts;
        }(),
        3, 2);
    for (const auto& bucket : alloc.buckets) {
        CHECK(bucket.demo_ids.size() == 3);
        // at most one demo from each cluster
        std::set<std::size_t> clusters;
        for (const auto& id : bucket.demo_ids)
            CHECK(clusters.insert(res.assignments.at(id)).second);
    }
}

TEST_CASE("allocate_diverse: n=b gives singleton buckets") {
    EmbeddingStore store;
    auto demos = demos_1d({0.0, 1.0, 2.0}, store);
    auto alloc = allocate_diverse(demos, store, 3);
    REQUIRE(alloc.bucket_count() == 3);
    for (const auto& b : alloc.buckets) CHECK(b.demo_ids.size() == 1);
}

TEST_CASE("allocate_diverse mixes two tight groups across buckets") {
    EmbeddingStore store;
    auto demos = demos_1d({0.0, 0.1, 0.2, 10.0, 10.1, 10.2}, store);
    auto alloc = allocate_diverse(demos, store, 3);
    REQUIRE(alloc.bucket_count() == 3);
    std::set<std::string> group_a = {"d0", "d1", "d2"};
    for (const auto& bucket : alloc.buckets) {
        REQUIRE(bucket.demo_ids.size() == 2);
        std::size_t in_a = 0;
        for (const auto& id : bucket.demo_ids) in_a += group_a.count(id);
        CHECK(in_a == 1);  // one member of each group
    }
}

TEST_CASE("allocate_diverse rejects b not dividing n") {
    EmbeddingStore store;
    auto demos = demos_1d({0.0, 1.0, 2.0, 3.0, 4.0}, store);
    CHECK_THROWS_AS(allocate_diverse(demos, store, 2), ValidationError);
}

// ---- permutation invariance ----------------------------------------------

TEST_CASE("clustered allocations are permutation-invariant") {
    EmbeddingStore store;
    auto demos = demos_1d({0.0, 0.3, 0.6, 4.0, 4.3, 4.6, 8.0, 8.3, 8.6, 12.0, 12.3, 12.6},
                          store);
    auto sim_base = bucket_family(allocate_similar_together(demos, store, 4));
    auto div_base = bucket_family(allocate_diverse(demos, store, 4));
    std::mt19937 rng(17);
    for (int trial = 0; trial < 20; ++trial) {
        auto shuffled = demos;
        std::shuffle(shuffled.begin(), shuffled.end(), rng);
        CHECK(bucket_family(allocate_similar_together(shuffled, store, 4)) == sim_base);
        CHECK(bucket_family(allocate_diverse(shuffled, store, 4)) == div_base);
    }
}

TEST_CASE("all strategies return exact partitions on random demo sets") {
    std::mt19937 rng(23);
    std::uniform_real_distribution<double> u(-5.0, 5.0);
    for (int trial = 0; trial < 25; ++trial) {
        std::size_t n = 4 + 2 * (rng() % 4);  // even n in 4..10
        EmbeddingStore store;
        std::vector<Demonstration> demos;
        std::vector<std::string> ids;
        for (std::size_t i = 0; i < n; ++i) {
            std::string id = "d" + std::to_string(i);
            demos.push_back({id, "", "A", std::nullopt});
            store.insert(id, Vector{u(rng), u(rng)});
            ids.push_back(id);
        }
        std::size_t b = 2;
        CHECK_NOTHROW(allocate_contiguous(demos, b).validate(ids));
        CHECK_NOTHROW(allocate_similar_together(demos, store, b).validate(ids));
        CHECK_NOTHROW(allocate_diverse(demos, store, b).validate(ids));
    }
}
