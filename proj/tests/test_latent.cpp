#include <catch2/catch_amalgamated.hpp>

#include "doseml/core/rng.hpp"
#include "doseml/latent/kmeans.hpp"
#include "doseml/latent/tsne.hpp"

using namespace doseml;
using Catch::Approx;

namespace {

/// Well-separated isotropic Gaussian clouds in d dimensions.
LatentSet gaussian_clouds(int clusters, int per_cluster, int d, double separation,
                          std::uint64_t seed, double sigma = 0.5) {
    Rng rng(seed);
    LatentSet set;
    set.n = clusters * per_cluster;
    set.d = d;
    set.data.resize(static_cast<std::size_t>(set.n) * d);
    for (int c = 0; c < clusters; ++c)
        for (int i = 0; i < per_cluster; ++i) {
            const int idx = c * per_cluster + i;
            set.sample_ids.push_back("s" + std::to_string(idx));
            for (int j = 0; j < d; ++j)
                set.data[static_cast<std::size_t>(idx) * d + j] =
                    (j == c % d ? separation * (1 + c / d) : 0.0) + rng.normal(0.0, sigma);
        }
    return set;
}

}  // namespace

TEST_CASE("kmeans with K=1 on identical points has zero inertia") {
    LatentSet set;
    set.n = 6;
    set.d = 3;
    set.data.assign(18, 2.5);
    for (int i = 0; i < 6; ++i) set.sample_ids.push_back("s" + std::to_string(i));
    const Clustering c = kmeans(set, 1, 0);
    CHECK(c.inertia == 0.0);
    CHECK(c.assignments == std::vector<int>(6, 0));
    CHECK(c.centroids == std::vector<double>(3, 2.5));
}

TEST_CASE("kmeans recovers two planted clouds exactly") {
    const LatentSet set = gaussian_clouds(2, 20, 4, 20.0, 1);
    const Clustering c = kmeans(set, 2, 3);
    // All points of each planted cloud share one label and the labels differ.
    const int l0 = c.assignments[0], l1 = c.assignments[20];
    CHECK(l0 != l1);
    for (int i = 0; i < 20; ++i) CHECK(c.assignments[i] == l0);
    for (int i = 20; i < 40; ++i) CHECK(c.assignments[i] == l1);
}

TEST_CASE("the inertia trace of the winning run never increases") {
    const LatentSet set = gaussian_clouds(3, 15, 5, 4.0, 2, 1.5);
    const Clustering c = kmeans(set, 3, 4);
    REQUIRE(!c.inertia_trace.empty());
    for (std::size_t i = 1; i < c.inertia_trace.size(); ++i)
        CHECK(c.inertia_trace[i] <= c.inertia_trace[i - 1] + 1e-9);
    CHECK(c.inertia == Approx(c.inertia_trace.back()));
}

TEST_CASE("kmeans rejects K outside [1, n]") {
    const LatentSet set = gaussian_clouds(1, 4, 2, 0.0, 3);
    CHECK_THROWS_AS(kmeans(set, 5, 0), ArgumentError);
    CHECK_THROWS_AS(kmeans(set, 0, 0), ArgumentError);
}

TEST_CASE("silhouette values are bounded and high for separated clouds") {
    const LatentSet set = gaussian_clouds(2, 25, 3, 30.0, 5);
    const Clustering c = kmeans(set, 2, 6);
    const std::vector<double> s = silhouette(set, c);
    REQUIRE(s.size() == 50);
    for (double v : s) {
        CHECK(v >= -1.0);
        CHECK(v <= 1.0);
    }
    CHECK(mean_silhouette(set, c) > 0.9);
}

TEST_CASE("silhouette requires at least two clusters") {
    const LatentSet set = gaussian_clouds(1, 6, 2, 0.0, 7);
    const Clustering c = kmeans(set, 1, 0);
    CHECK_THROWS_AS(silhouette(set, c), ArgumentError);
}

TEST_CASE("select_k finds the planted cluster count") {
    const LatentSet two = gaussian_clouds(2, 20, 4, 25.0, 8);
    CHECK(select_k(two, 2, 6, 9).best_k == 2);

    const LatentSet three = gaussian_clouds(3, 15, 4, 25.0, 10);
    const KSelection sel = select_k(three, 2, 6, 11);
    CHECK(sel.best_k == 3);
    CHECK(sel.clustering.mean_silhouette > 0.8);
    CHECK(sel.scores.size() == 5);
}

TEST_CASE("select_k recovers K=3 in at least 19 of 20 seeded trials") {
    int hits = 0;
    double sil_sum = 0.0;
    for (std::uint64_t trial = 0; trial < 20; ++trial) {
        const LatentSet set = gaussian_clouds(3, 15, 6, 15.0, 1000 + trial);
        const KSelection sel = select_k(set, 2, 8, 2000 + trial);
        if (sel.best_k == 3) ++hits;
        sil_sum += sel.clustering.mean_silhouette;
    }
    CHECK(hits >= 19);
    CHECK(sil_sum / 20.0 > 0.8);
}

TEST_CASE("select_k validates its K range") {
    const LatentSet set = gaussian_clouds(2, 5, 2, 10.0, 12);
    CHECK_THROWS_AS(select_k(set, 1, 4, 0), ArgumentError);
    CHECK_THROWS_AS(select_k(set, 2, 100, 0), ArgumentError);
}

TEST_CASE("tsne returns finite 2-D coordinates") {
    const LatentSet set = gaussian_clouds(3, 10, 8, 10.0, 13);
    const TsneResult r = tsne_embed(set, 5.0, 300, 1);
    REQUIRE(r.n == 30);
    REQUIRE(r.coords.size() == 60);
    for (double v : r.coords) CHECK(std::isfinite(v));
    REQUIRE(!r.kl_trace.empty());
    for (double v : r.kl_trace) CHECK(std::isfinite(v));
}

TEST_CASE("the tsne objective does not step up after early exaggeration") {
    const LatentSet set = gaussian_clouds(2, 20, 6, 8.0, 14);
    const TsneResult r = tsne_embed(set, 8.0, 600, 2);
    REQUIRE(r.kl_trace.size() >= 600);
    for (std::size_t i = 251; i < r.kl_trace.size(); ++i)
        CHECK(r.kl_trace[i] <= r.kl_trace[i - 1] + 1e-3);
}

TEST_CASE("duplicated inputs embed very close together") {
    LatentSet set = gaussian_clouds(2, 12, 5, 10.0, 15);
    // Make the last point an exact duplicate of the first.
    for (int j = 0; j < set.d; ++j)
        set.data[static_cast<std::size_t>(set.n - 1) * set.d + j] = set.data[j];
    const TsneResult r = tsne_embed(set, 5.0, 500, 3);
    std::vector<double> dists;
    for (int i = 0; i < r.n; ++i)
        for (int j = i + 1; j < r.n; ++j) {
            const double dx = r.coords[2 * i] - r.coords[2 * j];
            const double dy = r.coords[2 * i + 1] - r.coords[2 * j + 1];
            dists.push_back(std::hypot(dx, dy));
        }
    std::sort(dists.begin(), dists.end());
    const double dup_dx = r.coords[0] - r.coords[2 * (r.n - 1)];
    const double dup_dy = r.coords[1] - r.coords[2 * (r.n - 1) + 1];
    const double dup_dist = std::hypot(dup_dx, dup_dy);
    const double percentile1 = dists[dists.size() / 100];
    CHECK(dup_dist <= percentile1);
}

TEST_CASE("tsne rejects fewer than 5 samples") {
    const LatentSet set = gaussian_clouds(1, 4, 3, 0.0, 16);
    CHECK_THROWS_AS(tsne_embed(set, 2.0, 50, 0), DataError);
}
