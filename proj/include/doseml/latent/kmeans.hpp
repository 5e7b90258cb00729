#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "doseml/core/error.hpp"
#include "doseml/core/rng.hpp"

namespace doseml {

/// n latent vectors (rows) of dimension d plus their source sample ids.
struct LatentSet {
    int n = 0, d = 0;
    std::vector<double> data;  // row-major n x d
    std::vector<std::string> sample_ids;

    const double* row(int i) const { return data.data() + static_cast<std::size_t>(i) * d; }
};

struct Clustering {
    int k = 0;
    std::vector<int> assignments;
    std::vector<double> centroids;  // k x d
    double inertia = 0.0;
    double mean_silhouette = 0.0;
    std::vector<double> inertia_trace;  // per Lloyd iteration of the winning run
};

namespace detail {

inline double sqdist(const double* a, const double* b, int d) {
    double s = 0.0;
    for (int i = 0; i < d; ++i) {
        const double t = a[i] - b[i];
        s += t * t;
    }
    return s;
}

}  // namespace detail

/// Lloyd iterations from k-means++ seeding; best of `restarts` runs by
/// inertia. Empty clusters are re-seeded to the point farthest from its
/// centroid. Converged when assignments stop changing or at 300 iterations.
inline Clustering kmeans(const LatentSet& latents, int k, std::uint64_t seed, int restarts = 5) {
    const int n = latents.n, d = latents.d;
    if (k < 1 || k > n) throw ArgumentError("kmeans: K must be in [1, n]");

    Clustering best;
    best.inertia = std::numeric_limits<double>::infinity();
    for (int run = 0; run < restarts; ++run) {
        Rng rng(mix_seed(seed, static_cast<std::uint64_t>(run)));

        // k-means++ seeding.
        std::vector<double> centroids(static_cast<std::size_t>(k) * d);
        std::vector<double> mind(n, std::numeric_limits<double>::infinity());
        int first = static_cast<int>(rng.uniform_int(0, n - 1));
        std::copy_n(latents.row(first), d, centroids.begin());
        for (int c = 1; c < k; ++c) {
            double total = 0.0;
            for (int i = 0; i < n; ++i) {
                mind[i] = std::min(mind[i],
                                   detail::sqdist(latents.row(i), &centroids[(c - 1) * d], d));
                total += mind[i];
            }
            int pick = 0;
            if (total > 0.0) {
                double target = rng.uniform(0.0, total), cum = 0.0;
                for (int i = 0; i < n; ++i) {
                    cum += mind[i];
                    if (cum >= target) {
                        pick = i;
                        break;
                    }
                }
            } else {
                pick = static_cast<int>(rng.uniform_int(0, n - 1));
            }
            std::copy_n(latents.row(pick), d, centroids.begin() + static_cast<std::size_t>(c) * d);
        }

        std::vector<int> assign(n, -1);
        std::vector<double> trace;
        for (int iter = 0; iter < 300; ++iter) {
            bool changed = false;
            double inertia = 0.0;
            for (int i = 0; i < n; ++i) {
                int bestc = 0;
                double bd = std::numeric_limits<double>::infinity();
                for (int c = 0; c < k; ++c) {
                    const double dd = detail::sqdist(latents.row(i), &centroids[c * d], d);
                    if (dd < bd) {
                        bd = dd;
                        bestc = c;
                    }
                }
                if (assign[i] != bestc) {
                    assign[i] = bestc;
                    changed = true;
                }
                inertia += bd;
            }
            trace.push_back(inertia);
            if (!changed) break;

            std::vector<double> sums(static_cast<std::size_t>(k) * d, 0.0);
            std::vector<long> counts(k, 0);
            for (int i = 0; i < n; ++i) {
                for (int j = 0; j < d; ++j) sums[assign[i] * d + j] += latents.row(i)[j];
                ++counts[assign[i]];
            }
            for (int c = 0; c < k; ++c) {
                if (counts[c] == 0) {
                    // Re-seed to the point farthest from its own centroid.
                    int far = 0;
                    double fd = -1.0;
                    for (int i = 0; i < n; ++i) {
                        const double dd =
                            detail::sqdist(latents.row(i), &centroids[assign[i] * d], d);
                        if (dd > fd) {
                            fd = dd;
                            far = i;
                        }
                    }
                    std::copy_n(latents.row(far), d,
                                centroids.begin() + static_cast<std::size_t>(c) * d);
                } else {
                    for (int j = 0; j < d; ++j) centroids[c * d + j] = sums[c * d + j] / counts[c];
                }
            }
        }

        double inertia = 0.0;
        for (int i = 0; i < n; ++i)
            inertia += detail::sqdist(latents.row(i), &centroids[assign[i] * d], d);
        if (inertia < best.inertia) {
            best.k = k;
            best.assignments = assign;
            best.centroids = centroids;
            best.inertia = inertia;
            best.inertia_trace = trace;
        }
    }
    return best;
}

/// Per-point silhouette s(i) = (b(i) - a(i)) / max(a(i), b(i)) under
/// Euclidean distance. Singleton-cluster points get s(i) = 0.
inline std::vector<double> silhouette(const LatentSet& latents, const Clustering& clustering) {
    const int n = latents.n, k = clustering.k;
    if (k < 2) throw ArgumentError("silhouette requires at least 2 clusters");
    std::vector<long> counts(k, 0);
    for (int a : clustering.assignments) ++counts[a];

    std::vector<double> s(n, 0.0);
    for (int i = 0; i < n; ++i) {
        const int ci = clustering.assignments[i];
        if (counts[ci] <= 1) continue;
        std::vector<double> mean_dist(k, 0.0);
        for (int j = 0; j < n; ++j) {
            if (j == i) continue;
            mean_dist[clustering.assignments[j]] +=
                std::sqrt(detail::sqdist(latents.row(i), latents.row(j), latents.d));
        }
        const double a = mean_dist[ci] / (counts[ci] - 1);
        double b = std::numeric_limits<double>::infinity();
        for (int c = 0; c < k; ++c) {
            if (c == ci || counts[c] == 0) continue;
            b = std::min(b, mean_dist[c] / counts[c]);
        }
        const double m = std::max(a, b);
        s[i] = m > 0.0 ? (b - a) / m : 0.0;
    }
    return s;
}

inline double mean_silhouette(const LatentSet& latents, const Clustering& clustering) {
    const std::vector<double> s = silhouette(latents, clustering);
    double sum = 0.0;
    for (double x : s) sum += x;
    return sum / s.size();
}

struct KSelection {
    int best_k = 0;
    Clustering clustering;
    std::vector<std::pair<int, double>> scores;  // (K, mean silhouette)
};

/// Run kmeans + silhouette across the K range and keep the argmax mean
/// silhouette; ties go to the smaller K.
inline KSelection select_k(const LatentSet& latents, int k_min, int k_max, std::uint64_t seed,
                           int restarts = 5) {
    if (k_min < 2) throw ArgumentError("select_k: silhouette needs K >= 2");
    if (k_max > latents.n) throw ArgumentError("select_k: K range exceeds sample count");
    KSelection sel;
    double best_score = -2.0;
    for (int k = k_min; k <= k_max; ++k) {
        Clustering c = kmeans(latents, k, mix_seed(seed, static_cast<std::uint64_t>(k)), restarts);
        c.mean_silhouette = mean_silhouette(latents, c);
        sel.scores.emplace_back(k, c.mean_silhouette);
        if (c.mean_silhouette > best_score) {
            best_score = c.mean_silhouette;
            sel.best_k = k;
            sel.clustering = std::move(c);
        }
    }
    return sel;
}

}  // namespace doseml
