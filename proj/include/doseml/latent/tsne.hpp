#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "doseml/core/rng.hpp"
#include "doseml/latent/kmeans.hpp"

namespace doseml {

struct TsneResult {
    int n = 0;
    std::vector<double> coords;   // n x 2 row-major
    std::vector<double> kl_trace; // objective per iteration
};

namespace detail {

/// Conditional probabilities p_{j|i} for one point via binary search on the
/// Gaussian bandwidth to hit the requested perplexity.
inline void conditional_probs(const std::vector<double>& sqd, int n, int i, double perplexity,
                              std::vector<double>& p_row) {
    const double target_entropy = std::log(perplexity);
    double beta = 1.0, beta_lo = 0.0, beta_hi = std::numeric_limits<double>::infinity();
    for (int it = 0; it < 64; ++it) {
        double sum = 0.0, sum_dp = 0.0;
        for (int j = 0; j < n; ++j) {
            if (j == i) {
                p_row[j] = 0.0;
                continue;
            }
            p_row[j] = std::exp(-beta * sqd[static_cast<std::size_t>(i) * n + j]);
            sum += p_row[j];
            sum_dp += sqd[static_cast<std::size_t>(i) * n + j] * p_row[j];
        }
        if (sum <= 0.0) {
            for (int j = 0; j < n; ++j) p_row[j] = j == i ? 0.0 : 1.0 / (n - 1);
            return;
        }
        const double entropy = std::log(sum) + beta * sum_dp / sum;
        const double diff = entropy - target_entropy;
        if (std::abs(diff) < 1e-7) break;
        if (diff > 0.0) {
            beta_lo = beta;
            beta = std::isinf(beta_hi) ? beta * 2.0 : 0.5 * (beta + beta_hi);
        } else {
            beta_hi = beta;
            beta = beta_lo > 0.0 ? 0.5 * (beta + beta_lo) : beta * 0.5;
        }
    }
    double sum = 0.0;
    for (int j = 0; j < n; ++j) sum += p_row[j];
    for (int j = 0; j < n; ++j) p_row[j] /= sum;
}

}  // namespace detail

/// Exact O(n^2) t-SNE to two dimensions: perplexity-calibrated Gaussian
/// affinities, early exaggeration x12 for the first 250 iterations, gradient
/// descent with momentum 0.5 -> 0.8. Perplexity is auto-reduced to
/// floor((n-1)/3) when the input is too small for the requested value.
inline TsneResult tsne_embed(const LatentSet& latents, double perplexity = 30.0,
                             int iterations = 1000, std::uint64_t seed = 0) {
    const int n = latents.n, d = latents.d;
    if (n < 5) throw DataError("tsne_embed: need at least 5 samples");
    if (n <= 3 * perplexity) perplexity = std::max(2.0, std::floor((n - 1) / 3.0));

    std::vector<double> sqd(static_cast<std::size_t>(n) * n, 0.0);
    for (int i = 0; i < n; ++i)
        for (int j = i + 1; j < n; ++j) {
            const double dd = detail::sqdist(latents.row(i), latents.row(j), d);
            sqd[static_cast<std::size_t>(i) * n + j] = dd;
            sqd[static_cast<std::size_t>(j) * n + i] = dd;
        }

    // Symmetrized joint probabilities.
    std::vector<double> p(static_cast<std::size_t>(n) * n, 0.0);
    {
        std::vector<double> row(n);
        for (int i = 0; i < n; ++i) {
            detail::conditional_probs(sqd, n, i, perplexity, row);
            for (int j = 0; j < n; ++j) p[static_cast<std::size_t>(i) * n + j] = row[j];
        }
        for (int i = 0; i < n; ++i)
            for (int j = i + 1; j < n; ++j) {
                const double v = (p[static_cast<std::size_t>(i) * n + j] +
                                  p[static_cast<std::size_t>(j) * n + i]) /
                                 (2.0 * n);
                p[static_cast<std::size_t>(i) * n + j] = std::max(v, 1e-12);
                p[static_cast<std::size_t>(j) * n + i] = std::max(v, 1e-12);
            }
        for (int i = 0; i < n; ++i) p[static_cast<std::size_t>(i) * n + i] = 1e-12;
    }

    const int exaggeration_end = std::min(250, iterations / 2);
    const double exaggeration = 12.0;
    const double learning_rate = std::max(50.0, n / 12.0);

    Rng rng(seed);
    std::vector<double> y(static_cast<std::size_t>(n) * 2);
    for (double& v : y) v = rng.normal(0.0, 1e-4);
    std::vector<double> velocity(y.size(), 0.0);
    std::vector<double> gains(y.size(), 1.0);
    std::vector<double> q(static_cast<std::size_t>(n) * n, 0.0);
    std::vector<double> grad(y.size(), 0.0);

    // Plain (unexaggerated) objective for a candidate embedding.
    auto kl_of = [&](const std::vector<double>& yy) {
        double qsum = 0.0;
        for (int i = 0; i < n; ++i)
            for (int j = i + 1; j < n; ++j) {
                const double dy0 = yy[2 * i] - yy[2 * j];
                const double dy1 = yy[2 * i + 1] - yy[2 * j + 1];
                qsum += 2.0 / (1.0 + dy0 * dy0 + dy1 * dy1);
            }
        double kl = 0.0;
        for (int i = 0; i < n; ++i)
            for (int j = i + 1; j < n; ++j) {
                const double dy0 = yy[2 * i] - yy[2 * j];
                const double dy1 = yy[2 * i + 1] - yy[2 * j + 1];
                const double qij = std::max(1.0 / ((1.0 + dy0 * dy0 + dy1 * dy1) * qsum), 1e-12);
                const std::size_t ij = static_cast<std::size_t>(i) * n + j;
                kl += 2.0 * p[ij] * std::log(p[ij] / qij);
            }
        return kl;
    };

    TsneResult res;
    res.n = n;
    for (int iter = 0; iter < iterations; ++iter) {
        const double ex = iter < exaggeration_end ? exaggeration : 1.0;
        // Student-t affinities in the embedding.
        double qsum = 0.0;
        for (int i = 0; i < n; ++i)
            for (int j = i + 1; j < n; ++j) {
                const double dy0 = y[2 * i] - y[2 * j];
                const double dy1 = y[2 * i + 1] - y[2 * j + 1];
                const double num = 1.0 / (1.0 + dy0 * dy0 + dy1 * dy1);
                q[static_cast<std::size_t>(i) * n + j] = num;
                q[static_cast<std::size_t>(j) * n + i] = num;
                qsum += 2.0 * num;
            }

        std::fill(grad.begin(), grad.end(), 0.0);
        double kl = 0.0;
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < n; ++j) {
                if (i == j) continue;
                const std::size_t ij = static_cast<std::size_t>(i) * n + j;
                const double pij = ex * p[ij];
                const double qij = std::max(q[ij] / qsum, 1e-12);
                const double mult = 4.0 * (pij - qij) * q[ij];
                grad[2 * i] += mult * (y[2 * i] - y[2 * j]);
                grad[2 * i + 1] += mult * (y[2 * i + 1] - y[2 * j + 1]);
                if (j > i) kl += 2.0 * ex * p[ij] * std::log(ex * p[ij] / qij);
            }
        res.kl_trace.push_back(kl);

        const double momentum = iter < exaggeration_end ? 0.5 : 0.8;
        // Cool the step size over the last stretch so the objective settles.
        const double lr = iter >= iterations - 200
                              ? learning_rate * (iterations - iter) / 200.0
                              : learning_rate;
        for (std::size_t i = 0; i < y.size(); ++i) {
            gains[i] = (grad[i] > 0.0) != (velocity[i] > 0.0) ? gains[i] + 0.2
                                                              : std::max(gains[i] * 0.8, 0.01);
            velocity[i] = momentum * velocity[i] - lr * gains[i] * grad[i];
        }
        if (iter < exaggeration_end) {
            for (std::size_t i = 0; i < y.size(); ++i) y[i] += velocity[i];
        } else {
            // Monotone safeguard: once exaggeration is off, only accept steps
            // that do not raise the objective; otherwise backtrack.
            const double kl_cur = kl_of(y);
            std::vector<double> trial = y;
            bool accepted = false;
            for (int attempt = 0; attempt < 24; ++attempt) {
                for (std::size_t i = 0; i < y.size(); ++i) trial[i] = y[i] + velocity[i];
                if (kl_of(trial) <= kl_cur) {
                    y = trial;
                    accepted = true;
                    break;
                }
                for (double& v : velocity) v *= 0.5;
            }
            if (!accepted) std::fill(velocity.begin(), velocity.end(), 0.0);
        }
        // Recenter so the embedding does not drift.
        double m0 = 0.0, m1 = 0.0;
        for (int i = 0; i < n; ++i) {
            m0 += y[2 * i];
            m1 += y[2 * i + 1];
        }
        m0 /= n;
        m1 /= n;
        for (int i = 0; i < n; ++i) {
            y[2 * i] -= m0;
            y[2 * i + 1] -= m1;
        }
    }
    res.coords = std::move(y);
    return res;
}

}  // namespace doseml
