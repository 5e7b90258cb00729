#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "doseml/metrics/records.hpp"

namespace doseml {

struct RankedSample {
    std::string sample_id;
    double composite_score = 0.0;
};

struct CompositeRanking {
    std::vector<RankedSample> ordered;  // best first
    std::string best_id, worst_id;
};

/// Composite best/worst selection over per-sample Output-vs-Target records:
/// min-max normalize each of the 7 per-sample metrics over the set, invert
/// the lower-is-better ones (MAE, RDD, ADD), average, rank. A metric that is
/// constant across samples (or absent) contributes 0.5 for every sample.
/// +inf PSNR is treated as the best finite PSNR in the set. Ties break by
/// sample id, lexicographic.
inline CompositeRanking composite_rank(const std::vector<MetricsRecord>& records) {
    if (records.size() < 2) throw DataError("composite_rank needs at least 2 samples");
    const std::size_t n = records.size();

    auto column = [&](auto getter) {
        std::vector<double> xs(n);
        for (std::size_t i = 0; i < n; ++i) xs[i] = getter(records[i]);
        return xs;
    };
    std::vector<double> psnr_col = column([](const MetricsRecord& r) { return r.psnr_db; });
    double best_finite = 0.0;
    bool any_finite = false;
    for (double x : psnr_col)
        if (std::isfinite(x)) {
            best_finite = any_finite ? std::max(best_finite, x) : x;
            any_finite = true;
        }
    for (double& x : psnr_col)
        if (!std::isfinite(x)) x = best_finite;

    auto opt_column = [&](auto getter) {
        std::vector<double> xs(n, std::nan(""));
        for (std::size_t i = 0; i < n; ++i)
            if (auto v = getter(records[i])) xs[i] = *v;
        return xs;
    };

    struct Col {
        std::vector<double> values;
        bool higher_is_better;
    };
    std::vector<Col> cols = {
        {column([](const MetricsRecord& r) { return r.mae_cgy; }), false},
        {psnr_col, true},
        {column([](const MetricsRecord& r) { return r.ssim; }), true},
        {opt_column([](const MetricsRecord& r) { return r.rdd_infield_pct; }), false},
        {opt_column([](const MetricsRecord& r) { return r.rdd_outfield_pct; }), false},
        {opt_column([](const MetricsRecord& r) { return r.add_infield_cgy; }), false},
        {opt_column([](const MetricsRecord& r) { return r.add_outfield_cgy; }), false},
    };

    std::vector<double> score(n, 0.0);
    for (const Col& col : cols) {
        double lo = 0.0, hi = 0.0;
        bool first = true, any_nan = false;
        for (double x : col.values) {
            if (std::isnan(x)) {
                any_nan = true;
                continue;
            }
            lo = first ? x : std::min(lo, x);
            hi = first ? x : std::max(hi, x);
            first = false;
        }
        const bool constant = first || any_nan || hi == lo;
        for (std::size_t i = 0; i < n; ++i) {
            double s;
            if (constant) {
                s = 0.5;
            } else {
                s = (col.values[i] - lo) / (hi - lo);
                if (!col.higher_is_better) s = 1.0 - s;
            }
            score[i] += s / cols.size();
        }
    }

    CompositeRanking out;
    out.ordered.resize(n);
    for (std::size_t i = 0; i < n; ++i) out.ordered[i] = {records[i].sample_id, score[i]};
    std::sort(out.ordered.begin(), out.ordered.end(), [](const RankedSample& a, const RankedSample& b) {
        if (a.composite_score != b.composite_score) return a.composite_score > b.composite_score;
        return a.sample_id < b.sample_id;
    });
    out.best_id = out.ordered.front().sample_id;
    out.worst_id = out.ordered.back().sample_id;
    return out;
}

}  // namespace doseml
