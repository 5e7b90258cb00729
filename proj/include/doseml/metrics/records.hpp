#pragma once

#include <optional>
#include <string>
#include <vector>

#include "doseml/data/dose_image.hpp"
#include "doseml/metrics/dose_metrics.hpp"
#include "doseml/metrics/image_metrics.hpp"

namespace doseml {

enum class Comparison { InputVsTarget, OutputVsTarget, OutputVsInput };

inline const char* to_string(Comparison c) {
    switch (c) {
        case Comparison::InputVsTarget: return "input_vs_target";
        case Comparison::OutputVsTarget: return "output_vs_target";
        default: return "output_vs_input";
    }
}

/// One row of the metrics table: all per-pair metrics for one comparison
/// direction of one sample. PSNR may be +inf (identical images); ROI means
/// may be absent when an ROI is empty.
struct MetricsRecord {
    std::string sample_id;
    Comparison comparison = Comparison::InputVsTarget;
    double mae_cgy = 0.0;
    double psnr_db = 0.0;
    double ssim = 0.0;
    std::optional<double> rdd_infield_pct, rdd_outfield_pct;
    std::optional<double> add_infield_cgy, add_outfield_cgy;
};

/// Compute the full record for one (compared, reference) image pair.
inline MetricsRecord compute_record(const std::string& sample_id, Comparison comparison,
                                    const DoseImage& compared, const DoseImage& reference) {
    MetricsRecord r;
    r.sample_id = sample_id;
    r.comparison = comparison;
    r.mae_cgy = mae(compared, reference);
    r.psnr_db = psnr(compared, reference);
    r.ssim = ssim(compared, reference);
    const AddRdd ar = add_rdd(compared, reference);
    r.rdd_infield_pct = ar.rdd_infield_pct;
    r.rdd_outfield_pct = ar.rdd_outfield_pct;
    r.add_infield_cgy = ar.add_infield_cgy;
    r.add_outfield_cgy = ar.add_outfield_cgy;
    return r;
}

/// Mean and standard deviation of a metric column, skipping +inf PSNR
/// sentinels and absent ROI means; `used` reports how many values entered.
struct MeanStd {
    double mean = 0.0, stddev = 0.0;
    long used = 0;
};

inline MeanStd mean_std(const std::vector<double>& xs) {
    MeanStd m;
    std::vector<double> finite;
    for (double x : xs)
        if (std::isfinite(x)) finite.push_back(x);
    m.used = static_cast<long>(finite.size());
    if (finite.empty()) return m;
    for (double x : finite) m.mean += x;
    m.mean /= finite.size();
    for (double x : finite) m.stddev += (x - m.mean) * (x - m.mean);
    m.stddev = finite.size() > 1 ? std::sqrt(m.stddev / (finite.size() - 1)) : 0.0;
    return m;
}

}  // namespace doseml
