#pragma once

#include <optional>
#include <vector>

#include "doseml/data/dose_image.hpp"

namespace doseml {

enum class Region { InField, OutOfField };

/// Boolean region mask, same shape as the reference image. In-field and
/// out-of-field masks always partition the image.
struct RoiMask {
    int height = 0, width = 0;
    std::vector<bool> mask;
    Region region = Region::InField;

    long count() const {
        long n = 0;
        for (bool b : mask) n += b;
        return n;
    }
};

/// Partition at 50% of the reference maximum: in-field >= threshold,
/// out-of-field below it.
inline std::pair<RoiMask, RoiMask> roi_masks(const DoseImage& reference) {
    const double mx = reference.max_value();
    if (mx <= 0.0) throw ArgumentError("roi_masks: reference has no positive dose");
    const double thr = 0.5 * mx;
    RoiMask in{reference.height, reference.width, {}, Region::InField};
    RoiMask out{reference.height, reference.width, {}, Region::OutOfField};
    in.mask.resize(reference.values.size());
    out.mask.resize(reference.values.size());
    for (std::size_t i = 0; i < reference.values.size(); ++i) {
        in.mask[i] = reference.values[i] >= thr;
        out.mask[i] = !in.mask[i];
    }
    return {in, out};
}

/// Mean absolute (cGy) and relative (% of reference max) dose differences
/// within each ROI of the reference. Empty ROIs report absent means.
struct AddRdd {
    std::optional<double> add_infield_cgy, add_outfield_cgy;
    std::optional<double> rdd_infield_pct, rdd_outfield_pct;
};

inline AddRdd add_rdd(const DoseImage& compared, const DoseImage& reference) {
    if (compared.height != reference.height || compared.width != reference.width)
        throw ShapeError("add_rdd: image size mismatch");
    const double mx = reference.max_value();
    if (mx <= 0.0) throw ArgumentError("add_rdd: reference has no positive dose");
    auto [in, out] = roi_masks(reference);

    double sum_in = 0.0, sum_out = 0.0;
    long n_in = 0, n_out = 0;
    for (std::size_t i = 0; i < reference.values.size(); ++i) {
        const double d = std::abs(compared.values[i] - reference.values[i]);
        if (in.mask[i]) {
            sum_in += d;
            ++n_in;
        } else {
            sum_out += d;
            ++n_out;
        }
    }
    AddRdd r;
    if (n_in > 0) {
        r.add_infield_cgy = sum_in / n_in;
        r.rdd_infield_pct = (sum_in / n_in) / mx * 100.0;
    }
    if (n_out > 0) {
        r.add_outfield_cgy = sum_out / n_out;
        r.rdd_outfield_pct = (sum_out / n_out) / mx * 100.0;
    }
    return r;
}

/// Cross-line (row) and in-line (column) dose profiles through the first
/// row-major maximum pixel.
struct DoseProfiles {
    std::vector<double> crossline;  // the full row through the peak
    std::vector<double> inline_;    // the full column through the peak
    int peak_row = 0, peak_col = 0;
};

inline DoseProfiles dose_profiles(const DoseImage& img) {
    if (img.values.empty()) throw ArgumentError("dose_profiles: empty image");
    std::size_t peak = 0;
    for (std::size_t i = 1; i < img.values.size(); ++i)
        if (img.values[i] > img.values[peak]) peak = i;
    DoseProfiles p;
    p.peak_row = static_cast<int>(peak) / img.width;
    p.peak_col = static_cast<int>(peak) % img.width;
    p.crossline.resize(img.width);
    for (int c = 0; c < img.width; ++c) p.crossline[c] = img.at(p.peak_row, c);
    p.inline_.resize(img.height);
    for (int r = 0; r < img.height; ++r) p.inline_[r] = img.at(r, p.peak_col);
    return p;
}

}  // namespace doseml
