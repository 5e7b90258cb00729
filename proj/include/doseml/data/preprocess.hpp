#pragma once

#include <algorithm>
#include <cmath>

#include "doseml/core/rng.hpp"
#include "doseml/data/dose_image.hpp"

namespace doseml {

struct CleanResult {
    DoseImage image;
    bool excluded = false;      // implausible dose found; caller drops the pair
    double worst_value = 0.0;   // the offending value when excluded
};

/// Replace NaN with 0 and flag images with implausible doses for exclusion.
inline CleanResult clean(const DoseImage& img, double plausibility_ceiling = 10000.0) {
    CleanResult r;
    r.image = img;
    for (double& v : r.image.values) {
        if (std::isnan(v)) v = 0.0;
        if (v > plausibility_ceiling) {
            r.excluded = true;
            r.worst_value = std::max(r.worst_value, v);
        }
    }
    return r;
}

struct BoundingBox {
    int row0 = 0, col0 = 0, row1 = 0, col1 = 0;  // inclusive

    int height() const { return row1 - row0 + 1; }
    int width() const { return col1 - col0 + 1; }

    static BoundingBox union_of(const BoundingBox& a, const BoundingBox& b) {
        return {std::min(a.row0, b.row0), std::min(a.col0, b.col0), std::max(a.row1, b.row1),
                std::max(a.col1, b.col1)};
    }
};

/// Minimal axis-aligned box containing all pixels >= threshold_fraction * max.
inline BoundingBox field_bounding_box(const DoseImage& img, double threshold_fraction = 0.05) {
    const double mx = img.max_value();
    if (mx <= 0.0) throw DataError("empty field: image has no positive dose");
    const double thr = threshold_fraction * mx;
    int r0 = img.height, r1 = -1, c0 = img.width, c1 = -1;
    for (int r = 0; r < img.height; ++r)
        for (int c = 0; c < img.width; ++c)
            if (img.at(r, c) >= thr) {
                r0 = std::min(r0, r);
                r1 = std::max(r1, r);
                c0 = std::min(c0, c);
                c1 = std::max(c1, c);
            }
    return {r0, c0, r1, c1};
}

inline DoseImage crop(const DoseImage& img, const BoundingBox& box) {
    DoseImage out(box.height(), box.width(), img.patient_id);
    for (int r = 0; r < out.height; ++r)
        for (int c = 0; c < out.width; ++c) out.at(r, c) = img.at(box.row0 + r, box.col0 + c);
    return out;
}

struct CropResult {
    DoseImage image;
    BoundingBox box;
};

inline CropResult crop_to_field(const DoseImage& img, double threshold_fraction = 0.05) {
    const BoundingBox box = field_bounding_box(img, threshold_fraction);
    return {crop(img, box), box};
}

/// Crop both images of a pair to the union of their field boxes so they keep
/// equal dimensions.
inline PairRecord crop_pair_to_field(const PairRecord& pair, double threshold_fraction = 0.05) {
    const BoundingBox box = BoundingBox::union_of(field_bounding_box(pair.predicted, threshold_fraction),
                                                  field_bounding_box(pair.measured, threshold_fraction));
    return {crop(pair.predicted, box), crop(pair.measured, box), pair.patient_id};
}

/// Bilinear resize with corner-aligned sampling. Exact on affine ramps,
/// identity when the target equals the source size.
inline DoseImage resize(const DoseImage& img, int target_h, int target_w) {
    DoseImage out(target_h, target_w, img.patient_id);
    const double sr = target_h > 1 ? static_cast<double>(img.height - 1) / (target_h - 1) : 0.0;
    const double sc = target_w > 1 ? static_cast<double>(img.width - 1) / (target_w - 1) : 0.0;
    for (int r = 0; r < target_h; ++r) {
        const double fr = r * sr;
        const int r0 = std::min(static_cast<int>(fr), img.height - 1);
        const int r1 = std::min(r0 + 1, img.height - 1);
        const double wr = fr - r0;
        for (int c = 0; c < target_w; ++c) {
            const double fc = c * sc;
            const int c0 = std::min(static_cast<int>(fc), img.width - 1);
            const int c1 = std::min(c0 + 1, img.width - 1);
            const double wc = fc - c0;
            out.at(r, c) = (1 - wr) * ((1 - wc) * img.at(r0, c0) + wc * img.at(r0, c1)) +
                           wr * ((1 - wc) * img.at(r1, c0) + wc * img.at(r1, c1));
        }
    }
    return out;
}

struct Augmentation {
    bool hflip = false;
    bool vflip = false;
    int quarter_turns = 0;  // multiples of 90 degrees, counter-clockwise
};

/// Sample the training-time transform: each flip with probability 0.5, one of
/// the four right-angle rotations uniformly.
inline Augmentation sample_augmentation(std::uint64_t seed) {
    Rng rng(seed);
    Augmentation a;
    a.hflip = rng.bernoulli(0.5);
    a.vflip = rng.bernoulli(0.5);
    a.quarter_turns = static_cast<int>(rng.uniform_int(0, 3));
    return a;
}

inline DoseImage apply_augmentation(const DoseImage& img, const Augmentation& a) {
    if ((a.quarter_turns % 2) != 0 && img.height != img.width)
        throw ShapeError("90/270-degree rotation requires square images");
    DoseImage out = img;
    if (a.hflip)
        for (int r = 0; r < out.height; ++r)
            for (int c = 0; c < out.width / 2; ++c) std::swap(out.at(r, c), out.at(r, out.width - 1 - c));
    if (a.vflip)
        for (int r = 0; r < out.height / 2; ++r)
            for (int c = 0; c < out.width; ++c) std::swap(out.at(r, c), out.at(out.height - 1 - r, c));
    for (int t = 0; t < (a.quarter_turns % 4); ++t) {
        DoseImage rot(out.width, out.height, out.patient_id);
        for (int r = 0; r < out.height; ++r)
            for (int c = 0; c < out.width; ++c) rot.at(out.width - 1 - c, r) = out.at(r, c);
        out = std::move(rot);
    }
    return out;
}

/// The same sampled transform applied to both images of a pair.
inline PairRecord augment(const PairRecord& pair, std::uint64_t seed) {
    const Augmentation a = sample_augmentation(seed);
    return {apply_augmentation(pair.predicted, a), apply_augmentation(pair.measured, a),
            pair.patient_id};
}

/// Map [0, global_max_dose] cGy onto [-1, 1].
inline DoseImage normalize(const DoseImage& img, double global_max_dose) {
    if (global_max_dose <= 0.0) throw ArgumentError("normalize: global_max_dose must be > 0");
    DoseImage out = img;
    for (double& v : out.values) {
        if (v > global_max_dose)
            throw ArgumentError("normalize: pixel dose " + std::to_string(v) +
                                " exceeds global_max_dose " + std::to_string(global_max_dose));
        v = 2.0 * v / global_max_dose - 1.0;
    }
    return out;
}

inline DoseImage denormalize(const DoseImage& img, double global_max_dose) {
    if (global_max_dose <= 0.0) throw ArgumentError("denormalize: global_max_dose must be > 0");
    DoseImage out = img;
    for (double& v : out.values) v = (v + 1.0) * 0.5 * global_max_dose;
    return out;
}

}  // namespace doseml
