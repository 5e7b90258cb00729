#pragma once

#include <cmath>
#include <vector>

#include "doseml/core/rng.hpp"
#include "doseml/data/dose_image.hpp"

namespace doseml {

/// Parameters of the synthetic predicted/measured pair generator. The
/// predicted image is a rectangular radiation field with sigmoid penumbra;
/// the measured image is the predicted one degraded by Gaussian blur, a slow
/// multiplicative gain drift, and additive Gaussian noise.
struct FieldSpec {
    double peak_min_cgy = 300.0;
    double peak_max_cgy = 600.0;
    double penumbra_px = 1.5;     // sigmoid edge falloff width
    double blur_sigma_px = 2.0;   // measurement blur
    double noise_sigma_cgy = 2.0; // additive measurement noise
    double gain_amplitude = 0.02; // slow spatial gain drift
    int archetypes = 3;           // distinct field shape classes
};

namespace detail {

inline double edge_sigmoid(double t) { return 1.0 / (1.0 + std::exp(-t)); }

inline DoseImage gaussian_blur(const DoseImage& img, double sigma) {
    if (sigma <= 0.0) return img;
    const int radius = static_cast<int>(std::ceil(3.0 * sigma));
    std::vector<double> kernel(2 * radius + 1);
    double norm = 0.0;
    for (int i = -radius; i <= radius; ++i) {
        kernel[i + radius] = std::exp(-0.5 * i * i / (sigma * sigma));
        norm += kernel[i + radius];
    }
    for (double& k : kernel) k /= norm;
    auto clamp_idx = [](int i, int n) { return i < 0 ? 0 : (i >= n ? n - 1 : i); };
    DoseImage tmp(img.height, img.width, img.patient_id);
    for (int r = 0; r < img.height; ++r)
        for (int c = 0; c < img.width; ++c) {
            double s = 0.0;
            for (int i = -radius; i <= radius; ++i)
                s += kernel[i + radius] * img.at(r, clamp_idx(c + i, img.width));
            tmp.at(r, c) = s;
        }
    DoseImage out(img.height, img.width, img.patient_id);
    for (int r = 0; r < img.height; ++r)
        for (int c = 0; c < img.width; ++c) {
            double s = 0.0;
            for (int i = -radius; i <= radius; ++i)
                s += kernel[i + radius] * tmp.at(clamp_idx(r + i, img.height), c);
            out.at(r, c) = s;
        }
    return out;
}

}  // namespace detail

/// Deterministic synthetic pair. `archetype` < 0 picks one from the seed.
inline PairRecord generate_pair(std::uint64_t seed, int height, int width, const FieldSpec& spec,
                                const std::string& patient_id = {}, int archetype = -1) {
    if (height < 32 || width < 32) throw ArgumentError("generate_pair: size must be at least 32x32");
    if (spec.peak_max_cgy < spec.peak_min_cgy || spec.peak_min_cgy <= 0.0)
        throw ArgumentError("generate_pair: invalid peak dose range");
    Rng rng(seed);

    if (archetype < 0) archetype = static_cast<int>(rng.uniform_int(0, std::max(1, spec.archetypes) - 1));
    // Field half-extent fractions per archetype: broad, compact, elongated.
    double fr, fc;
    switch (archetype % 3) {
        case 0: fr = rng.uniform(0.28, 0.38); fc = rng.uniform(0.28, 0.38); break;
        case 1: fr = rng.uniform(0.12, 0.18); fc = rng.uniform(0.12, 0.18); break;
        default: fr = rng.uniform(0.10, 0.15); fc = rng.uniform(0.30, 0.40); break;
    }
    const double half_h = fr * height, half_w = fc * width;
    if (half_h < 1.0 || half_w < 1.0) throw ArgumentError("generate_pair: zero-area field");
    const double cr = height / 2.0 + rng.uniform(-0.06, 0.06) * height;
    const double cc = width / 2.0 + rng.uniform(-0.06, 0.06) * width;
    const double peak = rng.uniform(spec.peak_min_cgy, spec.peak_max_cgy);
    const double pen = std::max(spec.penumbra_px, 0.25);

    DoseImage predicted(height, width, patient_id);
    for (int r = 0; r < height; ++r)
        for (int c = 0; c < width; ++c) {
            const double e = detail::edge_sigmoid((r - (cr - half_h)) / pen) *
                             detail::edge_sigmoid(((cr + half_h) - r) / pen) *
                             detail::edge_sigmoid((c - (cc - half_w)) / pen) *
                             detail::edge_sigmoid(((cc + half_w) - c) / pen);
            predicted.at(r, c) = peak * e;
        }

    DoseImage measured = detail::gaussian_blur(predicted, spec.blur_sigma_px);
    measured.patient_id = patient_id;
    if (spec.gain_amplitude != 0.0) {
        const double ph_r = rng.uniform(0.0, 2.0 * M_PI), ph_c = rng.uniform(0.0, 2.0 * M_PI);
        for (int r = 0; r < height; ++r)
            for (int c = 0; c < width; ++c)
                measured.at(r, c) *= 1.0 + spec.gain_amplitude *
                                              std::sin(M_PI * r / height + ph_r) *
                                              std::sin(M_PI * c / width + ph_c);
    }
    if (spec.noise_sigma_cgy > 0.0)
        for (double& v : measured.values) v = std::max(0.0, v + rng.normal(0.0, spec.noise_sigma_cgy));

    return {std::move(predicted), std::move(measured), patient_id};
}

}  // namespace doseml
