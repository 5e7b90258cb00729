#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "doseml/data/dose_image.hpp"

namespace doseml {

inline void check_same_size(const DoseImage& a, const DoseImage& b, const char* what) {
    if (a.height != b.height || a.width != b.width)
        throw ShapeError(std::string(what) + ": image size mismatch");
}

/// Mean absolute difference in cGy.
inline double mae(const DoseImage& a, const DoseImage& b) {
    check_same_size(a, b, "mae");
    double s = 0.0;
    for (std::size_t i = 0; i < a.values.size(); ++i) s += std::abs(a.values[i] - b.values[i]);
    return s / static_cast<double>(a.values.size());
}

inline double mse(const DoseImage& a, const DoseImage& b) {
    check_same_size(a, b, "mse");
    double s = 0.0;
    for (std::size_t i = 0; i < a.values.size(); ++i) {
        const double d = a.values[i] - b.values[i];
        s += d * d;
    }
    return s / static_cast<double>(a.values.size());
}

/// PSNR in dB with MAX_I taken from the reference image. Returns +inf when
/// the images are identical; callers exclude such sentinels from means.
inline double psnr(const DoseImage& compared, const DoseImage& reference) {
    check_same_size(compared, reference, "psnr");
    const double max_i = reference.max_value();
    if (max_i <= 0.0) throw ArgumentError("psnr: reference has no positive dose");
    const double e = mse(compared, reference);
    if (e == 0.0) return std::numeric_limits<double>::infinity();
    return 20.0 * std::log10(max_i / std::sqrt(e));
}

namespace detail {

inline std::vector<double> gaussian_window(int size, double sigma) {
    std::vector<double> w(static_cast<std::size_t>(size) * size);
    const int half = size / 2;
    double norm = 0.0;
    for (int i = 0; i < size; ++i)
        for (int j = 0; j < size; ++j) {
            const double d2 = (i - half) * (i - half) + (j - half) * (j - half);
            w[i * size + j] = std::exp(-0.5 * d2 / (sigma * sigma));
            norm += w[i * size + j];
        }
    for (double& x : w) x /= norm;
    return w;
}

}  // namespace detail

/// Structural similarity with local statistics under an 11x11 Gaussian
/// window (sigma 1.5), averaged over all valid window positions.
/// C1 = (0.01 L)^2, C2 = (0.03 L)^2 with L the larger of the two maxima.
inline double ssim(const DoseImage& a, const DoseImage& b, int window = 11, double sigma = 1.5) {
    check_same_size(a, b, "ssim");
    if (a.height < window || a.width < window)
        throw ArgumentError("ssim: image smaller than the window");
    const double L = std::max(a.max_value(), b.max_value());
    const double c1 = (0.01 * L) * (0.01 * L);
    const double c2 = (0.03 * L) * (0.03 * L);
    const std::vector<double> w = detail::gaussian_window(window, sigma);

    double total = 0.0;
    long count = 0;
    for (int r = 0; r + window <= a.height; ++r)
        for (int c = 0; c + window <= a.width; ++c) {
            double mx = 0.0, my = 0.0;
            for (int i = 0; i < window; ++i)
                for (int j = 0; j < window; ++j) {
                    const double wk = w[i * window + j];
                    mx += wk * a.at(r + i, c + j);
                    my += wk * b.at(r + i, c + j);
                }
            double vx = 0.0, vy = 0.0, cov = 0.0;
            for (int i = 0; i < window; ++i)
                for (int j = 0; j < window; ++j) {
                    const double wk = w[i * window + j];
                    const double dx = a.at(r + i, c + j) - mx;
                    const double dy = b.at(r + i, c + j) - my;
                    vx += wk * dx * dx;
                    vy += wk * dy * dy;
                    cov += wk * dx * dy;
                }
            total += ((2.0 * mx * my + c1) * (2.0 * cov + c2)) /
                     ((mx * mx + my * my + c1) * (vx + vy + c2));
            ++count;
        }
    return total / count;
}

}  // namespace doseml
