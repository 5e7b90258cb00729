#pragma once

#include <Eigen/Dense>
#include <vector>

#include "doseml/core/rng.hpp"
#include "doseml/data/dose_image.hpp"

namespace doseml {

/// Fréchet distance between Gaussian fits of two feature clouds (rows are
/// samples): ||mu_r - mu_g||^2 + Tr(S_r + S_g - 2 (S_r S_g)^{1/2}).
/// The matrix square root goes through the symmetric product
/// S_r^{1/2} S_g S_r^{1/2}; tiny negative eigenvalues are clamped to zero.
inline double frechet_distance(const Eigen::MatrixXd& feats_a, const Eigen::MatrixXd& feats_b) {
    if (feats_a.cols() != feats_b.cols())
        throw ShapeError("frechet_distance: feature dimensions differ");
    const long d = feats_a.cols();
    if (feats_a.rows() < 2 || feats_b.rows() < 2)
        throw DataError("frechet_distance: need at least 2 samples per set");

    auto moments = [](const Eigen::MatrixXd& f) {
        Eigen::VectorXd mu = f.colwise().mean();
        Eigen::MatrixXd centered = f.rowwise() - mu.transpose();
        Eigen::MatrixXd cov = centered.transpose() * centered / static_cast<double>(f.rows() - 1);
        return std::make_pair(mu, cov);
    };
    auto [mu_a, cov_a] = moments(feats_a);
    auto [mu_b, cov_b] = moments(feats_b);

    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es_a(cov_a);
    Eigen::VectorXd ev_a = es_a.eigenvalues().cwiseMax(0.0).cwiseSqrt();
    Eigen::MatrixXd sqrt_a = es_a.eigenvectors() * ev_a.asDiagonal() * es_a.eigenvectors().transpose();

    Eigen::MatrixXd prod = sqrt_a * cov_b * sqrt_a;
    prod = 0.5 * (prod + prod.transpose());  // symmetrize round-off
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es_p(prod);
    double trace_sqrt = 0.0;
    for (long i = 0; i < d; ++i) {
        double ev = es_p.eigenvalues()[i];
        if (ev < 0.0 && ev > -1e-8) ev = 0.0;
        if (ev < 0.0) ev = 0.0;  // larger negatives are still round-off on rank-deficient sets
        trace_sqrt += std::sqrt(ev);
    }
    const double mean_term = (mu_a - mu_b).squaredNorm();
    const double dist = mean_term + cov_a.trace() + cov_b.trace() - 2.0 * trace_sqrt;
    return dist < 0.0 ? 0.0 : dist;
}

/// Fixed, seeded convolutional feature extractor standing in for the
/// Inception-v3 features of full-scale FID. Three stride-2 3x3 conv layers
/// with tanh, then per-channel mean and standard-deviation pooling. Frozen
/// after construction; identical across all comparisons in one run.
class FeatureExtractor {
public:
    explicit FeatureExtractor(std::uint64_t seed = 7, int feature_dim = 64,
                              double dose_scale_cgy = 688.0)
        : feature_dim_(feature_dim), dose_scale_(dose_scale_cgy) {
        if (feature_dim < 2 || feature_dim % 2 != 0)
            throw ArgumentError("feature_dim must be even and >= 2");
        channels_ = {8, 16, feature_dim / 2};
        Rng rng(seed);
        int in_ch = 1;
        for (int out_ch : channels_) {
            std::vector<double> w(static_cast<std::size_t>(out_ch) * in_ch * 9);
            const double stddev = std::sqrt(1.0 / (in_ch * 9));
            for (double& x : w) x = rng.normal(0.0, stddev);
            weights_.push_back(std::move(w));
            in_ch = out_ch;
        }
    }

    int feature_dim() const { return feature_dim_; }

    /// Map one dose image (cGy) to a d-dimensional feature vector.
    Eigen::VectorXd extract(const DoseImage& img) const {
        int h = img.height, w = img.width;
        std::vector<double> cur(img.values.size());
        for (std::size_t i = 0; i < cur.size(); ++i)
            cur[i] = img.values[i] / dose_scale_ * 2.0 - 1.0;
        int in_ch = 1;
        for (std::size_t layer = 0; layer < channels_.size(); ++layer) {
            const int out_ch = channels_[layer];
            const int ho = (h - 1) / 2 + 1, wo = (w - 1) / 2 + 1;  // stride 2, pad 1
            std::vector<double> next(static_cast<std::size_t>(out_ch) * ho * wo, 0.0);
            const double* wt = weights_[layer].data();
            for (int f = 0; f < out_ch; ++f)
                for (int oh = 0; oh < ho; ++oh)
                    for (int ow = 0; ow < wo; ++ow) {
                        double s = 0.0;
                        for (int c = 0; c < in_ch; ++c)
                            for (int ki = 0; ki < 3; ++ki) {
                                const int ih = oh * 2 + ki - 1;
                                if (ih < 0 || ih >= h) continue;
                                for (int kj = 0; kj < 3; ++kj) {
                                    const int iw = ow * 2 + kj - 1;
                                    if (iw < 0 || iw >= w) continue;
                                    s += wt[((f * in_ch + c) * 3 + ki) * 3 + kj] *
                                         cur[(static_cast<std::size_t>(c) * h + ih) * w + iw];
                                }
                            }
                        next[(static_cast<std::size_t>(f) * ho + oh) * wo + ow] = std::tanh(s);
                    }
            cur = std::move(next);
            h = ho;
            w = wo;
            in_ch = out_ch;
        }
        // Per-channel mean and stddev pooling.
        Eigen::VectorXd feat(feature_dim_);
        const long hw = static_cast<long>(h) * w;
        for (int c = 0; c < in_ch; ++c) {
            const double* p = cur.data() + static_cast<std::size_t>(c) * hw;
            double mean = 0.0;
            for (long i = 0; i < hw; ++i) mean += p[i];
            mean /= hw;
            double var = 0.0;
            for (long i = 0; i < hw; ++i) var += (p[i] - mean) * (p[i] - mean);
            feat[2 * c] = mean;
            feat[2 * c + 1] = std::sqrt(var / hw);
        }
        return feat;
    }

    Eigen::MatrixXd extract_all(const std::vector<DoseImage>& images) const {
        Eigen::MatrixXd out(static_cast<long>(images.size()), feature_dim_);
        for (std::size_t i = 0; i < images.size(); ++i) out.row(static_cast<long>(i)) = extract(images[i]);
        return out;
    }

private:
    int feature_dim_;
    double dose_scale_;
    std::vector<int> channels_;
    std::vector<std::vector<double>> weights_;
};

/// Fréchet Feature Distance between two image sets under a shared extractor.
inline double frechet_feature_distance(const std::vector<DoseImage>& set_a,
                                       const std::vector<DoseImage>& set_b,
                                       const FeatureExtractor& extractor) {
    const std::size_t need = static_cast<std::size_t>(extractor.feature_dim()) + 1;
    if (set_a.size() < need || set_b.size() < need)
        throw DataError("frechet_feature_distance: each set needs at least feature_dim+1 images");
    return frechet_distance(extractor.extract_all(set_a), extractor.extract_all(set_b));
}

}  // namespace doseml
