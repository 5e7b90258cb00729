#include <catch2/catch_amalgamated.hpp>

#include "doseml/core/rng.hpp"
#include "doseml/metrics/dose_metrics.hpp"
#include "doseml/metrics/ffd.hpp"
#include "doseml/metrics/image_metrics.hpp"
#include "doseml/metrics/ranking.hpp"
#include "doseml/metrics/records.hpp"

using namespace doseml;
using Catch::Approx;

namespace {

DoseImage image_of(int h, int w, std::vector<double> values) {
    DoseImage img(h, w, "p");
    img.values = std::move(values);
    return img;
}

DoseImage random_field(std::uint64_t seed, int size = 24, double peak = 400.0) {
    Rng rng(seed);
    DoseImage img(size, size, "p");
    const double c = (size - 1) / 2.0;
    for (int r = 0; r < size; ++r)
        for (int col = 0; col < size; ++col) {
            const double d2 = (r - c) * (r - c) + (col - c) * (col - c);
            img.at(r, col) = peak * std::exp(-d2 / (2.0 * size)) + rng.uniform(0.0, 1.0);
        }
    return img;
}

DoseImage add_noise(const DoseImage& img, std::uint64_t seed, double sigma) {
    Rng rng(seed);
    DoseImage out = img;
    for (double& v : out.values) v = std::max(0.0, v + rng.normal(0.0, sigma));
    return out;
}

}  // namespace

TEST_CASE("mae hand evaluation and loop oracle") {
    CHECK(mae(image_of(1, 3, {1, 2, 3}), image_of(1, 3, {1, 2, 3})) == 0.0);
    CHECK(mae(image_of(2, 2, {1, 2, 3, 4}), image_of(2, 2, {2, 4, 3, 0})) == Approx(1.75));

    Rng rng(1);
    DoseImage a(6, 6, "p"), b(6, 6, "p");
    for (double& v : a.values) v = rng.uniform(0.0, 400.0);
    for (double& v : b.values) v = rng.uniform(0.0, 400.0);
    double s = 0.0;
    for (std::size_t i = 0; i < a.values.size(); ++i) s += std::abs(a.values[i] - b.values[i]);
    CHECK(mae(a, b) == Approx(s / a.values.size()).epsilon(1e-10));
    CHECK_THROWS_AS(mae(a, image_of(1, 2, {0, 0})), ShapeError);
}

TEST_CASE("psnr is 40 dB for unit MSE against a max-100 reference") {
    DoseImage ref(10, 10, "p");
    for (int r = 0; r < 10; ++r)
        for (int c = 0; c < 10; ++c) ref.at(r, c) = r == 0 && c == 0 ? 100.0 : 50.0;
    DoseImage cmp = ref;
    for (double& v : cmp.values) v += 1.0;  // MSE exactly 1
    CHECK(psnr(cmp, ref) == Approx(40.0).epsilon(1e-10));
}

TEST_CASE("psnr of identical images is +infinity") {
    const DoseImage img = random_field(2);
    CHECK(psnr(img, img) == std::numeric_limits<double>::infinity());
}

TEST_CASE("psnr is invariant to a common gain factor") {
    const DoseImage a = random_field(3), b = add_noise(a, 4, 3.0);
    DoseImage a2 = a, b2 = b;
    for (double& v : a2.values) v *= 2.0;
    for (double& v : b2.values) v *= 2.0;
    CHECK(psnr(b2, a2) == Approx(psnr(b, a)).epsilon(1e-10));
}

TEST_CASE("ssim is 1 for identical images, symmetric, and low under heavy noise") {
    const DoseImage img = random_field(5);
    CHECK(ssim(img, img) == Approx(1.0).margin(1e-12));

    const DoseImage noisy = add_noise(img, 6, 150.0);
    CHECK(ssim(img, noisy) == Approx(ssim(noisy, img)).margin(1e-12));
    CHECK(ssim(img, noisy) < 0.5);

    const DoseImage mild = add_noise(img, 7, 5.0);
    CHECK(ssim(img, mild) > ssim(img, noisy));
}

TEST_CASE("roi masks partition the image at half the reference maximum") {
    const DoseImage ref = image_of(2, 2, {200.0, 100.0, 99.9, 0.0});
    const auto [in, out] = roi_masks(ref);
    CHECK(in.mask == std::vector<bool>{true, true, false, false});
    for (std::size_t i = 0; i < 4; ++i) CHECK(in.mask[i] != out.mask[i]);
    CHECK_THROWS_AS(roi_masks(image_of(1, 1, {0.0})), ArgumentError);
}

TEST_CASE("add_rdd hand evaluation: 2 cGy offset on a 200 cGy field is 1 percent") {
    const DoseImage ref = image_of(2, 2, {200.0, 200.0, 200.0, 200.0});
    DoseImage cmp = ref;
    for (double& v : cmp.values) v += 2.0;
    const AddRdd r = add_rdd(cmp, ref);
    REQUIRE(r.add_infield_cgy.has_value());
    CHECK(*r.add_infield_cgy == Approx(2.0));
    CHECK(*r.rdd_infield_pct == Approx(1.0));
    CHECK_FALSE(r.add_outfield_cgy.has_value());  // empty out-of-field ROI
    CHECK_FALSE(r.rdd_outfield_pct.has_value());
}

TEST_CASE("add_rdd matches a loop oracle on random images") {
    const DoseImage ref = random_field(8);
    const DoseImage cmp = add_noise(ref, 9, 10.0);
    const AddRdd r = add_rdd(cmp, ref);
    const double mx = ref.max_value();
    double sum_in = 0.0, sum_out = 0.0;
    long n_in = 0, n_out = 0;
    for (std::size_t i = 0; i < ref.values.size(); ++i) {
        const double d = std::abs(cmp.values[i] - ref.values[i]);
        if (ref.values[i] >= 0.5 * mx) {
            sum_in += d;
            ++n_in;
        } else {
            sum_out += d;
            ++n_out;
        }
    }
    REQUIRE((n_in > 0 && n_out > 0));
    CHECK(*r.add_infield_cgy == Approx(sum_in / n_in).epsilon(1e-10));
    CHECK(*r.add_outfield_cgy == Approx(sum_out / n_out).epsilon(1e-10));
    CHECK(*r.rdd_infield_pct == Approx(sum_in / n_in / mx * 100.0).epsilon(1e-10));
    CHECK(*r.rdd_outfield_pct == Approx(sum_out / n_out / mx * 100.0).epsilon(1e-10));
}

TEST_CASE("dose profiles pass through the peak pixel") {
    const DoseImage img = image_of(2, 3, {1, 2, 3, 4, 9, 6});
    const DoseProfiles p = dose_profiles(img);
    CHECK(p.peak_row == 1);
    CHECK(p.peak_col == 1);
    CHECK(p.crossline == std::vector<double>{4, 9, 6});
    CHECK(p.inline_ == std::vector<double>{2, 9});
    // The two profiles intersect at the maximum.
    CHECK(p.crossline[p.peak_col] == img.max_value());
    CHECK(p.inline_[p.peak_row] == img.max_value());
}

TEST_CASE("frechet distance of a set against itself is numerically zero") {
    Rng rng(10);
    Eigen::MatrixXd f(80, 6);
    for (long i = 0; i < f.rows(); ++i)
        for (long j = 0; j < f.cols(); ++j) f(i, j) = rng.normal(0.0, 1.0);
    CHECK(frechet_distance(f, f) < 1e-6);
}

TEST_CASE("frechet distance recovers a pure mean offset between Gaussians") {
    // Same unit covariance, means differing by delta in every coordinate:
    // the closed form is |delta_vec|^2 = d * delta^2.
    Rng rng(11);
    const int n = 1000, d = 4;
    const double delta = 1.0;
    Eigen::MatrixXd fa(n, d), fb(n, d);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < d; ++j) {
            fa(i, j) = rng.normal(0.0, 1.0);
            fb(i, j) = rng.normal(delta, 1.0);
        }
    const double expected = d * delta * delta;
    CHECK(frechet_distance(fa, fb) == Approx(expected).epsilon(0.05));
}

TEST_CASE("feature-space distance grows with the noise level") {
    std::vector<DoseImage> clean, low, mid, high;
    for (int i = 0; i < 12; ++i) {
        const DoseImage base = random_field(100 + i);
        clean.push_back(base);
        low.push_back(add_noise(base, 200 + i, 5.0));
        mid.push_back(add_noise(base, 300 + i, 25.0));
        high.push_back(add_noise(base, 400 + i, 80.0));
    }
    const FeatureExtractor fx(7, 8, 688.0);
    const double d0 = frechet_feature_distance(clean, clean, fx);
    const double d1 = frechet_feature_distance(clean, low, fx);
    const double d2 = frechet_feature_distance(clean, mid, fx);
    const double d3 = frechet_feature_distance(clean, high, fx);
    CHECK(d0 < 1e-6);
    CHECK(d1 < d2);
    CHECK(d2 < d3);
}

TEST_CASE("feature-space distance requires enough images per set") {
    std::vector<DoseImage> few(5, random_field(12));
    CHECK_THROWS_AS(frechet_feature_distance(few, few, FeatureExtractor(7, 8)), DataError);
}

TEST_CASE("mean_std ignores non-finite entries") {
    const double inf = std::numeric_limits<double>::infinity();
    const MeanStd m = mean_std({1.0, 3.0, inf, std::nan("")});
    CHECK(m.used == 2);
    CHECK(m.mean == Approx(2.0));
    CHECK(m.stddev == Approx(std::sqrt(2.0)));
}

TEST_CASE("composite ranking puts a dominating sample first") {
    auto rec = [](const std::string& id, double mae_v, double psnr_v, double ssim_v) {
        MetricsRecord r;
        r.sample_id = id;
        r.comparison = Comparison::OutputVsTarget;
        r.mae_cgy = mae_v;
        r.psnr_db = psnr_v;
        r.ssim = ssim_v;
        r.rdd_infield_pct = mae_v / 4.0;
        r.rdd_outfield_pct = mae_v / 8.0;
        r.add_infield_cgy = mae_v;
        r.add_outfield_cgy = mae_v / 2.0;
        return r;
    };
    const CompositeRanking rk =
        composite_rank({rec("s1", 5.0, 30.0, 0.90), rec("s2", 2.0, 40.0, 0.99),
                        rec("s3", 8.0, 25.0, 0.85)});
    CHECK(rk.best_id == "s2");
    CHECK(rk.worst_id == "s3");
    CHECK(rk.ordered.front().composite_score == Approx(1.0));
    CHECK(rk.ordered.back().composite_score == Approx(0.0).margin(1e-12));
}

TEST_CASE("composite ranking matches an independently computed score") {
    // Metrics chosen so min-max normalization is easy to do by hand. Sample b
    // is best on MAE/PSNR/SSIM, a on the ROI metrics; constant columns score
    // one half for everyone.
    MetricsRecord a, b;
    a.sample_id = "a";
    b.sample_id = "b";
    a.comparison = b.comparison = Comparison::OutputVsTarget;
    a.mae_cgy = 4.0;
    b.mae_cgy = 2.0;
    a.psnr_db = 30.0;
    b.psnr_db = 36.0;
    a.ssim = 0.9;
    b.ssim = 0.95;
    a.rdd_infield_pct = 1.0;
    b.rdd_infield_pct = 3.0;
    a.add_infield_cgy = 2.0;
    b.add_infield_cgy = 6.0;
    a.rdd_outfield_pct = b.rdd_outfield_pct = 0.5;  // constant -> 0.5 each
    // add_outfield absent for both -> 0.5 each
    const CompositeRanking rk = composite_rank({a, b});
    // a: mae 0, psnr 0, ssim 0, rdd_in 1, add_in 1, rdd_out 0.5, add_out 0.5
    CHECK(rk.ordered.back().composite_score == Approx(3.0 / 7.0));
    // b: mae 1, psnr 1, ssim 1, rdd_in 0, add_in 0, rdd_out 0.5, add_out 0.5
    CHECK(rk.ordered.front().composite_score == Approx(4.0 / 7.0));
    CHECK(rk.best_id == "b");
}

TEST_CASE("composite ranking breaks ties lexicographically and rejects singletons") {
    MetricsRecord a, b;
    a.sample_id = "zeta";
    b.sample_id = "alpha";
    a.comparison = b.comparison = Comparison::OutputVsTarget;
    a.mae_cgy = b.mae_cgy = 3.0;
    a.psnr_db = b.psnr_db = 30.0;
    a.ssim = b.ssim = 0.9;
    const CompositeRanking rk = composite_rank({a, b});
    CHECK(rk.ordered.front().sample_id == "alpha");
    CHECK(rk.best_id == "alpha");
    CHECK(rk.worst_id == "zeta");
    CHECK_THROWS_AS(composite_rank({a}), DataError);
}

TEST_CASE("infinite psnr ranks as the best finite psnr") {
    MetricsRecord a, b, c;
    a.sample_id = "a";
    b.sample_id = "b";
    c.sample_id = "c";
    a.comparison = b.comparison = c.comparison = Comparison::OutputVsTarget;
    a.mae_cgy = b.mae_cgy = c.mae_cgy = 1.0;
    a.ssim = b.ssim = c.ssim = 0.9;
    a.psnr_db = std::numeric_limits<double>::infinity();
    b.psnr_db = 40.0;
    c.psnr_db = 20.0;
    const CompositeRanking rk = composite_rank({a, b, c});
    // a and b share the top PSNR score; the tie resolves lexicographically.
    CHECK(rk.ordered[0].sample_id == "a");
    CHECK(rk.ordered[1].sample_id == "b");
    CHECK(rk.ordered[0].composite_score == Approx(rk.ordered[1].composite_score));
    CHECK(rk.worst_id == "c");
}

TEST_CASE("compute_record agrees with the individual metric functions") {
    const DoseImage ref = random_field(20);
    const DoseImage cmp = add_noise(ref, 21, 8.0);
    const MetricsRecord r = compute_record("s", Comparison::OutputVsTarget, cmp, ref);
    CHECK(r.mae_cgy == Approx(mae(cmp, ref)));
    CHECK(r.psnr_db == Approx(psnr(cmp, ref)));
    CHECK(r.ssim == Approx(ssim(cmp, ref)));
    const AddRdd ar = add_rdd(cmp, ref);
    CHECK(*r.add_infield_cgy == Approx(*ar.add_infield_cgy));
    CHECK(*r.rdd_outfield_pct == Approx(*ar.rdd_outfield_pct));
}
