#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "dfip/error.hpp"
#include "dfip/metrics.hpp"
#include "dfip/rng.hpp"

using namespace dfip;

namespace {

Volume uniform_volume(Dims d, Rng& rng) {
    Volume v(d);
    for (auto& x : v.voxels()) x = static_cast<float>(rng.uniform());
    return v;
}

Volume random_mask(Dims d, Rng& rng, double p) {
    Volume m(d);
    for (auto& x : m.voxels()) x = rng.uniform() < p ? 1.0f : 0.0f;
    m[static_cast<std::size_t>(rng.uniform_int(0, d.count() - 1))] = 1.0f;
    return m;
}

double loop_mse(const Volume& a, const Volume& b, const Volume& m) {
    double s = 0.0;
    int n = 0;
    for (std::size_t i = 0; i < a.size(); ++i)
        if (m[i] != 0.0f) {
            s += (double(a[i]) - b[i]) * (double(a[i]) - b[i]);
            ++n;
        }
    return s / n;
}

// SSIM evaluated voxel by voxel from the definition: Gaussian-weighted local
// statistics over the in-slice window clipped to the slice.
double direct_ssim(const Volume& a, const Volume& b, const Volume& m, int window = 11, double sigma = 1.5,
                   double range = 1.0) {
    const double c1 = (0.01 * range) * (0.01 * range), c2 = (0.03 * range) * (0.03 * range);
    const int r = window / 2;
    const Dims d = a.dims();
    double total = 0.0;
    int count = 0;
    for (std::int64_t z = 0; z < d.depth; ++z)
        for (std::int64_t y = 0; y < d.height; ++y)
            for (std::int64_t x = 0; x < d.width; ++x) {
                if (m.at(z, y, x) == 0.0f) continue;
                double w_sum = 0, ma = 0, mb = 0, aa = 0, bb = 0, ab = 0;
                for (int dy = -r; dy <= r; ++dy)
                    for (int dx = -r; dx <= r; ++dx) {
                        const auto yy = y + dy, xx = x + dx;
                        if (yy < 0 || xx < 0 || yy >= d.height || xx >= d.width) continue;
                        const double w = std::exp(-(dy * dy + dx * dx) / (2 * sigma * sigma));
                        const double va = a.at(z, yy, xx), vb = b.at(z, yy, xx);
                        w_sum += w;
                        ma += w * va;
                        mb += w * vb;
                        aa += w * va * va;
                        bb += w * vb * vb;
                        ab += w * va * vb;
                    }
                ma /= w_sum;
                mb /= w_sum;
                const double va = aa / w_sum - ma * ma, vb = bb / w_sum - mb * mb, cov = ab / w_sum - ma * mb;
                total += (2 * ma * mb + c1) * (2 * cov + c2) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
                ++count;
            }
    return total / count;
}

} // namespace

TEST(Mse, IdentityAndOffset) {
    Rng rng(1);
    const Dims d{3, 8, 8};
    const Volume gt = uniform_volume(d, rng), m = random_mask(d, rng, 0.2);
    EXPECT_EQ(masked_mse(gt, gt, m), 0.0);
    Volume pred = gt;
    for (std::size_t i = 0; i < pred.size(); ++i) pred[i] += m[i] != 0.0f ? 0.1f : 5.0f;
    EXPECT_NEAR(masked_mse(pred, gt, m), 0.01, 1e-6);
}

TEST(Mse, SymmetricAndMatchesLoop) {
    Rng rng(2);
    for (int k = 0; k < 10; ++k) {
        const Dims d{2, 5, 7};
        const Volume a = uniform_volume(d, rng), b = uniform_volume(d, rng), m = random_mask(d, rng, 0.3);
        EXPECT_EQ(masked_mse(a, b, m), masked_mse(b, a, m));
        EXPECT_NEAR(masked_mse(a, b, m), loop_mse(a, b, m), 1e-12);
    }
}

TEST(Mse, Errors) {
    const Volume a({2, 3, 3}), m({2, 3, 3});
    EXPECT_THROW(masked_mse(a, a, m), DomainError);
    EXPECT_THROW(masked_mse(a, Volume({2, 3, 4}), m), ShapeError);
    EXPECT_THROW(masked_ssim(a, a, m), DomainError);
}

TEST(Psnr, KnownValues) {
    Rng rng(3);
    const Dims d{2, 6, 6};
    const Volume gt = uniform_volume(d, rng), m = random_mask(d, rng, 0.5);
    Volume pred = gt;
    for (std::size_t i = 0; i < pred.size(); ++i) pred[i] += 0.1f;
    EXPECT_NEAR(masked_psnr(pred, gt, m), 20.0, 1e-4);
    EXPECT_EQ(masked_psnr(gt, gt, m), kPsnrCap);
    EXPECT_NEAR(masked_psnr(pred, gt, m, 2.0), 20.0 + 20.0 * std::log10(2.0), 1e-4);
    EXPECT_THROW(masked_psnr(pred, gt, m, 0.0), DomainError);
}

TEST(Psnr, DecreasesWithError) {
    Rng rng(4);
    const Dims d{1, 8, 8};
    const Volume gt = uniform_volume(d, rng), m = random_mask(d, rng, 0.5);
    double last = kPsnrCap + 1;
    for (float e : {0.001f, 0.01f, 0.05f, 0.2f}) {
        Volume pred = gt;
        for (auto& x : pred.voxels()) x += e;
        const double p = masked_psnr(pred, gt, m);
        EXPECT_LT(p, last);
        EXPECT_NEAR(p, 10.0 * std::log10(1.0 / loop_mse(pred, gt, m)), 1e-4);
        last = p;
    }
}

TEST(Ssim, IdentityIsExactlyOne) {
    Rng rng(5);
    for (int k = 0; k < 5; ++k) {
        const Dims d{2, 9, 13};
        const Volume v = uniform_volume(d, rng), m = random_mask(d, rng, 0.1);
        EXPECT_EQ(masked_ssim(v, v, m), 1.0);
    }
    const Volume flat({1, 4, 4}, 0.3f), m({1, 4, 4}, 1.0f);
    EXPECT_EQ(masked_ssim(flat, flat, m), 1.0);
}

TEST(Ssim, AnticorrelatedIsLow) {
    Volume gt({2, 16, 16});
    for (std::int64_t z = 0; z < 2; ++z)
        for (std::int64_t y = 0; y < 16; ++y)
            for (std::int64_t x = 0; x < 16; ++x)
                gt.at(z, y, x) = static_cast<float>(0.5 + 0.4 * std::sin(0.9 * x) * std::cos(0.7 * y + z));
    Volume inv = gt;
    for (auto& x : inv.voxels()) x = 1.0f - x;
    const Volume m({2, 16, 16}, 1.0f);
    const double s = masked_ssim(inv, gt, m);
    EXPECT_LT(s, 0.5);
    EXPECT_NEAR(s, direct_ssim(inv, gt, m), 1e-4);
}

TEST(Ssim, MatchesDirectOracle) {
    Rng rng(6);
    for (int k = 0; k < 50; ++k) {
        const Dims d{2, 6 + k % 7, 8 + k % 5};
        const Volume gt = uniform_volume(d, rng), m = random_mask(d, rng, 0.15);
        Volume pred = gt;
        const double noise = 0.05 + 0.3 * rng.uniform();
        for (auto& x : pred.voxels()) x += static_cast<float>(noise * rng.normal());
        ASSERT_NEAR(masked_ssim(pred, gt, m), direct_ssim(pred, gt, m), 1e-4) << "case " << k;
        ASSERT_NEAR(masked_mse(pred, gt, m), loop_mse(pred, gt, m), 1e-4);
        ASSERT_NEAR(masked_psnr(pred, gt, m), 10.0 * std::log10(1.0 / loop_mse(pred, gt, m)), 1e-4);
    }
}

TEST(Ssim, WindowAndRangeOptions) {
    Rng rng(7);
    const Dims d{1, 12, 12};
    const Volume gt = uniform_volume(d, rng), m = random_mask(d, rng, 0.3);
    Volume pred = gt;
    for (auto& x : pred.voxels()) x += static_cast<float>(0.1 * rng.normal());
    SsimOptions o;
    o.window = 7;
    o.sigma = 1.0;
    o.data_range = 2.0;
    EXPECT_NEAR(masked_ssim(pred, gt, m, o), direct_ssim(pred, gt, m, 7, 1.0, 2.0), 1e-4);
    o.window = 4;
    EXPECT_THROW(masked_ssim(pred, gt, m, o), ConfigError);
}

TEST(Ssim, BoundingBoxVariant) {
    Rng rng(8);
    const Dims d{3, 10, 10};
    const Volume gt = uniform_volume(d, rng);
    Volume pred = gt;
    for (auto& x : pred.voxels()) x += static_cast<float>(0.1 * rng.normal());
    Volume m(d);
    m.at(1, 3, 4) = m.at(1, 6, 7) = 1.0f;
    SsimOptions o;
    o.bounding_box = true;
    // the box is slice 1, rows 3..6, columns 4..7, with windows clipped to it
    Volume bp({1, 4, 4}), bg({1, 4, 4});
    for (int y = 0; y < 4; ++y)
        for (int x = 0; x < 4; ++x) {
            bp.at(0, y, x) = pred.at(1, 3 + y, 4 + x);
            bg.at(0, y, x) = gt.at(1, 3 + y, 4 + x);
        }
    EXPECT_NEAR(masked_ssim(pred, gt, m, o), direct_ssim(bp, bg, Volume({1, 4, 4}, 1.0f)), 1e-4);
}

TEST(Metrics, IgnoreValuesOutsideMask) {
    Rng rng(9);
    const Dims d{2, 8, 8};
    const Volume gt = uniform_volume(d, rng);
    Volume m(d);
    m.at(0, 4, 4) = 1.0f;
    Volume a = gt, b = gt;
    a.at(0, 4, 4) += 0.2f;
    b.at(0, 4, 4) += 0.2f;
    b.at(1, 0, 0) += 3.0f;
    b.at(0, 0, 0) -= 1.0f;
    EXPECT_EQ(masked_mse(a, gt, m), masked_mse(b, gt, m));
    EXPECT_EQ(masked_psnr(a, gt, m), masked_psnr(b, gt, m));
    // SSIM windows are in-slice, so the other slice is outside its support
    Volume c = a;
    c.at(1, 0, 0) += 3.0f;
    EXPECT_EQ(masked_ssim(a, gt, m), masked_ssim(c, gt, m));
}

TEST(Report, TableFormatting) {
    EXPECT_EQ(format_mean_std({0.8271, 0.1308}), "0.8271 [±0.1308]");
    EXPECT_EQ(format_mean_std({20.4949, 2.0}), "20.4949 [±2.0000]");
    EXPECT_EQ(format_mean_std({0.0115, 0.00004}), "0.0115 [±0.0000]");
}

TEST(Report, SingleCase) {
    const auto r = make_report({{"a", 0.9, 30.0, 0.001}});
    EXPECT_EQ(r.ssim.mean, 0.9);
    EXPECT_EQ(r.ssim.std, 0.0);
    EXPECT_EQ(r.psnr.mean, 30.0);
    EXPECT_EQ(r.mse.mean, 0.001);
    EXPECT_THROW(make_report({}), DomainError);
}

TEST(Report, TwoCases) {
    const auto r = make_report({{"a", 0.8, 20.0, 0.01}, {"b", 0.6, 24.0, 0.03}});
    EXPECT_NEAR(r.ssim.mean, 0.7, 1e-12);
    EXPECT_NEAR(r.ssim.std, 0.1, 1e-12);
    EXPECT_NEAR(r.psnr.mean, 22.0, 1e-12);
    EXPECT_NEAR(r.psnr.std, 2.0, 1e-12);
    EXPECT_NEAR(r.mse.mean, 0.02, 1e-12);
    EXPECT_NEAR(r.mse.std, 0.01, 1e-12);

    const std::string csv = r.to_csv();
    std::istringstream in(csv);
    std::vector<std::string> lines;
    for (std::string l; std::getline(in, l);) lines.push_back(l);
    ASSERT_EQ(lines.size(), 5u);
    EXPECT_EQ(lines[0], "case_id,ssim,psnr,mse");
    EXPECT_EQ(lines[1], "a,0.800000,20.000000,0.010000");
    EXPECT_EQ(lines[2], "b,0.600000,24.000000,0.030000");
    EXPECT_EQ(lines[3].substr(0, 5), "mean,");
    EXPECT_EQ(lines[4].substr(0, 4), "std,");

    const std::string table = r.to_table();
    EXPECT_NE(table.find("0.7000 [±0.1000]"), std::string::npos) << table;
    EXPECT_NE(table.find("22.0000 [±2.0000]"), std::string::npos) << table;
    EXPECT_NE(table.find("0.0200 [±0.0100]"), std::string::npos) << table;
}

TEST(Report, EvaluateCase) {
    Rng rng(10);
    const Dims d{2, 8, 8};
    const Volume gt = uniform_volume(d, rng), m = random_mask(d, rng, 0.3);
    const auto c = evaluate_case("x", gt, gt, m);
    EXPECT_EQ(c.case_id, "x");
    EXPECT_EQ(c.ssim, 1.0);
    EXPECT_EQ(c.psnr, kPsnrCap);
    EXPECT_EQ(c.mse, 0.0);
}
