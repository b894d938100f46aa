#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <numbers>

#include "dfip/error.hpp"
#include "dfip/phantom.hpp"
#include "dfip/rng.hpp"
#include "dfip/volume.hpp"
#include "dfip/volume_io.hpp"

using namespace dfip;
namespace fs = std::filesystem;

namespace {

Volume random_volume(Dims d, Rng& rng, double scale = 1.0) {
    Volume v(d);
    for (auto& x : v.voxels()) x = static_cast<float>(scale * rng.normal());
    return v;
}

// Sort-based percentile, rank = p/100 * (n-1).
double sorted_percentile(std::vector<double> v, double p) {
    std::sort(v.begin(), v.end());
    const double rank = p / 100.0 * static_cast<double>(v.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(rank));
    const auto hi = std::min(lo + 1, v.size() - 1);
    return v[lo] + (rank - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

std::vector<double> as_doubles(const Volume& v) { return {v.voxels().begin(), v.voxels().end()}; }

double max_diff(const Volume& a, const Volume& b) {
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(double(a[i]) - double(b[i])));
    return m;
}

// Direct 3-D Gaussian with renormalized truncation at the borders.
Volume brute_force_gaussian(const Volume& v, double sigma) {
    const int r = static_cast<int>(std::ceil(4.0 * sigma));
    auto w = [&](int o) { return std::exp(-0.5 * o * o / (sigma * sigma)); };
    const Dims d = v.dims();
    Volume out(d);
    for (std::int64_t z = 0; z < d.depth; ++z)
        for (std::int64_t y = 0; y < d.height; ++y)
            for (std::int64_t x = 0; x < d.width; ++x) {
                double acc = 0.0, mass = 0.0;
                for (int dz = -r; dz <= r; ++dz)
                    for (int dy = -r; dy <= r; ++dy)
                        for (int dx = -r; dx <= r; ++dx) {
                            const auto zz = z + dz, yy = y + dy, xx = x + dx;
                            if (zz < 0 || yy < 0 || xx < 0 || zz >= d.depth || yy >= d.height || xx >= d.width) continue;
                            const double k = w(dz) * w(dy) * w(dx);
                            acc += k * v.at(zz, yy, xx);
                            mass += k;
                        }
                out.at(z, y, x) = static_cast<float>(acc / mass);
            }
    return out;
}

double across_slice_energy(const Volume& v) {
    double e = 0.0;
    const Dims d = v.dims();
    for (std::int64_t z = 0; z + 1 < d.depth; ++z)
        for (std::int64_t i = 0; i < d.slice_size(); ++i) {
            const double g = v[(z + 1) * d.slice_size() + i] - v[z * d.slice_size() + i];
            e += g * g;
        }
    return e;
}

fs::path temp_dir(const std::string& name) {
    auto dir = fs::temp_directory_path() / ("dfip_volumes_" + name);
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

std::vector<char> read_bytes(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), {}};
}

void write_bytes(const fs::path& p, const std::vector<char>& bytes) {
    std::ofstream out(p, std::ios::binary | std::ios::trunc);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

} // namespace

TEST(Percentile, MatchesSortOracle) {
    Rng rng(1);
    for (int n : {1, 2, 5, 100, 1237}) {
        Volume v = random_volume({1, 1, n}, rng);
        for (double p : {0.0, 0.1, 0.5, 25.0, 50.0, 99.5, 99.9, 100.0})
            EXPECT_NEAR(percentile(v.voxels(), p), sorted_percentile(as_doubles(v), p), 1e-12) << n << " " << p;
    }
}

TEST(Preprocess, ConstantVolumeIsZero) {
    const Volume out = preprocess(Volume({3, 4, 5}, 7.5f));
    for (float x : out.voxels()) EXPECT_EQ(x, 0.0f);
}

TEST(Preprocess, Ramp) {
    Volume v({10, 10, 10});
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = static_cast<float>(i);
    const Volume out = preprocess(v);
    const auto [mn, mx] = std::minmax_element(out.voxels().begin(), out.voxels().end());
    EXPECT_EQ(*mn, 0.0f);
    EXPECT_EQ(*mx, 1.0f);
    EXPECT_NEAR(sorted_percentile(as_doubles(out), 50.0), 0.5, 1e-3);
    // interior voxels follow the affine map fixed by the two percentiles
    const double lo = sorted_percentile(as_doubles(v), 0.1), hi = sorted_percentile(as_doubles(v), 99.9);
    EXPECT_NEAR(out[500], (500.0 - lo) / (hi - lo), 1e-6);
}

TEST(Preprocess, OutlierIsClamped) {
    Rng rng(2);
    Volume v({8, 16, 16});
    for (auto& x : v.voxels()) x = static_cast<float>(rng.uniform());
    v[123] = 1e6f;
    const Volume out = preprocess(v);
    EXPECT_EQ(out[123], 1.0f);
    int at_top = 0;
    for (std::size_t i = 0; i < out.size(); ++i)
        if (i != 123 && out[i] == 1.0f) ++at_top;
    EXPECT_GT(at_top, 0);
    for (float x : out.voxels()) EXPECT_TRUE(x >= 0.0f && x <= 1.0f);
}

TEST(Preprocess, IdempotentWhenPercentileRanksAreIntegral) {
    Rng rng(3);
    // 0.001 * (n - 1) integral: both clip bounds are order statistics
    for (std::int64_t n : {1001, 2001, 5001}) {
        const Volume v = random_volume({1, 1, n}, rng);
        const Volume once = preprocess(v);
        EXPECT_LE(max_diff(once, preprocess(once)), 1e-6) << n;
    }
}

TEST(Preprocess, SecondPassMovesAtMostTheInterpolationGap) {
    // Otherwise the second-pass bounds lo', hi' sit inside the gap next to the
    // clamped order statistics and every voxel moves by at most
    // (lo' + 1 - hi') / (hi' - lo').
    Rng rng(4);
    for (Dims d : {Dims{10, 10, 10}, Dims{7, 9, 11}, Dims{16, 32, 32}}) {
        const Volume once = preprocess(random_volume(d, rng));
        auto sorted = as_doubles(once);
        std::sort(sorted.begin(), sorted.end());
        const double lo = sorted_percentile(sorted, 0.1), hi = sorted_percentile(sorted, 99.9);
        const double rank = 0.001 * static_cast<double>(sorted.size() - 1);
        const auto f = static_cast<std::size_t>(rank);
        EXPECT_LE(lo, sorted[f + 1] - sorted[f] + 1e-12);
        EXPECT_LE(1.0 - hi, sorted[sorted.size() - 1 - f] - sorted[sorted.size() - 2 - f] + 1e-12);
        EXPECT_LE(max_diff(once, preprocess(once)), (lo + 1.0 - hi) / (hi - lo) + 1e-6) << dims_str(d);
    }
}

TEST(Crop, IdentityWhenSizesMatch) {
    Rng rng(5);
    const Volume v = random_volume({3, 8, 8}, rng);
    const auto [c, info] = center_crop_slices(v, 8);
    EXPECT_EQ(c, v);
    EXPECT_EQ(uncrop_slices(c, info), v);
}

TEST(Crop, CentralWindow) {
    Volume v({2, 240, 240});
    for (std::int64_t z = 0; z < 2; ++z)
        for (std::int64_t y = 0; y < 240; ++y)
            for (std::int64_t x = 0; x < 240; ++x) v.at(z, y, x) = static_cast<float>(z * 100000 + y * 1000 + x);
    const auto [c, info] = center_crop_slices(v, 224);
    EXPECT_EQ(c.dims(), (Dims{2, 224, 224}));
    EXPECT_EQ(info.offset_h, 8);
    EXPECT_EQ(info.offset_w, 8);
    for (std::int64_t z = 0; z < 2; ++z)
        for (std::int64_t y = 0; y < 224; ++y)
            for (std::int64_t x = 0; x < 224; ++x) ASSERT_EQ(c.at(z, y, x), v.at(z, y + 8, x + 8));
    EXPECT_EQ(c.at(0, 0, 0), v.at(0, 8, 8));
    EXPECT_EQ(c.at(1, 223, 223), v.at(1, 231, 231));
}

TEST(Crop, ReembedOnZeroBackground) {
    Rng rng(6);
    Volume v({2, 12, 14});
    for (std::int64_t z = 0; z < 2; ++z)
        for (std::int64_t y = 2; y < 10; ++y)
            for (std::int64_t x = 3; x < 11; ++x) v.at(z, y, x) = static_cast<float>(rng.uniform());
    const auto [c, info] = center_crop_slices(v, 8);
    EXPECT_EQ(uncrop_slices(c, info), v);
}

TEST(Crop, PadsSmallSlices) {
    Rng rng(7);
    const Volume v = random_volume({2, 5, 6}, rng);
    const auto [c, info] = center_crop_slices(v, 8);
    EXPECT_EQ(c.dims(), (Dims{2, 8, 8}));
    EXPECT_LT(info.offset_h, 0);
    double outside = 0.0;
    for (std::size_t i = 0; i < c.size(); ++i) outside += std::abs(c[i]);
    double inside = 0.0;
    for (float x : v.voxels()) inside += std::abs(x);
    EXPECT_NEAR(outside, inside, 1e-3);
    EXPECT_EQ(uncrop_slices(c, info), v);
}

TEST(Crop, BackgroundRestoredOutsideWindow) {
    Rng rng(8);
    const Volume v = random_volume({2, 10, 10}, rng);
    auto [c, info] = center_crop_slices(v, 6);
    for (auto& x : c.voxels()) x += 1.0f;
    const Volume back = uncrop_slices(c, info, &v);
    for (std::int64_t z = 0; z < 2; ++z)
        for (std::int64_t y = 0; y < 10; ++y)
            for (std::int64_t x = 0; x < 10; ++x) {
                const bool in = y >= 2 && y < 8 && x >= 2 && x < 8;
                EXPECT_EQ(back.at(z, y, x), in ? v.at(z, y, x) + 1.0f : v.at(z, y, x));
            }
}

TEST(SelectSlices, EmptyAndSingle) {
    Volume gt({10, 4, 4}, 0.5f), mask({10, 4, 4});
    EXPECT_TRUE(select_slices(MaskedCase::from_ground_truth(gt, mask)).empty());
    mask.at(7, 2, 1) = 1.0f;
    const auto sel = select_slices(MaskedCase::from_ground_truth(gt, mask));
    ASSERT_EQ(sel.size(), 1u);
    EXPECT_EQ(sel[0].index, 7);
    EXPECT_EQ(sel[0].mask.shape(), (Shape{1, 1, 4, 4}));
    EXPECT_EQ(sel[0].baseline[2 * 4 + 1], 0.0f);
    ASSERT_TRUE(sel[0].ground_truth.has_value());
    EXPECT_EQ((*sel[0].ground_truth)[2 * 4 + 1], 0.5f);
}

TEST(SelectSlices, BruteForceScan) {
    Rng rng(9);
    for (int trial = 0; trial < 20; ++trial) {
        Volume gt = random_volume({12, 5, 5}, rng), mask({12, 5, 5});
        for (auto& m : mask.voxels()) m = rng.uniform() < 0.01 ? 1.0f : 0.0f;
        std::vector<std::int64_t> expect;
        for (std::int64_t z = 0; z < 12; ++z) {
            bool any = false;
            for (std::int64_t i = 0; i < 25; ++i) any = any || mask[z * 25 + i] != 0.0f;
            if (any) expect.push_back(z);
        }
        const auto sel = select_slices(MaskedCase::from_ground_truth(gt, mask));
        std::vector<std::int64_t> got;
        for (const auto& s : sel) got.push_back(s.index);
        EXPECT_EQ(got, expect);
        EXPECT_EQ(masked_slice_indices(mask), expect);
    }
}

TEST(Reassemble, ReplacesListedSlicesOnly) {
    Rng rng(10);
    Volume gt = random_volume({6, 4, 4}, rng), mask({6, 4, 4});
    mask.at(1, 0, 0) = mask.at(4, 3, 3) = 1.0f;
    const MaskedCase c = MaskedCase::from_ground_truth(gt, mask);
    EXPECT_EQ(reassemble(c.baseline, {}), c.baseline);

    std::vector<std::pair<std::int64_t, Tensor>> sampled;
    for (const auto& s : select_slices(c)) sampled.emplace_back(s.index, *s.ground_truth);
    const Volume out = reassemble(c.baseline, sampled);
    for (std::int64_t z = 0; z < 6; ++z) {
        const auto got = out.slice(z);
        const auto want = (z == 1 || z == 4) ? gt.slice(z) : c.baseline.slice(z);
        EXPECT_TRUE(std::equal(got.begin(), got.end(), want.begin())) << z;
    }
    // re-selecting after reassembly gives the same indices
    EXPECT_EQ(masked_slice_indices(mask), (std::vector<std::int64_t>{1, 4}));

    sampled.emplace_back(1, *select_slices(c)[0].ground_truth);
    EXPECT_ANY_THROW(reassemble(c.baseline, sampled));
    std::vector<std::pair<std::int64_t, Tensor>> bad{{9, Tensor(Shape{1, 1, 4, 4})}};
    EXPECT_ANY_THROW(reassemble(c.baseline, bad));
    std::vector<std::pair<std::int64_t, Tensor>> wrong{{0, Tensor(Shape{1, 1, 4, 5})}};
    EXPECT_ANY_THROW(reassemble(c.baseline, wrong));
}

TEST(Gaussian, KernelNormalized) {
    const auto k = gaussian_kernel(1.075);
    ASSERT_EQ(k.size(), 2u * 5 + 1);
    double s = 0.0;
    for (double w : k) s += w;
    EXPECT_NEAR(s, 1.0, 1e-12);
    EXPECT_NEAR(k[5 + 1] / k[5], std::exp(-0.5 / (1.075 * 1.075)), 1e-12);
}

TEST(Gaussian, ConstantUnchanged) {
    const Volume v({9, 10, 11}, 0.37f);
    const Volume out = gaussian_smooth(v, 1.075);
    for (float x : out.voxels()) EXPECT_NEAR(x, 0.37f, 1e-6);
}

TEST(Gaussian, ImpulseGivesKernel) {
    const double sigma = 1.075;
    Volume v({15, 15, 15});
    v.at(7, 7, 7) = 1.0f;
    const Volume out = gaussian_smooth(v, sigma);
    const int r = 5;
    double norm = 0.0;
    for (int o = -r; o <= r; ++o) norm += std::exp(-0.5 * o * o / (sigma * sigma));
    for (int z = 0; z < 15; ++z)
        for (int y = 0; y < 15; ++y)
            for (int x = 0; x < 15; ++x) {
                const int dz = z - 7, dy = y - 7, dx = x - 7;
                double want = 0.0;
                if (std::abs(dz) <= r && std::abs(dy) <= r && std::abs(dx) <= r)
                    want = std::exp(-0.5 * (dz * dz + dy * dy + dx * dx) / (sigma * sigma)) / (norm * norm * norm);
                ASSERT_NEAR(out.at(z, y, x), want, 1e-7);
            }
}

TEST(Gaussian, MatchesBruteForceOracle) {
    Rng rng(11);
    const Volume v = random_volume({16, 16, 16}, rng);
    EXPECT_LE(max_diff(gaussian_smooth(v, 1.075), brute_force_gaussian(v, 1.075)), 1e-5);
    const Volume w = random_volume({5, 7, 6}, rng);
    EXPECT_LE(max_diff(gaussian_smooth(w, 0.6), brute_force_gaussian(w, 0.6)), 1e-5);
}

TEST(Gaussian, PreservesMeanOfInteriorSignal) {
    Rng rng(12);
    Volume v({24, 24, 24});
    for (std::int64_t z = 8; z < 16; ++z)
        for (std::int64_t y = 8; y < 16; ++y)
            for (std::int64_t x = 8; x < 16; ++x) v.at(z, y, x) = static_cast<float>(rng.uniform());
    auto mean = [](const Volume& a) {
        double s = 0.0;
        for (float x : a.voxels()) s += x;
        return s / static_cast<double>(a.size());
    };
    const double before = mean(v), after = mean(gaussian_smooth(v, 1.075));
    EXPECT_LE(std::abs(after - before), 1e-3 * before);
}

TEST(Gaussian, ReducesStripeEnergy) {
    Rng rng(13);
    // smooth volume whose slices 4..11 were regenerated independently
    Volume v({16, 16, 16});
    for (std::int64_t z = 0; z < 16; ++z)
        for (std::int64_t y = 0; y < 16; ++y)
            for (std::int64_t x = 0; x < 16; ++x)
                v.at(z, y, x) = static_cast<float>(0.5 + 0.3 * std::sin(0.3 * x) * std::cos(0.25 * y + 0.1 * z));
    for (std::int64_t z = 4; z < 12; ++z)
        for (std::int64_t i = 0; i < 256; ++i) v[z * 256 + i] += static_cast<float>(0.1 * rng.normal());
    EXPECT_LT(across_slice_energy(gaussian_smooth(v, 1.075)), across_slice_energy(v));
}

TEST(Gaussian, MaskLimited) {
    Rng rng(14);
    const Volume v = random_volume({6, 6, 6}, rng);
    Volume mask({6, 6, 6});
    mask.at(3, 3, 3) = 1.0f;
    const Volume full = gaussian_smooth(v, 1.075);
    const Volume limited = gaussian_smooth(v, 1.075, {&mask});
    for (std::size_t i = 0; i < v.size(); ++i) EXPECT_EQ(limited[i], mask[i] != 0.0f ? full[i] : v[i]);
}

TEST(Renormalize, AlreadySpanningIsUnchanged) {
    Volume ref({1, 1, 1001});
    for (std::size_t i = 0; i < ref.size(); ++i) ref[i] = static_cast<float>(i) / 1000.0f;
    const double lo = sorted_percentile(as_doubles(ref), 0.5), hi = sorted_percentile(as_doubles(ref), 99.5);
    Volume out({1, 1, 3});
    out[0] = static_cast<float>(lo);
    out[1] = static_cast<float>(0.5 * (lo + hi));
    out[2] = static_cast<float>(hi);
    EXPECT_LE(max_diff(renormalize_output(out, ref), out), 1e-6);
}

TEST(Renormalize, AffineMap) {
    Volume ref({1, 1, 1001});
    for (std::size_t i = 0; i < ref.size(); ++i) ref[i] = 10.0f + 10.0f * static_cast<float>(i) / 1000.0f;
    // make the 0.5/99.5 percentiles land exactly on 10 and 20
    for (std::size_t i = 0; i <= 5; ++i) ref[i] = 10.0f;
    for (std::size_t i = 995; i < 1001; ++i) ref[i] = 20.0f;
    Rng rng(15);
    Volume out({2, 3, 4});
    for (auto& x : out.voxels()) x = static_cast<float>(rng.uniform());
    out[0] = 0.0f;
    out[1] = 1.0f;
    const Volume mapped = renormalize_output(out, ref);
    for (std::size_t i = 0; i < out.size(); ++i) EXPECT_NEAR(mapped[i], 10.0 + 10.0 * out[i], 1e-5);
}

TEST(Renormalize, RandomMatchesOracle) {
    Rng rng(16);
    for (int trial = 0; trial < 10; ++trial) {
        const Volume ref = random_volume({4, 8, 8}, rng, 5.0), out = random_volume({3, 5, 5}, rng);
        const double lo = sorted_percentile(as_doubles(ref), 0.5), hi = sorted_percentile(as_doubles(ref), 99.5);
        const auto [mn, mx] = std::minmax_element(out.voxels().begin(), out.voxels().end());
        const Volume got = renormalize_output(out, ref);
        for (std::size_t i = 0; i < out.size(); ++i)
            EXPECT_NEAR(got[i], lo + (out[i] - *mn) * (hi - lo) / (*mx - *mn), 1e-5);
    }
}

TEST(Renormalize, ConstantOutputGoesToMidpoint) {
    Rng rng(17);
    const Volume ref = random_volume({2, 8, 8}, rng);
    const double mid = 0.5 * (sorted_percentile(as_doubles(ref), 0.5) + sorted_percentile(as_doubles(ref), 99.5));
    const Volume out = renormalize_output(Volume({2, 2, 2}, 3.0f), ref);
    for (float x : out.voxels()) EXPECT_NEAR(x, mid, 1e-6);
}

TEST(MaskedCase, VoidingAndValidation) {
    Rng rng(18);
    const Volume gt = random_volume({3, 4, 4}, rng);
    Volume mask({3, 4, 4});
    mask[5] = 0.7f; // binarized to 1
    mask[6] = 0.2f; // binarized to 0
    const MaskedCase c = MaskedCase::from_ground_truth(gt, mask);
    EXPECT_EQ(c.mask[5], 1.0f);
    EXPECT_EQ(c.mask[6], 0.0f);
    EXPECT_EQ(c.baseline[5], 0.0f);
    EXPECT_EQ(c.baseline[6], gt[6]);
    EXPECT_NO_THROW(c.validate());
    MaskedCase broken = c;
    broken.baseline[0] += 1.0f;
    EXPECT_ANY_THROW(broken.validate());
    MaskedCase wrong = c;
    wrong.mask = Volume({3, 4, 5});
    EXPECT_ANY_THROW(wrong.validate());
}

TEST(Phantom, Deterministic) {
    PhantomSpec spec;
    spec.seed = 42;
    const MaskedCase a = generate_phantom(spec), b = generate_phantom(spec);
    EXPECT_EQ(*a.ground_truth, *b.ground_truth);
    EXPECT_EQ(a.mask, b.mask);
    EXPECT_EQ(a.baseline, b.baseline);
    spec.seed = 43;
    EXPECT_NE(*generate_phantom(spec).ground_truth, *a.ground_truth);
}

TEST(Phantom, InvariantsAcrossSeeds) {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        PhantomSpec spec;
        spec.seed = seed;
        const MaskedCase c = generate_phantom(spec);
        c.validate();
        const Volume& gt = *c.ground_truth;
        std::int64_t masked = 0;
        for (std::size_t i = 0; i < gt.size(); ++i) {
            EXPECT_EQ(c.baseline[i] * c.mask[i], 0.0f);
            if (c.mask[i] != 0.0f) {
                ++masked;
                EXPECT_GT(gt[i], 0.0f) << "mask voxel outside the brain, seed " << seed;
            }
        }
        // union of 1..2 lattice balls with radius in [2, 3.5]
        const double slack = std::sqrt(3.0) / 2.0;
        const double lo = 4.0 / 3.0 * std::numbers::pi * std::pow(spec.min_radius - slack, 3);
        const double hi = spec.max_masks * 4.0 / 3.0 * std::numbers::pi * std::pow(spec.max_radius + slack, 3);
        EXPECT_GE(masked, lo) << seed;
        EXPECT_LE(masked, hi) << seed;
        EXPECT_FALSE(masked_slice_indices(c.mask).empty());

        const Volume p = preprocess(gt);
        const auto [mn, mx] = std::minmax_element(p.voxels().begin(), p.voxels().end());
        EXPECT_EQ(*mn, 0.0f);
        EXPECT_EQ(*mx, 1.0f);
    }
}

TEST(Phantom, ImpossibleMaskRejected) {
    PhantomSpec spec;
    spec.min_radius = spec.max_radius = 12.0;
    EXPECT_THROW(generate_phantom(spec), DomainError);
    spec.min_radius = 0.5;
    EXPECT_THROW(generate_phantom(spec), ConfigError);
}

TEST(VolumeIo, VvolRoundTrip) {
    const auto dir = temp_dir("vvol");
    Rng rng(19);
    Volume v = random_volume({3, 5, 7}, rng);
    v[4] = -0.0f;
    v[5] = std::numeric_limits<float>::denorm_min();
    write_vvol(dir / "a.vvol", v);
    const Volume back = read_vvol(dir / "a.vvol");
    EXPECT_EQ(back.dims(), v.dims());
    EXPECT_EQ(std::memcmp(back.voxels().data(), v.voxels().data(), v.size() * 4), 0);
    const auto bytes = read_bytes(dir / "a.vvol");
    EXPECT_EQ(bytes.size(), 20 + v.size() * 4);
    EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 4), "VVOL");
    std::uint32_t dims[3];
    std::memcpy(dims, bytes.data() + 8, 12);
    EXPECT_EQ(dims[0], 3u);
    EXPECT_EQ(dims[1], 5u);
    EXPECT_EQ(dims[2], 7u);
    EXPECT_EQ(read_volume(dir / "a.vvol"), v);
    fs::remove_all(dir);
}

TEST(VolumeIo, VvolErrors) {
    const auto dir = temp_dir("vvol_err");
    Rng rng(20);
    write_vvol(dir / "a.vvol", random_volume({2, 2, 2}, rng));
    auto bytes = read_bytes(dir / "a.vvol");
    auto cut = bytes;
    cut.pop_back();
    write_bytes(dir / "cut.vvol", cut);
    EXPECT_THROW(read_vvol(dir / "cut.vvol"), IoError);
    bytes[1] = 'X';
    write_bytes(dir / "magic.vvol", bytes);
    EXPECT_THROW(read_vvol(dir / "magic.vvol"), IoError);
    EXPECT_THROW(read_vvol(dir / "missing.vvol"), IoError);
    fs::remove_all(dir);
}

TEST(VolumeIo, NiftiRoundTrip) {
    const auto dir = temp_dir("nifti");
    Rng rng(21);
    const Volume v = random_volume({4, 6, 5}, rng);
    write_nifti(dir / "a.nii", NiftiImage{v, {}});
    auto first = read_bytes(dir / "a.nii");
    ASSERT_EQ(first.size(), 352 + v.size() * 4);
    std::int16_t dim[4];
    std::memcpy(dim, first.data() + 40, 8);
    EXPECT_EQ(dim[0], 3);
    EXPECT_EQ(dim[1], 5); // width
    EXPECT_EQ(dim[2], 6); // height
    EXPECT_EQ(dim[3], 4); // slices

    // a header field the reader ignores survives the round trip
    const char descrip[] = "phantom scan";
    std::memcpy(first.data() + 148, descrip, sizeof descrip);
    write_bytes(dir / "b.nii", first);
    const NiftiImage img = read_nifti(dir / "b.nii");
    EXPECT_EQ(img.volume, v);
    EXPECT_EQ(img.header.size(), 352u);
    write_nifti(dir / "c.nii", img);
    EXPECT_EQ(read_bytes(dir / "c.nii"), first);
    EXPECT_EQ(read_volume(dir / "c.nii"), v);
    fs::remove_all(dir);
}

TEST(VolumeIo, NiftiRejectsFloat64) {
    const auto dir = temp_dir("nifti64");
    write_nifti(dir / "a.nii", NiftiImage{Volume({2, 2, 2}, 1.0f), {}});
    auto bytes = read_bytes(dir / "a.nii");
    const std::int16_t datatype = 64, bitpix = 64;
    std::memcpy(bytes.data() + 70, &datatype, 2);
    std::memcpy(bytes.data() + 72, &bitpix, 2);
    bytes.resize(352 + 8 * 8);
    write_bytes(dir / "d.nii", bytes);
    try {
        read_nifti(dir / "d.nii");
        FAIL() << "expected IoError";
    } catch (const IoError& e) {
        EXPECT_NE(std::string(e.what()).find("datatype 64"), std::string::npos) << e.what();
    }
    auto cut = read_bytes(dir / "a.nii");
    cut.resize(200);
    write_bytes(dir / "cut.nii", cut);
    EXPECT_THROW(read_nifti(dir / "cut.nii"), IoError);
    fs::remove_all(dir);
}
