#include "dfip/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <vector>

#include "dfip/error.hpp"
#include "dfip/rng.hpp"

namespace dfip {
namespace {

struct Ellipsoid {
    double cz, cy, cx; // centre (voxel units)
    double az, ay, ax; // semi-axes

    double radius(double z, double y, double x) const {
        const double dz = (z - cz) / az, dy = (y - cy) / ay, dx = (x - cx) / ax;
        return std::sqrt(dz * dz + dy * dy + dx * dx);
    }
};

// Smooth step from 1 (inside) to 0 (outside) around normalized radius 1.
double soft_inside(double r, double width) { return 1.0 / (1.0 + std::exp((r - 1.0) / width)); }

// Every mask voxel must lie well inside the brain.
constexpr double kMaskBrainRadius = 0.85;

} // namespace

void PhantomSpec::validate() const {
    if (dims.depth < 4 || dims.height < 8 || dims.width < 8) throw ConfigError("phantom dims too small: " + dims_str(dims));
    if (structures < 0) throw ConfigError("phantom structures must be >= 0");
    if (min_masks < 1 || max_masks < min_masks) throw ConfigError("phantom mask count range invalid");
    if (!(min_radius >= 1.0 && max_radius >= min_radius)) throw ConfigError("phantom mask radius range invalid (min >= 1)");
}

MaskedCase generate_phantom(const PhantomSpec& spec) {
    spec.validate();
    Rng rng(spec.seed);
    auto u = [&](double lo, double hi) { return lo + (hi - lo) * rng.uniform(); };
    const Dims d = spec.dims;
    const double D = static_cast<double>(d.depth), H = static_cast<double>(d.height), W = static_cast<double>(d.width);

    const Ellipsoid brain{(D - 1) / 2 + u(-0.3, 0.3), (H - 1) / 2 + u(-0.5, 0.5), (W - 1) / 2 + u(-0.5, 0.5),
                          D * u(0.40, 0.46),          H * u(0.38, 0.44),          W * u(0.32, 0.38)};
    const Ellipsoid core{brain.cz, brain.cy + u(-1.0, 1.0), brain.cx + u(-1.0, 1.0),
                         brain.az * u(0.55, 0.7), brain.ay * u(0.55, 0.7), brain.ax * u(0.55, 0.7)};
    const double grey = u(0.40, 0.50), white = u(0.70, 0.80);

    struct Blob {
        Ellipsoid e;
        double delta;
    };
    std::vector<Blob> blobs;
    for (int i = 0; i < spec.structures; ++i) {
        Blob b{{brain.cz + u(-0.4, 0.4) * brain.az, brain.cy + u(-0.4, 0.4) * brain.ay,
                brain.cx + u(-0.4, 0.4) * brain.ax, brain.az * u(0.15, 0.3), brain.ay * u(0.12, 0.3),
                brain.ax * u(0.12, 0.3)},
               u(-0.3, 0.15)};
        blobs.push_back(b);
    }
    struct Wave {
        double kz, ky, kx, phase, amp;
    };
    std::vector<Wave> waves;
    for (int i = 0; i < 2; ++i) {
        const double two_pi = 2.0 * std::numbers::pi;
        waves.push_back({two_pi * u(-0.5, 0.5) / D, two_pi * u(0.5, 2.0) / H, two_pi * u(0.5, 2.0) / W,
                         u(0.0, two_pi), u(0.02, 0.05)});
    }

    Volume gt(d);
    for (std::int64_t z = 0; z < d.depth; ++z)
        for (std::int64_t y = 0; y < d.height; ++y)
            for (std::int64_t x = 0; x < d.width; ++x) {
                const double fz = static_cast<double>(z), fy = static_cast<double>(y), fx = static_cast<double>(x);
                const double noise = 0.01 * rng.normal();
                if (brain.radius(fz, fy, fx) > 1.0) continue;
                double v = grey + (white - grey) * soft_inside(core.radius(fz, fy, fx), 0.08);
                for (const auto& b : blobs) v += b.delta * soft_inside(b.e.radius(fz, fy, fx), 0.1);
                for (const auto& w : waves) v += w.amp * std::sin(w.kz * fz + w.ky * fy + w.kx * fx + w.phase);
                gt.at(z, y, x) = static_cast<float>(std::clamp(v + noise, 0.02, 1.0));
            }

    Volume mask(d);
    const int n_masks = static_cast<int>(rng.uniform_int(spec.min_masks, spec.max_masks));
    for (int m = 0; m < n_masks; ++m) {
        const double r = u(spec.min_radius, spec.max_radius);
        bool placed = false;
        for (int attempt = 0; attempt < 500 && !placed; ++attempt) {
            const double cz = u(brain.cz - brain.az, brain.cz + brain.az);
            const double cy = u(brain.cy - brain.ay, brain.cy + brain.ay);
            const double cx = u(brain.cx - brain.ax, brain.cx + brain.ax);
            std::vector<std::int64_t> voxels;
            bool inside = true;
            for (auto z = static_cast<std::int64_t>(std::floor(cz - r)); inside && z <= std::ceil(cz + r); ++z)
                for (auto y = static_cast<std::int64_t>(std::floor(cy - r)); inside && y <= std::ceil(cy + r); ++y)
                    for (auto x = static_cast<std::int64_t>(std::floor(cx - r)); x <= std::ceil(cx + r); ++x) {
                        const double dz = z - cz, dy = y - cy, dx = x - cx;
                        if (dz * dz + dy * dy + dx * dx > r * r) continue;
                        if (z < 0 || y < 0 || x < 0 || z >= d.depth || y >= d.height || x >= d.width ||
                            brain.radius(static_cast<double>(z), static_cast<double>(y), static_cast<double>(x)) >
                                kMaskBrainRadius) {
                            inside = false;
                            break;
                        }
                        voxels.push_back((z * d.height + y) * d.width + x);
                    }
            if (!inside || voxels.empty()) continue;
            for (auto i : voxels) mask[static_cast<std::size_t>(i)] = 1.0f;
            placed = true;
        }
        if (!placed)
            throw DomainError("cannot place a mask of radius " + std::to_string(r) + " inside the phantom brain of dims " +
                              dims_str(d));
    }
    return MaskedCase::from_ground_truth(std::move(gt), mask);
}

} // namespace dfip
