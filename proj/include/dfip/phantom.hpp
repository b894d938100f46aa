#pragma once

#include <cstdint>

#include "dfip/volume.hpp"

namespace dfip {

/// Parameters of a synthetic head phantom with spherical "healthy region" masks.
struct PhantomSpec {
    std::uint64_t seed = 0;
    Dims dims{16, 32, 32};
    int structures = 3;       // interior ellipsoids besides the white-matter core
    int min_masks = 1;
    int max_masks = 2;
    double min_radius = 2.0;  // voxels
    double max_radius = 3.5;

    void validate() const;
};

/// Ellipsoidal "brain" with nested smooth-edged structures, low-frequency
/// texture and mild noise, intensities in [0, 1] and 0 outside the brain.
/// Masks are spheres whose every voxel lies inside the brain; the baseline is
/// the voided ground truth. Deterministic in spec.seed.
MaskedCase generate_phantom(const PhantomSpec& spec);

} // namespace dfip
