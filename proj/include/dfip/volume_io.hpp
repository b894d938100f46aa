#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "dfip/volume.hpp"

namespace dfip {

/// Native format: "VVOL", u32 version (1), u32 depth, u32 height, u32 width,
/// then little-endian float32 voxels, axial-slice-major.
Volume read_vvol(const std::filesystem::path& path);
void write_vvol(const std::filesystem::path& path, const Volume& v);

/// Single-file NIfTI-1 subset: float32 data (datatype 16), no compression.
/// dim[1] is the width, dim[2] the height, dim[3] the slice count. Every byte
/// before vox_offset is kept so the image can be written back unchanged.
struct NiftiImage {
    Volume volume;
    std::vector<std::uint8_t> header;
};

NiftiImage read_nifti(const std::filesystem::path& path);
/// Writes image.header verbatim when present, otherwise a fresh minimal header.
void write_nifti(const std::filesystem::path& path, const NiftiImage& image);

/// Dispatch on extension: ".nii" selects NIfTI, anything else VVOL.
Volume read_volume(const std::filesystem::path& path);
void write_volume(const std::filesystem::path& path, const Volume& v);

} // namespace dfip
