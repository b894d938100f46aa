#include "dfip/volume_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "dfip/error.hpp"

namespace dfip {

static_assert(std::endian::native == std::endian::little, "volume I/O assumes a little-endian host");

namespace {

constexpr char kVvolMagic[4] = {'V', 'V', 'O', 'L'};
constexpr std::uint32_t kVvolVersion = 1;
constexpr std::size_t kNiftiHeaderSize = 348;
constexpr std::int16_t kNiftiFloat32 = 16;

std::vector<std::uint8_t> slurp(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    return std::vector<std::uint8_t>((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

// Writes through a temporary sibling so readers never observe a partial file.
void write_atomic(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes) {
    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw IoError("cannot write " + tmp.string());
        out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
        if (!out) throw IoError("write failed for " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
}

template <class T>
T load(const std::vector<std::uint8_t>& bytes, std::size_t offset) {
    T v;
    std::memcpy(&v, bytes.data() + offset, sizeof(T));
    return v;
}

template <class T>
void store(std::vector<std::uint8_t>& bytes, std::size_t offset, T v) {
    std::memcpy(bytes.data() + offset, &v, sizeof(T));
}

void append_voxels(std::vector<std::uint8_t>& bytes, const Volume& v) {
    const std::size_t at = bytes.size();
    bytes.resize(at + v.size() * sizeof(float));
    std::memcpy(bytes.data() + at, v.voxels().data(), v.size() * sizeof(float));
}

std::vector<float> read_voxels(const std::vector<std::uint8_t>& bytes, std::size_t offset, const Dims& dims,
                               const std::filesystem::path& path) {
    const std::size_t need = static_cast<std::size_t>(dims.count()) * sizeof(float);
    if (bytes.size() < offset + need)
        throw IoError(path.string() + ": truncated voxel data, expected " + std::to_string(need) +
                      " bytes from offset " + std::to_string(offset) + ", file has " + std::to_string(bytes.size()));
    std::vector<float> voxels(static_cast<std::size_t>(dims.count()));
    std::memcpy(voxels.data(), bytes.data() + offset, need);
    return voxels;
}

} // namespace

Volume read_vvol(const std::filesystem::path& path) {
    const auto bytes = slurp(path);
    if (bytes.size() < 20) throw IoError(path.string() + ": truncated VVOL header (" + std::to_string(bytes.size()) + " bytes)");
    if (std::memcmp(bytes.data(), kVvolMagic, 4) != 0) throw IoError(path.string() + ": bad magic at offset 0, not a VVOL file");
    const auto version = load<std::uint32_t>(bytes, 4);
    if (version != kVvolVersion) throw IoError(path.string() + ": unsupported VVOL version " + std::to_string(version));
    const Dims dims{load<std::uint32_t>(bytes, 8), load<std::uint32_t>(bytes, 12), load<std::uint32_t>(bytes, 16)};
    if (dims.count() <= 0) throw IoError(path.string() + ": zero extent in dims " + dims_str(dims));
    auto voxels = read_voxels(bytes, 20, dims, path);
    if (bytes.size() != 20 + voxels.size() * sizeof(float))
        throw IoError(path.string() + ": trailing bytes after voxel data at offset " +
                      std::to_string(20 + voxels.size() * sizeof(float)));
    return Volume(dims, std::move(voxels));
}

void write_vvol(const std::filesystem::path& path, const Volume& v) {
    std::vector<std::uint8_t> bytes(20);
    std::memcpy(bytes.data(), kVvolMagic, 4);
    store<std::uint32_t>(bytes, 4, kVvolVersion);
    store<std::uint32_t>(bytes, 8, static_cast<std::uint32_t>(v.dims().depth));
    store<std::uint32_t>(bytes, 12, static_cast<std::uint32_t>(v.dims().height));
    store<std::uint32_t>(bytes, 16, static_cast<std::uint32_t>(v.dims().width));
    append_voxels(bytes, v);
    write_atomic(path, bytes);
}

NiftiImage read_nifti(const std::filesystem::path& path) {
    const auto bytes = slurp(path);
    const std::string where = path.string() + ": ";
    if (bytes.size() < kNiftiHeaderSize)
        throw IoError(where + "truncated NIfTI header (" + std::to_string(bytes.size()) + " of 348 bytes)");
    if (load<std::int32_t>(bytes, 0) != 348) throw IoError(where + "sizeof_hdr at offset 0 is not 348 (byte-swapped or not NIfTI-1)");
    if (std::memcmp(bytes.data() + 344, "n+1\0", 4) != 0)
        throw IoError(where + "magic at offset 344 is not \"n+1\" (only single-file NIfTI-1 is supported)");
    const auto datatype = load<std::int16_t>(bytes, 70);
    if (datatype != kNiftiFloat32)
        throw IoError(where + "unsupported datatype " + std::to_string(datatype) + " at offset 70 (only float32 = 16)");
    const auto ndim = load<std::int16_t>(bytes, 40);
    if (ndim < 1 || ndim > 7) throw IoError(where + "invalid dim[0] = " + std::to_string(ndim));
    std::int64_t ext[3] = {1, 1, 1};
    for (int i = 0; i < 3 && i < ndim; ++i) ext[i] = load<std::int16_t>(bytes, 42 + 2 * i);
    for (int i = 3; i < ndim; ++i)
        if (load<std::int16_t>(bytes, 42 + 2 * i) > 1) throw IoError(where + "more than three non-singleton dims");
    const Dims dims{ext[2], ext[1], ext[0]};
    if (dims.depth <= 0 || dims.height <= 0 || dims.width <= 0) throw IoError(where + "non-positive dims " + dims_str(dims));
    const auto vox_offset = static_cast<std::size_t>(load<float>(bytes, 108));
    if (vox_offset < kNiftiHeaderSize || vox_offset > bytes.size())
        throw IoError(where + "vox_offset " + std::to_string(vox_offset) + " outside file of " +
                      std::to_string(bytes.size()) + " bytes");
    NiftiImage img{Volume(dims, read_voxels(bytes, vox_offset, dims, path)),
                   std::vector<std::uint8_t>(bytes.begin(), bytes.begin() + static_cast<std::ptrdiff_t>(vox_offset))};
    return img;
}

void write_nifti(const std::filesystem::path& path, const NiftiImage& image) {
    std::vector<std::uint8_t> bytes;
    if (!image.header.empty()) {
        if (image.header.size() < kNiftiHeaderSize) throw IoError("stored NIfTI header is shorter than 348 bytes");
        bytes = image.header;
        const auto vox_offset = static_cast<std::size_t>(load<float>(bytes, 108));
        if (vox_offset != bytes.size()) throw IoError("stored NIfTI header disagrees with its vox_offset");
        const Dims d = image.volume.dims();
        if (load<std::int16_t>(bytes, 42) != d.width || load<std::int16_t>(bytes, 44) != d.height ||
            load<std::int16_t>(bytes, 46) != d.depth)
            throw ShapeError("stored NIfTI header dims differ from volume dims " + dims_str(d));
    } else {
        bytes.assign(352, 0);
        const Dims d = image.volume.dims();
        store<std::int32_t>(bytes, 0, 348);
        store<std::int16_t>(bytes, 40, 3);
        store<std::int16_t>(bytes, 42, static_cast<std::int16_t>(d.width));
        store<std::int16_t>(bytes, 44, static_cast<std::int16_t>(d.height));
        store<std::int16_t>(bytes, 46, static_cast<std::int16_t>(d.depth));
        for (int i = 4; i < 8; ++i) store<std::int16_t>(bytes, 40 + 2 * i, 1);
        store<std::int16_t>(bytes, 70, kNiftiFloat32);
        store<std::int16_t>(bytes, 72, 32);
        for (int i = 0; i < 8; ++i) store<float>(bytes, 76 + 4 * i, 1.0f);
        store<float>(bytes, 108, 352.0f);
        store<float>(bytes, 112, 1.0f); // scl_slope
        std::memcpy(bytes.data() + 344, "n+1\0", 4);
    }
    append_voxels(bytes, image.volume);
    write_atomic(path, bytes);
}

Volume read_volume(const std::filesystem::path& path) {
    if (path.extension() == ".nii") return read_nifti(path).volume;
    return read_vvol(path);
}

void write_volume(const std::filesystem::path& path, const Volume& v) {
    if (path.extension() == ".nii") {
        write_nifti(path, NiftiImage{v, {}});
        return;
    }
    write_vvol(path, v);
}

} // namespace dfip
