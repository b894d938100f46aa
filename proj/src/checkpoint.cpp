#include "dfip/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "dfip/error.hpp"
#include "dfip/run_config.hpp"

namespace dfip {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace {

constexpr char kMagic[4] = {'D', 'F', 'I', 'P'};

void write_blobs(std::ofstream& out, const std::vector<Tensor>& blobs) {
    for (const auto& t : blobs)
        out.write(reinterpret_cast<const char*>(t.data()), static_cast<std::streamsize>(t.numel() * sizeof(float)));
}

} // namespace

DenoiserModel Checkpoint::model(bool use_ema) const {
    DenoiserModel m(unet, 0, steps);
    const auto& src = use_ema ? ema : params;
    auto& dst = m.parameters();
    if (src.size() != dst.size()) throw IoError("checkpoint holds " + std::to_string(src.size()) +
                                                " tensors, config implies " + std::to_string(dst.size()));
    for (std::size_t k = 0; k < dst.size(); ++k) {
        require_same_shape(dst[k].value, src[k], dst[k].name.c_str());
        dst[k].value = src[k];
    }
    return m;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck) {
    if (ck.names.size() != ck.params.size() || ck.ema.size() != ck.params.size())
        throw StateError("checkpoint parameter lists are inconsistent");
    Json manifest = Json::array();
    for (std::size_t k = 0; k < ck.params.size(); ++k)
        manifest.push_back(Json{{"name", ck.names[k]}, {"shape", ck.params[k].shape()}});
    const Json meta{{"unet", to_json(ck.unet)},
                    {"schedule", {{"T", ck.steps}, {"beta_start", ck.beta_start}, {"beta_end", ck.beta_end}}},
                    {"trainer", to_json(ck.trainer)},
                    {"step_count", ck.step_count},
                    {"rng_state", ck.rng_state},
                    {"has_optimizer_state", ck.has_optimizer_state()},
                    {"manifest", manifest}};
    const std::string text = meta.dump();

    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw IoError("cannot write " + tmp.string());
        out.write(kMagic, 4);
        const std::uint32_t version = Checkpoint::format_version;
        out.write(reinterpret_cast<const char*>(&version), sizeof version);
        const std::uint64_t len = text.size();
        out.write(reinterpret_cast<const char*>(&len), sizeof len);
        out.write(text.data(), static_cast<std::streamsize>(text.size()));
        write_blobs(out, ck.params);
        write_blobs(out, ck.ema);
        if (ck.has_optimizer_state()) {
            write_blobs(out, ck.adam_m);
            write_blobs(out, ck.adam_v);
        }
        if (!out) throw IoError("write failed for " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open checkpoint " + path.string());
    std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    const std::string where = path.string() + ": ";
    if (bytes.size() < 16) throw IoError(where + "truncated header (" + std::to_string(bytes.size()) + " bytes)");
    if (std::memcmp(bytes.data(), kMagic, 4) != 0) throw IoError(where + "bad magic, not a DFIP checkpoint");
    std::uint32_t version = 0;
    std::memcpy(&version, bytes.data() + 4, 4);
    if (version != Checkpoint::format_version)
        throw IoError(where + "unsupported format version " + std::to_string(version));
    std::uint64_t len = 0;
    std::memcpy(&len, bytes.data() + 8, 8);
    if (len > bytes.size() - 16)
        throw IoError(where + "metadata block of " + std::to_string(len) + " bytes runs past end of file at offset " +
                      std::to_string(bytes.size()));

    Checkpoint ck;
    Json meta;
    try {
        meta = Json::parse(bytes.begin() + 16, bytes.begin() + 16 + static_cast<std::ptrdiff_t>(len));
        ck.unet = unet_from_json(meta.at("unet"));
        ck.steps = meta.at("schedule").at("T").get<int>();
        ck.beta_start = meta.at("schedule").at("beta_start").get<double>();
        ck.beta_end = meta.at("schedule").at("beta_end").get<double>();
        ck.trainer = trainer_from_json(meta.at("trainer"));
        ck.step_count = meta.at("step_count").get<std::int64_t>();
        ck.rng_state = meta.at("rng_state").get<std::string>();
    } catch (const Json::exception& e) {
        throw IoError(where + "malformed metadata: " + e.what());
    } catch (const ConfigError& e) {
        throw IoError(where + "malformed metadata: " + e.what());
    }

    // The manifest must agree with the architecture implied by the config.
    const DenoiserModel reference(ck.unet, 0, ck.steps);
    const auto& expected = reference.parameters();
    const Json& manifest = meta.at("manifest");
    if (manifest.size() != expected.size())
        throw IoError(where + "manifest lists " + std::to_string(manifest.size()) + " tensors, config implies " +
                      std::to_string(expected.size()));
    std::size_t floats = 0;
    for (std::size_t k = 0; k < expected.size(); ++k) {
        const auto name = manifest[k].at("name").get<std::string>();
        const auto shape = manifest[k].at("shape").get<Shape>();
        if (name != expected[k].name || shape != expected[k].value.shape())
            throw IoError(where + "manifest entry " + std::to_string(k) + " (" + name + " " + shape_str(shape) +
                          ") does not match config (" + expected[k].name + " " +
                          shape_str(expected[k].value.shape()) + ")");
        ck.names.push_back(name);
        floats += expected[k].value.numel();
    }

    const bool has_opt = meta.value("has_optimizer_state", false);
    const std::size_t groups = has_opt ? 4 : 2;
    const std::size_t offset = 16 + len;
    const std::size_t need = offset + groups * floats * sizeof(float);
    if (bytes.size() != need)
        throw IoError(where + (bytes.size() < need ? "truncated" : "trailing bytes") + ": expected " +
                      std::to_string(need) + " bytes, file has " + std::to_string(bytes.size()));

    std::size_t pos = offset;
    auto read_group = [&](std::vector<Tensor>& dst) {
        for (const auto& p : expected) {
            Tensor t(p.value.shape());
            std::memcpy(t.data(), bytes.data() + pos, t.numel() * sizeof(float));
            pos += t.numel() * sizeof(float);
            dst.push_back(std::move(t));
        }
    };
    read_group(ck.params);
    read_group(ck.ema);
    if (has_opt) {
        read_group(ck.adam_m);
        read_group(ck.adam_v);
    }
    return ck;
}

} // namespace dfip
