#include "dfip/pipeline.hpp"

#include <algorithm>
#include <fstream>

#include <nlohmann/json.hpp>

#include "dfip/error.hpp"
#include "dfip/volume_io.hpp"

namespace dfip {

void write_case(const std::filesystem::path& dir, const MaskedCase& c) {
    std::filesystem::create_directories(dir);
    if (c.ground_truth) write_vvol(dir / "gt.vvol", *c.ground_truth);
    write_vvol(dir / "mask.vvol", c.mask);
    write_vvol(dir / "baseline.vvol", c.baseline);
}

MaskedCase read_case_for_inference(const std::filesystem::path& dir) {
    MaskedCase c;
    c.mask = binarize(read_vvol(dir / "mask.vvol"));
    c.baseline = read_vvol(dir / "baseline.vvol");
    if (c.mask.dims() != c.baseline.dims())
        throw ShapeError(dir.string() + ": mask " + dims_str(c.mask.dims()) + " vs baseline " +
                         dims_str(c.baseline.dims()));
    return c;
}

MaskedCase read_case_with_ground_truth(const std::filesystem::path& dir) {
    MaskedCase c = read_case_for_inference(dir);
    c.ground_truth = read_vvol(dir / "gt.vvol");
    if (c.ground_truth->dims() != c.mask.dims())
        throw ShapeError(dir.string() + ": ground truth dims " + dims_str(c.ground_truth->dims()) + " vs mask " +
                         dims_str(c.mask.dims()));
    return c;
}

void write_manifest(const std::filesystem::path& root, const std::vector<CaseFiles>& cases,
                    const std::string& extra_json) {
    nlohmann::json j = nlohmann::json::parse(extra_json);
    j["cases"] = nlohmann::json::array();
    for (const auto& c : cases)
        j["cases"].push_back({{"id", c.id}, {"dir", std::filesystem::relative(c.dir, root).string()}});
    std::ofstream out(root / "manifest.json");
    if (!out) throw IoError("cannot write manifest in " + root.string());
    out << j.dump(2) << '\n';
}

std::vector<CaseFiles> read_manifest(const std::filesystem::path& root) {
    std::ifstream in(root / "manifest.json");
    if (!in) throw IoError("no manifest.json in " + root.string());
    std::vector<CaseFiles> out;
    try {
        const auto j = nlohmann::json::parse(in);
        for (const auto& c : j.at("cases"))
            out.push_back({c.at("id").get<std::string>(), root / c.at("dir").get<std::string>()});
    } catch (const nlohmann::json::exception& e) {
        throw IoError((root / "manifest.json").string() + ": " + e.what());
    }
    return out;
}

ConditionedBatch training_slices(const MaskedCase& c, std::int64_t size) {
    if (!c.ground_truth) throw DomainError("training needs the ground truth volume");
    const Volume gt = preprocess(*c.ground_truth);
    auto [gt_c, info] = center_crop_slices(gt, size);
    auto [mask_c, info_m] = center_crop_slices(binarize(c.mask), size);
    const std::int64_t lost = static_cast<std::int64_t>(
        std::count(c.mask.voxels().begin(), c.mask.voxels().end(), 1.0f) -
        std::count(mask_c.voxels().begin(), mask_c.voxels().end(), 1.0f));
    if (lost != 0) throw DomainError("crop to " + std::to_string(size) + " px would cut the mask");
    const MaskedCase cropped = MaskedCase::from_ground_truth(std::move(gt_c), mask_c);
    const auto slices = select_slices(cropped);
    const auto n = static_cast<std::int64_t>(slices.size());
    ConditionedBatch out{Tensor(Shape{std::max<std::int64_t>(n, 1), 1, size, size}),
                         Tensor(Shape{std::max<std::int64_t>(n, 1), 1, size, size}),
                         Tensor(Shape{std::max<std::int64_t>(n, 1), 1, size, size})};
    if (n == 0) return ConditionedBatch{};
    const std::int64_t per = size * size;
    for (std::int64_t i = 0; i < n; ++i) {
        const auto& s = slices[static_cast<std::size_t>(i)];
        std::copy_n(s.ground_truth->data(), per, out.x0.data() + i * per);
        std::copy_n(s.baseline.data(), per, out.b.data() + i * per);
        std::copy_n(s.mask.data(), per, out.m.data() + i * per);
    }
    return out;
}

SliceDataset build_dataset(const std::vector<MaskedCase>& cases, std::int64_t size) {
    std::vector<ConditionedBatch> parts;
    std::int64_t total = 0;
    for (const auto& c : cases) {
        auto part = training_slices(c, size);
        total += part.size();
        if (part.size() > 0) parts.push_back(std::move(part));
    }
    if (total == 0) throw ConfigError("training dataset is empty: no slice has a non-zero mask");
    ConditionedBatch all{Tensor(Shape{total, 1, size, size}), Tensor(Shape{total, 1, size, size}),
                         Tensor(Shape{total, 1, size, size})};
    std::size_t at = 0;
    for (const auto& p : parts) {
        std::copy(p.x0.values().begin(), p.x0.values().end(), all.x0.data() + at);
        std::copy(p.b.values().begin(), p.b.values().end(), all.b.data() + at);
        std::copy(p.m.values().begin(), p.m.values().end(), all.m.data() + at);
        at += p.x0.numel();
    }
    return SliceDataset(std::move(all));
}

double unmasked_brain_mean(const Volume& baseline, const Volume& mask) {
    double s = 0.0;
    std::size_t n = 0;
    for (std::size_t i = 0; i < baseline.size(); ++i)
        if (mask[i] == 0.0f && baseline[i] != 0.0f) {
            s += baseline[i];
            ++n;
        }
    return n ? s / static_cast<double>(n) : 0.0;
}

Volume mean_fill(const Volume& baseline, const Volume& mask) {
    const auto fill = static_cast<float>(unmasked_brain_mean(baseline, mask));
    Volume out = baseline;
    for (std::size_t i = 0; i < out.size(); ++i)
        if (mask[i] != 0.0f) out[i] = fill;
    return out;
}

Volume inpaint_volume(NoisePredictor& model, int image_size, const NoiseSchedule& schedule, const Volume& baseline,
                      const Volume& raw_mask, const InpaintOptions& o) {
    if (baseline.dims() != raw_mask.dims())
        throw ShapeError("baseline " + dims_str(baseline.dims()) + " vs mask " + dims_str(raw_mask.dims()));
    const Volume mask = binarize(raw_mask);
    const auto indices = masked_slice_indices(mask);
    if (indices.empty()) return baseline;

    const Dims d = baseline.dims();
    const Volume pre = preprocess(baseline);
    auto [pre_c, info] = center_crop_slices(pre, image_size);
    auto [mask_c, info_m] = center_crop_slices(mask, image_size);
    if (masked_slice_indices(mask_c) != indices ||
        std::count(mask.voxels().begin(), mask.voxels().end(), 1.0f) !=
            std::count(mask_c.voxels().begin(), mask_c.voxels().end(), 1.0f))
        throw ShapeError("slice size " + std::to_string(d.height) + "x" + std::to_string(d.width) +
                         " does not fit the model's " + std::to_string(image_size) + "x" +
                         std::to_string(image_size) + " window without cutting the mask");

    const std::int64_t per = static_cast<std::int64_t>(image_size) * image_size;
    std::vector<std::pair<std::int64_t, Tensor>> sampled;
    const std::size_t chunk = static_cast<std::size_t>(std::max(1, o.batch));
    for (std::size_t start = 0; start < indices.size(); start += chunk) {
        const std::size_t n = std::min(chunk, indices.size() - start);
        const Shape shape{static_cast<std::int64_t>(n), 1, image_size, image_size};
        Tensor b(shape), m(shape);
        std::vector<Rng> gens;
        for (std::size_t k = 0; k < n; ++k) {
            const auto idx = indices[start + k];
            const auto bs = pre_c.slice(idx);
            const auto ms = mask_c.slice(idx);
            std::copy(bs.begin(), bs.end(), b.data() + static_cast<std::int64_t>(k) * per);
            std::copy(ms.begin(), ms.end(), m.data() + static_cast<std::int64_t>(k) * per);
            gens.push_back(Rng::split(o.seed, static_cast<std::uint64_t>(idx)));
        }
        const Tensor x0 = sample_slices(model, b, m, schedule, gens, SampleOptions{o.composite});
        for (std::size_t k = 0; k < n; ++k) {
            Tensor slice(Shape{1, 1, image_size, image_size},
                         std::vector<float>(x0.data() + static_cast<std::int64_t>(k) * per,
                                            x0.data() + static_cast<std::int64_t>(k + 1) * per));
            sampled.emplace_back(indices[start + k], std::move(slice));
        }
    }

    Volume out = uncrop_slices(reassemble(pre_c, sampled), info, &pre);
    if (o.smooth) {
        SmoothOptions so;
        if (o.smooth_mask_only) so.limit_to = &mask;
        out = gaussian_smooth(out, o.sigma, so);
    }
    if (o.renormalize) out = renormalize_output(out, baseline);
    return out;
}

} // namespace dfip
