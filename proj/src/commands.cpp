#include "dfip/commands.hpp"

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>

#include <CLI11.hpp>

#include "dfip/checkpoint.hpp"
#include "dfip/error.hpp"
#include "dfip/metrics.hpp"
#include "dfip/phantom.hpp"
#include "dfip/pipeline.hpp"
#include "dfip/run_config.hpp"
#include "dfip/volume_io.hpp"

namespace fs = std::filesystem;

namespace dfip {
namespace {

std::string case_name(std::size_t i) {
    std::ostringstream s;
    s << std::setw(4) << std::setfill('0') << i;
    return s.str();
}

Dims parse_dims(const std::vector<std::int64_t>& v) {
    if (v.size() != 3) throw ConfigError("--dims expects D,H,W");
    for (auto x : v)
        if (x <= 0) throw ConfigError("--dims entries must be positive");
    return {v[0], v[1], v[2]};
}

struct SynthArgs {
    fs::path out;
    std::size_t count = 4;
    std::vector<std::int64_t> dims{16, 32, 32};
    std::uint64_t seed = 0;
    int min_masks = 1, max_masks = 2;
    double min_radius = 2.0, max_radius = 3.5;
};

int synth(const SynthArgs& a, std::ostream& out) {
    PhantomSpec base;
    base.dims = parse_dims(a.dims);
    base.min_masks = a.min_masks;
    base.max_masks = a.max_masks;
    base.min_radius = a.min_radius;
    base.max_radius = a.max_radius;
    base.validate();

    Json resolved = {{"command", "synth"},   {"out", a.out.string()},     {"count", a.count},
                     {"dims", a.dims},       {"seed", a.seed},            {"min_masks", a.min_masks},
                     {"max_masks", a.max_masks}, {"min_radius", a.min_radius}, {"max_radius", a.max_radius}};
    out << "config=" << resolved.dump() << '\n';

    std::error_code ec;
    fs::create_directories(a.out, ec);
    if (ec) throw IoError("cannot create " + a.out.string() + ": " + ec.message());

    std::vector<CaseFiles> cases;
    for (std::size_t i = 0; i < a.count; ++i) {
        PhantomSpec spec = base;
        spec.seed = derive_seed(a.seed, i);
        const MaskedCase c = generate_phantom(spec);
        c.validate();
        CaseFiles f{case_name(i), a.out / ("case_" + case_name(i))};
        write_case(f.dir, c);
        cases.push_back(f);
    }
    Json extra = {{"seed", a.seed}, {"dims", a.dims}};
    write_manifest(a.out, cases, extra.dump());
    out << "wrote " << cases.size() << " cases to " << a.out.string() << '\n';
    return 0;
}

struct TrainArgs {
    fs::path data, config, out, resume;
    std::optional<std::int64_t> steps, checkpoint_every;
    std::optional<int> batch_size, log_every, timesteps;
    std::optional<double> lr, ema_rate;
    std::optional<std::uint64_t> seed;
};

void apply_flags(const TrainArgs& a, TrainerConfig& t) {
    if (a.steps) t.steps = *a.steps;
    if (a.checkpoint_every) t.checkpoint_every = *a.checkpoint_every;
    if (a.batch_size) t.batch_size = *a.batch_size;
    if (a.log_every) t.log_every = *a.log_every;
    if (a.lr) t.lr = *a.lr;
    if (a.ema_rate) t.ema_rate = *a.ema_rate;
    if (a.seed) t.seed = *a.seed;
}

int train(const TrainArgs& a, std::ostream& out) {
    TrainRunConfig cfg;
    if (!a.config.empty()) cfg = TrainRunConfig::load(a.config);
    apply_flags(a, cfg.trainer);
    if (a.timesteps) {
        cfg.schedule.steps = *a.timesteps;
        cfg.schedule.beta_start.reset();
        cfg.schedule.beta_end.reset();
    }

    std::vector<MaskedCase> cases;
    for (const auto& f : read_manifest(a.data)) cases.push_back(read_case_with_ground_truth(f.dir));

    std::optional<Trainer> trainer;
    if (!a.resume.empty()) {
        const Checkpoint ck = load_checkpoint(a.resume);
        SliceDataset data = build_dataset(cases, ck.unet.image_size);
        trainer.emplace(ck, std::move(data));
        // Only run-length settings may change on resume; the rest comes from the checkpoint.
        TrainerConfig& t = trainer->config();
        if (!a.config.empty()) {
            t.steps = cfg.trainer.steps;
            t.checkpoint_every = cfg.trainer.checkpoint_every;
            t.log_every = cfg.trainer.log_every;
        }
        if (a.steps) t.steps = *a.steps;
        if (a.checkpoint_every) t.checkpoint_every = *a.checkpoint_every;
        if (a.log_every) t.log_every = *a.log_every;
        cfg.unet = ck.unet;
        cfg.schedule = ScheduleConfig{ck.steps, ck.beta_start, ck.beta_end};
        cfg.trainer = t;
    } else {
        cfg.unet.validate();
        SliceDataset data = build_dataset(cases, cfg.unet.image_size);
        trainer.emplace(cfg.unet, cfg.schedule.build(), cfg.trainer, std::move(data));
    }

    Json resolved = cfg.to_json();
    resolved["command"] = "train";
    resolved["data"] = a.data.string();
    resolved["out"] = a.out.string();
    if (!a.resume.empty()) resolved["resume"] = a.resume.string();
    out << "config=" << resolved.dump() << '\n';
    out << "slices=" << trainer->data().size() << " parameters=" << trainer->model().parameter_count() << " start_step=" << trainer->step_count()
        << '\n';

    Trainer::Callbacks cb;
    cb.on_log = [&](std::int64_t step, float loss, double secs) {
        out << "step=" << step << " loss=" << std::setprecision(6) << loss << " time=" << std::fixed
            << std::setprecision(2) << secs << std::defaultfloat << '\n'
            << std::flush;
    };
    cb.on_checkpoint = [&](const Trainer& t) {
        save_checkpoint(a.out, t.checkpoint());
        out << "checkpoint step=" << t.step_count() << " path=" << a.out.string() << '\n' << std::flush;
    };
    trainer->run(cb);
    return 0;
}

struct SampleArgs {
    fs::path ckpt, case_dir, out;
    double sigma = 1.075;
    bool no_smooth = false;
    bool mask_limited = false;
    bool composite = false;
    bool raw_weights = false;
    std::uint64_t seed = 0;
    int batch = 16;
};

int sample(const SampleArgs& a, std::ostream& out) {
    Json resolved = {{"command", "sample"}, {"ckpt", a.ckpt.string()},       {"case", a.case_dir.string()},
                     {"out", a.out.string()}, {"sigma", a.sigma},            {"smooth", !a.no_smooth},
                     {"mask_limited_smooth", a.mask_limited}, {"composite", a.composite},
                     {"ema", !a.raw_weights}, {"seed", a.seed},              {"batch", a.batch}};
    out << "config=" << resolved.dump() << '\n';

    const MaskedCase c = read_case_for_inference(a.case_dir);
    if (masked_slice_indices(c.mask).empty()) {
        write_volume(a.out, c.baseline);
        out << "mask is empty; wrote baseline unchanged to " << a.out.string() << '\n';
        return 0;
    }
    const Checkpoint ck = load_checkpoint(a.ckpt);
    DenoiserModel model = ck.model(!a.raw_weights);
    InpaintOptions o;
    o.seed = a.seed;
    o.smooth = !a.no_smooth;
    o.sigma = a.sigma;
    o.smooth_mask_only = a.mask_limited;
    o.composite = a.composite;
    o.batch = a.batch;
    const auto t0 = std::chrono::steady_clock::now();
    const Volume result = inpaint_volume(model, ck.unet.image_size, ck.schedule(), c.baseline, c.mask, o);
    write_volume(a.out, result);
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    out << "inpainted " << masked_slice_indices(c.mask).size() << " slices in " << std::fixed
        << std::setprecision(1) << secs << std::defaultfloat << " s; wrote " << a.out.string() << '\n';
    return 0;
}

struct EvalArgs {
    fs::path pred, gt, mask, out;
    double data_range = 1.0;
};

bool is_volume_file(const fs::path& p) {
    const auto ext = p.extension().string();
    return fs::is_regular_file(p) && (ext == ".vvol" || ext == ".nii");
}

// Resolves the volume for `id` under `root`: <root>/<id>/<name>.vvol,
// <root>/case_<id>/<name>.vvol, <root>/<id>.vvol or <root>/<id>.nii.
fs::path resolve(const fs::path& root, const std::string& id, const std::string& name) {
    for (const fs::path& p : {root / id / (name + ".vvol"), root / ("case_" + id) / (name + ".vvol"),
                              root / (id + ".vvol"), root / (id + ".nii")})
        if (fs::exists(p)) return p;
    throw IoError("no " + name + " volume for case " + id + " under " + root.string());
}

int eval(const EvalArgs& a, std::ostream& out, std::ostream& err) {
    Json resolved = {{"command", "eval"},       {"pred", a.pred.string()}, {"gt", a.gt.string()},
                     {"mask", a.mask.string()}, {"out", a.out.string()},   {"data_range", a.data_range}};
    out << "config=" << resolved.dump() << '\n';

    struct Item {
        std::string id;
        fs::path pred, gt, mask;
    };
    std::vector<Item> items;
    if (fs::is_directory(a.pred)) {
        std::vector<fs::path> preds;
        for (const auto& e : fs::directory_iterator(a.pred))
            if (is_volume_file(e.path())) preds.push_back(e.path());
        std::sort(preds.begin(), preds.end());
        if (preds.empty()) throw IoError("no .vvol or .nii predictions in " + a.pred.string());
        for (const auto& p : preds) items.push_back({p.stem().string(), p, {}, {}});
    } else {
        items.push_back({a.pred.stem().string(), a.pred, a.gt, a.mask});
    }

    std::vector<CaseMetrics> rows;
    std::size_t failures = 0;
    for (auto& it : items) {
        try {
            if (fs::is_directory(a.gt)) it.gt = resolve(a.gt, it.id, "gt");
            else it.gt = a.gt;
            if (fs::is_directory(a.mask)) it.mask = resolve(a.mask, it.id, "mask");
            else it.mask = a.mask;
            const Volume pred = read_volume(it.pred);
            const Volume gt = read_volume(it.gt);
            const Volume mask = binarize(read_volume(it.mask));
            if (pred.dims() != gt.dims() || pred.dims() != mask.dims())
                throw ShapeError("dims mismatch: pred " + dims_str(pred.dims()) + ", gt " + dims_str(gt.dims()) +
                                 ", mask " + dims_str(mask.dims()));
            rows.push_back(evaluate_case(it.id, pred, gt, mask, a.data_range));
        } catch (const std::exception& e) {
            ++failures;
            err << "error: case " << it.id << ": " << e.what() << '\n';
        }
    }

    const MetricsReport report = make_report(std::move(rows));
    if (!a.out.empty()) {
        std::ofstream f(a.out);
        if (!f) throw IoError("cannot write " + a.out.string());
        f << report.to_csv();
    }
    out << report.to_table();
    if (failures) {
        err << failures << " of " << items.size() << " cases failed\n";
        return 1;
    }
    return 0;
}

} // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"dfip: diffusion inpainting of masked brain MRI volumes"};
    app.require_subcommand(1);

    SynthArgs sa;
    auto* synth_cmd = app.add_subcommand("synth", "Write synthetic phantom cases");
    synth_cmd->add_option("--out", sa.out, "Output directory")->required();
    synth_cmd->add_option("--count", sa.count, "Number of cases");
    synth_cmd->add_option("--dims", sa.dims, "Volume dims D,H,W")->delimiter(',')->expected(3);
    synth_cmd->add_option("--seed", sa.seed, "Random seed");
    synth_cmd->add_option("--min-masks", sa.min_masks);
    synth_cmd->add_option("--max-masks", sa.max_masks);
    synth_cmd->add_option("--min-radius", sa.min_radius);
    synth_cmd->add_option("--max-radius", sa.max_radius);

    TrainArgs ta;
    auto* train_cmd = app.add_subcommand("train", "Train the noise predictor");
    train_cmd->add_option("--data", ta.data, "Dataset directory with manifest.json")->required();
    train_cmd->add_option("--config", ta.config, "JSON run config");
    train_cmd->add_option("--out", ta.out, "Checkpoint path")->required();
    train_cmd->add_option("--resume", ta.resume, "Checkpoint to resume from");
    train_cmd->add_option("--steps", ta.steps, "Total optimisation steps");
    train_cmd->add_option("--checkpoint-every", ta.checkpoint_every);
    train_cmd->add_option("--batch-size", ta.batch_size);
    train_cmd->add_option("--log-every", ta.log_every);
    train_cmd->add_option("--lr", ta.lr);
    train_cmd->add_option("--ema-rate", ta.ema_rate);
    train_cmd->add_option("--timesteps", ta.timesteps, "Diffusion steps T");
    train_cmd->add_option("--seed", ta.seed);

    SampleArgs pa;
    auto* sample_cmd = app.add_subcommand("sample", "Inpaint the masked region of one case");
    sample_cmd->add_option("--ckpt", pa.ckpt, "Checkpoint")->required();
    sample_cmd->add_option("--case", pa.case_dir, "Case directory (mask.vvol, baseline.vvol)")->required();
    sample_cmd->add_option("--out", pa.out, "Output volume (.vvol or .nii)")->required();
    sample_cmd->add_option("--sigma", pa.sigma, "Gaussian smoothing sigma in voxels");
    sample_cmd->add_flag("--no-smooth", pa.no_smooth);
    sample_cmd->add_flag("--mask-limited-smooth", pa.mask_limited, "Smooth only inside the mask");
    sample_cmd->add_flag("--composite", pa.composite, "Keep baseline voxels outside the mask");
    sample_cmd->add_flag("--raw-weights", pa.raw_weights, "Use raw instead of EMA weights");
    sample_cmd->add_option("--seed", pa.seed);
    sample_cmd->add_option("--batch", pa.batch, "Slices per batch");

    EvalArgs ea;
    auto* eval_cmd = app.add_subcommand("eval", "Masked SSIM, PSNR and MSE report");
    eval_cmd->add_option("--pred", ea.pred, "Prediction file or directory")->required();
    eval_cmd->add_option("--gt", ea.gt, "Ground truth file or directory")->required();
    eval_cmd->add_option("--mask", ea.mask, "Mask file or directory")->required();
    eval_cmd->add_option("--out", ea.out, "CSV report path");
    eval_cmd->add_option("--data-range", ea.data_range);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e, out, err) == 0 ? 0 : 2;
    }

    try {
        if (*synth_cmd) return synth(sa, out);
        if (*train_cmd) return train(ta, out);
        if (*sample_cmd) return sample(pa, out);
        if (*eval_cmd) return eval(ea, out, err);
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return 1;
    }
    return 2;
}

} // namespace dfip
