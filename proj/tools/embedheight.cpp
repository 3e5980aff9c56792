// Command-line driver for the embedding-to-height pipeline. One subcommand
// per stage: fetch remote inputs, convert GeoTIFF to the internal raster,
// generate synthetic scenes, preprocess input/target pairs, train a model
// (U-Net, U-Net++ or the ridge baseline), run whole-scene inference,
// evaluate against a reference, render report artifacts, and audit the
// autodiff engine with finite differences.
//
// Exit codes: 0 success, 1 invalid arguments or inputs, 2 runtime failure.

#include <cstdio>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "CLI11.hpp"

#include "embedheight/checkpoint.hpp"
#include "embedheight/config.hpp"
#include "embedheight/fetch.hpp"
#include "embedheight/gradcheck_suite.hpp"
#include "embedheight/metrics.hpp"
#include "embedheight/preprocess.hpp"
#include "embedheight/report.hpp"
#include "embedheight/ridge.hpp"
#include "embedheight/synthgen.hpp"
#include "embedheight/tiff.hpp"
#include "embedheight/trainer.hpp"
#include "embedheight/version.hpp"

namespace {

using namespace embedheight;
namespace fs = std::filesystem;

// The invocation being executed, joined for run manifests.
std::string g_argv_line;

/// Manifest for subcommands that are fully described by their arguments
/// (no config file). Comment-only, so it documents how to re-run.
std::string argv_manifest_text(std::string_view command) {
    std::string out = "# run manifest\n";
    out += "# command: " + std::string(command) + "\n";
    out += "# argv: " + g_argv_line + "\n";
    out += "# argv_sha256: " + sha256_hex(g_argv_line) + "\n";
    out += "# library: " + std::string(kLibraryVersion) + "\n";
    for (const auto& [name, version] : kModuleVersions)
        out += "# module " + std::string(name) + ": " + std::to_string(version) + "\n";
    return out;
}

/// Load a raster by sniffing the magic bytes; GeoTIFF warnings go to stderr.
Grid load_raster(const fs::path& path) {
    const std::string bytes = read_file_bytes(path);
    if (bytes.size() >= 4 && bytes.compare(0, 4, "EGR1") == 0)
        return decode_egrid(std::span<const unsigned char>(
            reinterpret_cast<const unsigned char*>(bytes.data()), bytes.size()));
    if (bytes.size() >= 2 && (bytes.compare(0, 2, "II") == 0 || bytes.compare(0, 2, "MM") == 0)) {
        std::vector<std::string> warnings;
        Grid g = decode_geotiff(bytes, &warnings);
        for (const std::string& w : warnings)
            std::fprintf(stderr, "warning: %s: %s\n", path.c_str(), w.c_str());
        return g;
    }
    throw FormatError(path.string() + ": not an EGRID or GeoTIFF raster");
}

/// Cast any raster to float32 in place of its storage; the nodata value is
/// run through the same cast so sentinel comparisons keep working.
Grid to_float32(const Grid& g) {
    if (g.dtype() == Dtype::float32) return g;
    std::vector<float> out(g.value_count());
    std::visit(
        [&](const auto& v) {
            for (std::size_t i = 0; i < v.size(); ++i) out[i] = static_cast<float>(v[i]);
        },
        g.storage());
    std::optional<double> nodata;
    if (g.nodata()) nodata = static_cast<double>(static_cast<float>(*g.nodata()));
    return Grid(g.width(), g.height(), g.bands(), g.geo(), g.crs(), std::move(out), nodata);
}

/// int8 sentinel-coded embeddings -> remapped, normalized float32 bands.
/// Already-float32 rasters pass through (assumed normalized upstream).
Grid normalized_embeddings(const Grid& raw) {
    if (raw.dtype() == Dtype::float32) return raw;
    if (raw.dtype() != Dtype::int8)
        throw ValueError("embeddings must be int8 (raw) or float32 (normalized)");
    auto [remapped, report] = remap_nodata(raw);
    if (report.invalid_pixels > 0)
        std::fprintf(stderr, "note: %zu of %zu pixels carried the nodata sentinel\n",
                     report.invalid_pixels, report.total_pixels);
    return normalize(remapped);
}

Grid mask_to_grid(const std::vector<std::uint8_t>& mask, const Grid& like) {
    std::vector<std::int8_t> values(mask.begin(), mask.end());
    return Grid(like.width(), like.height(), 1, like.geo(), like.crs(), std::move(values),
                std::nullopt);
}

std::vector<std::uint8_t> grid_to_mask(const Grid& g) {
    if (g.bands() != 1) throw ValueError("mask raster must be single-band");
    std::vector<std::uint8_t> mask(g.pixel_count());
    for (int y = 0; y < g.height(); ++y)
        for (int x = 0; x < g.width(); ++x)
            mask[static_cast<std::size_t>(y) * g.width() + x] = g.at(0, y, x) != 0.0 ? 1 : 0;
    return mask;
}

PairedGrid load_pair(const fs::path& dir, const std::string& which) {
    PairedGrid pair{read_internal(dir / (which + "_inputs.egrid")),
                    read_internal(dir / (which + "_target.egrid")),
                    {}};
    pair.mask = grid_to_mask(read_internal(dir / (which + "_mask.egrid")));
    return pair;
}

void write_pair(const PairedGrid& pair, const fs::path& dir, const std::string& which) {
    write_internal(pair.inputs, dir / (which + "_inputs.egrid"));
    write_internal(pair.target, dir / (which + "_target.egrid"));
    write_internal(mask_to_grid(pair.mask, pair.target), dir / (which + "_mask.egrid"));
}

/// Masked pred/ref value pairs with the same skip rules as metrics::delta
/// (mask-out and reference-nodata pixels are dropped).
void gather_pairs(const Grid& pred, const Grid& ref, std::span<const std::uint8_t> mask,
                  std::vector<double>& pred_v, std::vector<double>& ref_v) {
    for (int y = 0; y < ref.height(); ++y)
        for (int x = 0; x < ref.width(); ++x) {
            const std::size_t p = static_cast<std::size_t>(y) * ref.width() + x;
            if (!mask.empty() && !mask[p]) continue;
            const double g = ref.at(0, y, x);
            if (ref.is_nodata(g)) continue;
            pred_v.push_back(pred.at(0, y, x));
            ref_v.push_back(g);
        }
}

// ---------------------------------------------------------------- config

struct ConfigFlags {
    std::string config_path;
    std::vector<std::string> sets;
    std::string variant;
    std::string embeddings;
    std::string dsm;
    std::string output_dir;
    std::string seed;

    /// File first, then --set pairs, then the targeted flags.
    RunConfig build() const {
        RunConfig cfg =
            config_path.empty() ? RunConfig{} : load_run_config(config_path);
        for (const std::string& kv : sets) {
            const std::size_t eq = kv.find('=');
            if (eq == std::string::npos)
                throw ValueError("--set expects key=value, got '" + kv + "'");
            set_config_key(cfg, kv.substr(0, eq), kv.substr(eq + 1));
        }
        if (!variant.empty()) set_config_key(cfg, "variant", variant);
        if (!embeddings.empty()) set_config_key(cfg, "embeddings", embeddings);
        if (!dsm.empty()) set_config_key(cfg, "dsm", dsm);
        if (!output_dir.empty()) set_config_key(cfg, "output_dir", output_dir);
        if (!seed.empty()) set_config_key(cfg, "seed", seed);
        cfg.validate();
        return cfg;
    }
};

void add_config_flags(CLI::App* sub, ConfigFlags& f, bool with_variant = true) {
    sub->add_option("--config", f.config_path, "configuration file (key=value lines)")
        ->check(CLI::ExistingFile);
    sub->add_option("--set", f.sets, "override one config key (key=value), repeatable");
    if (with_variant)
        sub->add_option("--variant", f.variant, "model variant: unet, unetpp or ridge");
    sub->add_option("--embeddings", f.embeddings, "embedding raster path");
    sub->add_option("--dsm", f.dsm, "reference height raster path");
    sub->add_option("--output-dir", f.output_dir, "output directory");
    sub->add_option("--seed", f.seed, "master seed");
}

fs::path require_output_dir(const RunConfig& cfg) {
    if (cfg.output_dir.empty())
        throw ValueError("output_dir must be set (config key or --output-dir)");
    fs::create_directories(cfg.output_dir);
    return cfg.output_dir;
}

// ----------------------------------------------------------- subcommands

void run_fetch(const std::string& manifest_path, const std::string& cache_dir) {
    const fs::path manifest_file(manifest_path);
    const fs::path cache =
        cache_dir.empty() ? manifest_file.parent_path() / "cache" : fs::path(cache_dir);
    const FetchManifest manifest = parse_manifest(read_file_bytes(manifest_file), cache);
    const std::vector<fs::path> paths = fetch(manifest);
    for (const fs::path& p : paths) std::printf("%s\n", p.c_str());
    std::fprintf(stderr, "fetched %zu artifact(s) into %s\n", paths.size(),
                 resolve_cache_dir(manifest).c_str());
}

void run_convert(const std::string& input, const std::string& output) {
    const std::string bytes = read_file_bytes(input);
    if (bytes.size() < 2 || (bytes.compare(0, 2, "II") != 0 && bytes.compare(0, 2, "MM") != 0))
        throw FormatError(input + ": not a TIFF file");
    std::vector<std::string> warnings;
    const Grid g = decode_geotiff(bytes, &warnings);
    for (const std::string& w : warnings) std::fprintf(stderr, "warning: %s\n", w.c_str());
    write_internal(g, output);
    write_file_bytes(output + ".manifest.txt", argv_manifest_text("convert"));
    std::printf("%s: %dx%d, %d band(s), EPSG:%u\n", output.c_str(), g.width(), g.height(),
                g.bands(), g.crs());
}

struct SynthFlags {
    std::string output_dir;
    int width = 256;
    int height = 256;
    std::uint64_t seed = 1;
    std::string mapping = "linear";
    double noise_sd = 0.0;
    int smooth_radius = 2;
    double height_offset = 80.0;
    double height_scale = 1.0;
    double shift_offset = 0.0;
    double shift_fraction = 0.7;
    double nodata_fraction = 0.0;
};

void run_synth(const SynthFlags& f) {
    SynthSpec spec;
    spec.width = f.width;
    spec.height = f.height;
    spec.seed = f.seed;
    spec.smooth_radius = f.smooth_radius;
    if (f.mapping == "linear") spec.mapping = SynthSpec::Mapping::linear;
    else if (f.mapping == "nonlinear") spec.mapping = SynthSpec::Mapping::nonlinear;
    else throw ValueError("--mapping must be linear or nonlinear");
    spec.noise_sd = f.noise_sd;
    spec.height_offset = f.height_offset;
    spec.height_scale = f.height_scale;
    spec.shift_offset = f.shift_offset;
    spec.shift_fraction = f.shift_fraction;

    SynthScene scene = generate(spec);
    if (f.nodata_fraction > 0.0)
        scene.embeddings = inject_nodata(scene.embeddings, f.nodata_fraction, f.seed);
    const fs::path dir(f.output_dir);
    fs::create_directories(dir);
    write_internal(scene.embeddings, dir / "embeddings.egrid");
    write_internal(scene.heights, dir / "heights.egrid");
    write_file_bytes(dir / "mapping.txt", scene.descriptor.to_text());
    write_file_bytes(dir / "run_manifest.txt", argv_manifest_text("synth"));
    std::printf("wrote %dx%d synthetic scene (%s mapping) to %s\n", f.width, f.height,
                f.mapping.c_str(), f.output_dir.c_str());
}

void run_preprocess(const RunConfig& cfg) {
    if (cfg.embeddings.empty() || cfg.dsm.empty())
        throw ValueError("preprocess needs embeddings and dsm paths (config or flags)");
    const fs::path out_dir = require_output_dir(cfg) / "preprocessed";
    fs::create_directories(out_dir);

    const Grid raw = load_raster(cfg.embeddings);
    if (raw.dtype() != Dtype::int8)
        throw ValueError("preprocess expects raw int8 embeddings");
    auto [remapped, report] = remap_nodata(raw);
    const Grid normalized = normalize(remapped);

    const Grid dsm = to_float32(load_raster(cfg.dsm));
    const Grid resampled = resample_nearest(dsm, normalized.geo(), normalized.width(),
                                            normalized.height(), normalized.crs());
    const PairedGrid pair = stack_pairs(normalized, resampled);

    const int boundary =
        static_cast<int>(std::floor(cfg.aoi_train_fraction * normalized.width()));
    const auto [train_pair, test_pair] = split_aoi(pair, boundary);
    write_pair(train_pair, out_dir, "train");
    write_pair(test_pair, out_dir, "test");
    write_file_bytes(out_dir / "preprocess_report.txt", report.to_text());
    write_run_manifest(out_dir / "run_manifest.txt", "preprocess", cfg);
    std::printf("train AOI: %dx%d (%zu valid px), test AOI: %dx%d (%zu valid px)\n",
                train_pair.inputs.width(), train_pair.inputs.height(), train_pair.valid_count(),
                test_pair.inputs.width(), test_pair.inputs.height(), test_pair.valid_count());
}

void run_train(const RunConfig& cfg, bool resume) {
    const fs::path out_dir = require_output_dir(cfg);
    const fs::path data_dir = out_dir / "preprocessed";
    if (!fs::exists(data_dir / "train_inputs.egrid"))
        throw ValueError("no preprocessed data under " + data_dir.string() +
                         " (run preprocess first)");
    const PairedGrid pair = load_pair(data_dir, "train");

    if (cfg.variant == ModelVariant::ridge) {
        const RidgeModel model = fit_ridge(pair, cfg.ridge_options());
        write_file_bytes(out_dir / "ridge.txt", ridge_to_text(model));
        write_run_manifest(out_dir / "run_manifest.txt", "train", cfg);
        std::printf("ridge model (lambda=%g) written to %s\n", model.lambda,
                    (out_dir / "ridge.txt").c_str());
        return;
    }

    const std::vector<Patch> patches = tile(pair, cfg.patch_size, cfg.patch_size);
    const SplitPlan plan = split(patches.size(), cfg.seed, cfg.val_fraction);
    const TrainConfig tc = cfg.train_config();
    std::printf("%zu patches (%zu train / %zu validation), variant %s\n", patches.size(),
                plan.train.size(), plan.validation.size(),
                std::string(to_string(cfg.variant)).c_str());

    TrainResult result;
    std::vector<EpochLog> full_log;
    if (resume) {
        const CheckpointData<float> last = load_checkpoint<float>(out_dir / "last.eckp");
        std::optional<CheckpointData<float>> best;
        if (fs::exists(out_dir / "best.eckp"))
            best = load_checkpoint<float>(out_dir / "best.eckp");
        if (fs::exists(out_dir / "epoch_log.csv"))
            full_log = parse_epoch_log_csv(read_file_bytes(out_dir / "epoch_log.csv"));
        result = train_from(tc, patches, plan, last, std::move(best));
    } else {
        result = train(tc, patches, plan, cfg.network_spec());
    }
    full_log.insert(full_log.end(), result.log.begin(), result.log.end());

    write_checkpoint(out_dir / "best.eckp", result.best);
    write_checkpoint(out_dir / "last.eckp", result.last);
    write_file_bytes(out_dir / "epoch_log.csv", epoch_log_csv(full_log));
    write_run_manifest(out_dir / "run_manifest.txt", "train", cfg);
    std::printf("trained %u epoch(s); best validation MSE %.6g at epoch %u\n",
                result.last.progress.epochs_completed, result.last.progress.best_val,
                result.last.progress.best_epoch);
}

void run_infer(const RunConfig& cfg, const std::string& model_path,
               const std::string& input_path, const std::string& output_path) {
    const fs::path out_dir = require_output_dir(cfg);
    const fs::path model =
        !model_path.empty()
            ? fs::path(model_path)
            : out_dir / (cfg.variant == ModelVariant::ridge ? "ridge.txt" : "best.eckp");
    const std::string input = !input_path.empty() ? input_path : cfg.embeddings;
    if (input.empty()) throw ValueError("infer needs an embeddings raster (config or flag)");
    const fs::path output =
        !output_path.empty() ? fs::path(output_path) : out_dir / "inferred.egrid";

    const Grid x = normalized_embeddings(load_raster(input));
    Grid inferred = [&] {
        if (cfg.variant == ModelVariant::ridge)
            return predict_ridge(ridge_from_text(read_file_bytes(model)), x);
        const CheckpointData<float> ck = load_checkpoint<float>(model);
        const Network<float> net = ck.restore_network();
        return infer_scene(net, x, cfg.patch_size, cfg.tile_margin);
    }();
    write_internal(inferred, output);
    write_file_bytes(output.string() + ".manifest.txt", argv_manifest_text("infer"));
    std::printf("inferred heights written to %s\n", output.c_str());
}

void run_evaluate(std::vector<std::string> labels, const std::vector<std::string>& preds,
                  const std::vector<std::string>& refs, const std::vector<std::string>& masks,
                  const std::string& output_csv) {
    if (preds.empty()) throw ValueError("evaluate needs at least one --pred/--ref pair");
    if (preds.size() != refs.size())
        throw ValueError("evaluate: --pred and --ref counts differ");
    if (!masks.empty() && masks.size() != preds.size())
        throw ValueError("evaluate: --mask count must match --pred");
    for (std::size_t i = labels.size(); i < preds.size(); ++i)
        labels.push_back(fs::path(preds[i]).stem().string());  // default label: file stem
    if (labels.size() != preds.size())
        throw ValueError("evaluate: more --label values than --pred values");

    std::vector<EvalResult> results;
    for (std::size_t i = 0; i < preds.size(); ++i) {
        const Grid pred = load_raster(preds[i]);
        const Grid ref = load_raster(refs[i]);
        std::vector<std::uint8_t> mask;
        if (!masks.empty()) mask = grid_to_mask(load_raster(masks[i]));
        const std::vector<double> diffs = delta(pred, ref, mask);
        std::vector<double> pred_v, ref_v;
        gather_pairs(pred, ref, mask, pred_v, ref_v);
        results.push_back(EvalResult{labels[i], corr_stats(pred_v, ref_v), diff_stats(diffs)});
    }
    std::fputs(metrics_report_text(results).c_str(), stdout);
    if (!output_csv.empty()) {
        write_file_bytes(output_csv, metrics_report_csv(results));
        write_file_bytes(output_csv + ".manifest.txt", argv_manifest_text("evaluate"));
    }
}

struct ReportFlags {
    std::string output_dir;
    std::string log_path;
    std::string pred;
    std::string ref;
    std::string mask;
    std::vector<std::string> heights;
    std::vector<std::string> height_labels;
    double bin_width = 10.0;
};

void run_report(const ReportFlags& f) {
    if (f.output_dir.empty()) throw ValueError("report needs --output-dir");
    if (f.log_path.empty() && f.pred.empty() && f.heights.empty())
        throw ValueError("report: nothing to do (pass --log, --pred/--ref or --heights)");
    if (f.pred.empty() != f.ref.empty())
        throw ValueError("report: --pred and --ref must be given together");
    const fs::path dir(f.output_dir);
    fs::create_directories(dir);

    if (!f.log_path.empty()) {
        const std::vector<EpochLog> log = parse_epoch_log_csv(read_file_bytes(f.log_path));
        write_file_bytes(dir / "loss_curves.svg", loss_curve_svg(log));
        std::printf("wrote %s\n", (dir / "loss_curves.svg").c_str());
    }
    if (!f.pred.empty()) {
        const Grid pred = load_raster(f.pred);
        const Grid ref = load_raster(f.ref);
        std::vector<std::uint8_t> mask;
        if (!f.mask.empty()) mask = grid_to_mask(load_raster(f.mask));
        std::vector<double> pred_v, ref_v;
        gather_pairs(pred, ref, mask, pred_v, ref_v);
        const CorrStats cs = corr_stats(pred_v, ref_v);
        write_file_bytes(dir / "scatter.svg", scatter_svg(ref_v, pred_v, cs));
        write_file_bytes(dir / "scatter.csv", pairs_csv(ref_v, pred_v));
        std::printf("wrote %s (+ scatter.csv)\n", (dir / "scatter.svg").c_str());
    }
    if (!f.heights.empty()) {
        std::optional<Histogram> hist;
        for (std::size_t i = 0; i < f.heights.size(); ++i) {
            const Grid g = load_raster(f.heights[i]);
            std::vector<double> values;
            for (int y = 0; y < g.height(); ++y)
                for (int x = 0; x < g.width(); ++x) {
                    const double v = g.at(0, y, x);
                    if (!g.is_nodata(v)) values.push_back(v);
                }
            const std::string label = i < f.height_labels.size()
                                          ? f.height_labels[i]
                                          : fs::path(f.heights[i]).stem().string();
            if (!hist) hist = histogram(values, f.bin_width, label);
            else add_series(*hist, values, label);
        }
        write_file_bytes(dir / "histogram.svg", histogram_svg(*hist));
        write_file_bytes(dir / "histogram.csv", histogram_csv(*hist));
        std::printf("wrote %s (+ histogram.csv)\n", (dir / "histogram.svg").c_str());
    }
    write_file_bytes(dir / "run_manifest.txt", argv_manifest_text("report"));
}

void run_gradcheck(std::uint64_t seed, double tol) {
    std::printf("# gradient audit, seed %llu, tolerance %g\n",
                static_cast<unsigned long long>(seed), tol);
    std::printf("# library %s\n", std::string(kLibraryVersion).c_str());
    const std::vector<SuiteCase> cases = run_gradient_suite(seed);
    std::size_t failed = 0;
    for (const SuiteCase& c : cases) {
        const bool ok = c.result.pass(tol);
        failed += ok ? 0 : 1;
        std::printf("%s  max_rel_err=%.3e  %s\n", ok ? "PASS" : "FAIL",
                    c.result.max_rel_error, c.name.c_str());
    }
    std::printf("%zu/%zu cases passed\n", cases.size() - failed, cases.size());
    if (failed > 0)
        throw IoError("gradient audit failed: " + std::to_string(failed) + " of " +
                      std::to_string(cases.size()) + " cases above tolerance");
}

}  // namespace

int main(int argc, char** argv) {
    for (int i = 1; i < argc; ++i) {
        if (i > 1) g_argv_line += ' ';
        g_argv_line += argv[i];
    }

    CLI::App app{"embedding-to-surface-height regression pipeline"};
    app.require_subcommand(1);

    // fetch
    auto* fetch_cmd = app.add_subcommand("fetch", "download manifest artifacts into the cache");
    std::string fetch_manifest, fetch_cache;
    fetch_cmd->add_option("--manifest", fetch_manifest, "fetch manifest file")
        ->required()
        ->check(CLI::ExistingFile);
    fetch_cmd->add_option("--cache", fetch_cache,
                          "cache directory (default: <manifest dir>/cache; the "
                          "EMBEDHEIGHT_CACHE environment variable overrides both)");
    fetch_cmd->callback([&] { run_fetch(fetch_manifest, fetch_cache); });

    // convert
    auto* convert_cmd = app.add_subcommand("convert", "convert a GeoTIFF to an EGRID raster");
    std::string convert_in, convert_out;
    convert_cmd->add_option("--input", convert_in, "GeoTIFF file")
        ->required()
        ->check(CLI::ExistingFile);
    convert_cmd->add_option("--output", convert_out, "EGRID output path")->required();
    convert_cmd->callback([&] { run_convert(convert_in, convert_out); });

    // synth
    auto* synth_cmd = app.add_subcommand("synth", "generate a synthetic embedding/height scene");
    SynthFlags synth;
    synth_cmd->add_option("--output-dir", synth.output_dir, "scene output directory")
        ->required();
    synth_cmd->add_option("--width", synth.width, "scene width in pixels");
    synth_cmd->add_option("--height", synth.height, "scene height in pixels");
    synth_cmd->add_option("--seed", synth.seed, "generator seed");
    synth_cmd->add_option("--mapping", synth.mapping, "embedding->height mapping: linear|nonlinear");
    synth_cmd->add_option("--noise-sd", synth.noise_sd, "additive height noise sd (m)");
    synth_cmd->add_option("--smooth-radius", synth.smooth_radius, "embedding smoothing radius");
    synth_cmd->add_option("--height-offset", synth.height_offset, "mean scene height (m)");
    synth_cmd->add_option("--height-scale", synth.height_scale, "height amplitude scale");
    synth_cmd->add_option("--shift-offset", synth.shift_offset,
                          "distribution-shift offset east of the AOI boundary (m)");
    synth_cmd->add_option("--shift-fraction", synth.shift_fraction,
                          "column fraction where the shift starts");
    synth_cmd->add_option("--nodata-fraction", synth.nodata_fraction,
                          "fraction of pixels replaced by the nodata sentinel");
    synth_cmd->callback([&] { run_synth(synth); });

    // preprocess
    auto* pre_cmd = app.add_subcommand(
        "preprocess", "remap, normalize, resample, stack and split into train/test AOIs");
    ConfigFlags pre_flags;
    add_config_flags(pre_cmd, pre_flags, /*with_variant=*/false);
    pre_cmd->callback([&] { run_preprocess(pre_flags.build()); });

    // train
    auto* train_cmd = app.add_subcommand("train", "train the chosen variant on the train AOI");
    ConfigFlags train_flags;
    bool train_resume = false;
    add_config_flags(train_cmd, train_flags);
    train_cmd->add_flag("--resume", train_resume, "continue from <output_dir>/last.eckp");
    train_cmd->callback([&] { run_train(train_flags.build(), train_resume); });

    // infer
    auto* infer_cmd = app.add_subcommand("infer", "predict heights for a whole scene");
    ConfigFlags infer_flags;
    std::string infer_model, infer_input, infer_output;
    add_config_flags(infer_cmd, infer_flags);
    infer_cmd->add_option("--model", infer_model,
                          "checkpoint (.eckp) or ridge model (default: from output_dir)");
    infer_cmd->add_option("--input", infer_input, "embeddings raster (default: config path)");
    infer_cmd->add_option("--output", infer_output,
                          "output raster (default: <output_dir>/inferred.egrid)");
    infer_cmd->callback(
        [&] { run_infer(infer_flags.build(), infer_model, infer_input, infer_output); });

    // evaluate
    auto* eval_cmd =
        app.add_subcommand("evaluate", "metrics table for inferred vs reference rasters");
    std::vector<std::string> eval_labels, eval_preds, eval_refs, eval_masks;
    std::string eval_csv;
    eval_cmd->add_option("--label", eval_labels, "series label (default: pred file stem)");
    eval_cmd->add_option("--pred", eval_preds, "inferred raster, repeatable")->required();
    eval_cmd->add_option("--ref", eval_refs, "reference raster, repeatable")->required();
    eval_cmd->add_option("--mask", eval_masks, "validity mask raster, repeatable");
    eval_cmd->add_option("--output", eval_csv, "write the table as CSV to this path");
    eval_cmd->callback(
        [&] { run_evaluate(eval_labels, eval_preds, eval_refs, eval_masks, eval_csv); });

    // report
    auto* report_cmd = app.add_subcommand("report", "render SVG/CSV report artifacts");
    ReportFlags report;
    report_cmd->add_option("--output-dir", report.output_dir, "artifact directory")->required();
    report_cmd->add_option("--log", report.log_path, "epoch_log.csv for the loss curves")
        ->check(CLI::ExistingFile);
    report_cmd->add_option("--pred", report.pred, "inferred raster for the scatter");
    report_cmd->add_option("--ref", report.ref, "reference raster for the scatter");
    report_cmd->add_option("--mask", report.mask, "validity mask for the scatter");
    report_cmd->add_option("--heights", report.heights, "height raster(s) for the histogram");
    report_cmd->add_option("--heights-label", report.height_labels,
                           "histogram series label(s)");
    report_cmd->add_option("--bin-width", report.bin_width, "histogram bin width (m)");
    report_cmd->callback([&] { run_report(report); });

    // gradcheck
    auto* grad_cmd =
        app.add_subcommand("gradcheck", "finite-difference audit of every autodiff op");
    std::uint64_t grad_seed = 1;
    double grad_tol = 1e-5;
    grad_cmd->add_option("--seed", grad_seed, "suite seed");
    grad_cmd->add_option("--tolerance", grad_tol, "max relative error allowed");
    grad_cmd->callback([&] { run_gradcheck(grad_seed, grad_tol); });

    try {
        app.parse(argc, argv);
        return 0;
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        (void)app.exit(e);
        return 1;
    } catch (const ValueError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    } catch (const FormatError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    }
}
