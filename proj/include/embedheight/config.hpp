#pragma once

// Run configuration: a flat key=value file covering model choice, paths,
// training hyperparameters and seeds. One file describes one experiment;
// command-line flags may override individual keys on top of it. Unknown
// keys are rejected so a typo cannot silently fall back to a default.

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "embedheight/digest.hpp"
#include "embedheight/errors.hpp"
#include "embedheight/nets.hpp"
#include "embedheight/ridge.hpp"
#include "embedheight/trainer.hpp"
#include "embedheight/version.hpp"

namespace embedheight {

enum class ModelVariant : std::uint8_t { unet, unetpp, ridge };

inline std::string_view to_string(ModelVariant v) {
    switch (v) {
        case ModelVariant::unet: return "unet";
        case ModelVariant::unetpp: return "unetpp";
        case ModelVariant::ridge: return "ridge";
    }
    throw ValueError("invalid model variant");
}

inline ModelVariant model_variant_from(std::string_view s) {
    if (s == "unet") return ModelVariant::unet;
    if (s == "unetpp") return ModelVariant::unetpp;
    if (s == "ridge") return ModelVariant::ridge;
    throw ValueError("variant must be one of unet, unetpp, ridge (got '" + std::string(s) +
                     "')");
}

/// One experiment's complete configuration. Defaults reproduce the
/// published training setup: 64->1 channels, 512x512 patches, batch 16,
/// 80/20 train/validation split, AdamW at 1e-3 with weight decay 1e-4,
/// plateau halving after 20 stale epochs, early stop after 50, at most
/// 500 epochs, and shuffled training batches.
struct RunConfig {
    // paths
    std::string embeddings;  // input raster (EGRID or GeoTIFF)
    std::string dsm;         // reference height raster
    std::string output_dir;  // artifacts land here

    // model
    ModelVariant variant = ModelVariant::unetpp;
    int depth = 4;
    int base_channels = 32;
    int input_channels = 64;
    int output_channels = 1;

    // data
    int patch_size = 512;
    double val_fraction = 0.2;        // train/validation split of the training AOI
    double aoi_train_fraction = 0.7;  // west/east column split into train/test AOIs
    int tile_margin = 16;             // overlap trimmed from stitched inference tiles

    // optimization
    int batch_size = 16;
    double learning_rate = 1e-3;
    double weight_decay = 1e-4;
    int max_epochs = 500;
    double plateau_factor = 0.5;
    int plateau_patience = 20;
    int early_stop_patience = 50;

    // ridge baseline
    double ridge_lambda = 1.0;
    std::uint64_t ridge_max_pixels = 2'000'000;

    std::uint64_t seed = 0;

    TrainConfig train_config() const {
        TrainConfig t;
        t.lr = learning_rate;
        t.weight_decay = weight_decay;
        t.batch_size = static_cast<std::size_t>(batch_size);
        t.patch_size = patch_size;
        t.max_epochs = static_cast<std::uint32_t>(max_epochs);
        t.plateau_factor = plateau_factor;
        t.plateau_patience = static_cast<std::uint32_t>(plateau_patience);
        t.early_stop_patience = static_cast<std::uint32_t>(early_stop_patience);
        t.shuffle_seed = seed;
        return t;
    }

    NetworkSpec network_spec() const {
        if (variant == ModelVariant::ridge)
            throw ValueError("ridge variant has no network spec");
        NetworkSpec s;
        s.variant = variant == ModelVariant::unet ? NetVariant::unet : NetVariant::unetpp;
        s.depth = depth;
        s.base_channels = base_channels;
        s.in_channels = input_channels;
        s.out_channels = output_channels;
        s.seed = seed;
        return s;
    }

    RidgeFitOptions ridge_options() const {
        RidgeFitOptions o;
        o.lambda = ridge_lambda;
        o.max_pixels = ridge_max_pixels;
        o.seed = seed;
        return o;
    }

    void validate() const {
        train_config().validate();
        if (variant != ModelVariant::ridge) network_spec().validate();
        if (!(val_fraction > 0.0 && val_fraction < 1.0))
            throw ValueError("config: val_fraction must be in (0, 1)");
        if (!(aoi_train_fraction > 0.0 && aoi_train_fraction < 1.0))
            throw ValueError("config: aoi_train_fraction must be in (0, 1)");
        if (tile_margin < 0) throw ValueError("config: tile_margin must be >= 0");
        if (!(ridge_lambda >= 0.0)) throw ValueError("config: ridge_lambda must be >= 0");
        if (ridge_max_pixels < 1) throw ValueError("config: ridge_max_pixels must be >= 1");
    }

    bool operator==(const RunConfig&) const = default;
};

namespace detail {

inline std::string_view trim(std::string_view s) {
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
    return s;
}

inline int config_int(std::string_view key, std::string_view value) {
    int out = 0;
    const auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), out);
    if (ec != std::errc{} || ptr != value.data() + value.size())
        throw FormatError("config: key '" + std::string(key) + "': expected an integer, got '" +
                          std::string(value) + "'");
    return out;
}

inline std::uint64_t config_u64(std::string_view key, std::string_view value) {
    std::uint64_t out = 0;
    const auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), out);
    if (ec != std::errc{} || ptr != value.data() + value.size())
        throw FormatError("config: key '" + std::string(key) +
                          "': expected a non-negative integer, got '" + std::string(value) + "'");
    return out;
}

inline double config_double(std::string_view key, std::string_view value) {
    const std::string buf(value);
    char* end = nullptr;
    const double out = std::strtod(buf.c_str(), &end);
    if (buf.empty() || end != buf.c_str() + buf.size())
        throw FormatError("config: key '" + std::string(key) + "': expected a number, got '" +
                          std::string(value) + "'");
    return out;
}

inline std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

}  // namespace detail

/// Assign one key. Shared by the file parser and by command-line
/// `--set key=value` overrides; throws FormatError on unknown keys.
inline void set_config_key(RunConfig& c, std::string_view key, std::string_view value) {
    using detail::config_double;
    using detail::config_int;
    using detail::config_u64;
    if (key == "embeddings") c.embeddings = value;
    else if (key == "dsm") c.dsm = value;
    else if (key == "output_dir") c.output_dir = value;
    else if (key == "variant") c.variant = model_variant_from(value);
    else if (key == "depth") c.depth = config_int(key, value);
    else if (key == "base_channels") c.base_channels = config_int(key, value);
    else if (key == "input_channels") c.input_channels = config_int(key, value);
    else if (key == "output_channels") c.output_channels = config_int(key, value);
    else if (key == "patch_size") c.patch_size = config_int(key, value);
    else if (key == "val_fraction") c.val_fraction = config_double(key, value);
    else if (key == "aoi_train_fraction") c.aoi_train_fraction = config_double(key, value);
    else if (key == "tile_margin") c.tile_margin = config_int(key, value);
    else if (key == "batch_size") c.batch_size = config_int(key, value);
    else if (key == "learning_rate") c.learning_rate = config_double(key, value);
    else if (key == "weight_decay") c.weight_decay = config_double(key, value);
    else if (key == "max_epochs") c.max_epochs = config_int(key, value);
    else if (key == "plateau_factor") c.plateau_factor = config_double(key, value);
    else if (key == "plateau_patience") c.plateau_patience = config_int(key, value);
    else if (key == "early_stop_patience") c.early_stop_patience = config_int(key, value);
    else if (key == "ridge_lambda") c.ridge_lambda = config_double(key, value);
    else if (key == "ridge_max_pixels") c.ridge_max_pixels = config_u64(key, value);
    else if (key == "seed") c.seed = config_u64(key, value);
    else throw FormatError("config: unknown key '" + std::string(key) + "'");
}

/// Parse a config file: `key=value` lines, '#' starts a comment, blank
/// lines are skipped. Every key may appear at most once; keys not present
/// keep their defaults.
inline RunConfig parse_run_config(std::string_view text) {
    RunConfig c;
    std::vector<std::string> seen;
    std::size_t pos = 0;
    std::size_t line_no = 0;
    while (pos <= text.size()) {
        ++line_no;
        const std::size_t eol = std::min(text.find('\n', pos), text.size());
        std::string_view line = text.substr(pos, eol - pos);
        pos = eol + 1;
        if (const std::size_t hash = line.find('#'); hash != std::string_view::npos)
            line = line.substr(0, hash);
        line = detail::trim(line);
        if (line.empty()) continue;
        const std::size_t eq = line.find('=');
        if (eq == std::string_view::npos)
            throw FormatError("config: line " + std::to_string(line_no) +
                              ": expected key=value");
        const std::string key(detail::trim(line.substr(0, eq)));
        const std::string_view value = detail::trim(line.substr(eq + 1));
        if (std::find(seen.begin(), seen.end(), key) != seen.end())
            throw FormatError("config: line " + std::to_string(line_no) + ": duplicate key '" +
                              key + "'");
        try {
            set_config_key(c, key, value);
        } catch (const std::exception& e) {
            throw FormatError("config: line " + std::to_string(line_no) + ": " + e.what());
        }
        seen.push_back(key);
    }
    return c;
}

inline RunConfig load_run_config(const std::filesystem::path& path) {
    return parse_run_config(read_file_bytes(path));
}

/// Canonical serialization: every key in a fixed order, doubles rendered
/// with %.17g so a round-trip is value-exact. Equal configs serialize to
/// identical bytes, which makes the sha256 below a usable identity.
inline std::string config_text(const RunConfig& c) {
    using detail::format_double;
    std::string out;
    const auto put = [&out](std::string_view key, const std::string& value) {
        out += key;
        out += '=';
        out += value;
        out += '\n';
    };
    put("embeddings", c.embeddings);
    put("dsm", c.dsm);
    put("output_dir", c.output_dir);
    put("variant", std::string(to_string(c.variant)));
    put("depth", std::to_string(c.depth));
    put("base_channels", std::to_string(c.base_channels));
    put("input_channels", std::to_string(c.input_channels));
    put("output_channels", std::to_string(c.output_channels));
    put("patch_size", std::to_string(c.patch_size));
    put("val_fraction", format_double(c.val_fraction));
    put("aoi_train_fraction", format_double(c.aoi_train_fraction));
    put("tile_margin", std::to_string(c.tile_margin));
    put("batch_size", std::to_string(c.batch_size));
    put("learning_rate", format_double(c.learning_rate));
    put("weight_decay", format_double(c.weight_decay));
    put("max_epochs", std::to_string(c.max_epochs));
    put("plateau_factor", format_double(c.plateau_factor));
    put("plateau_patience", std::to_string(c.plateau_patience));
    put("early_stop_patience", std::to_string(c.early_stop_patience));
    put("ridge_lambda", format_double(c.ridge_lambda));
    put("ridge_max_pixels", std::to_string(c.ridge_max_pixels));
    put("seed", std::to_string(c.seed));
    return out;
}

inline std::string config_sha256(const RunConfig& c) { return sha256_hex(config_text(c)); }

/// A run manifest is the canonical config plus provenance comments. Since
/// the comments are ignored by the parser, the manifest file itself is a
/// valid config: re-running the command with it reproduces the run.
inline std::string run_manifest_text(std::string_view command, const RunConfig& c) {
    std::string out = "# run manifest\n";
    out += "# command: " + std::string(command) + "\n";
    out += "# config_sha256: " + config_sha256(c) + "\n";
    out += "# library: " + std::string(kLibraryVersion) + "\n";
    for (const auto& [name, version] : kModuleVersions)
        out += "# module " + std::string(name) + ": " + std::to_string(version) + "\n";
    out += config_text(c);
    return out;
}

inline void write_run_manifest(const std::filesystem::path& path, std::string_view command,
                               const RunConfig& c) {
    write_file_bytes(path, run_manifest_text(command, c));
}

}  // namespace embedheight
