#pragma once

// Training loop: per-epoch shuffled masked-MSE batches through AdamW,
// pixel-pooled validation, reduce-on-plateau learning rate, early stopping,
// best-checkpoint selection and an epoch-by-epoch CSV log. Also tiled
// full-scene inference with overlap and center-crop stitching.

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "embedheight/checkpoint.hpp"
#include "embedheight/errors.hpp"
#include "embedheight/grid.hpp"
#include "embedheight/indexing.hpp"
#include "embedheight/nets.hpp"
#include "embedheight/patchset.hpp"
#include "embedheight/rng.hpp"
#include "embedheight/tensor.hpp"

namespace embedheight {

/// Raised when a loss turns non-finite; carries the epoch/batch diagnostic.
struct DivergenceError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct TrainConfig {
    double lr = 1e-3;
    double weight_decay = 1e-4;
    std::size_t batch_size = 16;
    int patch_size = 512;                  // used when tiling scenes into patches
    std::uint32_t max_epochs = 500;
    double plateau_factor = 0.5;           // lr multiplier on plateau
    std::uint32_t plateau_patience = 20;   // epochs without improvement before halving
    std::uint32_t early_stop_patience = 50;
    double improvement_rtol = 1e-4;        // improved iff v < best * (1 - rtol)
    std::uint64_t shuffle_seed = 0;        // per-epoch orders derive from this

    void validate() const {
        if (!(lr > 0)) throw ValueError("train config: lr must be positive");
        if (weight_decay < 0) throw ValueError("train config: weight decay must be >= 0");
        if (batch_size < 1) throw ValueError("train config: batch size must be >= 1");
        if (max_epochs < 1) throw ValueError("train config: max epochs must be >= 1");
        if (!(plateau_factor > 0 && plateau_factor < 1))
            throw ValueError("train config: plateau factor must lie in (0,1)");
        if (plateau_patience < 1 || early_stop_patience < 1)
            throw ValueError("train config: patiences must be >= 1");
        if (!(improvement_rtol >= 0 && improvement_rtol < 1))
            throw ValueError("train config: improvement tolerance must lie in [0,1)");
    }
};

/// One row of the training log. `lr` is the learning rate in effect after
/// this epoch's scheduler action, so a plateau halving shows up on the row
/// of the epoch that triggered it. Epoch 0 is the pre-training baseline.
struct EpochLog {
    std::uint32_t epoch = 0;
    double train_loss = 0.0;  // pixel-pooled masked MSE over the epoch's batches
    double val_loss = 0.0;    // pixel-pooled masked MSE over the validation set
    double lr = 0.0;
    bool is_best = false;
};

inline std::string epoch_log_csv(std::span<const EpochLog> log) {
    std::string out = "epoch,train_loss,val_loss,lr,is_best\n";
    char buf[128];
    for (const EpochLog& row : log) {
        std::snprintf(buf, sizeof buf, "%u,%.17g,%.17g,%.17g,%d\n", row.epoch, row.train_loss,
                      row.val_loss, row.lr, row.is_best ? 1 : 0);
        out += buf;
    }
    return out;
}

struct TrainResult {
    CheckpointData<float> best;   // parameters at the lowest validation loss
    CheckpointData<float> last;   // parameters at the final epoch (resume point)
    std::vector<EpochLog> log;    // resumed runs log only their own epochs
};

namespace detail {

/// Pixel-pooled squared-error sums for one forward pass, in float64.
struct LossSums {
    double sum_sq = 0.0;
    std::size_t count = 0;
    double mean() const { return count == 0 ? 0.0 : sum_sq / static_cast<double>(count); }
};

inline void accumulate_masked(LossSums& acc, std::span<const float> pred,
                              std::span<const float> target,
                              std::span<const std::uint8_t> mask) {
    for (std::size_t i = 0; i < pred.size(); ++i) {
        if (!mask[i]) continue;
        const double d = static_cast<double>(pred[i]) - static_cast<double>(target[i]);
        acc.sum_sq += d * d;
        acc.count += 1;
    }
}

/// Forward the split in its stored order (no shuffle) and return the
/// pixel-pooled masked MSE. No backward pass is run.
inline double evaluate_split(const Network<float>& net, std::span<const Patch> patches,
                             std::span<const std::size_t> order, std::size_t batch_size) {
    LossSums acc;
    for (std::size_t i = 0; i < order.size(); i += batch_size) {
        const std::size_t end = std::min(order.size(), i + batch_size);
        const Batch b = assemble_batch(patches, order.subspan(i, end - i));
        if (b.valid_count() == 0) continue;
        Tape<float> tape;
        const Tensor<float> x = tape.input(b.shape, b.input);
        const auto bound = net.forward(tape, x);
        accumulate_masked(acc, tape.value(bound.output), b.target, b.mask);
    }
    return acc.mean();
}

inline void require_finite(double loss, const char* what, std::uint32_t epoch) {
    if (!std::isfinite(loss))
        throw DivergenceError(std::string("training diverged: non-finite ") + what +
                              " at epoch " + std::to_string(epoch));
}

/// Shared epoch loop used by fresh and resumed runs. `start_epoch` is the
/// first epoch to execute; all counters arrive in `progress`.
inline TrainResult run_epochs(const TrainConfig& cfg, std::span<const Patch> patches,
                              const SplitPlan& plan, Network<float>& net, AdamW<float>& opt,
                              Rng& session_rng, TrainProgress progress,
                              CheckpointData<float> best_snapshot, std::uint32_t start_epoch,
                              std::vector<EpochLog> log) {
    for (std::uint32_t epoch = start_epoch; epoch <= cfg.max_epochs; ++epoch) {
        LossSums train_acc;
        const std::uint64_t epoch_seed = mix_seed(cfg.shuffle_seed, epoch);
        for (const auto& batch_idx : batches(plan, Split::train, cfg.batch_size, epoch_seed)) {
            const Batch b = assemble_batch(patches, batch_idx);
            if (b.valid_count() == 0) continue;  // nothing to fit in this batch
            Tape<float> tape;
            const Tensor<float> x = tape.input(b.shape, b.input);
            const auto bound = net.forward(tape, x);
            accumulate_masked(train_acc, tape.value(bound.output), b.target, b.mask);
            const Tensor<float> loss = mse_loss(bound.output, b.target, b.mask);
            require_finite(static_cast<double>(tape.value(loss)[0]), "batch loss", epoch);
            tape.backward(loss);
            opt.begin_step();
            auto& params = net.parameters();
            for (std::size_t i = 0; i < params.size(); ++i)
                opt.update(i, std::span<float>(params[i].data),
                           tape.grad(bound.param_tensors[i]));
        }
        const double train_loss = train_acc.mean();
        const double val_loss = evaluate_split(net, patches, plan.validation, cfg.batch_size);
        require_finite(train_loss, "train loss", epoch);
        require_finite(val_loss, "validation loss", epoch);

        const bool improved = val_loss < progress.best_val * (1.0 - cfg.improvement_rtol);
        progress.epochs_completed = epoch;
        if (improved) {
            progress.best_val = val_loss;
            progress.best_epoch = epoch;
            progress.plateau_bad = 0;
            progress.stop_bad = 0;
            best_snapshot = snapshot_checkpoint(net, opt, session_rng, progress);
        } else {
            progress.plateau_bad += 1;
            progress.stop_bad += 1;
            if (progress.plateau_bad > cfg.plateau_patience) {
                opt.set_learning_rate(opt.learning_rate() * cfg.plateau_factor);
                progress.plateau_bad = 0;
            }
        }
        log.push_back({epoch, train_loss, val_loss, opt.learning_rate(), improved});
        if (progress.stop_bad >= cfg.early_stop_patience) break;
    }
    TrainResult result;
    result.best = std::move(best_snapshot);
    result.last = snapshot_checkpoint(net, opt, session_rng, progress);
    result.log = std::move(log);
    return result;
}

inline void check_training_inputs(const TrainConfig& cfg, std::span<const Patch> patches,
                                  const SplitPlan& plan, const NetworkSpec& spec) {
    cfg.validate();
    spec.validate();
    if (plan.train.empty() || plan.validation.empty())
        throw ValueError("train: both splits must be non-empty");
    if (patches.empty()) throw ValueError("train: no patches");
    const Patch& first = patches.front();
    const int bands = static_cast<int>(first.input.size() / first.target.size());
    if (bands != spec.in_channels)
        throw ValueError("train: patches carry " + std::to_string(bands) +
                         " bands but the network expects " + std::to_string(spec.in_channels));
    if (first.size % spec.spatial_divisor() != 0)
        throw ValueError("train: patch size must be divisible by " +
                         std::to_string(spec.spatial_divisor()));
    std::size_t val_pixels = 0;
    for (std::size_t idx : plan.validation) val_pixels += patches[idx].valid_count();
    if (val_pixels == 0) throw ValueError("train: validation split has no valid pixels");
}

}  // namespace detail

/// Train a fresh network. Epoch 0 is a no-update baseline evaluation that
/// seeds the best-model tracking, so "no improvement for N epochs" counts
/// from a well-defined starting point.
inline TrainResult train(const TrainConfig& cfg, std::span<const Patch> patches,
                         const SplitPlan& plan, const NetworkSpec& spec) {
    detail::check_training_inputs(cfg, patches, plan, spec);
    Network<float> net(spec);
    AdamW<float> opt(AdamWConfig{cfg.lr, 0.9, 0.999, 1e-8, cfg.weight_decay});
    for (const auto& p : net.parameters()) opt.register_buffer(p.data.size());
    // The trainer draws no random numbers itself (epoch shuffles use seeds
    // derived from shuffle_seed), but a serializable stream is carried so
    // checkpoints round-trip a complete session state.
    Rng session_rng(mix_seed(cfg.shuffle_seed, 0xE0C4));

    TrainProgress progress;
    const double val0 = detail::evaluate_split(net, patches, plan.validation, cfg.batch_size);
    const double train0 = detail::evaluate_split(net, patches, plan.train, cfg.batch_size);
    detail::require_finite(val0, "baseline validation loss", 0);
    progress.best_val = val0;
    progress.best_epoch = 0;
    CheckpointData<float> best = snapshot_checkpoint(net, opt, session_rng, progress);
    std::vector<EpochLog> log;
    log.push_back({0, train0, val0, opt.learning_rate(), true});
    return detail::run_epochs(cfg, patches, plan, net, opt, session_rng, progress,
                              std::move(best), 1, std::move(log));
}

/// Continue training from a saved state. `last` supplies the parameters,
/// optimizer moments and counters to resume from; pass the matching best
/// checkpoint as well so best-model tracking keeps its parameters when no
/// further improvement happens. The returned log covers only the new epochs.
inline TrainResult train_from(const TrainConfig& cfg, std::span<const Patch> patches,
                              const SplitPlan& plan, const CheckpointData<float>& last,
                              std::optional<CheckpointData<float>> best = std::nullopt) {
    detail::check_training_inputs(cfg, patches, plan, last.spec);
    Network<float> net = last.restore_network();
    AdamW<float> opt = last.restore_optimizer();
    Rng session_rng = last.restore_rng();
    return detail::run_epochs(cfg, patches, plan, net, opt, session_rng, last.progress,
                              best ? std::move(*best) : last,
                              last.progress.epochs_completed + 1, {});
}

namespace detail {

/// Tile origins along one axis: multiples of `stride` while a full patch
/// fits, then one final origin clamped so the last tile ends at the border.
/// Extents smaller than the patch get a single reflect-padded tile.
inline std::vector<int> infer_origins(int extent, int patch, int stride) {
    if (extent <= patch) return {0};
    std::vector<int> xs;
    int x0 = 0;
    while (x0 + patch < extent) {
        xs.push_back(x0);
        x0 += stride;
    }
    xs.push_back(extent - patch);
    return xs;
}

}  // namespace detail

/// Predict heights for a whole scene by running overlapping tiles through
/// the network and stitching center crops. Interior seams sit `margin`
/// pixels away from every tile border, so each output pixel is predicted
/// with real context on all sides (border tiles are flush with the scene
/// edge, where no real context exists). Output: 1-band float32 grid with
/// the input's geotransform and CRS.
inline Grid infer_scene(const Network<float>& net, const Grid& embeddings, int patch,
                        int margin = 16) {
    if (embeddings.dtype() != Dtype::float32)
        throw ValueError("infer: expects a normalized float32 grid");
    if (embeddings.bands() != net.spec().in_channels)
        throw ValueError("infer: grid has " + std::to_string(embeddings.bands()) +
                         " bands but the network expects " +
                         std::to_string(net.spec().in_channels));
    if (margin < 0) throw ValueError("infer: margin must be >= 0");
    if (2 * margin >= patch) throw ValueError("infer: patch must exceed twice the margin");
    if (patch % net.spec().spatial_divisor() != 0)
        throw ValueError("infer: patch size must be divisible by " +
                         std::to_string(net.spec().spatial_divisor()));
    const int w = embeddings.width(), h = embeddings.height();
    const int bands = embeddings.bands();
    const int stride = patch - 2 * margin;
    const std::span<const float> src = embeddings.values<float>();
    const std::size_t plane = static_cast<std::size_t>(w) * h;

    const std::vector<int> xs = detail::infer_origins(w, patch, stride);
    const std::vector<int> ys = detail::infer_origins(h, patch, stride);
    std::vector<float> out(plane, 0.0f);
    std::vector<float> window(static_cast<std::size_t>(bands) * patch * patch);
    for (std::size_t ty = 0; ty < ys.size(); ++ty) {
        const int y0 = ys[ty];
        const int cy0 = ty == 0 ? 0 : ys[ty - 1] + patch - margin;
        const int cy1 = ty + 1 == ys.size() ? h : y0 + patch - margin;
        for (std::size_t tx = 0; tx < xs.size(); ++tx) {
            const int x0 = xs[tx];
            const int cx0 = tx == 0 ? 0 : xs[tx - 1] + patch - margin;
            const int cx1 = tx + 1 == xs.size() ? w : x0 + patch - margin;
            for (int py = 0; py < patch; ++py) {
                const int sy = reflect_index(y0 + py, h);
                for (int px = 0; px < patch; ++px) {
                    const int sx = reflect_index(x0 + px, w);
                    const std::size_t s = static_cast<std::size_t>(sy) * w + sx;
                    for (int b = 0; b < bands; ++b)
                        window[(static_cast<std::size_t>(b) * patch + py) * patch + px] =
                            src[static_cast<std::size_t>(b) * plane + s];
                }
            }
            const std::vector<float> pred =
                net.predict(Shape{1, bands, patch, patch}, window);
            for (int gy = cy0; gy < cy1; ++gy)
                for (int gx = cx0; gx < cx1; ++gx)
                    out[static_cast<std::size_t>(gy) * w + gx] =
                        pred[static_cast<std::size_t>(gy - y0) * patch + (gx - x0)];
        }
    }
    return Grid(w, h, 1, embeddings.geo(), embeddings.crs(), std::move(out));
}

}  // namespace embedheight
