#pragma once

// Tiling of paired grids into fixed-size training patches, seeded 80/20
// splitting, and per-epoch batch sequencing.

#include <cmath>
#include <cstdint>
#include <span>
#include <utility>
#include <vector>

#include "embedheight/errors.hpp"
#include "embedheight/indexing.hpp"
#include "embedheight/preprocess.hpp"
#include "embedheight/rng.hpp"
#include "embedheight/tensor.hpp"

namespace embedheight {

/// One P x P training example cut from a paired grid. The input is stored
/// band-major (band, row, column) to match the network's NCHW layout; the
/// mask is false wherever the target was nodata or the pixel is padding.
struct Patch {
    int size = 0;
    int x0 = 0, y0 = 0;  // source offset of the top-left pixel
    std::vector<float> input;            // size*size*bands
    std::vector<float> target;           // size*size
    std::vector<std::uint8_t> mask;      // size*size

    std::size_t valid_count() const {
        std::size_t n = 0;
        for (std::uint8_t m : mask) n += m;
        return n;
    }
};

struct SplitPlan {
    std::vector<std::size_t> train;
    std::vector<std::size_t> validation;
    std::uint64_t seed = 0;
};

enum class Split { train, validation };

/// Patch origins in row-major order: multiples of `stride` strictly inside
/// the grid. Pure arithmetic, shared by tiling and its tests.
inline std::vector<std::pair<int, int>> tile_origins(int width, int height, int patch,
                                                     int stride) {
    if (patch < 8) throw ValueError("tile: patch size must be >= 8");
    if (stride < 1) throw ValueError("tile: stride must be >= 1");
    std::vector<std::pair<int, int>> origins;
    for (int y0 = 0; y0 < height; y0 += stride)
        for (int x0 = 0; x0 < width; x0 += stride) origins.emplace_back(x0, y0);
    return origins;
}

/// Cut a paired grid into P x P patches. Right/bottom remainders are filled
/// by reflection with mask=false on the padded pixels; with pad_remainders
/// false only fully in-bounds patches are produced.
inline std::vector<Patch> tile(const PairedGrid& pair, int patch, int stride,
                               bool pad_remainders = true) {
    const Grid& in = pair.inputs;
    const Grid& tg = pair.target;
    if (in.dtype() != Dtype::float32 || tg.dtype() != Dtype::float32)
        throw ValueError("tile: expects normalized float32 grids");
    const int w = in.width(), h = in.height(), bands = in.bands();
    std::vector<Patch> out;
    const std::span<const float> iv = in.values<float>();
    const std::span<const float> tv = tg.values<float>();
    for (const auto& [x0, y0] : tile_origins(w, h, patch, stride)) {
        if (!pad_remainders && (x0 + patch > w || y0 + patch > h)) continue;
        Patch p;
        p.size = patch;
        p.x0 = x0;
        p.y0 = y0;
        p.input.resize(static_cast<std::size_t>(bands) * patch * patch);
        p.target.resize(static_cast<std::size_t>(patch) * patch);
        p.mask.resize(static_cast<std::size_t>(patch) * patch);
        for (int py = 0; py < patch; ++py) {
            const int sy = reflect_index(y0 + py, h);
            const bool y_in = y0 + py < h;
            for (int px = 0; px < patch; ++px) {
                const int sx = reflect_index(x0 + px, w);
                const std::size_t src = static_cast<std::size_t>(sy) * w + sx;
                const std::size_t dst = static_cast<std::size_t>(py) * patch + px;
                for (int b = 0; b < bands; ++b)
                    p.input[(static_cast<std::size_t>(b) * patch + py) * patch + px] =
                        iv[static_cast<std::size_t>(b) * w * h + src];
                p.target[dst] = tv[src];
                p.mask[dst] = (y_in && x0 + px < w) ? pair.mask[src] : std::uint8_t{0};
            }
        }
        out.push_back(std::move(p));
    }
    if (out.empty()) throw ValueError("tile: patch size exceeds the grid and padding is disabled");
    return out;
}

/// Seeded random permutation; the last round(val_fraction*N) indices become
/// the validation set. The share is clamped so both splits keep at least
/// one patch (for N = 2 that means exactly one each).
inline SplitPlan split(std::size_t patch_count, std::uint64_t seed, double val_fraction = 0.2) {
    if (patch_count < 2) throw ValueError("split: need at least 2 patches");
    if (!(val_fraction > 0.0 && val_fraction < 1.0))
        throw ValueError("split: validation fraction must be in (0, 1)");
    std::vector<std::size_t> perm(patch_count);
    for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = i;
    Rng rng(mix_seed(seed, 11));
    rng.shuffle(perm);
    std::size_t n_val =
        static_cast<std::size_t>(std::llround(val_fraction * static_cast<double>(patch_count)));
    if (n_val == 0) n_val = 1;
    if (n_val >= patch_count) n_val = patch_count - 1;
    SplitPlan plan;
    plan.seed = seed;
    plan.train.assign(perm.begin(), perm.end() - static_cast<std::ptrdiff_t>(n_val));
    plan.validation.assign(perm.end() - static_cast<std::ptrdiff_t>(n_val), perm.end());
    return plan;
}

/// Index batches for one epoch. Training order is a fresh seeded shuffle per
/// epoch; validation order is fixed. The final short batch is retained.
inline std::vector<std::vector<std::size_t>> batches(const SplitPlan& plan, Split which,
                                                     std::size_t batch_size,
                                                     std::uint64_t epoch_seed) {
    if (batch_size < 1) throw ValueError("batches: batch size must be >= 1");
    std::vector<std::size_t> order =
        which == Split::train ? plan.train : plan.validation;
    if (order.empty()) throw ValueError("batches: split is empty");
    if (which == Split::train) {
        Rng rng(epoch_seed);
        rng.shuffle(order);
    }
    std::vector<std::vector<std::size_t>> out;
    for (std::size_t i = 0; i < order.size(); i += batch_size) {
        const std::size_t end = std::min(order.size(), i + batch_size);
        out.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(i),
                         order.begin() + static_cast<std::ptrdiff_t>(end));
    }
    return out;
}

/// Stack patches into one NCHW batch for the network.
struct Batch {
    Shape shape;                      // {n, bands, P, P}
    std::vector<float> input;
    std::vector<float> target;        // n*P*P
    std::vector<std::uint8_t> mask;   // n*P*P
    std::size_t valid_count() const {
        std::size_t n = 0;
        for (std::uint8_t m : mask) n += m;
        return n;
    }
};

inline Batch assemble_batch(std::span<const Patch> patches,
                            std::span<const std::size_t> indices) {
    if (indices.empty()) throw ValueError("assemble_batch: empty index list");
    const Patch& first = patches[indices[0]];
    const int p = first.size;
    const int bands = static_cast<int>(first.input.size() / first.target.size());
    Batch b;
    b.shape = Shape{static_cast<int>(indices.size()), bands, p, p};
    b.input.reserve(b.shape.count());
    b.target.reserve(indices.size() * first.target.size());
    b.mask.reserve(indices.size() * first.mask.size());
    for (std::size_t idx : indices) {
        const Patch& pt = patches[idx];
        if (pt.size != p) throw ValueError("assemble_batch: mixed patch sizes");
        b.input.insert(b.input.end(), pt.input.begin(), pt.input.end());
        b.target.insert(b.target.end(), pt.target.begin(), pt.target.end());
        b.mask.insert(b.mask.end(), pt.mask.begin(), pt.mask.end());
    }
    return b;
}

}  // namespace embedheight
