#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstring>
#include <sstream>
#include <vector>

#include "embedheight/indexing.hpp"
#include "embedheight/trainer.hpp"

using namespace embedheight;
using Catch::Matchers::ContainsSubstring;
using Catch::Matchers::MessageMatches;

namespace {

// A fully valid patch whose target is a fixed pixelwise linear map of the
// input bands; small networks can reduce this loss quickly.
Patch linear_patch(int size, int bands, std::uint64_t seed) {
    static const double kw[] = {0.8, -0.3, 0.5, 0.2, -0.6, 0.4};
    REQUIRE(bands <= 6);
    Rng rng(seed);
    Patch p;
    p.size = size;
    const std::size_t pixels = static_cast<std::size_t>(size) * size;
    p.input.resize(static_cast<std::size_t>(bands) * pixels);
    for (float& v : p.input) v = static_cast<float>(rng.uniform());
    p.target.resize(pixels);
    p.mask.assign(pixels, 1);
    for (std::size_t i = 0; i < pixels; ++i) {
        double t = 0.1;
        for (int b = 0; b < bands; ++b)
            t += kw[b] * p.input[static_cast<std::size_t>(b) * pixels + i];
        p.target[i] = static_cast<float>(t);
    }
    return p;
}

std::vector<Patch> linear_patches(int n, int size, int bands, std::uint64_t seed_base = 900) {
    std::vector<Patch> out;
    for (int i = 0; i < n; ++i) out.push_back(linear_patch(size, bands, seed_base + i));
    return out;
}

NetworkSpec tiny_spec(int in_channels, std::uint64_t seed = 5) {
    NetworkSpec spec;
    spec.variant = NetVariant::unet;
    spec.depth = 2;
    spec.base_channels = 4;
    spec.in_channels = in_channels;
    spec.out_channels = 1;
    spec.seed = seed;
    return spec;
}

}  // namespace

TEST_CASE("training reduces validation loss on a linear target") {
    const std::vector<Patch> patches = linear_patches(10, 8, 4);
    const SplitPlan plan = split(patches.size(), 42);

    TrainConfig cfg;
    cfg.lr = 1e-2;
    cfg.batch_size = 4;
    cfg.max_epochs = 12;
    cfg.shuffle_seed = 7;

    const TrainResult res = train(cfg, patches, plan, tiny_spec(4));

    REQUIRE(res.log.size() == 13);  // baseline row + 12 epochs
    REQUIRE(res.log[0].epoch == 0);
    REQUIRE(res.log[0].is_best);
    // Learnability: the best model beats both the baseline and epoch 1.
    REQUIRE(res.best.progress.best_val < res.log[1].val_loss);
    REQUIRE(res.best.progress.best_val < res.log[0].val_loss);

    double min_val = std::numeric_limits<double>::infinity();
    double last_best = std::numeric_limits<double>::infinity();
    double last_lr = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < res.log.size(); ++i) {
        const EpochLog& row = res.log[i];
        REQUIRE(row.epoch == i);
        REQUIRE(row.train_loss >= 0.0);
        REQUIRE(row.val_loss >= 0.0);
        REQUIRE(row.lr <= last_lr);
        last_lr = row.lr;
        min_val = std::min(min_val, row.val_loss);
        if (row.is_best) {
            REQUIRE(row.val_loss < last_best);  // saved checkpoints strictly improve
            last_best = row.val_loss;
        }
    }
    REQUIRE(res.best.progress.best_val == min_val);
    REQUIRE(res.last.progress.epochs_completed == res.log.back().epoch);
}

TEST_CASE("frozen validation loss walks the scheduler and stopper state machines") {
    // Train patches with no valid pixels: every train batch is skipped, the
    // parameters never change, and the validation loss is frozen at its
    // baseline value. The plateau counter then halves the learning rate at
    // epochs patience+1 and 2*patience+2, and early stopping fires exactly
    // early_stop_patience epochs past the (baseline) best.
    std::vector<Patch> patches;
    for (int i = 0; i < 2; ++i) {
        Patch p = linear_patch(8, 2, 300 + i);
        p.mask.assign(p.mask.size(), 0);
        patches.push_back(std::move(p));
    }
    patches.push_back(linear_patch(8, 2, 77));
    SplitPlan plan;
    plan.train = {0, 1};
    plan.validation = {2};

    TrainConfig cfg;
    cfg.batch_size = 4;
    cfg.max_epochs = 500;
    cfg.plateau_patience = 20;
    cfg.early_stop_patience = 50;

    const TrainResult res = train(cfg, patches, plan, tiny_spec(2));

    REQUIRE(res.log.size() == 51);  // epochs 0..50, then the stopper fires
    REQUIRE(res.log.back().epoch == 50);
    REQUIRE(res.best.progress.best_epoch == 0);
    REQUIRE(res.last.progress.stop_bad == 50);

    const double lr0 = cfg.lr;
    for (const EpochLog& row : res.log) {
        REQUIRE(row.val_loss == res.log[0].val_loss);  // frozen by construction
        if (row.epoch >= 1) {
            REQUIRE_FALSE(row.is_best);
            REQUIRE(row.train_loss == 0.0);  // no valid train pixels
        }
        const double want = row.epoch <= 20 ? lr0 : row.epoch <= 41 ? lr0 * 0.5 : lr0 * 0.25;
        REQUIRE(row.lr == want);
    }
}

TEST_CASE("learning rate follows eta0 times factor^k for every logged epoch") {
    const std::vector<Patch> patches = linear_patches(6, 8, 4);
    const SplitPlan plan = split(patches.size(), 9);
    TrainConfig cfg;
    cfg.lr = 1e-2;
    cfg.batch_size = 3;
    cfg.max_epochs = 30;
    cfg.plateau_patience = 3;  // force several plateau events
    const TrainResult res = train(cfg, patches, plan, tiny_spec(4));
    for (const EpochLog& row : res.log) {
        const double k = std::log(row.lr / cfg.lr) / std::log(cfg.plateau_factor);
        REQUIRE(k > -1e-9);
        REQUIRE(std::abs(k - std::llround(k)) < 1e-9);
    }
}

TEST_CASE("fixed seeds give bit-identical logs and checkpoints") {
    const std::vector<Patch> patches = linear_patches(8, 8, 4);
    const SplitPlan plan = split(patches.size(), 13);
    TrainConfig cfg;
    cfg.lr = 5e-3;
    cfg.batch_size = 3;
    cfg.max_epochs = 6;
    cfg.shuffle_seed = 21;

    const TrainResult a = train(cfg, patches, plan, tiny_spec(4));
    const TrainResult b = train(cfg, patches, plan, tiny_spec(4));

    REQUIRE(a.log.size() == b.log.size());
    for (std::size_t i = 0; i < a.log.size(); ++i) {
        REQUIRE(std::memcmp(&a.log[i].train_loss, &b.log[i].train_loss, sizeof(double)) == 0);
        REQUIRE(std::memcmp(&a.log[i].val_loss, &b.log[i].val_loss, sizeof(double)) == 0);
        REQUIRE(a.log[i].lr == b.log[i].lr);
        REQUIRE(a.log[i].is_best == b.log[i].is_best);
    }
    REQUIRE(a.best.params.size() == b.best.params.size());
    for (std::size_t i = 0; i < a.best.params.size(); ++i)
        REQUIRE(std::memcmp(a.best.params[i].data.data(), b.best.params[i].data.data(),
                            a.best.params[i].data.size() * sizeof(float)) == 0);
    REQUIRE(a.best.progress == b.best.progress);
}

TEST_CASE("resuming from a checkpoint matches the uninterrupted run") {
    const std::vector<Patch> patches = linear_patches(8, 8, 4);
    const SplitPlan plan = split(patches.size(), 31);
    TrainConfig cfg;
    cfg.lr = 5e-3;
    cfg.batch_size = 3;
    cfg.shuffle_seed = 3;

    TrainConfig full = cfg;
    full.max_epochs = 6;
    const TrainResult whole = train(full, patches, plan, tiny_spec(4));

    TrainConfig head = cfg;
    head.max_epochs = 3;
    const TrainResult first = train(head, patches, plan, tiny_spec(4));
    const TrainResult rest = train_from(full, patches, plan, first.last, first.best);

    REQUIRE(first.log.size() + rest.log.size() == whole.log.size());
    REQUIRE(rest.log.front().epoch == 4);
    for (std::size_t i = 0; i < whole.log.size(); ++i) {
        const EpochLog& got =
            i < first.log.size() ? first.log[i] : rest.log[i - first.log.size()];
        REQUIRE(got.epoch == whole.log[i].epoch);
        REQUIRE_THAT(got.train_loss,
                     Catch::Matchers::WithinAbs(whole.log[i].train_loss, 1e-12));
        REQUIRE_THAT(got.val_loss, Catch::Matchers::WithinAbs(whole.log[i].val_loss, 1e-12));
        REQUIRE(got.lr == whole.log[i].lr);
        REQUIRE(got.is_best == whole.log[i].is_best);
    }
    REQUIRE(rest.last.progress == whole.last.progress);
    for (std::size_t i = 0; i < whole.last.params.size(); ++i)
        for (std::size_t j = 0; j < whole.last.params[i].data.size(); ++j)
            REQUIRE_THAT(rest.last.params[i].data[j],
                         Catch::Matchers::WithinAbs(whole.last.params[i].data[j], 1e-12));
    // Checkpoint files round-trip the resume state too.
    const auto path = std::filesystem::temp_directory_path() / "embedheight_resume.eckp";
    write_checkpoint(path, first.last);
    const CheckpointData<float> reloaded = load_checkpoint<float>(path);
    const TrainResult rest2 = train_from(full, patches, plan, reloaded, first.best);
    for (std::size_t i = 0; i < rest.log.size(); ++i)
        REQUIRE(rest2.log[i].val_loss == rest.log[i].val_loss);
    std::filesystem::remove(path);
}

TEST_CASE("non-finite loss aborts with a divergence diagnostic") {
    const std::vector<Patch> patches = linear_patches(8, 8, 4);
    const SplitPlan plan = split(patches.size(), 8);
    TrainConfig cfg;
    cfg.lr = 1e25;  // guaranteed blow-up
    cfg.batch_size = 2;
    cfg.max_epochs = 10;
    REQUIRE_THROWS_MATCHES(train(cfg, patches, plan, tiny_spec(4)), DivergenceError,
                           MessageMatches(ContainsSubstring("diverged")));
}

TEST_CASE("training input validation") {
    const std::vector<Patch> patches = linear_patches(4, 8, 4);
    const SplitPlan plan = split(patches.size(), 1);
    TrainConfig cfg;
    cfg.max_epochs = 1;

    SECTION("config invariants") {
        TrainConfig bad = cfg;
        bad.plateau_factor = 1.0;
        REQUIRE_THROWS_AS(bad.validate(), ValueError);
        bad = cfg;
        bad.plateau_factor = 0.0;
        REQUIRE_THROWS_AS(bad.validate(), ValueError);
        bad = cfg;
        bad.plateau_patience = 0;
        REQUIRE_THROWS_AS(bad.validate(), ValueError);
        bad = cfg;
        bad.max_epochs = 0;
        REQUIRE_THROWS_AS(bad.validate(), ValueError);
        bad = cfg;
        bad.lr = 0.0;
        REQUIRE_THROWS_AS(bad.validate(), ValueError);
    }
    SECTION("empty split") {
        SplitPlan empty;
        empty.train = {0, 1};
        REQUIRE_THROWS_MATCHES(train(cfg, patches, empty, tiny_spec(4)), ValueError,
                               MessageMatches(ContainsSubstring("non-empty")));
    }
    SECTION("band mismatch") {
        REQUIRE_THROWS_MATCHES(train(cfg, patches, plan, tiny_spec(3)), ValueError,
                               MessageMatches(ContainsSubstring("bands")));
    }
    SECTION("patch size not divisible by the pooling factor") {
        NetworkSpec deep = tiny_spec(4);
        deep.depth = 5;  // divisor 16, patches are 8x8
        REQUIRE_THROWS_MATCHES(train(cfg, patches, plan, deep), ValueError,
                               MessageMatches(ContainsSubstring("divisible")));
    }
    SECTION("validation without valid pixels") {
        std::vector<Patch> masked = patches;
        for (std::size_t idx : plan.validation) masked[idx].mask.assign(64, 0);
        REQUIRE_THROWS_MATCHES(train(cfg, masked, plan, tiny_spec(4)), ValueError,
                               MessageMatches(ContainsSubstring("valid pixels")));
    }
}

TEST_CASE("epoch log CSV round-trips every digit") {
    std::vector<EpochLog> log;
    log.push_back({0, 161.5, 171.25, 1e-3, true});
    log.push_back({1, 0.1, 1.0 / 3.0, 1e-3, false});
    log.push_back({2, 1e-300, 9.87654321e12, 5e-4, true});
    const std::string csv = epoch_log_csv(log);

    std::istringstream in(csv);
    std::string line;
    REQUIRE(std::getline(in, line));
    REQUIRE(line == "epoch,train_loss,val_loss,lr,is_best");
    for (const EpochLog& row : log) {
        REQUIRE(std::getline(in, line));
        unsigned epoch = 0;
        double train = 0, val = 0, lr = 0;
        int best = -1;
        REQUIRE(std::sscanf(line.c_str(), "%u,%lf,%lf,%lf,%d", &epoch, &train, &val, &lr,
                            &best) == 5);
        REQUIRE(epoch == row.epoch);
        REQUIRE(train == row.train_loss);  // %.17g preserves doubles exactly
        REQUIRE(val == row.val_loss);
        REQUIRE(lr == row.lr);
        REQUIRE(best == (row.is_best ? 1 : 0));
    }
    REQUIRE_FALSE(std::getline(in, line));
}

namespace {

Grid random_scene(int w, int h, int bands, std::uint64_t seed, GeoTransform geo = {},
                  std::uint32_t crs = 32633) {
    Rng rng(seed);
    std::vector<float> v(static_cast<std::size_t>(w) * h * bands);
    for (float& x : v) x = static_cast<float>(rng.uniform());
    return Grid(w, h, bands, geo, crs, std::move(v));
}

Network<float> tiny_net(int in_channels, std::uint64_t seed = 11) {
    return Network<float>(tiny_spec(in_channels, seed));
}

}  // namespace

TEST_CASE("inference on a patch-sized grid is one tile and matches direct prediction") {
    const Network<float> net = tiny_net(3);
    const Grid scene = random_scene(16, 16, 3, 501);
    const Grid out = infer_scene(net, scene, 16, 4);

    REQUIRE(out.width() == 16);
    REQUIRE(out.height() == 16);
    REQUIRE(out.bands() == 1);
    const std::vector<float> direct =
        net.predict(Shape{1, 3, 16, 16}, scene.values<float>());
    const std::span<const float> got = out.values<float>();
    for (std::size_t i = 0; i < direct.size(); ++i) REQUIRE(got[i] == direct[i]);
}

TEST_CASE("center-crop stitching reproduces whole-scene prediction") {
    // The margin (8) exceeds the receptive radius of the tiny network, so
    // every stitched pixel sees the same real context a single full-scene
    // tile would give it: tiled inference must agree to float precision.
    const Network<float> net = tiny_net(3);
    const Grid scene = random_scene(40, 40, 3, 502);
    const Grid whole = infer_scene(net, scene, 40, 0);
    const Grid tiled = infer_scene(net, scene, 24, 8);

    const std::span<const float> a = whole.values<float>();
    const std::span<const float> b = tiled.values<float>();
    double worst = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i)
        worst = std::max(worst, std::abs(static_cast<double>(a[i]) - b[i]));
    REQUIRE(worst <= 1e-6);
}

TEST_CASE("constant input stitches without seams") {
    const Network<float> net = tiny_net(3);
    GeoTransform geo;
    std::vector<float> v(static_cast<std::size_t>(50) * 37 * 3, 0.3f);
    const Grid scene(50, 37, 3, geo, 32633, std::move(v));
    const Grid out = infer_scene(net, scene, 16, 4);

    const std::span<const float> o = out.values<float>();
    float lo = o[0], hi = o[0];
    for (float x : o) {
        lo = std::min(lo, x);
        hi = std::max(hi, x);
    }
    REQUIRE(hi - lo <= 1e-4);  // seam continuity
}

TEST_CASE("inference keeps the georeference and handles undersized grids") {
    const Network<float> net = tiny_net(3);
    GeoTransform geo;
    geo.origin_x = 123.5;
    geo.origin_y = -77.25;
    geo.px = 10.0;
    geo.py = 10.0;
    const Grid scene = random_scene(12, 9, 3, 503, geo, 25832);
    const Grid out = infer_scene(net, scene, 16, 4);  // single reflect-padded tile

    REQUIRE(out.width() == 12);
    REQUIRE(out.height() == 9);
    REQUIRE(out.bands() == 1);
    REQUIRE(out.crs() == 25832);
    REQUIRE(out.geo().origin_x == geo.origin_x);
    REQUIRE(out.geo().origin_y == geo.origin_y);
    REQUIRE(out.geo().px == geo.px);
    REQUIRE(out.geo().py == geo.py);

    // Independent gather: reflect-pad to 16x16, predict, crop the top-left.
    std::vector<float> window(3 * 16 * 16);
    const std::span<const float> src = scene.values<float>();
    for (int b = 0; b < 3; ++b)
        for (int py = 0; py < 16; ++py)
            for (int px = 0; px < 16; ++px)
                window[(static_cast<std::size_t>(b) * 16 + py) * 16 + px] =
                    src[(static_cast<std::size_t>(b) * 9 + reflect_index(py, 9)) * 12 +
                        reflect_index(px, 12)];
    const std::vector<float> pred = net.predict(Shape{1, 3, 16, 16}, window);
    const std::span<const float> got = out.values<float>();
    for (int y = 0; y < 9; ++y)
        for (int x = 0; x < 12; ++x)
            REQUIRE(got[static_cast<std::size_t>(y) * 12 + x] ==
                    pred[static_cast<std::size_t>(y) * 16 + x]);
}

TEST_CASE("inference input validation") {
    const Network<float> net = tiny_net(3);
    const Grid scene = random_scene(16, 16, 3, 504);
    SECTION("margin rules") {
        REQUIRE_THROWS_MATCHES(infer_scene(net, scene, 16, 8), ValueError,
                               MessageMatches(ContainsSubstring("margin")));
        REQUIRE_THROWS_AS(infer_scene(net, scene, 16, -1), ValueError);
    }
    SECTION("band count") {
        const Grid wrong = random_scene(16, 16, 2, 505);
        REQUIRE_THROWS_MATCHES(infer_scene(net, wrong, 16, 4), ValueError,
                               MessageMatches(ContainsSubstring("bands")));
    }
    SECTION("dtype") {
        std::vector<std::int8_t> raw(16 * 16 * 3, 1);
        const Grid i8(16, 16, 3, GeoTransform{}, 32633, std::move(raw));
        REQUIRE_THROWS_MATCHES(infer_scene(net, i8, 16, 4), ValueError,
                               MessageMatches(ContainsSubstring("float32")));
    }
    SECTION("patch not divisible by the pooling factor") {
        REQUIRE_THROWS_MATCHES(infer_scene(net, scene, 15, 4), ValueError,
                               MessageMatches(ContainsSubstring("divisible")));
    }
}
