#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "splatsr/metrics.hpp"
#include "splatsr/train.hpp"

using namespace splatsr;

namespace {

bool scenes_identical(const Scene& a, const Scene& b) {
    if (a.size() != b.size() || a.extent != b.extent) return false;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const auto& p = a.primitives[i];
        const auto& q = b.primitives[i];
        if (p.position != q.position || p.log_scale != q.log_scale ||
            p.rotation != q.rotation || p.opacity_logit != q.opacity_logit ||
            p.color_logit != q.color_logit)
            return false;
    }
    return true;
}

std::vector<CameraView> views_of(const Scene& gt, std::size_t n, int size,
                                 const Vector3d& bg = Vector3d::Zero()) {
    auto views = make_camera_ring(n, 3.5, 60.0, size, size);
    RenderOptions opts;
    opts.background = bg;
    for (auto& v : views) v.target = rasterize(gt, v, opts).image;
    return views;
}

double mean_train_psnr(const Scene& scene, const std::vector<CameraView>& views) {
    double total = 0.0;
    for (const auto& v : views) total += psnr(rasterize(scene, v).image, *v.target);
    return total / static_cast<double>(views.size());
}

} // namespace

TEST_CASE("config validation") {
    TrainConfig c;
    CHECK_NOTHROW(c.validate()); // defaults are self-consistent

    auto expect_reject = [](auto&& mutate) {
        TrainConfig bad;
        mutate(bad);
        CHECK_THROWS_AS(bad.validate(), InvalidParameterError);
    };
    expect_reject([](TrainConfig& b) { b.lambda_sds = -0.1; });
    expect_reject([](TrainConfig& b) { b.dropout_p = 1.5; });
    expect_reject([](TrainConfig& b) { b.anneal_N = 0; });
    expect_reject([](TrainConfig& b) { b.T = 1; });
    expect_reject([](TrainConfig& b) { b.t_min = 0; });
    expect_reject([](TrainConfig& b) { b.beta_end = 1.0; });
    expect_reject([](TrainConfig& b) { b.beta_start = 0.5; b.beta_end = 0.4; });
    expect_reject([](TrainConfig& b) { b.sigma_p = -1.0; });
    expect_reject([](TrainConfig& b) { b.tau_pos = 0.0; });
    expect_reject([](TrainConfig& b) { b.opacity_min = 1.0; });
    expect_reject([](TrainConfig& b) { b.densify_interval = 0; });
    expect_reject([](TrainConfig& b) { b.densify_until_frac = 1.5; });
    expect_reject([](TrainConfig& b) { b.lr_opacity = 0.0; });
    expect_reject([](TrainConfig& b) { b.sr_factor = 0; });
    expect_reject([](TrainConfig& b) { b.init_primitives = 0; });
    expect_reject([](TrainConfig& b) { b.threads = 0; });
    expect_reject([](TrainConfig& b) { b.psnr_interval = -1; });
}

TEST_CASE("sub-pixel mse loss") {
    SUBCASE("constant 0.6 render against constant 0.5 target: loss is 0.01") {
        ImageBuffer hr(8, 8), lr(8, 8);
        for (auto& v : hr.pixels) v = 0.6;
        for (auto& v : lr.pixels) v = 0.5;
        const auto [loss, grad] = mse_subpixel_loss(hr, lr, 1);
        CHECK(loss == doctest::Approx(0.01).epsilon(1e-12));
        const double expect = 2.0 * 0.1 / static_cast<double>(lr.pixels.size());
        for (double g : grad.pixels) CHECK(g == doctest::Approx(expect).epsilon(1e-9));
    }
    SUBCASE("exact match: zero loss, zero gradient") {
        ImageBuffer hr(8, 8);
        RngStream rng(1, 0, RngPurpose::Test);
        for (auto& v : hr.pixels) v = rng.uniform();
        const ImageBuffer lr = downsample(hr, 2, DownsampleMode::Bilinear);
        const auto [loss, grad] = mse_subpixel_loss(hr, lr, 2);
        CHECK(loss == 0.0);
        for (double g : grad.pixels) CHECK(g == 0.0);
    }
    SUBCASE("gradient mass is conserved through the scatter") {
        ImageBuffer hr(8, 8), lr(2, 2);
        for (auto& v : hr.pixels) v = 0.6;
        for (auto& v : lr.pixels) v = 0.5;
        const auto [loss, grad] = mse_subpixel_loss(hr, lr, 4);
        CHECK(loss == doctest::Approx(0.01).epsilon(1e-12));
        double hr_sum = 0.0;
        for (double g : grad.pixels) hr_sum += g;
        // every low-res scalar contributes 2r/N; the N terms sum to 2r = 0.2,
        // and the adjoint scatter preserves that total
        CHECK(hr_sum == doctest::Approx(2.0 * 0.1).epsilon(1e-9));
    }
    SUBCASE("gradient matches finite differences of the scalar map") {
        ImageBuffer hr(8, 8), lr(4, 4);
        RngStream rng(2, 0, RngPurpose::Test);
        for (auto& v : hr.pixels) v = rng.uniform();
        for (auto& v : lr.pixels) v = rng.uniform();
        const auto [loss, grad] = mse_subpixel_loss(hr, lr, 2);
        (void)loss;
        const double h = 1e-5;
        for (std::size_t idx : {std::size_t(0), std::size_t(37), std::size_t(191)}) {
            auto plus = hr, minus = hr;
            plus.pixels[idx] += h;
            minus.pixels[idx] -= h;
            const double fd = (mse_subpixel_loss(plus, lr, 2).first -
                               mse_subpixel_loss(minus, lr, 2).first) /
                              (2.0 * h);
            CHECK(grad.pixels[idx] == doctest::Approx(fd).epsilon(1e-6));
        }
    }
    SUBCASE("dimension mismatch rejected") {
        CHECK_THROWS_AS(mse_subpixel_loss(ImageBuffer(8, 8), ImageBuffer(3, 3), 2),
                        InvalidParameterError);
    }
}

TEST_CASE("adam optimizer") {
    TrainConfig config;
    Scene scene;
    scene.extent = 2.0;
    GaussianPrimitive p;
    p.position = Vector3d(0.1, 0.2, 0.3);
    p.opacity_logit = 0.5;
    scene.primitives = {p};

    SUBCASE("zero gradients leave parameters untouched but advance the step") {
        AdamState state = AdamState::zeros(1);
        const ParamGrads g = ParamGrads::zeros(1);
        adam_step(scene, g, state, config);
        CHECK(scene.primitives[0].position == p.position);
        CHECK(scene.primitives[0].opacity_logit == p.opacity_logit);
        CHECK(state.step == 1);
    }
    SUBCASE("first step moves each parameter by lr times the gradient sign") {
        AdamState state = AdamState::zeros(1);
        ParamGrads g = ParamGrads::zeros(1);
        g.position[0] = Vector3d(0.5, -2.0, 0.0);
        g.opacity_logit[0] = 3.0;
        g.log_scale[0] = Vector3d(-1.0, 0.0, 0.0);
        adam_step(scene, g, state, config);

        const double lr_pos = config.lr_position * scene.extent;
        CHECK(scene.primitives[0].position.x() ==
              doctest::Approx(p.position.x() - lr_pos).epsilon(1e-9));
        CHECK(scene.primitives[0].position.y() ==
              doctest::Approx(p.position.y() + lr_pos).epsilon(1e-9));
        CHECK(scene.primitives[0].position.z() == p.position.z());
        CHECK(scene.primitives[0].opacity_logit ==
              doctest::Approx(p.opacity_logit - config.lr_opacity).epsilon(1e-9));
        CHECK(scene.primitives[0].log_scale.x() ==
              doctest::Approx(config.lr_log_scale).epsilon(1e-9));
    }
    SUBCASE("moment remap: clones start fresh, survivors carry state") {
        AdamState state = AdamState::zeros(1);
        ParamGrads g = ParamGrads::zeros(1);
        g.position[0] = Vector3d(1.0, 0.0, 0.0);
        adam_step(scene, g, state, config);
        const Vector3d m_before = state.m_position[0];
        REQUIRE(m_before.x() != 0.0);

        state.remap({0, -1}); // survivor + fresh child
        REQUIRE(state.size() == 2);
        CHECK(state.m_position[0] == m_before);
        CHECK(state.m_position[1] == Vector3d::Zero());
        CHECK(state.v_position[1] == Vector3d::Zero());
        CHECK(state.step == 1); // shared counter survives reindexing

        state.compact({1});
        REQUIRE(state.size() == 1);
        CHECK(state.m_position[0] == Vector3d::Zero());
        CHECK(state.step == 1);
    }
    SUBCASE("size mismatch rejected") {
        AdamState state = AdamState::zeros(2);
        CHECK_THROWS_AS(adam_step(scene, ParamGrads::zeros(1), state, config),
                        InconsistentStateError);
    }
}

TEST_CASE("one optimizer step with tiny learning rates never increases the mse loss") {
    const Scene gt = make_synthetic_scene(300, 40, 1.0);
    const auto views = views_of(gt, 2, 20);

    Scene scene = make_synthetic_scene(301, 25, 1.0);
    TrainConfig config;
    config.lr_position = 1e-7;
    config.lr_log_scale = 1e-7;
    config.lr_rotation = 1e-7;
    config.lr_opacity = 1e-7;
    config.lr_color = 1e-7;

    RenderOptions opts;
    opts.keep_aux = true;
    const auto res = rasterize(scene, views[0], opts);
    const auto [loss_before, d_image] = mse_subpixel_loss(res.image, *views[0].target, 1);
    const auto grads = rasterize_backward(scene, views[0], res.aux, d_image);
    AdamState adam = AdamState::zeros(scene.size());
    adam_step(scene, grads, adam, config);

    const auto after = rasterize(scene, views[0]);
    const double loss_after = mse_subpixel_loss(after.image, *views[0].target, 1).first;
    CHECK(loss_after <= loss_before);
    CHECK(loss_after < loss_before + 1e-12);
}

TEST_CASE("low-resolution fitting improves the reconstruction and is deterministic") {
    const Scene gt = make_synthetic_scene(100, 60, 1.0);
    const auto views = views_of(gt, 4, 24);

    TrainConfig config;
    config.iterations_lr = 150;
    config.init_primitives = 40;
    config.seed = 5;
    config.densify_from = 50;
    config.densify_interval = 50;

    const Scene init = make_synthetic_scene(config.seed, config.init_primitives,
                                            config.init_extent);
    const double psnr_before = mean_train_psnr(init, views);

    const Scene fitted = train_lr(views, config);
    const double psnr_after = mean_train_psnr(fitted, views);
    CHECK(psnr_after > psnr_before + 1.0);

    SUBCASE("bitwise repeatable") {
        const Scene again = train_lr(views, config);
        CHECK(scenes_identical(fitted, again));
    }
    SUBCASE("rejects views without targets") {
        auto bare = make_camera_ring(2, 3.5, 60.0, 24, 24);
        CHECK_THROWS_AS(train_lr(bare, config), InvalidParameterError);
    }
}

TEST_CASE("joint distillation stage") {
    const Scene gt = make_synthetic_scene(100, 60, 1.0);
    const int lr_size = 12, factor = 2;
    auto views_hr = make_camera_ring(3, 3.5, 60.0, lr_size * factor, lr_size * factor);
    std::vector<CameraView> views_lr;
    std::vector<PriorOracle> oracles;
    for (auto& v : views_hr) {
        const ImageBuffer hr = rasterize(gt, v).image;
        CameraView lr = v.scaled_down(factor);
        lr.target = downsample(hr, factor, DownsampleMode::Bilinear);
        views_lr.push_back(lr);
        oracles.push_back(PriorOracle{PriorMode::Perfect, hr, 0.0});
    }

    TrainConfig config;
    config.iterations_sr = 60;
    config.sr_factor = factor;
    config.densify_enabled = false;
    config.seed = 9;

    const Scene init = train_lr(views_lr, [&] {
        TrainConfig c = config;
        c.iterations_lr = 120;
        c.init_primitives = 30;
        return c;
    }());

    SUBCASE("telemetry rows track the schedule") {
        auto [scene, rows] = train_sr(init, views_lr, oracles, config);
        REQUIRE(rows.size() == 60);
        const AnnealState ann{config.T, config.anneal_N, config.t_min, config.anneal_delta};
        for (std::size_t i = 0; i < rows.size(); ++i) {
            CHECK(rows[i].iter == static_cast<std::int64_t>(i));
            CHECK(rows[i].arm == "sds");
            CHECK(rows[i].lb == ann.lower_bound(rows[i].iter));
            CHECK(rows[i].t >= rows[i].lb);
            CHECK(rows[i].t <= config.T);
            CHECK(std::isfinite(rows[i].loss_mse));
            CHECK(rows[i].n_prims == scene.size()); // densify off: constant population
            CHECK(std::isnan(rows[i].psnr));
        }
        CHECK(rows.front().t == config.T); // lower bound starts at T
    }
    SUBCASE("lambda 0 reduces bitwise to the mse-only trajectory") {
        TrainConfig a = config;
        a.lambda_sds = 0.0;
        TrainConfig b = config;
        b.lambda_sds = 0.0;
        // knobs that only matter through the distillation path
        b.sigma_p = 5.0;
        b.T = 37;
        b.anneal_enabled = false;
        b.prior_mode = PriorMode::Noisy;

        auto [scene_a, rows_a] = train_sr(init, views_lr, oracles, a);
        auto [scene_b, rows_b] = train_sr(init, views_lr, oracles, b);
        CHECK(scenes_identical(scene_a, scene_b));
        CHECK(rows_a.front().arm == "mse");
        CHECK(rows_a.front().t == 0);
    }
    SUBCASE("heldout psnr fills at the configured cadence") {
        auto heldout = make_camera_ring(2, 3.5, 60.0, lr_size * factor, lr_size * factor, 30.0);
        for (auto& v : heldout) v.target = rasterize(gt, v).image;
        TrainConfig c = config;
        c.psnr_interval = 20;
        auto [scene, rows] = train_sr(init, views_lr, oracles, c, &heldout);
        (void)scene;
        for (const auto& r : rows) {
            if (r.iter % 20 == 0)
                CHECK(std::isfinite(r.psnr));
            else
                CHECK(std::isnan(r.psnr));
        }
    }
    SUBCASE("dropout probability one freezes the population, zero lets it grow") {
        TrainConfig grow = config;
        grow.densify_enabled = true;
        grow.densify_from = 10;
        grow.densify_interval = 10;
        grow.tau_pos = 1e-9; // everything visible becomes a candidate
        grow.dropout_p = 0.0;
        TrainConfig frozen = grow;
        frozen.dropout_p = 1.0;

        auto [scene_g, rows_g] = train_sr(init, views_lr, oracles, grow);
        auto [scene_f, rows_f] = train_sr(init, views_lr, oracles, frozen);
        CHECK(scene_g.size() > init.size());
        CHECK(scene_f.size() <= init.size()); // every candidate dropped; prune may only shrink
        CHECK(rows_g.back().n_prims > rows_f.back().n_prims);
    }
    SUBCASE("input validation") {
        CHECK_THROWS_AS(train_sr(Scene{}, views_lr, oracles, config), InvalidParameterError);
        std::vector<PriorOracle> short_oracles(oracles.begin(), oracles.end() - 1);
        CHECK_THROWS_AS(train_sr(init, views_lr, short_oracles, config),
                        InvalidParameterError);
    }
}

TEST_CASE("full objective gradient survives a finite-difference probe") {
    // render -> bilinear downsample -> mse, differentiated end to end
    const Scene gt = make_synthetic_scene(100, 30, 1.0);
    auto cam_hr = make_camera_ring(1, 3.5, 60.0, 12, 12)[0];
    const ImageBuffer target_lr =
        downsample(rasterize(gt, cam_hr).image, 2, DownsampleMode::Bilinear);

    const Scene scene = make_synthetic_scene(55, 3, 1.0);
    RenderOptions opts;
    opts.keep_aux = true;
    const auto res = rasterize(scene, cam_hr, opts);
    const auto [loss0, d_image] = mse_subpixel_loss(res.image, target_lr, 2);
    (void)loss0;
    const auto grads = rasterize_backward(scene, cam_hr, res.aux, d_image);

    auto loss_of = [&](const Scene& s) {
        return mse_subpixel_loss(rasterize(s, cam_hr).image, target_lr, 2).first;
    };
    const double h = 1e-5;
    for (std::size_t i = 0; i < scene.size(); ++i) {
        for (int j = 0; j < 3; ++j) {
            Scene plus = scene, minus = scene;
            plus.primitives[i].position[j] += h;
            minus.primitives[i].position[j] -= h;
            const double fd = (loss_of(plus) - loss_of(minus)) / (2.0 * h);
            const double an = grads.position[i][j];
            CHECK(std::abs(an - fd) <= 1e-3 * std::max({std::abs(an), std::abs(fd), 1e-6}));
        }
    }
}

TEST_CASE("gradient trace writes per-arm telemetry and a summary") {
    const Scene gt = make_synthetic_scene(100, 60, 1.0);
    const int lr_size = 12, factor = 2;
    auto ring = make_camera_ring(2, 3.5, 60.0, lr_size * factor, lr_size * factor);
    std::vector<CameraView> views_lr;
    std::vector<PriorOracle> oracles;
    for (auto& v : ring) {
        const ImageBuffer hr = rasterize(gt, v).image;
        CameraView lr = v.scaled_down(factor);
        lr.target = downsample(hr, factor, DownsampleMode::Bilinear);
        views_lr.push_back(lr);
        oracles.push_back(PriorOracle{PriorMode::Noisy, hr, 0.5});
    }

    TrainConfig config;
    config.iterations_sr = 50;
    config.sr_factor = factor;
    config.init_primitives = 20;
    config.iterations_lr = 60;
    const Scene init = train_lr(views_lr, config);

    const auto dir = std::filesystem::temp_directory_path() / "splatsr_trace_test";
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);

    const TraceSummary summary = trace_gradients(init, views_lr, oracles, config, dir.string());
    CHECK(summary.cv_mse > 0.0);
    CHECK(summary.cv_sds_vanilla > 0.0);
    CHECK(summary.cv_sds_annealed > 0.0);

    for (const char* name : {"mse.csv", "sds_vanilla.csv", "sds_annealed.csv", "summary.csv"})
        CHECK(std::filesystem::exists(dir / name));

    std::ifstream summary_file(dir / "summary.csv");
    std::string header;
    std::getline(summary_file, header);
    CHECK(header == "arm,iters,grad_mean,grad_std,cv");
    int lines = 0;
    for (std::string line; std::getline(summary_file, line);)
        if (!line.empty()) ++lines;
    CHECK(lines == 3);
    std::filesystem::remove_all(dir);
}
