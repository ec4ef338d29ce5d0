// splatsr: desk-scale Gaussian-splatting super-resolution trainer.
// Subcommands: synth, train-lr, train-sr, render, eval, trace.
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "splatsr/io.hpp"
#include "splatsr/metrics.hpp"

namespace fs = std::filesystem;
using namespace splatsr;

namespace {

std::string view_image_path(const std::string& dir, const std::string& split, bool hr,
                            std::size_t index) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%s_%s_%03zu.ppm", split.c_str(), hr ? "hr" : "lr", index);
    return dir + "/" + buf;
}

std::string cameras_path(const std::string& dir, const std::string& split) {
    return dir + "/cameras_" + split + ".txt";
}

// cameras files store the HR views; LR views are the same poses scaled down
std::vector<CameraView> load_views(const std::string& dir, const std::string& split, bool lr,
                                   int sr_factor) {
    std::vector<CameraView> views = cameras_read(cameras_path(dir, split));
    for (std::size_t i = 0; i < views.size(); ++i) {
        if (lr) views[i] = views[i].scaled_down(sr_factor);
        views[i].target = ppm_read(view_image_path(dir, split, !lr, i));
        views[i].validate();
    }
    return views;
}

std::vector<PriorOracle> build_oracles(const TrainConfig& config, const std::string& dir,
                                       std::size_t n_views) {
    std::vector<PriorOracle> oracles(n_views);
    for (std::size_t i = 0; i < n_views; ++i) {
        oracles[i].mode = config.prior_mode;
        oracles[i].sigma_p = config.sigma_p;
        if (config.prior_mode != PriorMode::Bicubic)
            oracles[i].hr_reference = ppm_read(view_image_path(dir, "train", true, i));
    }
    return oracles;
}

struct ConfigCli {
    std::string config_path;
    std::vector<std::string> sets;

    void attach(CLI::App* cmd) {
        cmd->add_option("--config", config_path, "key=value config file");
        cmd->add_option("--set", sets, "override one config key (key=value, repeatable)");
    }

    // later overrides win; convenience flags are appended by the caller
    TrainConfig resolve(const std::vector<std::pair<std::string, std::string>>& extra) const {
        std::vector<std::pair<std::string, std::string>> overrides;
        for (const std::string& s : sets) {
            const std::size_t eq = s.find('=');
            if (eq == std::string::npos) throw ConfigError(s, "expected key=value");
            overrides.emplace_back(s.substr(0, eq), s.substr(eq + 1));
        }
        overrides.insert(overrides.end(), extra.begin(), extra.end());
        return parse_config(config_path.empty() ? nullptr : &config_path, overrides);
    }
};

void write_view_images(const Scene& gt, const std::vector<CameraView>& views_hr,
                       const std::string& dir, const std::string& split, int sr_factor,
                       const RenderOptions& opts) {
    for (std::size_t i = 0; i < views_hr.size(); ++i) {
        const ImageBuffer hr = rasterize(gt, views_hr[i], opts).image;
        ppm_write(hr, view_image_path(dir, split, true, i));
        ppm_write(downsample(hr, sr_factor, DownsampleMode::Bilinear),
                  view_image_path(dir, split, false, i));
    }
}

int run_synth(const std::string& out_dir, std::uint64_t seed, int n_prims, double extent,
              int n_train, int n_test, double radius, double fov, int hr_size, int sr_factor,
              int threads) {
    fs::create_directories(out_dir);
    const Scene gt = make_synthetic_scene(seed, static_cast<std::size_t>(n_prims), extent);
    ply_write(gt, out_dir + "/gt.ply");

    const auto train_views =
        make_camera_ring(static_cast<std::size_t>(n_train), radius, fov, hr_size, hr_size);
    // held-out ring sits halfway between the training azimuths
    const double phase = 180.0 / n_train;
    const auto test_views = make_camera_ring(static_cast<std::size_t>(n_test), radius, fov,
                                             hr_size, hr_size, phase);
    cameras_write(train_views, cameras_path(out_dir, "train"));
    cameras_write(test_views, cameras_path(out_dir, "test"));

    RenderOptions opts;
    opts.threads = threads;
    write_view_images(gt, train_views, out_dir, "train", sr_factor, opts);
    write_view_images(gt, test_views, out_dir, "test", sr_factor, opts);
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"desk-scale Gaussian-splatting super-resolution trainer"};
    app.require_subcommand(1);

    // ---- synth ----
    auto* synth = app.add_subcommand("synth", "generate a synthetic ground-truth dataset");
    struct {
        std::string out;
        std::uint64_t seed = 1;
        int prims = 300;
        double extent = 1.0;
        int views = 8;
        int test_views = 4;
        double radius = 4.0;
        double fov = 60.0;
        int hr_size = 128;
        int sr_factor = 4;
        int threads = 1;
    } sy;
    synth->add_option("--out", sy.out, "output directory")->required();
    synth->add_option("--seed", sy.seed, "rng seed");
    synth->add_option("--gt-primitives", sy.prims, "ground-truth primitive count");
    synth->add_option("--extent", sy.extent, "scene radius, world units");
    synth->add_option("--views", sy.views, "training cameras on the ring");
    synth->add_option("--test-views", sy.test_views, "held-out cameras");
    synth->add_option("--radius", sy.radius, "camera ring radius");
    synth->add_option("--fov", sy.fov, "horizontal field of view, degrees");
    synth->add_option("--hr-size", sy.hr_size, "high-resolution image size (square)");
    synth->add_option("--sr-factor", sy.sr_factor, "super-resolution factor");
    synth->add_option("--threads", sy.threads, "render worker threads");

    // ---- train-lr ----
    auto* tlr = app.add_subcommand("train-lr", "fit the low-resolution scene (stage 1)");
    struct {
        std::string data, out;
        ConfigCli cfg;
        std::int64_t seed = -1;
        int iters = -1, threads = -1;
    } lr;
    tlr->add_option("--data", lr.data, "synth output directory")->required();
    tlr->add_option("--out", lr.out, "output scene PLY")->required();
    lr.cfg.attach(tlr);
    tlr->add_option("--seed", lr.seed, "rng seed (overrides config)");
    tlr->add_option("--iters", lr.iters, "stage-1 iterations (overrides config)");
    tlr->add_option("--threads", lr.threads, "render worker threads");

    // ---- train-sr ----
    auto* tsr = app.add_subcommand("train-sr", "joint MSE + distillation stage (stage 2)");
    struct {
        std::string data, init, out, telemetry, prior;
        ConfigCli cfg;
        double sigma_p = -1.0, lambda = -1.0;
        std::int64_t seed = -1;
        int iters = -1, threads = -1, psnr_interval = -1;
        bool no_dropout = false, no_anneal = false, vanilla = false;
    } sr;
    tsr->add_option("--data", sr.data, "synth output directory")->required();
    tsr->add_option("--init", sr.init, "stage-1 scene PLY")->required();
    tsr->add_option("--out", sr.out, "output scene PLY")->required();
    tsr->add_option("--telemetry", sr.telemetry, "per-iteration telemetry CSV path");
    tsr->add_option("--prior", sr.prior, "prior oracle: perfect|noisy|bicubic");
    tsr->add_option("--sigma-p", sr.sigma_p, "noisy-oracle prediction error scale");
    tsr->add_option("--lambda", sr.lambda, "distillation weight");
    tsr->add_flag("--no-dropout", sr.no_dropout, "disable densification dropout");
    tsr->add_flag("--no-anneal", sr.no_anneal, "disable timestep annealing");
    tsr->add_flag("--vanilla-sds", sr.vanilla, "disable both mitigations");
    sr.cfg.attach(tsr);
    tsr->add_option("--seed", sr.seed, "rng seed (overrides config)");
    tsr->add_option("--iters", sr.iters, "stage-2 iterations (overrides config)");
    tsr->add_option("--threads", sr.threads, "render worker threads");
    tsr->add_option("--psnr-interval", sr.psnr_interval,
                    "held-out PSNR cadence in telemetry (0 = never)");

    // ---- render ----
    auto* ren = app.add_subcommand("render", "rasterize a scene PLY from a stored camera");
    struct {
        std::string scene, cameras, out, background = "0,0,0";
        int index = 0, threads = 1, scale_down = 1;
    } rd;
    ren->add_option("--scene", rd.scene, "scene PLY")->required();
    ren->add_option("--cameras", rd.cameras, "camera list file")->required();
    ren->add_option("--index", rd.index, "camera index in the list");
    ren->add_option("--out", rd.out, "output PPM")->required();
    ren->add_option("--background", rd.background, "background color r,g,b");
    ren->add_option("--scale-down", rd.scale_down, "render at 1/N of the stored resolution");
    ren->add_option("--threads", rd.threads, "render worker threads");

    // ---- eval ----
    auto* ev = app.add_subcommand("eval", "psnr/ssim of a scene against stored views");
    struct {
        std::string scene, data, out, split = "test";
        int threads = 1;
    } ex;
    ev->add_option("--scene", ex.scene, "scene PLY")->required();
    ev->add_option("--data", ex.data, "synth output directory")->required();
    ev->add_option("--out", ex.out, "metrics CSV path")->required();
    ev->add_option("--split", ex.split, "view split: test|train");
    ev->add_option("--threads", ex.threads, "render worker threads");

    // ---- trace ----
    auto* tr = app.add_subcommand("trace", "paired gradient-variance telemetry arms");
    struct {
        std::string data, init, out;
        ConfigCli cfg;
        double sigma_p = -1.0;
        std::int64_t seed = -1;
        int iters = -1, threads = -1;
    } tc;
    tr->add_option("--data", tc.data, "synth output directory")->required();
    tr->add_option("--init", tc.init, "starting scene PLY")->required();
    tr->add_option("--out", tc.out, "output directory for the CSVs")->required();
    tc.cfg.attach(tr);
    tr->add_option("--sigma-p", tc.sigma_p, "noisy-oracle prediction error scale");
    tr->add_option("--seed", tc.seed, "rng seed (overrides config)");
    tr->add_option("--iters", tc.iters, "iterations per arm (overrides config)");
    tr->add_option("--threads", tc.threads, "render worker threads");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 1;
    }

    try {
        if (synth->parsed())
            return run_synth(sy.out, sy.seed, sy.prims, sy.extent, sy.views, sy.test_views,
                             sy.radius, sy.fov, sy.hr_size, sy.sr_factor, sy.threads);

        if (tlr->parsed()) {
            std::vector<std::pair<std::string, std::string>> extra;
            if (lr.seed >= 0) extra.emplace_back("seed", std::to_string(lr.seed));
            if (lr.iters >= 0) extra.emplace_back("iterations_lr", std::to_string(lr.iters));
            if (lr.threads >= 0) extra.emplace_back("threads", std::to_string(lr.threads));
            const TrainConfig config = lr.cfg.resolve(extra);
            const auto views = load_views(lr.data, "train", /*lr=*/true, config.sr_factor);
            ply_write(train_lr(views, config), lr.out);
            return 0;
        }

        if (tsr->parsed()) {
            std::vector<std::pair<std::string, std::string>> extra;
            if (!sr.prior.empty()) extra.emplace_back("prior", sr.prior);
            if (sr.sigma_p >= 0) extra.emplace_back("sigma_p", std::to_string(sr.sigma_p));
            if (sr.lambda >= 0) extra.emplace_back("lambda_sds", std::to_string(sr.lambda));
            if (sr.no_dropout || sr.vanilla) extra.emplace_back("dropout_enabled", "0");
            if (sr.no_anneal || sr.vanilla) extra.emplace_back("anneal_enabled", "0");
            if (sr.seed >= 0) extra.emplace_back("seed", std::to_string(sr.seed));
            if (sr.iters >= 0) extra.emplace_back("iterations_sr", std::to_string(sr.iters));
            if (sr.threads >= 0) extra.emplace_back("threads", std::to_string(sr.threads));
            if (sr.psnr_interval >= 0)
                extra.emplace_back("psnr_interval", std::to_string(sr.psnr_interval));
            const TrainConfig config = sr.cfg.resolve(extra);

            const Scene init = ply_read(sr.init);
            const auto views = load_views(sr.data, "train", /*lr=*/true, config.sr_factor);
            const auto oracles = build_oracles(config, sr.data, views.size());
            std::vector<CameraView> heldout;
            if (config.psnr_interval > 0)
                heldout = load_views(sr.data, "test", /*lr=*/false, config.sr_factor);
            auto [scene, telemetry] =
                train_sr(init, views, oracles, config, heldout.empty() ? nullptr : &heldout);
            ply_write(scene, sr.out);
            if (!sr.telemetry.empty()) write_telemetry_csv(telemetry, sr.telemetry);
            return 0;
        }

        if (ren->parsed()) {
            const Scene scene = ply_read(rd.scene);
            auto views = cameras_read(rd.cameras);
            if (rd.index < 0 || static_cast<std::size_t>(rd.index) >= views.size())
                throw InvalidParameterError("camera index out of range");
            CameraView view = views[static_cast<std::size_t>(rd.index)];
            if (rd.scale_down > 1) view = view.scaled_down(rd.scale_down);
            TrainConfig bg_probe; // reuse the config color parser for r,g,b
            apply_config_kv(bg_probe, "background", rd.background);
            RenderOptions opts;
            opts.background = bg_probe.background;
            opts.threads = rd.threads;
            ppm_write(rasterize(scene, view, opts).image, rd.out);
            return 0;
        }

        if (ev->parsed()) {
            if (ex.split != "test" && ex.split != "train")
                throw InvalidParameterError("split must be test or train");
            const Scene scene = ply_read(ex.scene);
            const auto views = load_views(ex.data, ex.split, /*lr=*/false, 1);
            RenderOptions opts;
            opts.threads = ex.threads;
            std::string csv = "view,psnr,ssim\n";
            char buf[128];
            double psnr_sum = 0.0, ssim_sum = 0.0;
            for (std::size_t i = 0; i < views.size(); ++i) {
                const ImageBuffer img = rasterize(scene, views[i], opts).image;
                const MetricReport m = evaluate(img, *views[i].target);
                std::snprintf(buf, sizeof(buf), "%zu,%.17g,%.17g\n", i, m.psnr_db, m.ssim);
                csv += buf;
                psnr_sum += m.psnr_db;
                ssim_sum += m.ssim;
            }
            const double n = static_cast<double>(views.size());
            std::snprintf(buf, sizeof(buf), "mean,%.17g,%.17g\n", psnr_sum / n, ssim_sum / n);
            csv += buf;
            atomic_write(ex.out, csv);
            return 0;
        }

        if (tr->parsed()) {
            std::vector<std::pair<std::string, std::string>> extra;
            extra.emplace_back("prior", "noisy");
            extra.emplace_back("sigma_p", tc.sigma_p >= 0 ? std::to_string(tc.sigma_p) : "0.5");
            if (tc.seed >= 0) extra.emplace_back("seed", std::to_string(tc.seed));
            if (tc.iters >= 0) extra.emplace_back("iterations_sr", std::to_string(tc.iters));
            if (tc.threads >= 0) extra.emplace_back("threads", std::to_string(tc.threads));
            const TrainConfig config = tc.cfg.resolve(extra);

            const Scene init = ply_read(tc.init);
            const auto views = load_views(tc.data, "train", /*lr=*/true, config.sr_factor);
            const auto oracles = build_oracles(config, tc.data, views.size());
            fs::create_directories(tc.out);
            trace_gradients(init, views, oracles, config, tc.out);
            return 0;
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 1;
}
