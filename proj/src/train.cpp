#include "splatsr/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>

#include "splatsr/io.hpp"
#include "splatsr/metrics.hpp"

namespace splatsr {

void TrainConfig::validate() const {
    if (lambda_sds < 0.0) throw InvalidParameterError("lambda_sds must be >= 0");
    if (dropout_p < 0.0 || dropout_p > 1.0)
        throw InvalidParameterError("dropout_p must be in [0,1]");
    if (anneal_N < 1) throw InvalidParameterError("anneal_N must be >= 1");
    if (anneal_delta < 1) throw InvalidParameterError("anneal_delta must be >= 1");
    if (T < 2) throw InvalidParameterError("T must be >= 2");
    if (t_min < 1 || t_min > T) throw InvalidParameterError("t_min must be in [1, T]");
    if (!(beta_start > 0.0) || !(beta_start <= beta_end) || !(beta_end < 1.0))
        throw InvalidParameterError("betas must satisfy 0 < beta_start <= beta_end < 1");
    if (sigma_p < 0.0) throw InvalidParameterError("sigma_p must be >= 0");
    if (!(tau_pos > 0.0)) throw InvalidParameterError("tau_pos must be > 0");
    if (!(percent_dense > 0.0)) throw InvalidParameterError("percent_dense must be > 0");
    if (!(opacity_min > 0.0) || !(opacity_min < 1.0))
        throw InvalidParameterError("opacity_min must be in (0,1)");
    if (densify_from < 0 || densify_interval < 1)
        throw InvalidParameterError("bad densify cadence");
    if (densify_until_frac < 0.0 || densify_until_frac > 1.0)
        throw InvalidParameterError("densify_until_frac must be in [0,1]");
    if (iterations_lr < 0 || iterations_sr < 0)
        throw InvalidParameterError("iteration counts must be >= 0");
    if (!(lr_position > 0.0) || !(lr_log_scale > 0.0) || !(lr_rotation > 0.0) ||
        !(lr_opacity > 0.0) || !(lr_color > 0.0))
        throw InvalidParameterError("learning rates must be > 0");
    if (sr_factor < 1) throw InvalidParameterError("sr_factor must be >= 1");
    if (init_primitives < 1) throw InvalidParameterError("init_primitives must be >= 1");
    if (!(init_extent > 0.0)) throw InvalidParameterError("init_extent must be > 0");
    if (threads < 1) throw InvalidParameterError("threads must be >= 1");
    if (psnr_interval < 0) throw InvalidParameterError("psnr_interval must be >= 0");
}

AdamState AdamState::zeros(std::size_t n) {
    AdamState s;
    s.m_position.assign(n, Vector3d::Zero());
    s.v_position.assign(n, Vector3d::Zero());
    s.m_log_scale.assign(n, Vector3d::Zero());
    s.v_log_scale.assign(n, Vector3d::Zero());
    s.m_rotation.assign(n, Vector4d::Zero());
    s.v_rotation.assign(n, Vector4d::Zero());
    s.m_opacity.assign(n, 0.0);
    s.v_opacity.assign(n, 0.0);
    s.m_color.assign(n, Vector3d::Zero());
    s.v_color.assign(n, Vector3d::Zero());
    return s;
}

void AdamState::remap(const std::vector<std::int64_t>& source) {
    AdamState next = zeros(source.size());
    next.step = step;
    for (std::size_t j = 0; j < source.size(); ++j) {
        const std::int64_t src = source[j];
        if (src < 0) continue;
        const auto i = static_cast<std::size_t>(src);
        next.m_position[j] = m_position[i];
        next.v_position[j] = v_position[i];
        next.m_log_scale[j] = m_log_scale[i];
        next.v_log_scale[j] = v_log_scale[i];
        next.m_rotation[j] = m_rotation[i];
        next.v_rotation[j] = v_rotation[i];
        next.m_opacity[j] = m_opacity[i];
        next.v_opacity[j] = v_opacity[i];
        next.m_color[j] = m_color[i];
        next.v_color[j] = v_color[i];
    }
    *this = std::move(next);
}

void AdamState::compact(const std::vector<std::uint32_t>& kept) {
    std::vector<std::int64_t> source(kept.begin(), kept.end());
    remap(source);
}

namespace {

constexpr double kBeta1 = 0.9;
constexpr double kBeta2 = 0.999;
constexpr double kAdamEps = 1e-15;

inline void adam_scalar(double& param, double grad, double& m, double& v, double lr,
                        double bc1, double bc2) {
    m = kBeta1 * m + (1.0 - kBeta1) * grad;
    v = kBeta2 * v + (1.0 - kBeta2) * grad * grad;
    param -= lr * (m / bc1) / (std::sqrt(v / bc2) + kAdamEps);
}

} // namespace

void adam_step(Scene& scene, const ParamGrads& grads, AdamState& state,
               const TrainConfig& config) {
    const std::size_t n = scene.primitives.size();
    if (grads.size() != n || state.size() != n)
        throw InconsistentStateError("adam state or gradients out of sync with the scene");

    state.step += 1;
    const double bc1 = 1.0 - std::pow(kBeta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(kBeta2, static_cast<double>(state.step));
    const double lr_pos = config.lr_position * scene.extent;

    for (std::size_t i = 0; i < n; ++i) {
        GaussianPrimitive& p = scene.primitives[i];
        for (int j = 0; j < 3; ++j) {
            adam_scalar(p.position[j], grads.position[i][j], state.m_position[i][j],
                        state.v_position[i][j], lr_pos, bc1, bc2);
            adam_scalar(p.log_scale[j], grads.log_scale[i][j], state.m_log_scale[i][j],
                        state.v_log_scale[i][j], config.lr_log_scale, bc1, bc2);
            adam_scalar(p.color_logit[j], grads.color_logit[i][j], state.m_color[i][j],
                        state.v_color[i][j], config.lr_color, bc1, bc2);
        }
        for (int j = 0; j < 4; ++j)
            adam_scalar(p.rotation[j], grads.rotation[i][j], state.m_rotation[i][j],
                        state.v_rotation[i][j], config.lr_rotation, bc1, bc2);
        adam_scalar(p.opacity_logit, grads.opacity_logit[i], state.m_opacity[i],
                    state.v_opacity[i], config.lr_opacity, bc1, bc2);
    }
}

std::pair<double, ImageBuffer> mse_subpixel_loss(const ImageBuffer& hr_render,
                                                 const ImageBuffer& lr_target, int factor) {
    if (factor < 1 || hr_render.width != lr_target.width * factor ||
        hr_render.height != lr_target.height * factor)
        throw InvalidParameterError("render dims must be target dims times the factor");

    const ImageBuffer down = downsample(hr_render, factor, DownsampleMode::Bilinear);
    const double inv_n = 1.0 / static_cast<double>(down.pixels.size());
    double loss = 0.0;
    ImageBuffer d_down(down.width, down.height);
    for (std::size_t i = 0; i < down.pixels.size(); ++i) {
        const double r = down.pixels[i] - lr_target.pixels[i];
        loss += r * r;
        d_down.pixels[i] = 2.0 * r * inv_n;
    }
    return {loss * inv_n, downsample_bilinear_backward(d_down, factor)};
}

namespace {

std::vector<std::uint32_t> epoch_view_order(std::uint64_t seed, std::uint64_t epoch,
                                            std::size_t n_views) {
    std::vector<std::uint32_t> perm(n_views);
    std::iota(perm.begin(), perm.end(), 0u);
    RngStream rng(seed, epoch, RngPurpose::ViewOrder);
    for (std::size_t i = n_views; i-- > 1;)
        std::swap(perm[i], perm[rng.uniform_int(0, static_cast<std::int64_t>(i))]);
    return perm;
}

struct GradStats {
    double mean = 0.0;
    double max = 0.0;
};

GradStats visible_grad_stats(const ParamGrads& grads, const std::vector<bool>& visibility) {
    GradStats s;
    std::size_t count = 0;
    for (std::size_t i = 0; i < grads.size(); ++i) {
        if (!visibility[i]) continue;
        const double norm = grads.ndc_grad[i].norm();
        s.mean += norm;
        s.max = std::max(s.max, norm);
        ++count;
    }
    if (count > 0) s.mean /= static_cast<double>(count);
    return s;
}

// shared densify-then-prune step; keeps scene, adam moments and stats aligned
void densify_and_prune(Scene& scene, AdamState& adam, DensifyStats& stats,
                       const TrainConfig& config, bool use_dropout, std::int64_t iter) {
    std::vector<std::uint32_t> candidates = select_candidates(stats, config.tau_pos);
    if (use_dropout) {
        RngStream rng(config.seed, static_cast<std::uint64_t>(iter), RngPurpose::Dropout);
        candidates = dropout_mask(candidates, config.dropout_p, rng);
    }
    RngStream split_rng(config.seed, static_cast<std::uint64_t>(iter), RngPurpose::SplitSample);
    DensifyOutcome densified = densify_apply(scene, candidates, config.percent_dense, split_rng);
    adam.remap(densified.moment_source);

    PruneOutcome pruned = prune(densified.scene, config.opacity_min);
    adam.compact(pruned.kept);
    scene = std::move(pruned.scene);
    stats.reset(scene.primitives.size());
}

bool densify_due(std::int64_t iter, int total_iters, const TrainConfig& config) {
    if (!config.densify_enabled) return false;
    return iter >= config.densify_from && iter % config.densify_interval == 0 &&
           iter <= static_cast<std::int64_t>(config.densify_until_frac * total_iters);
}

} // namespace

Scene train_lr(const std::vector<CameraView>& views_lr, const TrainConfig& config) {
    config.validate();
    if (views_lr.empty()) throw InvalidParameterError("train_lr needs at least one view");
    for (const auto& v : views_lr) {
        v.validate();
        if (!v.target) throw InvalidParameterError("train_lr views must carry target images");
    }

    Scene scene = make_synthetic_scene(config.seed, config.init_primitives, config.init_extent);
    AdamState adam = AdamState::zeros(scene.primitives.size());
    DensifyStats stats(scene.primitives.size());

    RenderOptions opts;
    opts.background = config.background;
    opts.keep_aux = true;
    opts.threads = config.threads;

    std::vector<std::uint32_t> order;
    for (std::int64_t iter = 0; iter < config.iterations_lr; ++iter) {
        const std::size_t slot = static_cast<std::size_t>(iter) % views_lr.size();
        if (slot == 0)
            order = epoch_view_order(config.seed, static_cast<std::uint64_t>(iter) / views_lr.size(),
                                     views_lr.size());
        const CameraView& view = views_lr[order[slot]];

        const RenderResult res = rasterize(scene, view, opts);
        auto [loss, d_image] = mse_subpixel_loss(res.image, *view.target, 1);
        (void)loss;
        const ParamGrads grads = rasterize_backward(scene, view, res.aux, d_image);
        const std::vector<bool> visibility = res.aux.contributing_mask(scene.primitives.size());
        accumulate_stats(stats, grads, visibility, &res.aux.projections);
        adam_step(scene, grads, adam, config);

        if (densify_due(iter, config.iterations_lr, config))
            densify_and_prune(scene, adam, stats, config, /*use_dropout=*/false, iter);
    }
    return scene;
}

std::pair<Scene, std::vector<TelemetryRow>> train_sr(
    const Scene& init, const std::vector<CameraView>& views_lr,
    const std::vector<PriorOracle>& oracles, const TrainConfig& config,
    const std::vector<CameraView>* heldout_hr) {
    config.validate();
    if (init.primitives.empty()) throw InvalidParameterError("init scene is empty");
    if (views_lr.empty()) throw InvalidParameterError("train_sr needs at least one view");
    if (oracles.size() != views_lr.size())
        throw InvalidParameterError("need exactly one prior oracle per view");
    for (const auto& v : views_lr) {
        v.validate();
        if (!v.target) throw InvalidParameterError("train_sr views must carry target images");
    }

    std::vector<CameraView> views_hr;
    views_hr.reserve(views_lr.size());
    for (const auto& v : views_lr) views_hr.push_back(v.scaled_up(config.sr_factor));

    const DiffusionSchedule sched = build_schedule(config.T, config.beta_start, config.beta_end);
    const AnnealState ann{config.T, config.anneal_N, config.t_min, config.anneal_delta};
    const bool use_sds = config.lambda_sds > 0.0;

    Scene scene = init;
    AdamState adam = AdamState::zeros(scene.primitives.size());
    DensifyStats stats(scene.primitives.size());
    std::vector<TelemetryRow> telemetry;
    telemetry.reserve(static_cast<std::size_t>(config.iterations_sr));

    RenderOptions opts;
    opts.background = config.background;
    opts.keep_aux = true;
    opts.threads = config.threads;

    std::vector<std::uint32_t> order;
    for (std::int64_t iter = 0; iter < config.iterations_sr; ++iter) {
        const std::size_t slot = static_cast<std::size_t>(iter) % views_lr.size();
        if (slot == 0)
            order = epoch_view_order(config.seed, static_cast<std::uint64_t>(iter) / views_lr.size(),
                                     views_lr.size());
        const std::uint32_t v = order[slot];

        const RenderResult res = rasterize(scene, views_hr[v], opts);
        auto [loss_mse, d_image] = mse_subpixel_loss(res.image, *views_lr[v].target,
                                                     config.sr_factor);

        TelemetryRow row;
        row.iter = iter;
        row.loss_mse = loss_mse;
        row.arm = use_sds ? "sds" : "mse";
        if (use_sds) {
            RngStream t_rng(config.seed, static_cast<std::uint64_t>(iter), RngPurpose::Timestep);
            RngStream eps_rng(config.seed, static_cast<std::uint64_t>(iter), RngPurpose::SdsNoise);
            RngStream prior_rng(config.seed, static_cast<std::uint64_t>(iter),
                                RngPurpose::PriorNoise);
            const int t = sample_timestep(iter, ann, t_rng, config.anneal_enabled);
            const ImageBuffer sds = sds_pixel_grad(res.image, *views_lr[v].target, t, oracles[v],
                                                   sched, config.w_mode, eps_rng, prior_rng);
            for (std::size_t i = 0; i < d_image.pixels.size(); ++i)
                d_image.pixels[i] += config.lambda_sds * sds.pixels[i];
            row.t = t;
            row.lb = config.anneal_enabled ? ann.lower_bound(iter) : 1;
        }

        const ParamGrads grads = rasterize_backward(scene, views_hr[v], res.aux, d_image);
        const std::vector<bool> visibility = res.aux.contributing_mask(scene.primitives.size());
        accumulate_stats(stats, grads, visibility, &res.aux.projections);

        const GradStats gs = visible_grad_stats(grads, visibility);
        row.grad_mean = gs.mean;
        row.grad_max = gs.max;

        adam_step(scene, grads, adam, config);
        if (densify_due(iter, config.iterations_sr, config))
            densify_and_prune(scene, adam, stats, config, config.dropout_enabled, iter);
        row.n_prims = scene.primitives.size();

        if (heldout_hr && config.psnr_interval > 0 && iter % config.psnr_interval == 0) {
            RenderOptions eval_opts;
            eval_opts.background = config.background;
            eval_opts.threads = config.threads;
            double total = 0.0;
            for (const auto& hv : *heldout_hr)
                total += psnr(rasterize(scene, hv, eval_opts).image, *hv.target);
            row.psnr = total / static_cast<double>(heldout_hr->size());
        }
        telemetry.push_back(std::move(row));
    }
    return {std::move(scene), std::move(telemetry)};
}

namespace {

double coefficient_of_variation(const std::vector<TelemetryRow>& rows) {
    if (rows.empty()) return 0.0;
    double mean = 0.0;
    for (const auto& r : rows) mean += r.grad_mean;
    mean /= static_cast<double>(rows.size());
    double var = 0.0;
    for (const auto& r : rows) {
        const double d = r.grad_mean - mean;
        var += d * d;
    }
    var /= static_cast<double>(rows.size());
    return mean > 0.0 ? std::sqrt(var) / mean : 0.0;
}

} // namespace

TraceSummary trace_gradients(const Scene& init, const std::vector<CameraView>& views_lr,
                             const std::vector<PriorOracle>& oracles, TrainConfig config,
                             const std::string& out_dir) {
    config.densify_enabled = false;

    TrainConfig mse_cfg = config;
    mse_cfg.lambda_sds = 0.0;
    TrainConfig vanilla_cfg = config;
    vanilla_cfg.anneal_enabled = false;
    TrainConfig annealed_cfg = config;
    annealed_cfg.anneal_enabled = true;

    const auto mse_rows = train_sr(init, views_lr, oracles, mse_cfg).second;
    const auto vanilla_rows = train_sr(init, views_lr, oracles, vanilla_cfg).second;
    const auto annealed_rows = train_sr(init, views_lr, oracles, annealed_cfg).second;

    write_telemetry_csv(mse_rows, out_dir + "/mse.csv");
    write_telemetry_csv(vanilla_rows, out_dir + "/sds_vanilla.csv");
    write_telemetry_csv(annealed_rows, out_dir + "/sds_annealed.csv");

    TraceSummary summary;
    summary.cv_mse = coefficient_of_variation(mse_rows);
    summary.cv_sds_vanilla = coefficient_of_variation(vanilla_rows);
    summary.cv_sds_annealed = coefficient_of_variation(annealed_rows);

    auto stats_line = [](const char* arm, const std::vector<TelemetryRow>& rows, double cv) {
        double mean = 0.0;
        for (const auto& r : rows) mean += r.grad_mean;
        if (!rows.empty()) mean /= static_cast<double>(rows.size());
        const double std_dev = cv * mean;
        char buf[256];
        std::snprintf(buf, sizeof(buf), "%s,%zu,%.17g,%.17g,%.17g\n", arm, rows.size(), mean,
                      std_dev, cv);
        return std::string(buf);
    };
    std::string csv = "arm,iters,grad_mean,grad_std,cv\n";
    csv += stats_line("mse", mse_rows, summary.cv_mse);
    csv += stats_line("sds_vanilla", vanilla_rows, summary.cv_sds_vanilla);
    csv += stats_line("sds_annealed", annealed_rows, summary.cv_sds_annealed);
    atomic_write(out_dir + "/summary.csv", csv);
    return summary;
}

} // namespace splatsr
