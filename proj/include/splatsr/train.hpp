#pragma once

#include <limits>
#include <string>
#include <utility>

#include "splatsr/densify.hpp"
#include "splatsr/diffusion.hpp"

namespace splatsr {

struct TrainConfig {
    // joint objective: L = L_mse + lambda * L_sds
    double lambda_sds = 0.001;
    WMode w_mode = WMode::Const;

    // variance mitigations
    bool dropout_enabled = true;
    double dropout_p = 0.7;
    bool anneal_enabled = true;
    int anneal_N = 100;   // iterations per lower-bound step
    int anneal_delta = 1; // lower-bound decrement per step
    int t_min = 1;

    // noise schedule (desk-scale default keeps abar_T ~ 1e-5 like the
    // canonical 1000-step schedule, at 1/10 the cost)
    int T = 100;
    double beta_start = 1e-3;
    double beta_end = 0.2;

    // prior oracle
    PriorMode prior_mode = PriorMode::Perfect;
    double sigma_p = 0.0;

    // densification
    bool densify_enabled = true;
    double tau_pos = 2e-4;
    double percent_dense = 0.01;
    double opacity_min = 0.005;
    int densify_from = 100;
    int densify_interval = 200;
    double densify_until_frac = 0.6;

    // optimization
    int iterations_lr = 2000;
    int iterations_sr = 2000;
    double lr_position = 1.6e-4; // multiplied by scene extent
    double lr_log_scale = 5e-3;
    double lr_rotation = 1e-3;
    double lr_opacity = 5e-2;
    double lr_color = 2.5e-3;

    // setup
    std::uint64_t seed = 1;
    int sr_factor = 4;
    int init_primitives = 50;
    double init_extent = 1.0;
    Vector3d background = Vector3d::Zero();
    int threads = 1;
    int psnr_interval = 0; // 0 disables per-iteration held-out PSNR

    void validate() const; // throws InvalidParameterError on bound violations
};

/// Adam moments mirroring the scene parameter arrays; one shared step counter.
struct AdamState {
    std::vector<Vector3d> m_position, v_position;
    std::vector<Vector3d> m_log_scale, v_log_scale;
    std::vector<Vector4d> m_rotation, v_rotation;
    std::vector<double> m_opacity, v_opacity;
    std::vector<Vector3d> m_color, v_color;
    std::int64_t step = 0;

    static AdamState zeros(std::size_t n);
    std::size_t size() const { return m_position.size(); }
    /// Reindex after densify: source[j] is the old index whose moments the
    /// new primitive j inherits, or -1 for zero-initialized children.
    void remap(const std::vector<std::int64_t>& source);
    /// Keep only the listed old indices (after prune), preserving order.
    void compact(const std::vector<std::uint32_t>& kept);
};

/// One bias-corrected Adam update, beta = (0.9, 0.999), eps = 1e-15.
/// Per-group learning rates from the config; position lr scales with extent.
void adam_step(Scene& scene, const ParamGrads& grads, AdamState& state,
               const TrainConfig& config);

/// Sub-pixel constraint: MSE between the bilinearly downsampled render and
/// the low-resolution target (mean reduction), with the gradient pushed back
/// through the interpolation weights onto the full-resolution image.
/// factor = 1 reduces to plain per-pixel MSE.
std::pair<double, ImageBuffer> mse_subpixel_loss(const ImageBuffer& hr_render,
                                                 const ImageBuffer& lr_target, int factor);

struct TelemetryRow {
    std::int64_t iter = 0;
    double loss_mse = 0.0;
    std::string arm;     // "mse" or "sds"
    int t = 0;           // sampled timestep, 0 when no distillation draw
    int lb = 0;          // annealing lower bound at this iteration
    double grad_mean = 0.0; // mean ||ndc_grad|| over visible primitives
    double grad_max = 0.0;
    std::size_t n_prims = 0;
    double psnr = std::numeric_limits<double>::quiet_NaN(); // held-out, optional
};

/// Stage 1: fit the low-resolution scene by plain MSE with densification.
/// Views must carry target images. Deterministic for a fixed config.
Scene train_lr(const std::vector<CameraView>& views_lr, const TrainConfig& config);

/// Stage 2: joint MSE + lambda * SDS at high resolution, starting from the
/// stage-1 scene. One oracle per view. heldout_hr (optional) supplies target
/// images for the telemetry PSNR column at config.psnr_interval cadence.
std::pair<Scene, std::vector<TelemetryRow>> train_sr(
    const Scene& init, const std::vector<CameraView>& views_lr,
    const std::vector<PriorOracle>& oracles, const TrainConfig& config,
    const std::vector<CameraView>* heldout_hr = nullptr);

struct TraceSummary {
    double cv_mse = 0.0;
    double cv_sds_vanilla = 0.0;
    double cv_sds_annealed = 0.0;
};

/// Paired fixed-seed arms from the same starting scene, recording the
/// per-iteration mean screen-space gradient: an MSE-only arm, a vanilla
/// uniform-timestep distillation arm, and an annealed one. Writes one CSV
/// per arm plus summary.csv (arm, iters, mean, std, cv) into out_dir, and
/// returns the coefficients of variation. Densification is disabled so the
/// traces measure gradient noise, not population change.
TraceSummary trace_gradients(const Scene& init, const std::vector<CameraView>& views_lr,
                             const std::vector<PriorOracle>& oracles, TrainConfig config,
                             const std::string& out_dir);

} // namespace splatsr
