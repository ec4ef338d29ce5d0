#pragma once

#include <optional>

#include "splatsr/rng.hpp"
#include "splatsr/scene.hpp"

namespace splatsr {

/// DDPM-style linear variance schedule. Timesteps are 1-based everywhere in
/// the public interface; arrays are 0-based internally (t -> index t-1).
struct DiffusionSchedule {
    int T = 0;
    std::vector<double> beta;      // size T
    std::vector<double> alpha_bar; // cumulative product of (1 - beta), size T

    double abar(int t) const { return alpha_bar[static_cast<std::size_t>(t) - 1]; }
};

DiffusionSchedule build_schedule(int T, double beta_start, double beta_end);

/// x_t = sqrt(abar_t) x0 + sqrt(1 - abar_t) eps, elementwise.
ImageBuffer add_noise(const ImageBuffer& x0, int t, const ImageBuffer& eps,
                      const DiffusionSchedule& sched);

/// Timestep lower-bound staircase: LB(i) = max(t_min, T - floor(i/N) * delta).
struct AnnealState {
    int T = 0;
    int N = 1;      // iterations per staircase step
    int t_min = 1;  // floor
    int delta = 1;  // decrement per step

    int lower_bound(std::int64_t iteration) const;
};

/// t ~ U{LB(i) .. T}; with annealing disabled, t ~ U{1 .. T}.
int sample_timestep(std::int64_t iteration, const AnnealState& ann, RngStream& rng,
                    bool annealed = true);

enum class PriorMode { Perfect, Noisy, Bicubic };

/// Closed-form stand-in for a pretrained denoiser. Perfect mode inverts the
/// noising process against a known high-resolution reference; noisy mode adds
/// unit-normal prediction error scaled by sigma_p; bicubic mode builds its
/// reference by upsampling the low-resolution conditioning image.
struct PriorOracle {
    PriorMode mode = PriorMode::Perfect;
    std::optional<ImageBuffer> hr_reference;
    double sigma_p = 0.0;
};

/// eps_hat = (x_t - sqrt(abar_t) * ref) / sqrt(1 - abar_t), plus sigma_p * eta
/// in noisy mode. ref is hr_reference (perfect/noisy) or the bicubic upsample
/// of x_lr (bicubic mode).
ImageBuffer prior_epsilon(const PriorOracle& oracle, const ImageBuffer& x_t,
                          const ImageBuffer& x_lr, int t, const DiffusionSchedule& sched,
                          RngStream& rng);

enum class WMode { Const, OneMinusAbar };

/// Draws eps, noises x0 to x_t, queries the oracle, and returns the per-pixel
/// distillation gradient w(t) * (eps_hat - eps). The caller scales by lambda
/// and feeds it to rasterize_backward as dL/dimage.
ImageBuffer sds_pixel_grad(const ImageBuffer& x0, const ImageBuffer& x_lr, int t,
                           const PriorOracle& oracle, const DiffusionSchedule& sched,
                           WMode w_mode, RngStream& eps_rng, RngStream& prior_rng);

} // namespace splatsr
