#include "splatsr/diffusion.hpp"

#include <cmath>

#include "splatsr/render.hpp"

namespace splatsr {

DiffusionSchedule build_schedule(int T, double beta_start, double beta_end) {
    if (T < 2) throw InvalidParameterError("schedule needs T >= 2");
    if (!(beta_start > 0.0) || !(beta_start <= beta_end) || !(beta_end < 1.0))
        throw InvalidParameterError("betas must satisfy 0 < beta_start <= beta_end < 1");

    DiffusionSchedule s;
    s.T = T;
    s.beta.resize(T);
    s.alpha_bar.resize(T);
    double prod = 1.0;
    for (int i = 0; i < T; ++i) {
        s.beta[i] = beta_start + (beta_end - beta_start) * i / (T - 1);
        prod *= 1.0 - s.beta[i];
        s.alpha_bar[i] = prod;
    }
    return s;
}

ImageBuffer add_noise(const ImageBuffer& x0, int t, const ImageBuffer& eps,
                      const DiffusionSchedule& sched) {
    if (t < 1 || t > sched.T) throw InvalidParameterError("timestep out of range");
    if (!x0.same_shape(eps) || x0.pixels.size() != eps.pixels.size())
        throw InvalidParameterError("noise buffer shape does not match x0");

    const double abar = sched.abar(t);
    const double signal = std::sqrt(abar);
    const double noise = std::sqrt(1.0 - abar);
    ImageBuffer xt(x0.width, x0.height);
    for (std::size_t i = 0; i < x0.pixels.size(); ++i)
        xt.pixels[i] = signal * x0.pixels[i] + noise * eps.pixels[i];
    return xt;
}

int AnnealState::lower_bound(std::int64_t iteration) const {
    const std::int64_t steps = iteration / N;
    const std::int64_t lb = static_cast<std::int64_t>(T) - steps * delta;
    return static_cast<int>(std::max<std::int64_t>(t_min, lb));
}

int sample_timestep(std::int64_t iteration, const AnnealState& ann, RngStream& rng,
                    bool annealed) {
    const int lo = annealed ? ann.lower_bound(iteration) : 1;
    return static_cast<int>(rng.uniform_int(lo, ann.T));
}

ImageBuffer prior_epsilon(const PriorOracle& oracle, const ImageBuffer& x_t,
                          const ImageBuffer& x_lr, int t, const DiffusionSchedule& sched,
                          RngStream& rng) {
    if (t < 1 || t > sched.T) throw InvalidParameterError("timestep out of range");

    ImageBuffer ref;
    if (oracle.mode == PriorMode::Bicubic) {
        if (x_lr.width <= 0 || x_t.width % x_lr.width != 0 || x_t.height % x_lr.height != 0 ||
            x_t.width / x_lr.width != x_t.height / x_lr.height)
            throw InvalidParameterError("x_lr dims do not divide the render resolution");
        ref = upsample_bicubic(x_lr, x_t.width / x_lr.width);
    } else {
        if (!oracle.hr_reference)
            throw InvalidParameterError("perfect/noisy oracle requires hr_reference");
        if (!oracle.hr_reference->same_shape(x_t))
            throw InvalidParameterError("hr_reference does not match the render resolution");
        ref = *oracle.hr_reference;
    }

    const double abar = sched.abar(t);
    const double signal = std::sqrt(abar);
    const double inv_noise = 1.0 / std::sqrt(1.0 - abar);
    ImageBuffer out(x_t.width, x_t.height);
    for (std::size_t i = 0; i < out.pixels.size(); ++i)
        out.pixels[i] = (x_t.pixels[i] - signal * ref.pixels[i]) * inv_noise;
    if (oracle.mode == PriorMode::Noisy && oracle.sigma_p > 0.0)
        for (double& v : out.pixels) v += oracle.sigma_p * rng.normal();
    return out;
}

ImageBuffer sds_pixel_grad(const ImageBuffer& x0, const ImageBuffer& x_lr, int t,
                           const PriorOracle& oracle, const DiffusionSchedule& sched,
                           WMode w_mode, RngStream& eps_rng, RngStream& prior_rng) {
    ImageBuffer eps(x0.width, x0.height);
    for (double& v : eps.pixels) v = eps_rng.normal();
    const ImageBuffer xt = add_noise(x0, t, eps, sched);
    ImageBuffer grad = prior_epsilon(oracle, xt, x_lr, t, sched, prior_rng);
    const double w = (w_mode == WMode::Const) ? 1.0 : 1.0 - sched.abar(t);
    for (std::size_t i = 0; i < grad.pixels.size(); ++i)
        grad.pixels[i] = w * (grad.pixels[i] - eps.pixels[i]);
    return grad;
}

} // namespace splatsr
