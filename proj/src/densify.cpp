#include "splatsr/densify.hpp"

#include <cmath>

namespace splatsr {

void DensifyStats::reset(std::size_t n) {
    grad_norm_sum.assign(n, 0.0);
    view_count.assign(n, 0);
    max_pixel_radius.assign(n, 0.0);
}

void accumulate_stats(DensifyStats& stats, const ParamGrads& grads,
                      const std::vector<bool>& visibility,
                      const std::vector<Projection2D>* projections) {
    const std::size_t n = stats.size();
    if (grads.size() != n || visibility.size() != n ||
        (projections && projections->size() != n))
        throw InconsistentStateError("densify stats arrays out of sync with the scene");

    for (std::size_t i = 0; i < n; ++i) {
        if (!visibility[i]) continue;
        stats.grad_norm_sum[i] += grads.ndc_grad[i].norm();
        stats.view_count[i] += 1;
        if (projections)
            stats.max_pixel_radius[i] =
                std::max(stats.max_pixel_radius[i], (*projections)[i].pixel_radius);
    }
}

std::vector<std::uint32_t> select_candidates(const DensifyStats& stats, double tau_pos) {
    if (!(tau_pos > 0.0)) throw InvalidParameterError("tau_pos must be positive");
    std::vector<std::uint32_t> out;
    for (std::size_t i = 0; i < stats.size(); ++i) {
        if (stats.view_count[i] > 0 &&
            stats.grad_norm_sum[i] / stats.view_count[i] > tau_pos)
            out.push_back(static_cast<std::uint32_t>(i));
    }
    return out;
}

std::vector<std::uint32_t> dropout_mask(const std::vector<std::uint32_t>& candidates, double p,
                                        RngStream& rng) {
    if (p < 0.0 || p > 1.0) throw InvalidParameterError("dropout probability must be in [0,1]");
    std::vector<std::uint32_t> retained;
    retained.reserve(candidates.size());
    for (std::uint32_t idx : candidates)
        if (!(rng.uniform() < p)) retained.push_back(idx);
    return retained;
}

DensifyOutcome densify_apply(const Scene& scene, const std::vector<std::uint32_t>& retained,
                             double percent_dense, RngStream& rng) {
    const std::size_t n = scene.primitives.size();
    std::vector<bool> is_split(n, false);
    std::vector<bool> is_retained(n, false);
    for (std::uint32_t idx : retained) {
        if (idx >= n) throw InvalidParameterError("retained index out of range");
        is_retained[idx] = true;
    }

    const double scale_limit = percent_dense * scene.extent;
    for (std::uint32_t idx : retained) {
        const ActivatedParams a = activate(scene.primitives[idx]);
        is_split[idx] = a.scale.maxCoeff() > scale_limit;
    }

    DensifyOutcome out;
    out.scene.extent = scene.extent;
    out.scene.primitives.reserve(n + retained.size());
    // survivors first (split parents removed), original order preserved
    for (std::size_t i = 0; i < n; ++i) {
        if (is_split[i]) continue;
        out.scene.primitives.push_back(scene.primitives[i]);
        out.moment_source.push_back(static_cast<std::int64_t>(i));
    }
    // appended children, ascending source index
    const double shrink = std::log(1.6);
    for (std::uint32_t idx : retained) {
        const GaussianPrimitive& parent = scene.primitives[idx];
        if (!is_split[idx]) { // clone: exact copy
            out.scene.primitives.push_back(parent);
            out.moment_source.push_back(-1);
            continue;
        }
        const ActivatedParams a = activate(parent);
        const Matrix3d m = quat_to_rotation(a.unit_rotation) * a.scale.asDiagonal();
        for (int child = 0; child < 2; ++child) {
            GaussianPrimitive c = parent;
            Vector3d z;
            for (int j = 0; j < 3; ++j) z[j] = rng.normal(); // sequenced for portability
            c.position = parent.position + m * z; // sample from the parent's own Gaussian
            c.log_scale = parent.log_scale.array() - shrink;
            out.scene.primitives.push_back(c);
            out.moment_source.push_back(-1);
        }
    }
    return out;
}

PruneOutcome prune(const Scene& scene, double opacity_min) {
    if (!(opacity_min > 0.0) || !(opacity_min < 1.0))
        throw InvalidParameterError("opacity threshold must be in (0,1)");

    PruneOutcome out;
    out.scene.extent = scene.extent;
    for (std::size_t i = 0; i < scene.primitives.size(); ++i) {
        if (logistic(scene.primitives[i].opacity_logit) < opacity_min) continue;
        out.scene.primitives.push_back(scene.primitives[i]);
        out.kept.push_back(static_cast<std::uint32_t>(i));
    }
    if (out.scene.primitives.empty())
        throw InconsistentStateError("pruning removed every primitive");
    return out;
}

} // namespace splatsr
