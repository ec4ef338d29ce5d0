#pragma once

#include "splatsr/render.hpp"

namespace splatsr {

/// Per-primitive parameter gradients plus the screen-space position gradient
/// that drives densification.
struct ParamGrads {
    std::vector<Vector3d> position;
    std::vector<Vector3d> log_scale;
    std::vector<Vector4d> rotation;
    std::vector<double> opacity_logit;
    std::vector<Vector3d> color_logit;
    std::vector<Vector2d> ndc_grad; // dL/d(ndc mean), x and y components

    static ParamGrads zeros(std::size_t n);
    std::size_t size() const { return position.size(); }
    bool all_finite() const;
};

/// Exact derivative of the forward compositing expression. The alpha cap, the
/// 1/255 skip, the transmittance stop and frustum culling are hard gates with
/// zero gradient beyond them; everything that did contribute is replayed from
/// the aux records bit-for-bit.
ParamGrads rasterize_backward(const Scene& scene, const CameraView& cam, const RenderAux& aux,
                              const ImageBuffer& dL_dimage);

/// Loss used by the finite-difference harness: a fixed linear functional of
/// the image, loss = sum over pixels/channels of weight * value. Its image
/// gradient is the weight buffer itself, so analytic and numeric differences
/// probe only the renderer.
struct LossSpec {
    ImageBuffer pixel_weights;
    Vector3d background = Vector3d::Zero();
};

struct FdReport {
    double position = 0.0;
    double log_scale = 0.0;
    double rotation = 0.0;
    double opacity = 0.0;
    double color = 0.0;

    double worst() const;
};

/// Central finite differences on every scalar parameter; reports the worst
/// relative error |analytic - numeric| / max(|analytic|, |numeric|, 1e-6)
/// per parameter group.
FdReport finite_diff_check(const Scene& scene, const CameraView& cam, const LossSpec& loss,
                           double h);

} // namespace splatsr
