#include "splatsr/grad.hpp"

#include <cmath>

namespace splatsr {

ParamGrads ParamGrads::zeros(std::size_t n) {
    ParamGrads g;
    g.position.assign(n, Vector3d::Zero());
    g.log_scale.assign(n, Vector3d::Zero());
    g.rotation.assign(n, Vector4d::Zero());
    g.opacity_logit.assign(n, 0.0);
    g.color_logit.assign(n, Vector3d::Zero());
    g.ndc_grad.assign(n, Vector2d::Zero());
    return g;
}

bool ParamGrads::all_finite() const {
    for (std::size_t i = 0; i < size(); ++i) {
        if (!position[i].allFinite() || !log_scale[i].allFinite() || !rotation[i].allFinite() ||
            !std::isfinite(opacity_logit[i]) || !color_logit[i].allFinite() ||
            !ndc_grad[i].allFinite())
            return false;
    }
    return true;
}

namespace {

// dR/dq for a unit quaternion (w,x,y,z), matching quat_to_rotation.
void rotation_jacobians(const Vector4d& q, Matrix3d dR[4]) {
    const double w = q[0], x = q[1], y = q[2], z = q[3];
    dR[0] << 0, -2 * z, 2 * y,
             2 * z, 0, -2 * x,
             -2 * y, 2 * x, 0;
    dR[1] << 0, 2 * y, 2 * z,
             2 * y, -4 * x, -2 * w,
             2 * z, 2 * w, -4 * x;
    dR[2] << -4 * y, 2 * x, 2 * w,
             2 * x, 0, 2 * z,
             -2 * w, 2 * z, -4 * y;
    dR[3] << -4 * z, -2 * w, 2 * x,
             2 * w, -4 * z, 2 * y,
             2 * x, 2 * y, 0;
}

} // namespace

ParamGrads rasterize_backward(const Scene& scene, const CameraView& cam, const RenderAux& aux,
                              const ImageBuffer& dL_dimage) {
    const std::size_t n = scene.primitives.size();
    if (aux.projections.size() != n)
        throw InconsistentStateError("aux does not match the scene primitive count");
    if (aux.width != cam.width || aux.height != cam.height)
        throw InconsistentStateError("aux does not match the camera resolution");
    if (dL_dimage.width != cam.width || dL_dimage.height != cam.height)
        throw InvalidParameterError("image gradient dims do not match the view");

    ParamGrads g = ParamGrads::zeros(n);

    std::vector<ActivatedParams> act(n);
    for (std::size_t i = 0; i < n; ++i) act[i] = activate(scene.primitives[i]);

    // stage 1: sweep pixels, accumulating per-primitive gradients on the
    // screen-space quantities (pixel center, cov2d) and on opacity/color
    std::vector<Vector2d> d_center(n, Vector2d::Zero());
    std::vector<Matrix2d> d_cov2d(n, Matrix2d::Zero());
    std::vector<double> d_opacity(n, 0.0);
    std::vector<Vector3d> d_color(n, Vector3d::Zero());

    for (int y = 0; y < aux.height; ++y) {
        for (int x = 0; x < aux.width; ++x) {
            const std::size_t pix = static_cast<std::size_t>(y) * aux.width + x;
            const std::uint32_t k0 = aux.offsets[pix], k1 = aux.offsets[pix + 1];
            if (k0 == k1) continue;
            const Vector3d dLdC(dL_dimage.at(x, y, 0), dL_dimage.at(x, y, 1),
                                dL_dimage.at(x, y, 2));
            const Vector2d pixel(x + 0.5, y + 0.5);

            // suffix S_k = sum_{j>k} c_j a_j T_j + bg * T_final; walking the
            // records back-to-front keeps it incremental
            Vector3d suffix = aux.background * aux.final_transmittance[pix];
            for (std::uint32_t k = k1; k-- > k0;) {
                const PixelRecord& rec = aux.records[k];
                const std::uint32_t i = rec.prim;
                const double o = act[i].opacity;
                const double weight = rec.weight;
                const double trans = rec.transmittance;
                const double alpha_raw = o * weight;
                const bool capped = alpha_raw > kAlphaCap;
                const double alpha = capped ? kAlphaCap : alpha_raw;

                d_color[i] += dLdC * (alpha * trans);
                const double dLdalpha =
                    dLdC.dot(act[i].color) * trans - dLdC.dot(suffix) / (1.0 - alpha);
                if (!capped) {
                    d_opacity[i] += dLdalpha * weight;
                    const double dLdw = dLdalpha * o;
                    const double dLdq = -0.5 * weight * dLdw; // w = exp(-q/2)
                    const Vector2d d = pixel - aux.projections[i].pixel_center;
                    const Vector2d ad = aux.projections[i].cov2d_inv * d;
                    d_center[i] += -dLdq * 2.0 * ad;    // dq/dd = 2 A d, d = pix - center
                    d_cov2d[i] += -dLdq * (ad * ad.transpose()); // through A = cov2d^-1
                }
                suffix += act[i].color * (alpha * trans);
            }
        }
    }

    // stage 2: chain screen-space gradients through projection, covariance
    // construction and activations, one primitive at a time
    const Matrix3d rot_w2c = cam.rotation();
    const Vector3d trans_w2c = cam.translation();
    const double fx = cam.focal.x(), fy = cam.focal.y();

    for (std::size_t i = 0; i < n; ++i) {
        const auto& pr = aux.projections[i];

        // color/opacity logits: logistic chain
        for (int c = 0; c < 3; ++c) {
            const double col = act[i].color[c];
            g.color_logit[i][c] = d_color[i][c] * col * (1.0 - col);
        }
        g.opacity_logit[i] = d_opacity[i] * act[i].opacity * (1.0 - act[i].opacity);

        if (pr.culled) continue; // hard gate: no screen-space gradient

        g.ndc_grad[i] = Vector2d(d_center[i].x() * cam.width * 0.5,
                                 d_center[i].y() * cam.height * 0.5);

        const GaussianPrimitive& p = scene.primitives[i];
        const Vector3d t = rot_w2c * p.position + trans_w2c;
        const double tz = t.z(), tz2 = tz * tz, tz3 = tz2 * tz;

        Eigen::Matrix<double, 2, 3> jac;
        jac << fx / tz, 0.0, -fx * t.x() / tz2,
               0.0, fy / tz, -fy * t.y() / tz2;
        const Matrix3d rot = quat_to_rotation(act[i].unit_rotation);
        const Matrix3d m = rot * act[i].scale.asDiagonal();
        const Matrix3d sigma = m * m.transpose();
        const Matrix3d v = rot_w2c * sigma * rot_w2c.transpose();

        // cov2d = J V J^T (regularization is additive, identity chain)
        const Matrix2d& big_g = d_cov2d[i];
        const Matrix3d d_v = jac.transpose() * big_g * jac;
        const Eigen::Matrix<double, 2, 3> d_jac = 2.0 * big_g * jac * v;

        Vector3d d_t = Vector3d::Zero();
        // J entries depend on t: J00 = fx/tz, J02 = -fx tx/tz^2, etc.
        d_t.x() += d_jac(0, 2) * (-fx / tz2);
        d_t.y() += d_jac(1, 2) * (-fy / tz2);
        d_t.z() += d_jac(0, 0) * (-fx / tz2) + d_jac(1, 1) * (-fy / tz2) +
                   d_jac(0, 2) * (2.0 * fx * t.x() / tz3) +
                   d_jac(1, 2) * (2.0 * fy * t.y() / tz3);
        // pixel center: px = fx tx/tz + cx, py = fy ty/tz + cy
        d_t.x() += d_center[i].x() * (fx / tz);
        d_t.y() += d_center[i].y() * (fy / tz);
        d_t.z() += d_center[i].x() * (-fx * t.x() / tz2) + d_center[i].y() * (-fy * t.y() / tz2);

        g.position[i] = rot_w2c.transpose() * d_t;

        // V = W Sigma W^T; Sigma = M M^T; M = R diag(s)
        const Matrix3d d_sigma = rot_w2c.transpose() * d_v * rot_w2c;
        const Matrix3d d_m = 2.0 * d_sigma * m;
        const Matrix3d d_rot = d_m * act[i].scale.asDiagonal();
        for (int j = 0; j < 3; ++j) {
            const double d_s = rot.col(j).dot(d_m.col(j));
            g.log_scale[i][j] = d_s * act[i].scale[j]; // s = exp(log_scale)
        }

        Matrix3d dR[4];
        rotation_jacobians(act[i].unit_rotation, dR);
        Vector4d d_unit;
        for (int j = 0; j < 4; ++j) d_unit[j] = (d_rot.array() * dR[j].array()).sum();
        // normalization chain: u = q/|q|
        const double norm = p.rotation.norm();
        const Vector4d u = act[i].unit_rotation;
        g.rotation[i] = (d_unit - u * u.dot(d_unit)) / norm;
    }

    return g;
}

double FdReport::worst() const {
    return std::max({position, log_scale, rotation, opacity, color});
}

namespace {

double linear_loss(const Scene& scene, const CameraView& cam, const LossSpec& spec) {
    RenderOptions opts;
    opts.background = spec.background;
    const RenderResult res = rasterize(scene, cam, opts);
    double loss = 0.0;
    for (std::size_t i = 0; i < res.image.pixels.size(); ++i)
        loss += spec.pixel_weights.pixels[i] * res.image.pixels[i];
    return loss;
}

double rel_err(double analytic, double numeric) {
    return std::abs(analytic - numeric) /
           std::max({std::abs(analytic), std::abs(numeric), 1e-6});
}

} // namespace

FdReport finite_diff_check(const Scene& scene, const CameraView& cam, const LossSpec& spec,
                           double h) {
    if (!(h > 0.0)) throw InvalidParameterError("finite-difference step must be positive");

    RenderOptions opts;
    opts.background = spec.background;
    opts.keep_aux = true;
    const RenderResult res = rasterize(scene, cam, opts);
    const ParamGrads g = rasterize_backward(scene, cam, res.aux, spec.pixel_weights);

    FdReport report;
    Scene work = scene;
    auto probe = [&](double& param, double analytic, double& slot) {
        const double saved = param;
        param = saved + h;
        const double up = linear_loss(work, cam, spec);
        param = saved - h;
        const double down = linear_loss(work, cam, spec);
        param = saved;
        slot = std::max(slot, rel_err(analytic, (up - down) / (2.0 * h)));
    };

    for (std::size_t i = 0; i < scene.primitives.size(); ++i) {
        GaussianPrimitive& p = work.primitives[i];
        for (int j = 0; j < 3; ++j) probe(p.position[j], g.position[i][j], report.position);
        for (int j = 0; j < 3; ++j) probe(p.log_scale[j], g.log_scale[i][j], report.log_scale);
        for (int j = 0; j < 4; ++j) probe(p.rotation[j], g.rotation[i][j], report.rotation);
        probe(p.opacity_logit, g.opacity_logit[i], report.opacity);
        for (int j = 0; j < 3; ++j) probe(p.color_logit[j], g.color_logit[i][j], report.color);
    }
    return report;
}

} // namespace splatsr
