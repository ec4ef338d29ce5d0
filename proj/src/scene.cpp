#include "splatsr/scene.hpp"

#include <cmath>

#include "splatsr/rng.hpp"

namespace splatsr {

bool ImageBuffer::all_finite() const {
    for (double v : pixels)
        if (!std::isfinite(v)) return false;
    return true;
}

CameraView CameraView::scaled_down(int factor) const {
    if (factor < 1 || width % factor != 0 || height % factor != 0)
        throw InvalidParameterError("camera dims not divisible by scale factor");
    CameraView out = *this;
    out.focal /= factor;
    out.principal_point /= factor;
    out.width = width / factor;
    out.height = height / factor;
    out.target.reset();
    return out;
}

CameraView CameraView::scaled_up(int factor) const {
    if (factor < 1) throw InvalidParameterError("scale factor must be >= 1");
    CameraView out = *this;
    out.focal *= factor;
    out.principal_point *= factor;
    out.width = width * factor;
    out.height = height * factor;
    out.target.reset();
    return out;
}

void CameraView::validate() const {
    if (!(focal.x() > 0.0) || !(focal.y() > 0.0))
        throw InvalidParameterError("camera focal must be positive");
    if (width <= 0 || height <= 0)
        throw InvalidParameterError("camera resolution must be positive");
    const Matrix3d r = rotation();
    if ((r.transpose() * r - Matrix3d::Identity()).cwiseAbs().maxCoeff() > 1e-9)
        throw InvalidParameterError("camera rotation block is not orthonormal");
    if (target && (target->width != width || target->height != height))
        throw InvalidParameterError("target image does not match camera resolution");
}

Matrix3d quat_to_rotation(const Vector4d& q) {
    const double w = q[0], x = q[1], y = q[2], z = q[3];
    Matrix3d r;
    r << 1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),
         2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
         2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y);
    return r;
}

ActivatedParams activate(const GaussianPrimitive& p) {
    ActivatedParams a;
    a.scale = p.log_scale.array().exp();
    a.opacity = logistic(p.opacity_logit);
    a.color = Vector3d(logistic(p.color_logit[0]), logistic(p.color_logit[1]),
                       logistic(p.color_logit[2]));
    const double n = p.rotation.norm();
    if (n == 0.0) throw InvalidParameterError("zero-norm rotation vector");
    a.unit_rotation = p.rotation / n;
    return a;
}

Matrix3d build_covariance(const Vector3d& log_scale, const Vector4d& rotation) {
    const double n = rotation.norm();
    if (n == 0.0) throw InvalidParameterError("zero-norm rotation vector");
    if (!log_scale.allFinite()) throw InvalidParameterError("non-finite log_scale");
    const Matrix3d r = quat_to_rotation(rotation / n);
    const Matrix3d m = r * log_scale.array().exp().matrix().asDiagonal();
    return m * m.transpose();
}

Scene make_synthetic_scene(std::uint64_t seed, std::size_t n, double extent) {
    if (n < 1) throw InvalidParameterError("scene needs at least one primitive");
    if (!(extent > 0.0)) throw InvalidParameterError("extent must be positive");

    RngStream pos_rng(seed, 0, RngPurpose::ScenePosition);
    RngStream scale_rng(seed, 0, RngPurpose::SceneScale);
    RngStream rot_rng(seed, 0, RngPurpose::SceneRotation);
    RngStream op_rng(seed, 0, RngPurpose::SceneOpacity);
    RngStream col_rng(seed, 0, RngPurpose::SceneColor);

    Scene scene;
    scene.primitives.reserve(n);
    const double log_lo = std::log(0.02 * extent);
    const double log_hi = std::log(0.08 * extent);
    for (std::size_t i = 0; i < n; ++i) {
        GaussianPrimitive p;
        // rejection sampling keeps positions exactly uniform in the ball;
        // draws are sequenced explicitly so the stream layout is portable
        do {
            for (int j = 0; j < 3; ++j) p.position[j] = pos_rng.uniform(-1, 1) * extent;
        } while (p.position.norm() > extent);
        for (int j = 0; j < 3; ++j) p.log_scale[j] = scale_rng.uniform(log_lo, log_hi);
        do {
            for (int j = 0; j < 4; ++j) p.rotation[j] = rot_rng.normal();
        } while (p.rotation.norm() < 1e-6);
        p.rotation.normalize();
        p.opacity_logit = op_rng.uniform(0.0, 3.0);
        for (int j = 0; j < 3; ++j) p.color_logit[j] = col_rng.uniform(-2, 2);
        scene.primitives.push_back(p);
    }

    Vector3d centroid = Vector3d::Zero();
    for (const auto& p : scene.primitives) centroid += p.position;
    centroid /= static_cast<double>(n);
    double radius = 0.0;
    for (const auto& p : scene.primitives)
        radius = std::max(radius, (p.position - centroid).norm());
    scene.extent = std::max(radius, 1e-6);
    return scene;
}

std::vector<CameraView> make_camera_ring(std::size_t n_views, double radius, double fov_deg,
                                         int width, int height, double phase_deg) {
    if (n_views < 1) throw InvalidParameterError("need at least one view");
    if (!(radius > 0.0)) throw InvalidParameterError("ring radius must be positive");
    if (!(fov_deg > 0.0) || !(fov_deg < 180.0))
        throw InvalidParameterError("fov must be in (0, 180) degrees");
    if (width <= 0 || height <= 0) throw InvalidParameterError("resolution must be positive");

    const double fov = fov_deg * M_PI / 180.0;
    const double fx = (width / 2.0) / std::tan(fov / 2.0);
    const Vector3d up(0, 1, 0);

    std::vector<CameraView> views;
    views.reserve(n_views);
    for (std::size_t k = 0; k < n_views; ++k) {
        const double az = 2.0 * M_PI * static_cast<double>(k) / static_cast<double>(n_views) +
                          phase_deg * M_PI / 180.0;
        const Vector3d eye(radius * std::cos(az), 0.0, radius * std::sin(az));
        const Vector3d z = (-eye).normalized();        // forward, toward origin
        const Vector3d x = z.cross(up).normalized();   // right
        const Vector3d y = z.cross(x);                 // down

        CameraView cam;
        Matrix3d r;
        r.row(0) = x.transpose();
        r.row(1) = y.transpose();
        r.row(2) = z.transpose();
        cam.world_to_camera.topLeftCorner<3, 3>() = r;
        cam.world_to_camera.topRightCorner<3, 1>() = -r * eye;
        cam.focal = Vector2d(fx, fx);
        cam.principal_point = Vector2d(width / 2.0, height / 2.0);
        cam.width = width;
        cam.height = height;
        views.push_back(cam);
    }
    return views;
}

} // namespace splatsr
