#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <optional>
#include <vector>

#include "splatsr/errors.hpp"

namespace splatsr {

using Eigen::Matrix2d;
using Eigen::Matrix3d;
using Eigen::Matrix4d;
using Eigen::Vector2d;
using Eigen::Vector3d;
using Eigen::Vector4d;

/// H x W x 3 image, row-major, nominal range [0,1]. Values are clamped only
/// at export, never inside the differentiable path.
struct ImageBuffer {
    int width = 0;
    int height = 0;
    std::vector<double> pixels; // height * width * 3

    ImageBuffer() = default;
    ImageBuffer(int w, int h) : width(w), height(h), pixels(static_cast<std::size_t>(w) * h * 3, 0.0) {}

    double& at(int x, int y, int c) { return pixels[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }
    double at(int x, int y, int c) const { return pixels[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }

    bool same_shape(const ImageBuffer& o) const { return width == o.width && height == o.height; }
    std::size_t size() const { return pixels.size(); }
    bool all_finite() const;
};

/// One splat. Parameters are stored unconstrained (log/logit space) so that
/// optimizer steps can never violate positivity.
struct GaussianPrimitive {
    Vector3d position = Vector3d::Zero();
    Vector3d log_scale = Vector3d::Zero();      // axis lengths = exp(log_scale)
    Vector4d rotation = Vector4d(1, 0, 0, 0);   // unnormalized quaternion (w,x,y,z)
    double opacity_logit = 0.0;                 // opacity = logistic(opacity_logit)
    Vector3d color_logit = Vector3d::Zero();    // color = logistic per channel
};

struct Scene {
    std::vector<GaussianPrimitive> primitives;
    double extent = 0.0; // radius of the bounding sphere of the initial positions

    std::size_t size() const { return primitives.size(); }
};

/// Intrinsics/extrinsics for one view, optionally paired with a target image.
/// Camera convention: x right, y down, z forward; depth is camera-frame z.
struct CameraView {
    Matrix4d world_to_camera = Matrix4d::Identity();
    Vector2d focal = Vector2d(1, 1);            // pixels
    Vector2d principal_point = Vector2d(0, 0);  // pixels
    int width = 0;
    int height = 0;
    std::optional<ImageBuffer> target;

    Matrix3d rotation() const { return world_to_camera.topLeftCorner<3, 3>(); }
    Vector3d translation() const { return world_to_camera.topRightCorner<3, 1>(); }

    /// Same pose at 1/factor resolution; dims must divide exactly.
    CameraView scaled_down(int factor) const;

    /// Same pose at factor x resolution.
    CameraView scaled_up(int factor) const;

    /// Throws InvalidParameterError on bad focal, non-orthonormal rotation,
    /// or a target image that does not match width x height.
    void validate() const;
};

struct ActivatedParams {
    Vector3d scale;          // exp(log_scale), strictly positive
    double opacity;          // logistic(opacity_logit), in (0,1)
    Vector3d color;          // per-channel logistic, in (0,1)
    Vector4d unit_rotation;  // rotation normalized to unit length
};

inline double logistic(double x) { return 1.0 / (1.0 + std::exp(-x)); }
inline double logit(double p) { return std::log(p / (1.0 - p)); }

/// Rotation matrix from a unit quaternion (w,x,y,z).
Matrix3d quat_to_rotation(const Vector4d& q);

ActivatedParams activate(const GaussianPrimitive& p);

/// Sigma = R * diag(exp(log_scale))^2 * R^T with R from the normalized
/// rotation vector. Throws on zero-norm rotation.
Matrix3d build_covariance(const Vector3d& log_scale, const Vector4d& rotation);

/// Deterministic random scene: positions uniform in the ball of the given
/// radius, color logits uniform in [-2,2], opacity logits uniform in [0,3],
/// log-scales uniform in [ln(0.02*extent), ln(0.08*extent)], random unit
/// rotations. Scene extent is recomputed from the generated positions.
Scene make_synthetic_scene(std::uint64_t seed, std::size_t n, double extent);

/// Cameras evenly spaced on a horizontal circle of the given radius, all
/// looking at the origin. focal_x = (width/2)/tan(fov/2), square pixels.
/// phase_deg shifts every azimuth, e.g. to interleave a held-out ring.
std::vector<CameraView> make_camera_ring(std::size_t n_views, double radius, double fov_deg,
                                         int width, int height, double phase_deg = 0.0);

} // namespace splatsr
