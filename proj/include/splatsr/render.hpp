#pragma once

#include <cstdint>
#include <vector>

#include "splatsr/scene.hpp"

namespace splatsr {

constexpr double kNearPlane = 0.01;        // world units
constexpr double kGuardBand = 1.3;         // frustum cull margin, times image size
constexpr double kCovRegularization = 0.3; // px^2, added to cov2d diagonal
constexpr double kAlphaCap = 0.99;
constexpr double kAlphaSkip = 1.0 / 255.0; // contributions below this are skipped
constexpr double kTransmittanceStop = 1e-4;

/// Screen-space footprint of one projected primitive.
struct Projection2D {
    Vector3d ndc = Vector3d::Zero();          // perspective-divided coords, [-1,1] nominal
    Vector2d pixel_center = Vector2d::Zero(); // continuous pixel coords, centers at i+0.5
    Matrix2d cov2d = Matrix2d::Zero();        // px^2, regularized
    double depth = 0.0;                       // camera-frame z
    bool culled = true;
    // cached for compositing and backward
    Matrix2d cov2d_inv = Matrix2d::Zero();
    double pixel_radius = 0.0; // outside this radius alpha is provably < 1/255
};

/// Per-pixel ordered contribution record; enough to replay the forward
/// compositing expression exactly in the backward pass.
struct PixelRecord {
    std::uint32_t prim;   // primitive index in the scene
    double weight;        // exp(-q/2), in (0,1]
    double transmittance; // T before this contribution, strictly decreasing
};

struct RenderAux {
    std::vector<Projection2D> projections;   // per primitive
    std::vector<PixelRecord> records;        // row-major by pixel
    std::vector<std::uint32_t> offsets;      // per-pixel start into records, size W*H+1
    std::vector<double> final_transmittance; // per pixel
    Vector3d background = Vector3d::Zero();  // the compositing background, needed for replay
    int width = 0;
    int height = 0;

    /// Primitives with at least one contribution record.
    std::vector<bool> contributing_mask(std::size_t n_primitives) const;
};

struct RenderOptions {
    Vector3d background = Vector3d::Zero();
    bool keep_aux = false;
    int threads = 1; // forward row parallelism; output is thread-count independent
};

struct RenderResult {
    ImageBuffer image;
    RenderAux aux; // populated only when keep_aux
};

/// EWA projection of one primitive: cov2d = J W Sigma W^T J^T + 0.3 I, with J
/// the projection Jacobian at the mean. Culled when depth <= near plane or the
/// pixel center falls outside the 1.3x guard band; culling is a value, not an
/// error.
Projection2D project_gaussian(const GaussianPrimitive& p, const CameraView& cam);

/// Front-to-back alpha compositing over a global depth sort (ties broken by
/// primitive index). alpha = min(0.99, opacity * exp(-q/2)); contributions
/// with alpha < 1/255 are skipped; compositing stops before the contribution
/// that would drop transmittance below 1e-4.
RenderResult rasterize(const Scene& scene, const CameraView& cam, const RenderOptions& opts = {});

enum class DownsampleMode { Bilinear, Area };

/// Bilinear mode samples at destination pixel centers mapped into source
/// coordinates with half-pixel alignment; area mode averages each
/// factor x factor block. Dims must be divisible by factor.
ImageBuffer downsample(const ImageBuffer& img, int factor, DownsampleMode mode);

/// Adjoint of bilinear downsample: scatters a low-res gradient back through
/// the interpolation weights onto the high-res grid.
ImageBuffer downsample_bilinear_backward(const ImageBuffer& lr_grad, int factor);

ImageBuffer upsample_bilinear(const ImageBuffer& img, int factor);
ImageBuffer upsample_bicubic(const ImageBuffer& img, int factor); // Catmull-Rom

} // namespace splatsr
