#include "splatsr/render.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <thread>

namespace splatsr {

namespace {

// alpha < 1/255 is guaranteed once q > 2*ln(255); bound the footprint by the
// largest cov2d eigenvalue so everything outside is provably skippable.
constexpr double kQCutoff = 11.082527090316852; // 2*ln(255)

double largest_eigenvalue_2x2(const Matrix2d& m) {
    const double a = m(0, 0), b = m(0, 1), c = m(1, 1);
    const double half_trace = 0.5 * (a + c);
    const double disc = std::sqrt(0.25 * (a - c) * (a - c) + b * b);
    return half_trace + disc;
}

void run_rows(int height, int threads, const std::function<void(int, int)>& body) {
    if (threads <= 1) {
        body(0, height);
        return;
    }
    const int n = std::min(threads, height);
    std::vector<std::thread> pool;
    pool.reserve(n);
    for (int i = 0; i < n; ++i) {
        const int r0 = height * i / n;
        const int r1 = height * (i + 1) / n;
        pool.emplace_back(body, r0, r1);
    }
    for (auto& t : pool) t.join();
}

} // namespace

std::vector<bool> RenderAux::contributing_mask(std::size_t n_primitives) const {
    std::vector<bool> mask(n_primitives, false);
    for (const auto& rec : records) mask[rec.prim] = true;
    return mask;
}

Projection2D project_gaussian(const GaussianPrimitive& p, const CameraView& cam) {
    cam.validate();
    Projection2D out;

    const Matrix3d w = cam.rotation();
    const Vector3d t = w * p.position + cam.translation();
    out.depth = t.z();
    if (t.z() <= kNearPlane) return out; // culled

    const double fx = cam.focal.x(), fy = cam.focal.y();
    const double px = fx * t.x() / t.z() + cam.principal_point.x();
    const double py = fy * t.y() / t.z() + cam.principal_point.y();
    out.pixel_center = Vector2d(px, py);

    const double margin_x = (kGuardBand - 1.0) * 0.5 * cam.width;
    const double margin_y = (kGuardBand - 1.0) * 0.5 * cam.height;
    if (px < -margin_x || px > cam.width + margin_x || py < -margin_y ||
        py > cam.height + margin_y)
        return out; // culled

    // NDC x/y from the pixel mapping px = (ndc_x+1)/2 * W; z via a fixed
    // [near, far] projective map (computed for completeness, far = 1000).
    const double far = 1000.0;
    out.ndc = Vector3d(2.0 * px / cam.width - 1.0, 2.0 * py / cam.height - 1.0,
                       (far + kNearPlane) / (far - kNearPlane) -
                           2.0 * far * kNearPlane / ((far - kNearPlane) * t.z()));

    const Matrix3d sigma = build_covariance(p.log_scale, p.rotation);
    Eigen::Matrix<double, 2, 3> jac;
    jac << fx / t.z(), 0.0, -fx * t.x() / (t.z() * t.z()),
           0.0, fy / t.z(), -fy * t.y() / (t.z() * t.z());
    out.cov2d = jac * w * sigma * w.transpose() * jac.transpose();
    out.cov2d(0, 0) += kCovRegularization;
    out.cov2d(1, 1) += kCovRegularization;

    const double det = out.cov2d(0, 0) * out.cov2d(1, 1) - out.cov2d(0, 1) * out.cov2d(1, 0);
    out.cov2d_inv << out.cov2d(1, 1) / det, -out.cov2d(0, 1) / det,
                     -out.cov2d(1, 0) / det, out.cov2d(0, 0) / det;
    out.pixel_radius = std::sqrt(kQCutoff * largest_eigenvalue_2x2(out.cov2d));
    out.culled = false;
    return out;
}

RenderResult rasterize(const Scene& scene, const CameraView& cam, const RenderOptions& opts) {
    if (scene.primitives.empty()) throw InvalidParameterError("cannot rasterize an empty scene");
    cam.validate();

    const std::size_t n = scene.primitives.size();
    const int width = cam.width, height = cam.height;

    std::vector<Projection2D> projections(n);
    std::vector<ActivatedParams> act(n);
    for (std::size_t i = 0; i < n; ++i) {
        projections[i] = project_gaussian(scene.primitives[i], cam);
        act[i] = activate(scene.primitives[i]);
    }

    // global depth sort of visible primitives, ties broken by index
    std::vector<std::uint32_t> order;
    order.reserve(n);
    for (std::uint32_t i = 0; i < n; ++i)
        if (!projections[i].culled) order.push_back(i);
    std::sort(order.begin(), order.end(), [&](std::uint32_t a, std::uint32_t b) {
        if (projections[a].depth != projections[b].depth)
            return projections[a].depth < projections[b].depth;
        return a < b;
    });

    // per-row candidate lists: depth-ordered primitives whose footprint
    // intersects the row
    std::vector<std::vector<std::uint32_t>> row_prims(height);
    for (std::uint32_t idx : order) {
        const auto& pr = projections[idx];
        const int y0 = std::max(0, static_cast<int>(std::floor(pr.pixel_center.y() - pr.pixel_radius)) - 1);
        const int y1 = std::min(height - 1, static_cast<int>(std::ceil(pr.pixel_center.y() + pr.pixel_radius)) + 1);
        for (int y = y0; y <= y1; ++y) row_prims[y].push_back(idx);
    }

    RenderResult res;
    res.image = ImageBuffer(width, height);
    const bool keep_aux = opts.keep_aux;
    std::vector<std::vector<PixelRecord>> row_records;
    std::vector<std::vector<std::uint32_t>> row_counts;
    if (keep_aux) {
        row_records.assign(height, {});
        row_counts.assign(height, {});
        res.aux.final_transmittance.assign(static_cast<std::size_t>(width) * height, 1.0);
    }

    auto shade_rows = [&](int r0, int r1) {
        for (int y = r0; y < r1; ++y) {
            const auto& cands = row_prims[y];
            for (int x = 0; x < width; ++x) {
                const Vector2d pix(x + 0.5, y + 0.5);
                double transmittance = 1.0;
                Vector3d color = Vector3d::Zero();
                std::uint32_t count = 0;
                for (std::uint32_t idx : cands) {
                    const auto& pr = projections[idx];
                    const Vector2d d = pix - pr.pixel_center;
                    if (std::abs(d.x()) > pr.pixel_radius + 1.0) continue;
                    const double q = d.dot(pr.cov2d_inv * d);
                    const double weight = std::exp(-0.5 * q);
                    const double alpha = std::min(kAlphaCap, act[idx].opacity * weight);
                    if (alpha < kAlphaSkip) continue;
                    const double next_t = transmittance * (1.0 - alpha);
                    if (next_t < kTransmittanceStop) break;
                    color += act[idx].color * (alpha * transmittance);
                    if (keep_aux) {
                        row_records[y].push_back({idx, weight, transmittance});
                        ++count;
                    }
                    transmittance = next_t;
                }
                color += opts.background * transmittance;
                res.image.at(x, y, 0) = color[0];
                res.image.at(x, y, 1) = color[1];
                res.image.at(x, y, 2) = color[2];
                if (keep_aux) {
                    row_counts[y].push_back(count);
                    res.aux.final_transmittance[static_cast<std::size_t>(y) * width + x] = transmittance;
                }
            }
        }
    };
    run_rows(height, opts.threads, shade_rows);

    if (keep_aux) {
        res.aux.width = width;
        res.aux.height = height;
        res.aux.background = opts.background;
        res.aux.projections = std::move(projections);
        res.aux.offsets.assign(static_cast<std::size_t>(width) * height + 1, 0);
        std::size_t total = 0;
        for (int y = 0; y < height; ++y) {
            for (int x = 0; x < width; ++x) {
                res.aux.offsets[static_cast<std::size_t>(y) * width + x] = static_cast<std::uint32_t>(total);
                total += row_counts[y][x];
            }
        }
        res.aux.offsets.back() = static_cast<std::uint32_t>(total);
        res.aux.records.reserve(total);
        for (int y = 0; y < height; ++y)
            res.aux.records.insert(res.aux.records.end(), row_records[y].begin(), row_records[y].end());
    }
    return res;
}

namespace {

struct Tap {
    int index;
    double weight;
};

// half-pixel aligned source position for a destination sample
inline void bilinear_taps(int dst, double scale, int src_size, Tap taps[2]) {
    const double s = (dst + 0.5) * scale - 0.5;
    const double fl = std::floor(s);
    const int i0 = static_cast<int>(fl);
    const double frac = s - fl;
    taps[0] = {std::clamp(i0, 0, src_size - 1), 1.0 - frac};
    taps[1] = {std::clamp(i0 + 1, 0, src_size - 1), frac};
}

} // namespace

ImageBuffer downsample(const ImageBuffer& img, int factor, DownsampleMode mode) {
    if (factor < 1) throw InvalidParameterError("downsample factor must be >= 1");
    if (img.width % factor != 0 || img.height % factor != 0)
        throw InvalidParameterError("image dims not divisible by downsample factor");
    const int ow = img.width / factor, oh = img.height / factor;
    ImageBuffer out(ow, oh);

    if (mode == DownsampleMode::Area) {
        const double inv = 1.0 / (static_cast<double>(factor) * factor);
        for (int y = 0; y < oh; ++y)
            for (int x = 0; x < ow; ++x)
                for (int c = 0; c < 3; ++c) {
                    double sum = 0.0;
                    for (int dy = 0; dy < factor; ++dy)
                        for (int dx = 0; dx < factor; ++dx)
                            sum += img.at(x * factor + dx, y * factor + dy, c);
                    out.at(x, y, c) = sum * inv;
                }
        return out;
    }

    for (int y = 0; y < oh; ++y) {
        Tap ty[2];
        bilinear_taps(y, factor, img.height, ty);
        for (int x = 0; x < ow; ++x) {
            Tap tx[2];
            bilinear_taps(x, factor, img.width, tx);
            for (int c = 0; c < 3; ++c) {
                double v = 0.0;
                for (const Tap& a : ty)
                    for (const Tap& b : tx) v += a.weight * b.weight * img.at(b.index, a.index, c);
                out.at(x, y, c) = v;
            }
        }
    }
    return out;
}

ImageBuffer downsample_bilinear_backward(const ImageBuffer& lr_grad, int factor) {
    const int hw = lr_grad.width * factor, hh = lr_grad.height * factor;
    ImageBuffer out(hw, hh);
    for (int y = 0; y < lr_grad.height; ++y) {
        Tap ty[2];
        bilinear_taps(y, factor, hh, ty);
        for (int x = 0; x < lr_grad.width; ++x) {
            Tap tx[2];
            bilinear_taps(x, factor, hw, tx);
            for (int c = 0; c < 3; ++c) {
                const double g = lr_grad.at(x, y, c);
                for (const Tap& a : ty)
                    for (const Tap& b : tx) out.at(b.index, a.index, c) += a.weight * b.weight * g;
            }
        }
    }
    return out;
}

ImageBuffer upsample_bilinear(const ImageBuffer& img, int factor) {
    if (factor < 1) throw InvalidParameterError("upsample factor must be >= 1");
    const int ow = img.width * factor, oh = img.height * factor;
    const double scale = 1.0 / factor;
    ImageBuffer out(ow, oh);
    for (int y = 0; y < oh; ++y) {
        Tap ty[2];
        bilinear_taps(y, scale, img.height, ty);
        for (int x = 0; x < ow; ++x) {
            Tap tx[2];
            bilinear_taps(x, scale, img.width, tx);
            for (int c = 0; c < 3; ++c) {
                double v = 0.0;
                for (const Tap& a : ty)
                    for (const Tap& b : tx) v += a.weight * b.weight * img.at(b.index, a.index, c);
                out.at(x, y, c) = v;
            }
        }
    }
    return out;
}

namespace {

// Catmull-Rom kernel (a = -0.5)
inline double cubic_weight(double x) {
    x = std::abs(x);
    if (x < 1.0) return 1.5 * x * x * x - 2.5 * x * x + 1.0;
    if (x < 2.0) return -0.5 * x * x * x + 2.5 * x * x - 4.0 * x + 2.0;
    return 0.0;
}

} // namespace

ImageBuffer upsample_bicubic(const ImageBuffer& img, int factor) {
    if (factor < 1) throw InvalidParameterError("upsample factor must be >= 1");
    const int ow = img.width * factor, oh = img.height * factor;
    const double scale = 1.0 / factor;
    ImageBuffer out(ow, oh);
    for (int y = 0; y < oh; ++y) {
        const double sy = (y + 0.5) * scale - 0.5;
        const int iy = static_cast<int>(std::floor(sy));
        for (int x = 0; x < ow; ++x) {
            const double sx = (x + 0.5) * scale - 0.5;
            const int ix = static_cast<int>(std::floor(sx));
            for (int c = 0; c < 3; ++c) {
                double v = 0.0;
                for (int dy = -1; dy <= 2; ++dy) {
                    const double wy = cubic_weight(sy - (iy + dy));
                    if (wy == 0.0) continue;
                    const int yy = std::clamp(iy + dy, 0, img.height - 1);
                    for (int dx = -1; dx <= 2; ++dx) {
                        const double wx = cubic_weight(sx - (ix + dx));
                        if (wx == 0.0) continue;
                        v += wy * wx * img.at(std::clamp(ix + dx, 0, img.width - 1), yy, c);
                    }
                }
                out.at(x, y, c) = v;
            }
        }
    }
    return out;
}

} // namespace splatsr
