#pragma once

// shared test-only oracles: a naive reference renderer, naive image metrics
// and small stat helpers
#include <algorithm>
#include <array>
#include <cmath>
#include <vector>

#include "splatsr/grad.hpp"
#include "splatsr/render.hpp"

namespace testsupport {

using namespace splatsr;

/// Reference renderer: every pixel independently walks ALL primitives in
/// depth order (no bounding boxes, no row lists, no shared candidate work)
/// and composites with the documented alpha rules. Matrix inverses go through
/// Eigen's generic path rather than the closed 2x2 form.
inline ImageBuffer brute_force_render(const Scene& scene, const CameraView& cam,
                                      const Vector3d& background = Vector3d::Zero()) {
    const std::size_t n = scene.primitives.size();
    std::vector<Projection2D> proj(n);
    std::vector<ActivatedParams> act(n);
    for (std::size_t i = 0; i < n; ++i) {
        proj[i] = project_gaussian(scene.primitives[i], cam);
        act[i] = activate(scene.primitives[i]);
    }
    std::vector<std::size_t> order;
    for (std::size_t i = 0; i < n; ++i)
        if (!proj[i].culled) order.push_back(i);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return proj[a].depth < proj[b].depth; });

    ImageBuffer img(cam.width, cam.height);
    for (int y = 0; y < cam.height; ++y) {
        for (int x = 0; x < cam.width; ++x) {
            double transmittance = 1.0;
            Vector3d color = Vector3d::Zero();
            for (std::size_t i : order) {
                const Vector2d d =
                    Vector2d(x + 0.5, y + 0.5) - proj[i].pixel_center;
                const double q = d.dot(proj[i].cov2d.inverse() * d);
                const double alpha = std::min(kAlphaCap, act[i].opacity * std::exp(-0.5 * q));
                if (alpha < kAlphaSkip) continue;
                if (transmittance * (1.0 - alpha) < kTransmittanceStop) break;
                color += act[i].color * (alpha * transmittance);
                transmittance *= 1.0 - alpha;
            }
            color += background * transmittance;
            for (int c = 0; c < 3; ++c) img.at(x, y, c) = color[c];
        }
    }
    return img;
}

inline double max_image_diff(const ImageBuffer& a, const ImageBuffer& b) {
    double m = 0.0;
    for (std::size_t i = 0; i < a.pixels.size(); ++i)
        m = std::max(m, std::abs(a.pixels[i] - b.pixels[i]));
    return m;
}

/// Chi-square critical value at significance 0.01 via the Wilson-Hilferty
/// cube approximation; z is the 99th percentile of the standard normal.
inline double chi2_critical_1pct(int df) {
    const double z = 2.3263478740408408;
    const double a = 2.0 / (9.0 * df);
    const double c = 1.0 - a + z * std::sqrt(a);
    return df * c * c * c;
}

inline double chi2_statistic(const std::vector<std::int64_t>& counts, double expected) {
    double stat = 0.0;
    for (const auto c : counts) {
        const double d = c - expected;
        stat += d * d / expected;
    }
    return stat;
}

/// Independent PSNR: accumulate in a different order (per channel) and use
/// the log identity 10*log10(1/mse) = -10*log10(mse).
inline double naive_psnr(const ImageBuffer& a, const ImageBuffer& b) {
    double mse = 0.0;
    for (int c = 0; c < 3; ++c)
        for (int y = 0; y < a.height; ++y)
            for (int x = 0; x < a.width; ++x) {
                const double d = a.at(x, y, c) - b.at(x, y, c);
                mse += d * d;
            }
    mse /= static_cast<double>(a.pixels.size());
    if (mse == 0.0) return 99.0;
    return std::min(99.0, -10.0 * std::log10(mse));
}

/// Independent SSIM: same definition, structured differently (explicit weight
/// table, separate passes, centered moments instead of raw-moment differences).
inline double naive_ssim(const ImageBuffer& a, const ImageBuffer& b) {
    std::array<double, 11> g{};
    double norm = 0.0;
    for (int i = 0; i < 11; ++i) {
        g[i] = std::exp(-(i - 5.0) * (i - 5.0) / (2.0 * 1.5 * 1.5));
        norm += g[i];
    }
    for (auto& v : g) v /= norm;

    double total = 0.0;
    int count = 0;
    for (int c = 0; c < 3; ++c)
        for (int y0 = 0; y0 + 11 <= a.height; ++y0)
            for (int x0 = 0; x0 + 11 <= a.width; ++x0) {
                double mu_a = 0.0, mu_b = 0.0;
                for (int wy = 0; wy < 11; ++wy)
                    for (int wx = 0; wx < 11; ++wx) {
                        mu_a += g[wy] * g[wx] * a.at(x0 + wx, y0 + wy, c);
                        mu_b += g[wy] * g[wx] * b.at(x0 + wx, y0 + wy, c);
                    }
                double var_a = 0.0, var_b = 0.0, cov = 0.0;
                for (int wy = 0; wy < 11; ++wy)
                    for (int wx = 0; wx < 11; ++wx) {
                        const double da = a.at(x0 + wx, y0 + wy, c) - mu_a;
                        const double db = b.at(x0 + wx, y0 + wy, c) - mu_b;
                        var_a += g[wy] * g[wx] * da * da;
                        var_b += g[wy] * g[wx] * db * db;
                        cov += g[wy] * g[wx] * da * db;
                    }
                total += ((2.0 * mu_a * mu_b + 1e-4) * (2.0 * cov + 9e-4)) /
                         ((mu_a * mu_a + mu_b * mu_b + 1e-4) * (var_a + var_b + 9e-4));
                ++count;
            }
    return total / count;
}

} // namespace testsupport
