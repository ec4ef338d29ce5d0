#include "splatsr/metrics.hpp"

#include <array>
#include <cmath>

namespace splatsr {

double psnr(const ImageBuffer& a, const ImageBuffer& b) {
    if (!a.same_shape(b)) throw InvalidParameterError("psnr requires equal image dims");
    double mse = 0.0;
    for (std::size_t i = 0; i < a.pixels.size(); ++i) {
        const double d = a.pixels[i] - b.pixels[i];
        mse += d * d;
    }
    mse /= static_cast<double>(a.pixels.size());
    if (mse == 0.0) return 99.0;
    return std::min(99.0, 10.0 * std::log10(1.0 / mse));
}

namespace {

constexpr int kWindow = 11;

std::array<double, kWindow> gaussian_window() {
    std::array<double, kWindow> w{};
    const double sigma = 1.5;
    double sum = 0.0;
    for (int i = 0; i < kWindow; ++i) {
        const double d = i - (kWindow - 1) / 2.0;
        w[i] = std::exp(-d * d / (2.0 * sigma * sigma));
        sum += w[i];
    }
    for (double& v : w) v /= sum;
    return w;
}

} // namespace

double ssim(const ImageBuffer& a, const ImageBuffer& b) {
    if (!a.same_shape(b)) throw InvalidParameterError("ssim requires equal image dims");
    if (a.width < kWindow || a.height < kWindow)
        throw InvalidParameterError("image smaller than the ssim window");

    const auto win = gaussian_window();
    const double c1 = 0.01 * 0.01;
    const double c2 = 0.03 * 0.03;

    double total = 0.0;
    std::size_t count = 0;
    for (int c = 0; c < 3; ++c) {
        for (int y = 0; y + kWindow <= a.height; ++y) {
            for (int x = 0; x + kWindow <= a.width; ++x) {
                double mu_a = 0, mu_b = 0, aa = 0, bb = 0, ab = 0;
                for (int wy = 0; wy < kWindow; ++wy) {
                    for (int wx = 0; wx < kWindow; ++wx) {
                        const double w = win[wy] * win[wx];
                        const double va = a.at(x + wx, y + wy, c);
                        const double vb = b.at(x + wx, y + wy, c);
                        mu_a += w * va;
                        mu_b += w * vb;
                        aa += w * va * va;
                        bb += w * vb * vb;
                        ab += w * va * vb;
                    }
                }
                const double var_a = aa - mu_a * mu_a;
                const double var_b = bb - mu_b * mu_b;
                const double cov = ab - mu_a * mu_b;
                total += ((2 * mu_a * mu_b + c1) * (2 * cov + c2)) /
                         ((mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2));
                ++count;
            }
        }
    }
    return total / static_cast<double>(count);
}

MetricReport evaluate(const ImageBuffer& a, const ImageBuffer& b) {
    return {psnr(a, b), ssim(a, b)};
}

} // namespace splatsr
