#pragma once

#include "splatsr/scene.hpp"

namespace splatsr {

struct MetricReport {
    double psnr_db = 0.0;
    double ssim = 0.0;
};

/// 10*log10(1/MSE) with MAX = 1; identical images report the 99 dB cap.
double psnr(const ImageBuffer& a, const ImageBuffer& b);

/// Single-scale SSIM: 11x11 Gaussian window (sigma 1.5), K1=0.01, K2=0.03,
/// dynamic range 1, channel-averaged, mean over valid window positions only.
double ssim(const ImageBuffer& a, const ImageBuffer& b);

MetricReport evaluate(const ImageBuffer& a, const ImageBuffer& b);

} // namespace splatsr
