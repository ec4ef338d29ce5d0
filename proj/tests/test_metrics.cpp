#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "splatsr/metrics.hpp"
#include "splatsr/rng.hpp"
#include "support.hpp"

using namespace splatsr;
using testsupport::naive_psnr;
using testsupport::naive_ssim;

namespace {

ImageBuffer random_image(int w, int h, std::uint64_t salt, double lo = 0.0, double hi = 1.0) {
    ImageBuffer img(w, h);
    RngStream rng(salt, 0, RngPurpose::Test);
    for (auto& v : img.pixels) v = rng.uniform(lo, hi);
    return img;
}

} // namespace

TEST_CASE("psnr basics") {
    SUBCASE("identical images hit the cap") {
        const auto img = random_image(16, 16, 1);
        CHECK(psnr(img, img) == 99.0);
    }
    SUBCASE("a constant 0.1 offset is exactly 20 dB") {
        ImageBuffer a(16, 16), b(16, 16);
        for (auto& v : a.pixels) v = 0.25;
        for (auto& v : b.pixels) v = 0.35;
        CHECK(psnr(a, b) == doctest::Approx(20.0).epsilon(1e-12));
    }
    SUBCASE("near-identical images are capped, not infinite") {
        ImageBuffer a(16, 16), b(16, 16);
        for (auto& v : a.pixels) v = 0.5;
        for (auto& v : b.pixels) v = 0.5 + 1e-6;
        CHECK(psnr(a, b) == 99.0);
    }
    SUBCASE("matches the independent implementation") {
        const auto a = random_image(20, 14, 2);
        const auto b = random_image(20, 14, 3);
        CHECK(psnr(a, b) == doctest::Approx(naive_psnr(a, b)).epsilon(1e-12));
    }
    SUBCASE("symmetry and shape checks") {
        const auto a = random_image(12, 12, 4);
        const auto b = random_image(12, 12, 5);
        CHECK(psnr(a, b) == psnr(b, a));
        CHECK_THROWS_AS(psnr(a, random_image(12, 10, 6)), InvalidParameterError);
    }
}

TEST_CASE("ssim basics") {
    SUBCASE("identical images score exactly one") {
        const auto img = random_image(16, 16, 7);
        CHECK(ssim(img, img) == 1.0);
    }
    SUBCASE("contrast inversion around the midpoint scores negative") {
        ImageBuffer a(16, 16);
        for (int y = 0; y < 16; ++y)
            for (int x = 0; x < 16; ++x)
                for (int c = 0; c < 3; ++c) a.at(x, y, c) = ((x + y) % 2) ? 0.8 : 0.2;
        ImageBuffer b = a;
        for (auto& v : b.pixels) v = 1.0 - v;
        CHECK(ssim(a, b) < 0.0);
    }
    SUBCASE("matches the independent windowed implementation") {
        const auto a = random_image(16, 16, 8);
        auto b = a;
        RngStream rng(9, 0, RngPurpose::Test);
        for (auto& v : b.pixels) v += rng.uniform(-0.2, 0.2);
        CHECK(ssim(a, b) == doctest::Approx(naive_ssim(a, b)).epsilon(1e-10));
        CHECK(ssim(a, a) == doctest::Approx(naive_ssim(a, a)).epsilon(1e-12));
    }
    SUBCASE("symmetry") {
        const auto a = random_image(14, 18, 10);
        const auto b = random_image(14, 18, 11);
        CHECK(ssim(a, b) == doctest::Approx(ssim(b, a)).epsilon(1e-14));
    }
    SUBCASE("images below the window size are rejected") {
        const auto a = random_image(10, 16, 12);
        CHECK_THROWS_AS(ssim(a, a), InvalidParameterError);
        const auto c = random_image(16, 16, 13);
        CHECK_THROWS_AS(ssim(c, random_image(16, 15, 14)), InvalidParameterError);
    }
}

TEST_CASE("both metrics degrade monotonically with noise amplitude") {
    const auto clean = random_image(24, 24, 15, 0.3, 0.7);
    double prev_psnr = 100.0, prev_ssim = 1.1;
    for (double amp : {0.02, 0.08, 0.25}) {
        auto noisy = clean;
        RngStream rng(16, static_cast<std::uint64_t>(amp * 1000), RngPurpose::Test);
        for (auto& v : noisy.pixels) v += rng.uniform(-amp, amp);
        const double p = psnr(clean, noisy);
        const double s = ssim(clean, noisy);
        CHECK(p < prev_psnr);
        CHECK(s < prev_ssim);
        prev_psnr = p;
        prev_ssim = s;
    }
}

TEST_CASE("evaluate bundles both metrics") {
    const auto a = random_image(16, 16, 17);
    auto b = a;
    for (auto& v : b.pixels) v = std::min(1.0, v + 0.05);
    const MetricReport rep = evaluate(a, b);
    CHECK(rep.psnr_db == psnr(a, b));
    CHECK(rep.ssim == ssim(a, b));
}
