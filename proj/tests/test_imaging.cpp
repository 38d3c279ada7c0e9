#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "blockflow/errors.hpp"
#include "blockflow/imaging.hpp"

using namespace blockflow;
using namespace blockflow::imaging;

namespace {

ImageBuffer rampX2(int n) {
    ImageBuffer img(n, n);
    for (int r = 0; r < n; ++r)
        for (int c = 0; c < n; ++c) img.at(r, c) = static_cast<double>(c) * c;
    return img;
}

ImageBuffer planar(int n) {
    ImageBuffer img(n, n);
    for (int r = 0; r < n; ++r)
        for (int c = 0; c < n; ++c) img.at(r, c) = 2.0 * c + 3.0 * r + 1.0;
    return img;
}

ImageBuffer checkerboard(int n) {
    ImageBuffer img(n, n);
    for (int r = 0; r < n; ++r)
        for (int c = 0; c < n; ++c) img.at(r, c) = ((r + c) % 2 == 0) ? 1.0 : -1.0;
    return img;
}

double interiorMaxAbs(const ImageBuffer& img, int margin) {
    double best = 0.0;
    for (int r = margin; r < img.rows - margin; ++r)
        for (int c = margin; c < img.cols - margin; ++c)
            best = std::max(best, std::abs(img.at(r, c)));
    return best;
}

}  // namespace

TEST_CASE("conv2d: identity kernel") {
    ImageBuffer img(5, 7);
    for (size_t i = 0; i < img.data.size(); ++i) img.data[i] = 0.3 * i - 2.0;
    Kernel2D identity(3, 3, {0, 0, 0, 0, 1, 0, 0, 0, 0});
    CHECK(conv2d(img, identity) == img);
}

TEST_CASE("conv2d: zero-sum kernel rejects constants") {
    ImageBuffer img(6, 6, 3.7);
    Kernel2D k(3, 3, {1, -2, 1, 0, 0, 0, -1, 2, -1});  // taps sum to zero
    ImageBuffer out = conv2d(img, k);
    for (double v : out.data) CHECK(v == doctest::Approx(0.0).epsilon(1e-15));
}

TEST_CASE("conv2d: box kernel on a one-hot image") {
    ImageBuffer img(7, 7, 0.0);
    img.at(3, 3) = 1.0;
    Kernel2D box(3, 3, std::vector<double>(9, 1.0 / 9.0));
    ImageBuffer out = conv2d(img, box);
    for (int r = 0; r < 7; ++r)
        for (int c = 0; c < 7; ++c) {
            double expected = (std::abs(r - 3) <= 1 && std::abs(c - 3) <= 1) ? 1.0 / 9 : 0.0;
            CHECK(out.at(r, c) == doctest::Approx(expected).epsilon(1e-15));
        }
}

TEST_CASE("conv2d: kernel flip (true convolution)") {
    // An asymmetric kernel distinguishes convolution from correlation.
    ImageBuffer img(5, 5, 0.0);
    img.at(2, 2) = 1.0;
    Kernel2D k(1, 3, {1.0, 0.0, 0.0});  // tap at offset -1 in x
    ImageBuffer out = conv2d(img, k);
    // conv: out(x) = sum_j k(j) img(x - j); the tap at j=-1 moves mass to x=1.
    CHECK(out.at(2, 1) == 1.0);
    CHECK(out.at(2, 3) == 0.0);
}

TEST_CASE("conv2d: oversized kernel is an error") {
    ImageBuffer img(4, 4, 1.0);
    Kernel2D k7(7, 7, std::vector<double>(49, 0.0));
    CHECK_THROWS_AS(conv2d(img, k7), KernelTooLarge);
    CHECK_THROWS_AS(noiseRobustLaplacian(img), KernelTooLarge);
}

TEST_CASE("noise-robust tap constraints (moment and Nyquist conditions)") {
    const auto& d = noiseRobustSecondDerivTaps();
    const auto& s = noiseRobustSmootherTaps();
    REQUIRE(d.size() == 7);
    REQUIRE(s.size() == 5);

    double sum = 0, m1 = 0, m2 = 0, nyq = 0;
    for (size_t i = 0; i < d.size(); ++i) {
        int j = static_cast<int>(i) - 3;
        sum += d[i];
        m1 += j * d[i];
        m2 += j * j * d[i];
        nyq += (j % 2 == 0 ? 1.0 : -1.0) * d[i];
    }
    CHECK(sum == doctest::Approx(0.0).epsilon(1e-15));   // rejects constants
    CHECK(m1 == doctest::Approx(0.0).epsilon(1e-15));    // rejects ramps
    CHECK(m2 == doctest::Approx(2.0).epsilon(1e-15));    // exact on quadratics
    CHECK(nyq == doctest::Approx(0.0).epsilon(1e-15));   // silent at Nyquist

    double ssum = 0, snyq = 0;
    for (size_t i = 0; i < s.size(); ++i) {
        int j = static_cast<int>(i) - 2;
        ssum += s[i];
        snyq += (j % 2 == 0 ? 1.0 : -1.0) * s[i];
    }
    CHECK(ssum == doctest::Approx(1.0).epsilon(1e-15));  // unit DC gain
    CHECK(snyq == doctest::Approx(0.0).epsilon(1e-15));
}

TEST_CASE("noiseRobustLaplacian: exact 2 on a quadratic ramp (interior)") {
    ImageBuffer img = rampX2(24);
    ImageBuffer lap = noiseRobustLaplacian(img);
    for (int r = 4; r < 20; ++r)
        for (int c = 4; c < 20; ++c)
            CHECK(lap.at(r, c) == doctest::Approx(2.0).epsilon(1e-12));
}

TEST_CASE("noiseRobustLaplacian: zero on constant and affine images") {
    ImageBuffer flat(16, 16, 5.0);
    ImageBuffer lapFlat = noiseRobustLaplacian(flat);
    for (double v : lapFlat.data) CHECK(std::abs(v) <= 1e-12);

    ImageBuffer plane = planar(20);
    ImageBuffer lapPlane = noiseRobustLaplacian(plane);
    CHECK(interiorMaxAbs(lapPlane, 4) <= 1e-12);
}

TEST_CASE("classic Laplacian baseline: zero on constants, 2 on quadratics") {
    ImageBuffer flat(10, 10, 2.5);
    ImageBuffer lap = classicLaplacian(flat);
    for (double v : lap.data) CHECK(std::abs(v) <= 1e-12);

    ImageBuffer img = rampX2(16);
    ImageBuffer lapQ = classicLaplacian(img);
    for (int r = 2; r < 14; ++r)
        for (int c = 2; c < 14; ++c)
            CHECK(lapQ.at(r, c) == doctest::Approx(2.0).epsilon(1e-12));
}

TEST_CASE("checkerboard: noise-robust response far below the classic filter") {
    ImageBuffer nyquist = checkerboard(24);
    double robust = interiorMaxAbs(noiseRobustLaplacian(nyquist), 4);
    double classic = interiorMaxAbs(classicLaplacian(nyquist), 4);
    CHECK(classic > robust);            // the baseline amplifies what we suppress
    CHECK(robust <= 0.25 * classic);    // quantitative contract
    CHECK(classic == doctest::Approx(8.0).epsilon(1e-12));
    CHECK(robust <= 1e-12);             // analytically exactly zero
}

TEST_CASE("sharpness") {
    ImageBuffer zeros(4, 4, 0.0);
    CHECK(sharpness(zeros) == 0.0);

    ImageBuffer one(3, 3, 0.0);
    one.at(1, 2) = -5.0;
    CHECK(sharpness(one) == 5.0);

    // Sign flip invariance.
    ImageBuffer neg = one;
    for (double& v : neg.data) v = -v;
    CHECK(sharpness(one) == sharpness(neg));
}

TEST_CASE("sharpness: monotone in blur on a fixed scene") {
    ImageBuffer scene(32, 32, 0.0);
    for (int r = 10; r < 22; ++r)
        for (int c = 10; c < 22; ++c) scene.at(r, c) = 1.0;
    double prev = 1e300;
    for (double sigma : {0.6, 1.0, 1.6, 2.4, 3.4}) {
        double s = sharpness(noiseRobustLaplacian(gaussianBlur(scene, sigma)));
        CHECK(s < prev);
        prev = s;
    }
}

TEST_CASE("property: conv2d is linear") {
    std::mt19937 rng(5);
    std::uniform_real_distribution<double> val(-1.0, 1.0);
    std::vector<double> taps(15);
    for (double& t : taps) t = val(rng);
    Kernel2D k(3, 5, taps);

    for (int trial = 0; trial < 10; ++trial) {
        ImageBuffer f(9, 11), g(9, 11);
        for (double& v : f.data) v = val(rng);
        for (double& v : g.data) v = val(rng);
        double a = val(rng), b = val(rng);

        ImageBuffer combined(9, 11);
        for (size_t i = 0; i < combined.data.size(); ++i)
            combined.data[i] = a * f.data[i] + b * g.data[i];

        ImageBuffer lhs = conv2d(combined, k);
        ImageBuffer cf = conv2d(f, k), cg = conv2d(g, k);
        for (size_t i = 0; i < lhs.data.size(); ++i)
            CHECK(std::abs(lhs.data[i] - (a * cf.data[i] + b * cg.data[i])) <= 1e-12);
    }
}

TEST_CASE("image text round trip") {
    ImageBuffer img(3, 4);
    for (size_t i = 0; i < img.data.size(); ++i) img.data[i] = 0.1 * i - 0.7;
    ImageBuffer back = readImageText(writeImageText(img));
    CHECK(back == img);
}
