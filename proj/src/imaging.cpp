#include "blockflow/imaging.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

#include "blockflow/errors.hpp"
#include "blockflow/util.hpp"

namespace blockflow::imaging {

ImageBuffer::ImageBuffer(int r, int c, double fill)
    : rows(r), cols(c), data(static_cast<size_t>(r) * c, fill) {
    if (r < 1 || c < 1) throw std::invalid_argument("image dimensions must be >= 1");
}

Kernel2D::Kernel2D(int h, int w, std::vector<double> t)
    : height(h), width(w), taps(std::move(t)) {
    if (h < 1 || w < 1 || h % 2 == 0 || w % 2 == 0)
        throw std::invalid_argument("kernel dimensions must be odd and positive");
    if (taps.size() != static_cast<size_t>(h) * w)
        throw std::invalid_argument("kernel tap count does not match dimensions");
}

namespace {

inline int clampIndex(int i, int n) { return i < 0 ? 0 : (i >= n ? n - 1 : i); }

}  // namespace

ImageBuffer conv2d(const ImageBuffer& img, const Kernel2D& k) {
    if (k.height > img.rows || k.width > img.cols)
        throw KernelTooLarge("kernel " + std::to_string(k.height) + "x" +
                             std::to_string(k.width) + " exceeds image " +
                             std::to_string(img.rows) + "x" + std::to_string(img.cols));
    const int hr = k.height / 2;
    const int hc = k.width / 2;
    ImageBuffer out(img.rows, img.cols);
    for (int r = 0; r < img.rows; ++r) {
        for (int c = 0; c < img.cols; ++c) {
            double acc = 0.0;
            // True convolution: the kernel is flipped relative to correlation.
            for (int kr = 0; kr < k.height; ++kr) {
                const int sr = clampIndex(r - (kr - hr), img.rows);
                for (int kc = 0; kc < k.width; ++kc) {
                    const int sc = clampIndex(c - (kc - hc), img.cols);
                    acc += k.at(kr, kc) * img.at(sr, sc);
                }
            }
            out.at(r, c) = acc;
        }
    }
    return out;
}

// Tap derivation for the 7-point second derivative d = [a b c e c b a]/16:
//   sum d        = 0   (constants rejected)
//   sum j^2 d_j  = 2   (exact on quadratics; odd moments vanish by symmetry)
//   sum (-1)^j d = 0   (no response at Nyquist)
// yields c = -a, e = -2b, 8a + 4b = 1; a = 1/16 gives the integer taps below.
const std::vector<double>& noiseRobustSecondDerivTaps() {
    static const std::vector<double> taps = {
        1.0 / 16, 2.0 / 16, -1.0 / 16, -4.0 / 16, -1.0 / 16, 2.0 / 16, 1.0 / 16};
    return taps;
}

// Binomial smoother: unit DC gain, zero response at Nyquist.
const std::vector<double>& noiseRobustSmootherTaps() {
    static const std::vector<double> taps = {1.0 / 16, 4.0 / 16, 6.0 / 16, 4.0 / 16,
                                             1.0 / 16};
    return taps;
}

const Kernel2D& noiseRobustLaplacianKernel() {
    static const Kernel2D kernel = [] {
        const auto& d = noiseRobustSecondDerivTaps();
        const auto& s = noiseRobustSmootherTaps();
        const int n = static_cast<int>(d.size());  // 7, the larger of the two
        const int off = (n - static_cast<int>(s.size())) / 2;
        std::vector<double> taps(static_cast<size_t>(n) * n, 0.0);
        // Dxx (x) S: rows weighted by the smoother, columns by the derivative.
        for (size_t i = 0; i < s.size(); ++i)
            for (size_t j = 0; j < d.size(); ++j)
                taps[(i + off) * n + j] += s[i] * d[j];
        // S (x) Dyy: transpose arrangement.
        for (size_t i = 0; i < d.size(); ++i)
            for (size_t j = 0; j < s.size(); ++j)
                taps[i * n + (j + off)] += d[i] * s[j];
        return Kernel2D(n, n, std::move(taps));
    }();
    return kernel;
}

ImageBuffer noiseRobustLaplacian(const ImageBuffer& img) {
    return conv2d(img, noiseRobustLaplacianKernel());
}

ImageBuffer classicLaplacian(const ImageBuffer& img) {
    static const Kernel2D kernel(3, 3, {0, 1, 0, 1, -4, 1, 0, 1, 0});
    return conv2d(img, kernel);
}

double sharpness(const ImageBuffer& laplacian) {
    double best = 0.0;
    for (double v : laplacian.data) best = std::max(best, std::abs(v));
    return best;
}

ImageBuffer gaussianBlur(const ImageBuffer& img, double sigma) {
    if (sigma <= 0.0) return img;
    int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
    // Keep the kernel applicable to the image; replicate padding handles the rest.
    radius = std::min(radius, (std::min(img.rows, img.cols) - 1) / 2);
    std::vector<double> taps(2 * radius + 1);
    double sum = 0.0;
    for (int i = -radius; i <= radius; ++i) {
        double v = std::exp(-0.5 * (i * i) / (sigma * sigma));
        taps[i + radius] = v;
        sum += v;
    }
    for (double& v : taps) v /= sum;

    Kernel2D kRow(1, 2 * radius + 1, taps);
    Kernel2D kCol(2 * radius + 1, 1, taps);
    return conv2d(conv2d(img, kRow), kCol);
}

std::string writeImageText(const ImageBuffer& img) {
    std::ostringstream os;
    os << img.rows << ' ' << img.cols << '\n';
    for (int r = 0; r < img.rows; ++r) {
        for (int c = 0; c < img.cols; ++c) {
            if (c) os << ' ';
            os << util::fmtDouble(img.at(r, c));
        }
        os << '\n';
    }
    return os.str();
}

ImageBuffer readImageText(const std::string& text) {
    std::istringstream is(text);
    int rows = 0, cols = 0;
    if (!(is >> rows >> cols) || rows < 1 || cols < 1)
        throw std::invalid_argument("bad image text header");
    ImageBuffer img(rows, cols);
    for (double& v : img.data)
        if (!(is >> v)) throw std::invalid_argument("truncated image text");
    return img;
}

}  // namespace blockflow::imaging
