#pragma once

#include <string>
#include <vector>

namespace blockflow::imaging {

/// Row-major single-channel scalar field (temperature or intensity).
struct ImageBuffer {
    int rows = 0;
    int cols = 0;
    std::vector<double> data;

    ImageBuffer() = default;
    ImageBuffer(int r, int c, double fill = 0.0);

    double& at(int r, int c) { return data[static_cast<size_t>(r) * cols + c]; }
    double at(int r, int c) const { return data[static_cast<size_t>(r) * cols + c]; }

    bool operator==(const ImageBuffer& o) const {
        return rows == o.rows && cols == o.cols && data == o.data;
    }
};

/// Convolution kernel with odd dimensions (centered anchor).
struct Kernel2D {
    int height = 0;
    int width = 0;
    std::vector<double> taps;

    Kernel2D() = default;
    Kernel2D(int h, int w, std::vector<double> t);

    double at(int r, int c) const { return taps[static_cast<size_t>(r) * width + c]; }
};

/// True 2-D convolution (kernel flipped), replicate-padded borders, same
/// output size. Throws KernelTooLarge when the kernel exceeds the image.
ImageBuffer conv2d(const ImageBuffer& img, const Kernel2D& k);

/// Kernel sizes for the noise-robust Laplacian; recorded here as the one
/// configuration constant since the underlying construction generalizes.
inline constexpr int kNoiseRobustDerivativeTaps = 7;
inline constexpr int kNoiseRobustSmootherTaps = 5;

/// 1-D second-derivative kernel, exact on quadratics with zero response at
/// the Nyquist frequency. See noiseRobustLaplacian for the constraints.
const std::vector<double>& noiseRobustSecondDerivTaps();

/// Matching 1-D binomial smoother (unit DC gain, zero at Nyquist).
const std::vector<double>& noiseRobustSmootherTaps();

/// Combined 2-D kernel Dxx (x) S + S (x) Dyy, zero-padded to square.
/// Exposed so the Conv2D block can run the same filter inside a diagram.
const Kernel2D& noiseRobustLaplacianKernel();

/// Noise-robust Laplacian: sum of a smoothed second derivative in x and in
/// y. The taps satisfy, by construction and by the property suite:
///   (i)  zero response to constant and affine images,
///   (ii) exact second derivative on quadratics (x^2 -> 2),
///   (iii) zero response at the Nyquist checkerboard, far below the
///         classic 3x3 Laplacian's.
ImageBuffer noiseRobustLaplacian(const ImageBuffer& img);

/// Classic 3x3 Laplacian [[0,1,0],[1,-4,1],[0,1,0]]. Exact on quadratics but
/// amplifies high-frequency noise; kept as the comparison baseline.
ImageBuffer classicLaplacian(const ImageBuffer& img);

/// Focus feedback signal: max |L| over all pixels.
double sharpness(const ImageBuffer& laplacian);

/// Separable Gaussian blur with replicate borders; kernel radius 3*sigma.
ImageBuffer gaussianBlur(const ImageBuffer& img, double sigma);

/// Plain text grid format: "rows cols" header then whitespace-separated
/// values, row-major. Deterministic and diffable.
std::string writeImageText(const ImageBuffer& img);
ImageBuffer readImageText(const std::string& text);

}  // namespace blockflow::imaging
