#pragma once

#include "prnu/imaging.hpp"
#include "prnu/types.hpp"

#include <vector>

namespace prnu::residual {

struct DenoiserConfig {
    int levels = 4;
    double sigma0_sq = 9.0; ///< stationary noise variance, 0..255 intensity scale
    std::vector<int> window_sizes{3, 5, 7, 9};

    /// Throws ConfigError when a field is out of range.
    void validate() const;
};

struct NoiseResidual {
    Plane values;
    imaging::ImageMeta source_meta;
    bool zero_meaned = false;
};

/// Detail subbands of one decomposition level.
struct DetailBands {
    Plane lh; ///< horizontal lowpass, vertical highpass
    Plane hl; ///< horizontal highpass, vertical lowpass
    Plane hh;
};

/// Orthogonal 8-tap Daubechies pyramid. details[0] is the finest level.
struct WaveletPyramid {
    Plane ll;
    std::vector<DetailBands> details;
    Eigen::Index rows = 0; ///< size before padding
    Eigen::Index cols = 0;
};

/// Reflect-pads to a multiple of 2^levels, then decomposes with periodic
/// boundary handling (orthogonal, hence perfectly reconstructing).
WaveletPyramid dwt2(const Plane& img, int levels);
/// Inverse of dwt2, cropped back to the unpadded size.
Plane idwt2(const WaveletPyramid& pyramid);

/// Locally adaptive Wiener shrinkage. For each coefficient the signal
/// variance is min over windows of max(0, localMean(c^2) - sigma0_sq), where
/// the local mean averages the in-bounds part of the window.
Plane wiener_shrink(const Plane& subband, double sigma0_sq, const std::vector<int>& window_sizes = {3, 5, 7, 9});

/// Wavelet denoiser: details shrunk, LL passed through.
Plane denoise(const Plane& img, const DenoiserConfig& cfg = {});

/// W = I - denoise(I), zero-meaned.
NoiseResidual extract_residual(const imaging::Image& img, const DenoiserConfig& cfg = {});

/// Removes row means, then column means.
NoiseResidual zero_mean(const NoiseResidual& res);
Plane zero_mean(const Plane& values);

} // namespace prnu::residual
