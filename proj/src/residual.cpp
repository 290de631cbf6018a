#include "prnu/residual.hpp"

#include "prnu/errors.hpp"

#include <algorithm>
#include <array>
#include <string>

namespace prnu::residual {

namespace {

// Daubechies scaling filter with four vanishing moments (8 taps), sum = sqrt(2).
constexpr std::array<double, 8> kLow = {
    0.23037781330885523,  0.7148465705525415,  0.6308807679295904,    -0.02798376941698385,
    -0.18703481171888114, 0.030841381835986965, 0.032883011666982945, -0.010597401784997278};

constexpr std::array<double, 8> make_high() {
    std::array<double, 8> g{};
    for (std::size_t k = 0; k < 8; ++k) {
        const double sign = (k % 2 == 0) ? 1.0 : -1.0;
        g[k] = sign * kLow[7 - k];
    }
    return g;
}

constexpr std::array<double, 8> kHigh = make_high();

// One periodic analysis step on a strided 1-D signal of even length n.
void analyze_1d(const double* in, std::ptrdiff_t stride, Eigen::Index n, double* lo, double* hi, std::ptrdiff_t out_stride) {
    const Eigen::Index half = n / 2;
    for (Eigen::Index i = 0; i < half; ++i) {
        double a = 0.0;
        double d = 0.0;
        for (std::size_t k = 0; k < 8; ++k) {
            const double v = in[((2 * i + static_cast<Eigen::Index>(k)) % n) * stride];
            a += kLow[k] * v;
            d += kHigh[k] * v;
        }
        lo[i * out_stride] = a;
        hi[i * out_stride] = d;
    }
}

void synthesize_1d(const double* lo, const double* hi, std::ptrdiff_t in_stride, Eigen::Index n, double* out,
                   std::ptrdiff_t stride) {
    for (Eigen::Index j = 0; j < n; ++j) {
        out[j * stride] = 0.0;
    }
    const Eigen::Index half = n / 2;
    for (Eigen::Index i = 0; i < half; ++i) {
        const double a = lo[i * in_stride];
        const double d = hi[i * in_stride];
        for (std::size_t k = 0; k < 8; ++k) {
            out[((2 * i + static_cast<Eigen::Index>(k)) % n) * stride] += kLow[k] * a + kHigh[k] * d;
        }
    }
}

// Whole-sample symmetric extension: ..., x1, x0 | x0, x1, ... (half-sample mirror).
Eigen::Index mirror_index(Eigen::Index i, Eigen::Index n) {
    const Eigen::Index period = 2 * n;
    i %= period;
    if (i < 0) {
        i += period;
    }
    return i < n ? i : period - 1 - i;
}

Plane reflect_pad(const Plane& img, Eigen::Index rows, Eigen::Index cols) {
    Plane out(rows, cols);
    for (Eigen::Index y = 0; y < rows; ++y) {
        const Eigen::Index sy = mirror_index(y, img.rows());
        for (Eigen::Index x = 0; x < cols; ++x) {
            out(y, x) = img(sy, mirror_index(x, img.cols()));
        }
    }
    return out;
}

Eigen::Index round_up(Eigen::Index v, Eigen::Index multiple) {
    return ((v + multiple - 1) / multiple) * multiple;
}

// In-place single level: rows then columns. Quadrants of `band` afterwards:
// [LL | HL]
// [LH | HH]
void analyze_level(Plane& band) {
    const Eigen::Index r = band.rows();
    const Eigen::Index c = band.cols();
    Plane tmp(r, c);
    for (Eigen::Index y = 0; y < r; ++y) {
        analyze_1d(&band(y, 0), 1, c, &tmp(y, 0), &tmp(y, c / 2), 1);
    }
    for (Eigen::Index x = 0; x < c; ++x) {
        analyze_1d(&tmp(0, x), c, r, &band(0, x), &band(r / 2, x), c);
    }
}

void synthesize_level(Plane& band) {
    const Eigen::Index r = band.rows();
    const Eigen::Index c = band.cols();
    Plane tmp(r, c);
    for (Eigen::Index x = 0; x < c; ++x) {
        synthesize_1d(&band(0, x), &band(r / 2, x), c, r, &tmp(0, x), c);
    }
    for (Eigen::Index y = 0; y < r; ++y) {
        synthesize_1d(&tmp(y, 0), &tmp(y, c / 2), 1, c, &band(y, 0), 1);
    }
}

} // namespace

void DenoiserConfig::validate() const {
    if (levels < 1) {
        throw ConfigError("wavelet levels must be >= 1");
    }
    if (!(sigma0_sq > 0.0)) {
        throw ConfigError("sigma0_sq must be positive");
    }
    if (window_sizes.empty()) {
        throw ConfigError("at least one Wiener window size is required");
    }
    for (int w : window_sizes) {
        if (w < 1 || w % 2 == 0) {
            throw ConfigError("Wiener window sizes must be odd and positive, got " + std::to_string(w));
        }
    }
}

WaveletPyramid dwt2(const Plane& img, int levels) {
    if (levels < 1) {
        throw ConfigError("wavelet levels must be >= 1");
    }
    if (img.size() == 0) {
        throw DimensionError("dwt2 of an empty array");
    }
    const Eigen::Index multiple = Eigen::Index{1} << levels;
    Plane work = reflect_pad(img, round_up(img.rows(), multiple), round_up(img.cols(), multiple));

    WaveletPyramid pyr;
    pyr.rows = img.rows();
    pyr.cols = img.cols();
    Eigen::Index r = work.rows();
    Eigen::Index c = work.cols();
    for (int level = 0; level < levels; ++level) {
        Plane band = work.topLeftCorner(r, c);
        analyze_level(band);
        const Eigen::Index hr = r / 2;
        const Eigen::Index hc = c / 2;
        pyr.details.push_back({band.bottomLeftCorner(hr, hc), band.topRightCorner(hr, hc), band.bottomRightCorner(hr, hc)});
        work.topLeftCorner(hr, hc) = band.topLeftCorner(hr, hc);
        r = hr;
        c = hc;
    }
    pyr.ll = work.topLeftCorner(r, c);
    return pyr;
}

Plane idwt2(const WaveletPyramid& pyramid) {
    Plane current = pyramid.ll;
    for (auto it = pyramid.details.rbegin(); it != pyramid.details.rend(); ++it) {
        const Eigen::Index hr = current.rows();
        const Eigen::Index hc = current.cols();
        if (it->lh.rows() != hr || it->lh.cols() != hc || it->hl.rows() != hr || it->hl.cols() != hc ||
            it->hh.rows() != hr || it->hh.cols() != hc) {
            throw DimensionError("inconsistent wavelet pyramid");
        }
        Plane band(2 * hr, 2 * hc);
        band.topLeftCorner(hr, hc) = current;
        band.bottomLeftCorner(hr, hc) = it->lh;
        band.topRightCorner(hr, hc) = it->hl;
        band.bottomRightCorner(hr, hc) = it->hh;
        synthesize_level(band);
        current = std::move(band);
    }
    return current.topLeftCorner(pyramid.rows, pyramid.cols);
}

Plane wiener_shrink(const Plane& subband, double sigma0_sq, const std::vector<int>& window_sizes) {
    if (!(sigma0_sq > 0.0)) {
        throw ConfigError("sigma0_sq must be positive");
    }
    const Eigen::Index rows = subband.rows();
    const Eigen::Index cols = subband.cols();
    // Summed-area table of c^2 with a zero border row/column.
    Plane integral = Plane::Zero(rows + 1, cols + 1);
    for (Eigen::Index y = 0; y < rows; ++y) {
        double row_sum = 0.0;
        for (Eigen::Index x = 0; x < cols; ++x) {
            row_sum += subband(y, x) * subband(y, x);
            integral(y + 1, x + 1) = integral(y, x + 1) + row_sum;
        }
    }
    Plane variance = Plane::Constant(rows, cols, std::numeric_limits<double>::infinity());
    for (int w : window_sizes) {
        const Eigen::Index half = w / 2;
        for (Eigen::Index y = 0; y < rows; ++y) {
            const Eigen::Index y0 = std::max<Eigen::Index>(0, y - half);
            const Eigen::Index y1 = std::min<Eigen::Index>(rows, y + half + 1);
            for (Eigen::Index x = 0; x < cols; ++x) {
                const Eigen::Index x0 = std::max<Eigen::Index>(0, x - half);
                const Eigen::Index x1 = std::min<Eigen::Index>(cols, x + half + 1);
                const double sum = integral(y1, x1) - integral(y0, x1) - integral(y1, x0) + integral(y0, x0);
                const double mean = sum / static_cast<double>((y1 - y0) * (x1 - x0));
                variance(y, x) = std::min(variance(y, x), std::max(0.0, mean - sigma0_sq));
            }
        }
    }
    return subband * variance / (variance + sigma0_sq);
}

Plane denoise(const Plane& img, const DenoiserConfig& cfg) {
    cfg.validate();
    WaveletPyramid pyr = dwt2(img, cfg.levels);
    for (auto& level : pyr.details) {
        level.lh = wiener_shrink(level.lh, cfg.sigma0_sq, cfg.window_sizes);
        level.hl = wiener_shrink(level.hl, cfg.sigma0_sq, cfg.window_sizes);
        level.hh = wiener_shrink(level.hh, cfg.sigma0_sq, cfg.window_sizes);
    }
    return idwt2(pyr);
}

NoiseResidual extract_residual(const imaging::Image& img, const DenoiserConfig& cfg) {
    const Plane& samples = img.samples();
    NoiseResidual res{samples - denoise(samples, cfg), img.meta(), false};
    return zero_mean(res);
}

Plane zero_mean(const Plane& values) {
    Plane out = values.colwise() - values.rowwise().mean();
    out.rowwise() -= out.colwise().mean();
    return out;
}

NoiseResidual zero_mean(const NoiseResidual& res) {
    return {zero_mean(res.values), res.source_meta, true};
}

} // namespace prnu::residual
