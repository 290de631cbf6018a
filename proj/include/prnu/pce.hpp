#pragma once

#include "prnu/fingerprint.hpp"
#include "prnu/residual.hpp"
#include "prnu/types.hpp"

#include <complex>
#include <vector>

namespace prnu::pce {

/// Zero-shift normalized cross-correlation. Throws DegenerateInputError on
/// constant input, DimensionError on size mismatch.
double ncc(const Plane& a, const Plane& b);

/// Circular cross-correlation surface: values(sy, sx) = sum_x a(x) * b(x + s),
/// indices taken modulo the array size. Computed in the frequency domain.
struct CorrSurface {
    Plane values;
};

CorrSurface corr_surface(const Plane& a, const Plane& b);

struct PceScore {
    double pce = 0.0; ///< signed by the zero-shift correlation
    int peak_row = 0; ///< always (0, 0): inputs are assumed aligned
    int peak_col = 0;
    int exclusion_radius = 5;
};

/// sign(r0) * r0^2 / mean of r(s)^2 over shifts outside the (2r+1)^2
/// neighbourhood of zero shift (circularly wrapped).
PceScore pce_from_surface(const CorrSurface& surface, int exclusion_radius = 5);

PceScore pce(const Plane& residual, const Plane& fingerprint, int exclusion_radius = 5);
PceScore pce(const residual::NoiseResidual& w, const fingerprint::Fingerprint& fp, int exclusion_radius = 5);

/// Variant correlating W against I*K instead of K.
PceScore pce_intensity_weighted(const Plane& residual, const Plane& fingerprint, const Plane& intensity,
                                int exclusion_radius = 5);

/// One residual against many equally-sized fingerprints. The residual
/// spectrum is computed once and fingerprint spectra may be supplied
/// precomputed; scores equal per-pair pce() to rounding.
class BatchPce {
public:
    explicit BatchPce(std::vector<Plane> fingerprints, int exclusion_radius = 5);
    [[nodiscard]] std::vector<double> score(const Plane& residual, unsigned threads = 1) const;
    [[nodiscard]] std::size_t size() const noexcept { return spectra_.size(); }

private:
    Eigen::Index rows_ = 0;
    Eigen::Index cols_ = 0;
    int radius_;
    std::vector<std::vector<std::complex<double>>> spectra_;
};

} // namespace prnu::pce
