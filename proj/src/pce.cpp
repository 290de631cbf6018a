#include "prnu/pce.hpp"

#include "prnu/errors.hpp"
#include "prnu/parallel.hpp"

#include <fftw3.h>

#include <cmath>
#include <map>
#include <memory>
#include <mutex>
#include <utility>

namespace prnu::pce {

namespace {

void check_same_dims(const Plane& a, const Plane& b) {
    if (a.rows() != b.rows() || a.cols() != b.cols()) {
        throw DimensionError("correlation inputs differ in size: " + std::to_string(a.rows()) + "x" +
                             std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) + "x" +
                             std::to_string(b.cols()));
    }
    if (a.size() == 0) {
        throw DimensionError("correlation of empty arrays");
    }
}

template <typename T>
struct FftwFree {
    void operator()(T* p) const noexcept { fftw_free(p); }
};

using RealBuffer = std::unique_ptr<double[], FftwFree<double>>;
using ComplexBuffer = std::unique_ptr<fftw_complex[], FftwFree<fftw_complex>>;

RealBuffer alloc_real(std::size_t n) {
    return RealBuffer(fftw_alloc_real(n));
}

ComplexBuffer alloc_complex(std::size_t n) {
    return ComplexBuffer(fftw_alloc_complex(n));
}

// Plans for one size, shared by all threads through the new-array execute API.
struct PlanPair {
    fftw_plan forward = nullptr;
    fftw_plan inverse = nullptr;
};

class PlanCache {
public:
    ~PlanCache() {
        for (auto& [key, plans] : plans_) {
            fftw_destroy_plan(plans.forward);
            fftw_destroy_plan(plans.inverse);
        }
    }

    PlanPair get(int rows, int cols) {
        std::lock_guard lock(mutex_);
        const auto key = std::make_pair(rows, cols);
        if (auto it = plans_.find(key); it != plans_.end()) {
            return it->second;
        }
        const std::size_t n = static_cast<std::size_t>(rows) * cols;
        const std::size_t nc = static_cast<std::size_t>(rows) * (cols / 2 + 1);
        RealBuffer real = alloc_real(n);
        ComplexBuffer spec = alloc_complex(nc);
        PlanPair plans;
        plans.forward = fftw_plan_dft_r2c_2d(rows, cols, real.get(), spec.get(), FFTW_ESTIMATE);
        plans.inverse = fftw_plan_dft_c2r_2d(rows, cols, spec.get(), real.get(), FFTW_ESTIMATE | FFTW_DESTROY_INPUT);
        plans_.emplace(key, plans);
        return plans;
    }

private:
    std::mutex mutex_;
    std::map<std::pair<int, int>, PlanPair> plans_;
};

PlanCache& plan_cache() {
    static PlanCache cache;
    return cache;
}

std::vector<std::complex<double>> spectrum(const Plane& a) {
    const int rows = static_cast<int>(a.rows());
    const int cols = static_cast<int>(a.cols());
    const std::size_t n = static_cast<std::size_t>(rows) * cols;
    const std::size_t nc = static_cast<std::size_t>(rows) * (cols / 2 + 1);
    RealBuffer real = alloc_real(n);
    ComplexBuffer spec = alloc_complex(nc);
    std::copy(a.data(), a.data() + n, real.get());
    fftw_execute_dft_r2c(plan_cache().get(rows, cols).forward, real.get(), spec.get());
    std::vector<std::complex<double>> out(nc);
    for (std::size_t i = 0; i < nc; ++i) {
        out[i] = {spec[i][0], spec[i][1]};
    }
    return out;
}

// IFFT(conj(A) * B) / N.
Plane correlate_spectra(const std::vector<std::complex<double>>& a, const std::vector<std::complex<double>>& b,
                        Eigen::Index rows, Eigen::Index cols) {
    const std::size_t n = static_cast<std::size_t>(rows * cols);
    const std::size_t nc = a.size();
    ComplexBuffer spec = alloc_complex(nc);
    for (std::size_t i = 0; i < nc; ++i) {
        const std::complex<double> v = std::conj(a[i]) * b[i];
        spec[i][0] = v.real();
        spec[i][1] = v.imag();
    }
    RealBuffer real = alloc_real(n);
    fftw_execute_dft_c2r(plan_cache().get(static_cast<int>(rows), static_cast<int>(cols)).inverse, spec.get(),
                         real.get());
    Plane out(rows, cols);
    const double scale = 1.0 / static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) {
        out.data()[i] = real[i] * scale;
    }
    return out;
}

void check_radius(const Plane& surface, int radius) {
    const Eigen::Index side = 2 * static_cast<Eigen::Index>(radius) + 1;
    if (radius < 0 || side >= surface.rows() || side >= surface.cols()) {
        throw ConfigError("PCE exclusion radius " + std::to_string(radius) + " does not fit a " +
                          std::to_string(surface.rows()) + "x" + std::to_string(surface.cols()) + " surface");
    }
}

} // namespace

double ncc(const Plane& a, const Plane& b) {
    check_same_dims(a, b);
    const Plane da = a - a.mean();
    const Plane db = b - b.mean();
    const double na = std::sqrt(da.square().sum());
    const double nb = std::sqrt(db.square().sum());
    const double root_n = std::sqrt(static_cast<double>(a.size()));
    if (na <= 1e-12 * a.abs().maxCoeff() * root_n || nb <= 1e-12 * b.abs().maxCoeff() * root_n) {
        throw DegenerateInputError("NCC of a constant array");
    }
    return (da * db).sum() / (na * nb);
}

CorrSurface corr_surface(const Plane& a, const Plane& b) {
    check_same_dims(a, b);
    return {correlate_spectra(spectrum(a), spectrum(b), a.rows(), a.cols())};
}

PceScore pce_from_surface(const CorrSurface& surface, int exclusion_radius) {
    const Plane& rho = surface.values;
    check_radius(rho, exclusion_radius);
    const Eigen::Index rows = rho.rows();
    const Eigen::Index cols = rho.cols();
    double excluded = 0.0;
    for (int dy = -exclusion_radius; dy <= exclusion_radius; ++dy) {
        const Eigen::Index y = (dy + rows) % rows;
        for (int dx = -exclusion_radius; dx <= exclusion_radius; ++dx) {
            const Eigen::Index x = (dx + cols) % cols;
            excluded += rho(y, x) * rho(y, x);
        }
    }
    const double area = static_cast<double>((2 * exclusion_radius + 1) * (2 * exclusion_radius + 1));
    const double energy = (rho.square().sum() - excluded) / (static_cast<double>(rows * cols) - area);
    const double peak = rho(0, 0);
    PceScore score;
    score.exclusion_radius = exclusion_radius;
    score.pce = energy > 0.0 ? std::copysign(peak * peak / energy, peak) : 0.0;
    return score;
}

PceScore pce(const Plane& residual, const Plane& fingerprint, int exclusion_radius) {
    check_same_dims(residual, fingerprint);
    check_radius(residual, exclusion_radius);
    return pce_from_surface(corr_surface(residual, fingerprint), exclusion_radius);
}

PceScore pce(const residual::NoiseResidual& w, const fingerprint::Fingerprint& fp, int exclusion_radius) {
    return pce(w.values, fp.K.cast<double>(), exclusion_radius);
}

PceScore pce_intensity_weighted(const Plane& residual, const Plane& fingerprint, const Plane& intensity,
                                int exclusion_radius) {
    check_same_dims(fingerprint, intensity);
    return pce(residual, intensity * fingerprint, exclusion_radius);
}

BatchPce::BatchPce(std::vector<Plane> fingerprints, int exclusion_radius) : radius_(exclusion_radius) {
    if (fingerprints.empty()) {
        throw EmptyInputError("batch PCE needs at least one fingerprint");
    }
    rows_ = fingerprints.front().rows();
    cols_ = fingerprints.front().cols();
    check_radius(fingerprints.front(), radius_);
    spectra_.reserve(fingerprints.size());
    for (const auto& k : fingerprints) {
        check_same_dims(fingerprints.front(), k);
        spectra_.push_back(spectrum(k));
    }
}

std::vector<double> BatchPce::score(const Plane& residual, unsigned threads) const {
    if (residual.rows() != rows_ || residual.cols() != cols_) {
        throw DimensionError("residual size does not match the fingerprint batch");
    }
    const auto w = spectrum(residual);
    std::vector<double> out(spectra_.size());
    parallel_for(spectra_.size(), threads, [&](std::size_t i) {
        out[i] = pce_from_surface({correlate_spectra(w, spectra_[i], rows_, cols_)}, radius_).pce;
    });
    return out;
}

} // namespace prnu::pce
