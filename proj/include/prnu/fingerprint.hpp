#pragma once

#include "prnu/imaging.hpp"
#include "prnu/residual.hpp"
#include "prnu/types.hpp"

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace prnu::fingerprint {

/// Estimated PRNU of one device. Stored at single precision, which is also
/// the on-disk precision, so persistence is lossless.
struct Fingerprint {
    std::string device_id;
    PlaneF K;
    std::uint32_t n_images = 0;
    bool zero_meaned = false;

    bool operator==(const Fingerprint& o) const {
        return device_id == o.device_id && n_images == o.n_images && zero_meaned == o.zero_meaned &&
               K.rows() == o.K.rows() && K.cols() == o.K.cols() && (K == o.K).all();
    }
};

/// Kahan-compensated running sums for K = sum(W*I) / (sum(I^2) + eps).
/// Partial accumulators over disjoint image subsets can be merged.
class PrnuAccumulator {
public:
    void add(const Plane& residual, const Plane& image);
    void merge(const PrnuAccumulator& other);
    [[nodiscard]] std::uint32_t count() const noexcept { return count_; }
    /// Raw estimate (no zero-meaning). Throws EmptyInputError when nothing was added.
    [[nodiscard]] Plane estimate(double eps = 1e-12) const;

private:
    struct Compensated {
        Plane sum;
        Plane carry;
        void add(const Plane& term);
        [[nodiscard]] Plane value() const { return sum + carry; }
    };
    Compensated numerator_;
    Compensated denominator_;
    std::uint32_t count_ = 0;
};

/// Maximum-likelihood PRNU from (ideally flat-field) images. The result is
/// zero-meaned and rounded to single precision.
Fingerprint estimate_prnu(std::span<const imaging::Image> images, const residual::DenoiserConfig& cfg = {},
                          std::string device_id = {}, unsigned threads = 1);

/// Same estimator with residuals supplied by the caller.
Fingerprint estimate_prnu_from_residuals(std::span<const Plane> residuals, std::span<const Plane> images,
                                         std::string device_id = {}, bool apply_zero_mean = true);

// Binary container: "PRNU", u8 version, u32 height, u32 width, u32 n_images,
// u8 flags, height*width f32 LE row-major, u32 id length, UTF-8 id.
inline constexpr std::uint8_t kContainerVersion = 1;
inline constexpr std::uint8_t kFlagZeroMeaned = 0x01;
inline constexpr std::uint8_t kFlagResidual = 0x02;

void save_fingerprint(const Fingerprint& fp, const std::filesystem::path& path);
Fingerprint load_fingerprint(const std::filesystem::path& path);

/// Residuals share the fingerprint container (flag bit 1 set, n_images = 1).
void save_residual(const residual::NoiseResidual& res, const std::filesystem::path& path);
residual::NoiseResidual load_residual(const std::filesystem::path& path);

class FingerprintDb {
public:
    /// Throws DuplicateError on a repeated device id.
    void add(Fingerprint fp);
    [[nodiscard]] std::size_t size() const noexcept { return entries_.size(); }
    [[nodiscard]] bool empty() const noexcept { return entries_.empty(); }
    [[nodiscard]] const std::vector<Fingerprint>& entries() const noexcept { return entries_; }
    [[nodiscard]] const Fingerprint& operator[](std::size_t i) const { return entries_.at(i); }
    /// Index of the entry with this id, or size() when absent.
    [[nodiscard]] std::size_t find(const std::string& device_id) const;
    [[nodiscard]] std::vector<std::string> device_ids() const;

private:
    std::vector<Fingerprint> entries_;
};

/// Central crop of every fingerprint, order preserved.
FingerprintDb db_crop_all(const FingerprintDb& db, int side);

/// One `<device_id>.prnu` file per entry.
void save_db(const FingerprintDb& db, const std::filesystem::path& dir);
/// Loads every *.prnu file in `dir`, sorted by file name.
FingerprintDb load_db(const std::filesystem::path& dir);

} // namespace prnu::fingerprint
