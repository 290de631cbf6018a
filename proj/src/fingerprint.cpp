#include "prnu/fingerprint.hpp"

#include "binary_io.hpp"
#include "prnu/errors.hpp"
#include "prnu/parallel.hpp"

#include <algorithm>

namespace prnu::fingerprint {

namespace {

constexpr std::string_view kMagic = "PRNU";

void check_same_dims(const Plane& a, const Plane& b, const char* what) {
    if (a.rows() != b.rows() || a.cols() != b.cols()) {
        throw DimensionError(std::string(what) + ": " + std::to_string(a.rows()) + "x" + std::to_string(a.cols()) +
                             " vs " + std::to_string(b.rows()) + "x" + std::to_string(b.cols()));
    }
}

struct Container {
    std::uint32_t height = 0;
    std::uint32_t width = 0;
    std::uint32_t n_images = 0;
    std::uint8_t flags = 0;
    PlaneF values;
    std::string id;
};

void write_container(const Container& c, const std::filesystem::path& path) {
    detail::ByteWriter w;
    w.bytes(kMagic);
    w.u8(kContainerVersion);
    w.u32(c.height);
    w.u32(c.width);
    w.u32(c.n_images);
    w.u8(c.flags);
    for (Eigen::Index i = 0; i < c.values.size(); ++i) {
        w.f32(c.values.data()[i]);
    }
    w.str(c.id);
    w.write_to(path);
}

Container read_container(const std::filesystem::path& path) {
    auto r = detail::ByteReader::from_file(path);
    if (r.remaining() < kMagic.size() || r.bytes(kMagic.size()) != kMagic) {
        throw FormatError("bad magic (expected PRNU): " + path.string());
    }
    const std::uint8_t version = r.u8();
    if (version != kContainerVersion) {
        throw FormatError("unsupported container version " + std::to_string(version) + " in " + path.string());
    }
    Container c;
    c.height = r.u32();
    c.width = r.u32();
    c.n_images = r.u32();
    c.flags = r.u8();
    const std::uint64_t count = static_cast<std::uint64_t>(c.height) * c.width;
    if (c.height == 0 || c.width == 0 || count * 4 > r.remaining()) {
        if (c.height == 0 || c.width == 0) {
            throw FormatError("zero-sized array in " + path.string());
        }
        throw IoError("truncated array data in " + path.string());
    }
    c.values.resize(c.height, c.width);
    for (std::uint64_t i = 0; i < count; ++i) {
        c.values.data()[i] = r.f32();
    }
    c.id = r.str();
    if (!r.at_end()) {
        throw FormatError("trailing bytes in " + path.string());
    }
    return c;
}

} // namespace

void PrnuAccumulator::Compensated::add(const Plane& term) {
    if (sum.size() == 0) {
        sum = Plane::Zero(term.rows(), term.cols());
        carry = Plane::Zero(term.rows(), term.cols());
    }
    // Neumaier's variant of Kahan summation, elementwise.
    for (Eigen::Index i = 0; i < sum.size(); ++i) {
        double& s = sum.data()[i];
        const double x = term.data()[i];
        const double t = s + x;
        if (std::abs(s) >= std::abs(x)) {
            carry.data()[i] += (s - t) + x;
        } else {
            carry.data()[i] += (x - t) + s;
        }
        s = t;
    }
}

void PrnuAccumulator::add(const Plane& residual, const Plane& image) {
    check_same_dims(residual, image, "residual/image size mismatch");
    if (count_ > 0) {
        check_same_dims(numerator_.sum, image, "image size differs from earlier images");
    }
    numerator_.add(residual * image);
    denominator_.add(image.square());
    ++count_;
}

void PrnuAccumulator::merge(const PrnuAccumulator& other) {
    if (other.count_ == 0) {
        return;
    }
    if (count_ == 0) {
        *this = other;
        return;
    }
    check_same_dims(numerator_.sum, other.numerator_.sum, "cannot merge accumulators");
    numerator_.add(other.numerator_.sum);
    numerator_.add(other.numerator_.carry);
    denominator_.add(other.denominator_.sum);
    denominator_.add(other.denominator_.carry);
    count_ += other.count_;
}

Plane PrnuAccumulator::estimate(double eps) const {
    if (count_ == 0) {
        throw EmptyInputError("PRNU estimate needs at least one image");
    }
    return numerator_.value() / (denominator_.value() + eps);
}

Fingerprint estimate_prnu_from_residuals(std::span<const Plane> residuals, std::span<const Plane> images,
                                         std::string device_id, bool apply_zero_mean) {
    if (residuals.empty() || images.empty()) {
        throw EmptyInputError("PRNU estimate needs at least one image");
    }
    if (residuals.size() != images.size()) {
        throw DimensionError("residual and image counts differ");
    }
    PrnuAccumulator acc;
    for (std::size_t i = 0; i < images.size(); ++i) {
        acc.add(residuals[i], images[i]);
    }
    Plane k = acc.estimate();
    if (apply_zero_mean) {
        k = residual::zero_mean(k);
    }
    return {std::move(device_id), k.cast<float>(), acc.count(), apply_zero_mean};
}

Fingerprint estimate_prnu(std::span<const imaging::Image> images, const residual::DenoiserConfig& cfg,
                          std::string device_id, unsigned threads) {
    if (images.empty()) {
        throw EmptyInputError("PRNU estimate needs at least one image");
    }
    for (const auto& img : images) {
        check_same_dims(images.front().samples(), img.samples(), "flat-field images differ in size");
    }
    std::vector<Plane> residuals(images.size());
    parallel_for(images.size(), threads,
                 [&](std::size_t i) { residuals[i] = residual::extract_residual(images[i], cfg).values; });
    std::vector<Plane> samples;
    samples.reserve(images.size());
    for (const auto& img : images) {
        samples.push_back(img.samples());
    }
    if (device_id.empty() && images.front().meta().device_id) {
        device_id = *images.front().meta().device_id;
    }
    return estimate_prnu_from_residuals(residuals, samples, std::move(device_id), true);
}

void save_fingerprint(const Fingerprint& fp, const std::filesystem::path& path) {
    Container c;
    c.height = static_cast<std::uint32_t>(fp.K.rows());
    c.width = static_cast<std::uint32_t>(fp.K.cols());
    c.n_images = fp.n_images;
    c.flags = fp.zero_meaned ? kFlagZeroMeaned : 0;
    c.values = fp.K;
    c.id = fp.device_id;
    write_container(c, path);
}

Fingerprint load_fingerprint(const std::filesystem::path& path) {
    Container c = read_container(path);
    if ((c.flags & kFlagResidual) != 0) {
        throw FormatError("file holds a residual, not a fingerprint: " + path.string());
    }
    return {std::move(c.id), std::move(c.values), c.n_images, (c.flags & kFlagZeroMeaned) != 0};
}

void save_residual(const residual::NoiseResidual& res, const std::filesystem::path& path) {
    Container c;
    c.height = static_cast<std::uint32_t>(res.values.rows());
    c.width = static_cast<std::uint32_t>(res.values.cols());
    c.n_images = 1;
    c.flags = static_cast<std::uint8_t>(kFlagResidual | (res.zero_meaned ? kFlagZeroMeaned : 0));
    c.values = res.values.cast<float>();
    c.id = res.source_meta.device_id.value_or("");
    write_container(c, path);
}

residual::NoiseResidual load_residual(const std::filesystem::path& path) {
    Container c = read_container(path);
    if ((c.flags & kFlagResidual) == 0) {
        throw FormatError("file holds a fingerprint, not a residual: " + path.string());
    }
    residual::NoiseResidual res;
    res.values = c.values.cast<double>();
    if (!c.id.empty()) {
        res.source_meta.device_id = c.id;
    }
    res.zero_meaned = (c.flags & kFlagZeroMeaned) != 0;
    return res;
}

void FingerprintDb::add(Fingerprint fp) {
    if (find(fp.device_id) != entries_.size()) {
        throw DuplicateError("device id already in database: " + fp.device_id);
    }
    entries_.push_back(std::move(fp));
}

std::size_t FingerprintDb::find(const std::string& device_id) const {
    const auto it = std::find_if(entries_.begin(), entries_.end(),
                                 [&](const Fingerprint& fp) { return fp.device_id == device_id; });
    return static_cast<std::size_t>(it - entries_.begin());
}

std::vector<std::string> FingerprintDb::device_ids() const {
    std::vector<std::string> ids;
    ids.reserve(entries_.size());
    for (const auto& fp : entries_) {
        ids.push_back(fp.device_id);
    }
    return ids;
}

FingerprintDb db_crop_all(const FingerprintDb& db, int side) {
    FingerprintDb out;
    for (const auto& fp : db.entries()) {
        Fingerprint cropped = fp;
        cropped.K = imaging::central_crop(fp.K.cast<double>(), side).cast<float>();
        out.add(std::move(cropped));
    }
    return out;
}

void save_db(const FingerprintDb& db, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    for (const auto& fp : db.entries()) {
        if (fp.device_id.empty() || fp.device_id.find_first_of("/\\") != std::string::npos) {
            throw ConfigError("device id not usable as a file name: '" + fp.device_id + "'");
        }
        save_fingerprint(fp, dir / (fp.device_id + ".prnu"));
    }
}

FingerprintDb load_db(const std::filesystem::path& dir) {
    if (!std::filesystem::is_directory(dir)) {
        throw IoError("fingerprint database directory not found: " + dir.string());
    }
    std::vector<std::filesystem::path> files;
    for (const auto& entry : std::filesystem::directory_iterator(dir)) {
        if (entry.is_regular_file() && entry.path().extension() == ".prnu") {
            files.push_back(entry.path());
        }
    }
    std::sort(files.begin(), files.end());
    FingerprintDb db;
    for (const auto& f : files) {
        db.add(load_fingerprint(f));
    }
    return db;
}

} // namespace prnu::fingerprint
