#pragma once

#include "prnu/types.hpp"

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace prnu::imaging {

struct CompressionStep {
    std::string codec; ///< "jpeg" for anything this library produces
    int quality = 0;   ///< 1..100; 0 when the source quality is unknown

    bool operator==(const CompressionStep&) const = default;
};

struct ImageMeta {
    std::optional<std::string> device_id;
    std::vector<CompressionStep> compression_history;

    bool operator==(const ImageMeta&) const = default;
};

/// Single-channel luminance raster, values in [0, 255].
class Image {
public:
    Image() = default;
    /// Throws DimensionError on empty planes, FormatError on non-finite samples.
    explicit Image(Plane samples, ImageMeta meta = {});

    [[nodiscard]] int width() const noexcept { return static_cast<int>(samples_.cols()); }
    [[nodiscard]] int height() const noexcept { return static_cast<int>(samples_.rows()); }
    [[nodiscard]] const Plane& samples() const noexcept { return samples_; }
    [[nodiscard]] const ImageMeta& meta() const noexcept { return meta_; }

    /// Copy with one more entry appended to the compression history.
    [[nodiscard]] Image with_compression(Plane samples, CompressionStep step) const;
    [[nodiscard]] Image with_device(std::string device_id) const;

private:
    Plane samples_;
    ImageMeta meta_;
};

/// Side length of a central square crop. Valid sizes are even and >= 8.
class CropSpec {
public:
    explicit CropSpec(int side);
    [[nodiscard]] int side() const noexcept { return side_; }

private:
    int side_;
};

/// Decodes PGM (P5), PNG (8/16-bit gray, RGB, with or without alpha) or
/// JPEG. Color input is reduced to BT.601 luminance.
Image load_image(const std::filesystem::path& path);

void save_pgm(const Image& img, const std::filesystem::path& path);
void save_jpeg(const Image& img, const std::filesystem::path& path, int quality);

/// BT.601 luma of interleaved 8-bit RGB.
Plane rgb_to_luminance(const unsigned char* rgb, int width, int height, int stride_bytes);

/// Top-left corner of the crop is (floor((H-P)/2), floor((W-P)/2)).
Image central_crop(const Image& img, const CropSpec& spec);
Plane central_crop(const Plane& plane, int side);

/// Divides by the population standard deviation.
Plane normalize_by_std(const Plane& m);
double population_std(const Plane& m);

/// Encode to JPEG at `quality` and decode again.
Image recompress_jpeg(const Image& img, int quality);

/// Rounds to the nearest integer and clamps to [0, 255], i.e. what an 8-bit
/// container would store.
Plane quantize_8bit(const Plane& samples);

} // namespace prnu::imaging
