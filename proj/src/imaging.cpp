#include "prnu/imaging.hpp"

#include "prnu/errors.hpp"

#include <jpeglib.h>
#include <jerror.h>
#include <png.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <csetjmp>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iterator>
#include <sstream>

namespace prnu::imaging {

namespace {

std::vector<unsigned char> read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw IoError("cannot open " + path.string());
    }
    std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (in.bad()) {
        throw IoError("read failed: " + path.string());
    }
    return bytes;
}

void write_file(const std::filesystem::path& path, const unsigned char* data, std::size_t size) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw IoError("cannot open for writing: " + path.string());
    }
    out.write(reinterpret_cast<const char*>(data), static_cast<std::streamsize>(size));
    if (!out) {
        throw IoError("write failed: " + path.string());
    }
}

// ---------------------------------------------------------------- PGM

Image decode_pgm(const std::vector<unsigned char>& bytes, const std::string& name) {
    std::size_t pos = 2;
    auto skip_space = [&] {
        while (pos < bytes.size()) {
            if (bytes[pos] == '#') {
                while (pos < bytes.size() && bytes[pos] != '\n') {
                    ++pos;
                }
            } else if (std::isspace(bytes[pos]) != 0) {
                ++pos;
            } else {
                break;
            }
        }
    };
    auto read_uint = [&]() -> long {
        skip_space();
        if (pos >= bytes.size()) {
            throw IoError("truncated PGM header: " + name);
        }
        if (std::isdigit(bytes[pos]) == 0) {
            throw FormatError("malformed PGM header: " + name);
        }
        long v = 0;
        while (pos < bytes.size() && std::isdigit(bytes[pos]) != 0) {
            v = v * 10 + (bytes[pos] - '0');
            if (v > (1L << 24)) {
                throw FormatError("PGM header value out of range: " + name);
            }
            ++pos;
        }
        return v;
    };
    const long width = read_uint();
    const long height = read_uint();
    const long maxval = read_uint();
    if (width < 1 || height < 1 || maxval < 1 || maxval > 65535) {
        throw FormatError("invalid PGM dimensions or maxval: " + name);
    }
    if (pos >= bytes.size()) {
        throw IoError("truncated PGM: " + name);
    }
    ++pos; // single whitespace byte after maxval
    const std::size_t bps = maxval > 255 ? 2 : 1;
    const std::size_t need = static_cast<std::size_t>(width) * static_cast<std::size_t>(height) * bps;
    if (bytes.size() - pos < need) {
        throw IoError("truncated PGM pixel data: " + name);
    }
    Plane samples(height, width);
    const double scale = 255.0 / static_cast<double>(maxval);
    const unsigned char* p = bytes.data() + pos;
    for (long y = 0; y < height; ++y) {
        for (long x = 0; x < width; ++x) {
            unsigned v = 0;
            if (bps == 1) {
                v = *p++;
            } else {
                v = (static_cast<unsigned>(p[0]) << 8) | p[1];
                p += 2;
            }
            samples(y, x) = maxval == 255 ? static_cast<double>(v) : static_cast<double>(v) * scale;
        }
    }
    return Image(std::move(samples));
}

// ---------------------------------------------------------------- PNG

Image decode_png(const std::vector<unsigned char>& bytes, const std::string& name) {
    png_image image{};
    image.version = PNG_IMAGE_VERSION;
    if (png_image_begin_read_from_memory(&image, bytes.data(), bytes.size()) == 0) {
        throw IoError("PNG header: " + name + ": " + image.message);
    }
    image.format = PNG_FORMAT_RGB;
    std::vector<unsigned char> rgb(PNG_IMAGE_SIZE(image));
    if (png_image_finish_read(&image, nullptr, rgb.data(), 0, nullptr) == 0) {
        std::string msg = image.message;
        png_image_free(&image);
        throw IoError("PNG decode: " + name + ": " + msg);
    }
    const int w = static_cast<int>(image.width);
    const int h = static_cast<int>(image.height);
    return Image(rgb_to_luminance(rgb.data(), w, h, w * 3));
}

// ---------------------------------------------------------------- JPEG

struct JpegErrorManager {
    jpeg_error_mgr pub;
    std::jmp_buf jump;
    char message[JMSG_LENGTH_MAX];
    bool truncated;
};

extern "C" void jpeg_error_exit_cb(j_common_ptr cinfo) {
    auto* err = reinterpret_cast<JpegErrorManager*>(cinfo->err);
    (*cinfo->err->format_message)(cinfo, err->message);
    std::longjmp(err->jump, 1);
}

extern "C" void jpeg_emit_message_cb(j_common_ptr cinfo, int level) {
    auto* err = reinterpret_cast<JpegErrorManager*>(cinfo->err);
    if (level < 0 && cinfo->err->msg_code == JWRN_JPEG_EOF) {
        err->truncated = true;
    }
}

constexpr std::array<int, 64> kStdLuminanceQuant = {
    16, 11, 10, 16, 24,  40,  51,  61,  12, 12, 14, 19, 26,  58,  60,  55,
    14, 13, 16, 24, 40,  57,  69,  56,  14, 17, 22, 29, 51,  87,  80,  62,
    18, 22, 37, 56, 68,  109, 103, 77,  24, 35, 55, 64, 81,  104, 113, 92,
    49, 64, 78, 87, 103, 121, 120, 101, 72, 92, 95, 98, 112, 100, 103, 99};

// Best-matching IJG quality for a luminance quantization table.
int estimate_jpeg_quality(const JQUANT_TBL* table) {
    if (table == nullptr) {
        return 0;
    }
    int best_q = 0;
    long best_err = -1;
    for (int q = 1; q <= 100; ++q) {
        const long scale = q < 50 ? 5000 / q : 200 - 2 * q;
        long err = 0;
        for (std::size_t i = 0; i < 64; ++i) {
            long v = (kStdLuminanceQuant[i] * scale + 50) / 100;
            v = std::clamp(v, 1L, 255L);
            err += std::labs(v - static_cast<long>(table->quantval[i]));
        }
        if (best_err < 0 || err < best_err) {
            best_err = err;
            best_q = q;
        }
    }
    return best_q;
}

struct DecodedJpeg {
    std::vector<unsigned char> pixels;
    int width = 0;
    int height = 0;
    int components = 0;
    int quality = 0;
};

// Returns an empty string on success, else the libjpeg message. Kept free of
// non-trivially-destructible locals because of the longjmp.
std::string decode_jpeg_raw(const unsigned char* data, std::size_t size, DecodedJpeg& out, bool& truncated) {
    jpeg_decompress_struct cinfo{};
    JpegErrorManager err{};
    cinfo.err = jpeg_std_error(&err.pub);
    err.pub.error_exit = jpeg_error_exit_cb;
    err.pub.emit_message = jpeg_emit_message_cb;
    if (setjmp(err.jump) != 0) {
        jpeg_destroy_decompress(&cinfo);
        return err.message[0] != '\0' ? err.message : "jpeg error";
    }
    jpeg_create_decompress(&cinfo);
    jpeg_mem_src(&cinfo, data, static_cast<unsigned long>(size));
    jpeg_read_header(&cinfo, TRUE);
    out.quality = estimate_jpeg_quality(cinfo.quant_tbl_ptrs[0]);
    if (cinfo.num_components != 1) {
        cinfo.out_color_space = JCS_RGB;
    }
    jpeg_start_decompress(&cinfo);
    out.width = static_cast<int>(cinfo.output_width);
    out.height = static_cast<int>(cinfo.output_height);
    out.components = cinfo.output_components;
    out.pixels.resize(static_cast<std::size_t>(out.width) * out.height * out.components);
    const std::size_t stride = static_cast<std::size_t>(out.width) * out.components;
    while (cinfo.output_scanline < cinfo.output_height) {
        JSAMPROW row = out.pixels.data() + stride * cinfo.output_scanline;
        jpeg_read_scanlines(&cinfo, &row, 1);
    }
    jpeg_finish_decompress(&cinfo);
    jpeg_destroy_decompress(&cinfo);
    truncated = err.truncated;
    return {};
}

std::string encode_jpeg_raw(const unsigned char* gray, int width, int height, int quality,
                            unsigned char*& buffer, unsigned long& size) {
    jpeg_compress_struct cinfo{};
    JpegErrorManager err{};
    cinfo.err = jpeg_std_error(&err.pub);
    err.pub.error_exit = jpeg_error_exit_cb;
    if (setjmp(err.jump) != 0) {
        jpeg_destroy_compress(&cinfo);
        return err.message[0] != '\0' ? err.message : "jpeg error";
    }
    jpeg_create_compress(&cinfo);
    jpeg_mem_dest(&cinfo, &buffer, &size);
    cinfo.image_width = static_cast<JDIMENSION>(width);
    cinfo.image_height = static_cast<JDIMENSION>(height);
    cinfo.input_components = 1;
    cinfo.in_color_space = JCS_GRAYSCALE;
    jpeg_set_defaults(&cinfo);
    jpeg_set_quality(&cinfo, quality, TRUE);
    jpeg_start_compress(&cinfo, TRUE);
    while (cinfo.next_scanline < cinfo.image_height) {
        auto* row = const_cast<JSAMPROW>(gray + static_cast<std::size_t>(cinfo.next_scanline) * width);
        jpeg_write_scanlines(&cinfo, &row, 1);
    }
    jpeg_finish_compress(&cinfo);
    jpeg_destroy_compress(&cinfo);
    return {};
}

Plane decoded_to_plane(const DecodedJpeg& d) {
    if (d.components == 1) {
        Plane out(d.height, d.width);
        for (int y = 0; y < d.height; ++y) {
            for (int x = 0; x < d.width; ++x) {
                out(y, x) = d.pixels[static_cast<std::size_t>(y) * d.width + x];
            }
        }
        return out;
    }
    return rgb_to_luminance(d.pixels.data(), d.width, d.height, d.width * d.components);
}

std::vector<unsigned char> to_bytes(const Plane& samples) {
    const Plane q = quantize_8bit(samples);
    std::vector<unsigned char> bytes(static_cast<std::size_t>(q.size()));
    for (Eigen::Index i = 0; i < q.size(); ++i) {
        bytes[static_cast<std::size_t>(i)] = static_cast<unsigned char>(q.data()[i]);
    }
    return bytes;
}

std::vector<unsigned char> encode_jpeg(const Plane& samples, int quality) {
    const auto gray = to_bytes(samples);
    unsigned char* buffer = nullptr;
    unsigned long size = 0;
    const std::string msg = encode_jpeg_raw(gray.data(), static_cast<int>(samples.cols()),
                                            static_cast<int>(samples.rows()), quality, buffer, size);
    std::vector<unsigned char> out;
    if (buffer != nullptr) {
        out.assign(buffer, buffer + size);
        std::free(buffer);
    }
    if (!msg.empty()) {
        throw FormatError("JPEG encode: " + msg);
    }
    return out;
}

void check_quality(int quality) {
    if (quality < 1 || quality > 100) {
        throw ConfigError("JPEG quality must be in 1..100, got " + std::to_string(quality));
    }
}

} // namespace

// ---------------------------------------------------------------- Image

Image::Image(Plane samples, ImageMeta meta) : samples_(std::move(samples)), meta_(std::move(meta)) {
    if (samples_.rows() < 1 || samples_.cols() < 1) {
        throw DimensionError("image must be at least 1x1");
    }
    if (!samples_.allFinite()) {
        throw FormatError("image samples must be finite");
    }
}

Image Image::with_compression(Plane samples, CompressionStep step) const {
    ImageMeta meta = meta_;
    meta.compression_history.push_back(std::move(step));
    return Image(std::move(samples), std::move(meta));
}

Image Image::with_device(std::string device_id) const {
    ImageMeta meta = meta_;
    meta.device_id = std::move(device_id);
    return Image(samples_, std::move(meta));
}

CropSpec::CropSpec(int side) : side_(side) {
    if (side < 8 || side % 2 != 0) {
        throw ConfigError("crop side must be even and >= 8, got " + std::to_string(side));
    }
}

// ---------------------------------------------------------------- I/O

Image load_image(const std::filesystem::path& path) {
    const auto bytes = read_file(path);
    const std::string name = path.string();
    if (bytes.size() < 4) {
        throw IoError("file too short to identify: " + name);
    }
    if (bytes[0] == 'P' && bytes[1] == '5') {
        return decode_pgm(bytes, name);
    }
    if (png_sig_cmp(bytes.data(), 0, std::min<std::size_t>(bytes.size(), 8)) == 0) {
        return decode_png(bytes, name);
    }
    if (bytes[0] == 0xFF && bytes[1] == 0xD8) {
        DecodedJpeg decoded;
        bool truncated = false;
        const std::string msg = decode_jpeg_raw(bytes.data(), bytes.size(), decoded, truncated);
        if (!msg.empty()) {
            throw IoError("JPEG decode: " + name + ": " + msg);
        }
        if (truncated) {
            throw IoError("truncated JPEG: " + name);
        }
        ImageMeta meta;
        meta.compression_history.push_back({"jpeg", decoded.quality});
        return Image(decoded_to_plane(decoded), std::move(meta));
    }
    throw FormatError("unsupported image format: " + name);
}

void save_pgm(const Image& img, const std::filesystem::path& path) {
    std::ostringstream header;
    header << "P5\n" << img.width() << ' ' << img.height() << "\n255\n";
    const std::string h = header.str();
    auto bytes = to_bytes(img.samples());
    bytes.insert(bytes.begin(), h.begin(), h.end());
    write_file(path, bytes.data(), bytes.size());
}

void save_jpeg(const Image& img, const std::filesystem::path& path, int quality) {
    check_quality(quality);
    const auto bytes = encode_jpeg(img.samples(), quality);
    write_file(path, bytes.data(), bytes.size());
}

Plane rgb_to_luminance(const unsigned char* rgb, int width, int height, int stride_bytes) {
    Plane out(height, width);
    for (int y = 0; y < height; ++y) {
        const unsigned char* row = rgb + static_cast<std::size_t>(y) * stride_bytes;
        for (int x = 0; x < width; ++x) {
            out(y, x) = 0.299 * row[3 * x] + 0.587 * row[3 * x + 1] + 0.114 * row[3 * x + 2];
        }
    }
    return out;
}

// ---------------------------------------------------------------- geometry / scaling

Plane central_crop(const Plane& plane, int side) {
    if (side < 1 || side > plane.rows() || side > plane.cols()) {
        throw DimensionError("crop side " + std::to_string(side) + " exceeds " + std::to_string(plane.rows()) + "x" +
                             std::to_string(plane.cols()));
    }
    const Eigen::Index top = (plane.rows() - side) / 2;
    const Eigen::Index left = (plane.cols() - side) / 2;
    return plane.block(top, left, side, side);
}

Image central_crop(const Image& img, const CropSpec& spec) {
    return Image(central_crop(img.samples(), spec.side()), img.meta());
}

double population_std(const Plane& m) {
    if (m.size() == 0) {
        throw DimensionError("standard deviation of an empty array");
    }
    const double mean = m.mean();
    return std::sqrt((m - mean).square().mean());
}

Plane normalize_by_std(const Plane& m) {
    const double sd = population_std(m);
    if (!(sd >= 1e-12)) {
        throw DegenerateInputError("cannot normalize: standard deviation below 1e-12");
    }
    return m / sd;
}

Image recompress_jpeg(const Image& img, int quality) {
    check_quality(quality);
    const auto encoded = encode_jpeg(img.samples(), quality);
    DecodedJpeg decoded;
    bool truncated = false;
    const std::string msg = decode_jpeg_raw(encoded.data(), encoded.size(), decoded, truncated);
    if (!msg.empty() || truncated) {
        throw FormatError("JPEG round trip failed: " + msg);
    }
    return img.with_compression(decoded_to_plane(decoded), {"jpeg", quality});
}

Plane quantize_8bit(const Plane& samples) {
    return samples.round().max(0.0).min(255.0);
}

} // namespace prnu::imaging
