#include "doctest.h"

#include "oracles.hpp"
#include "prnu/errors.hpp"
#include "prnu/imaging.hpp"
#include "test_util.hpp"

#include <png.h>

#include <fstream>

using namespace prnu;
using namespace prnu::imaging;

namespace {

void write_bytes(const std::filesystem::path& p, const std::string& bytes) {
    std::ofstream out(p, std::ios::binary);
    out << bytes;
}

std::string read_bytes(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), {}};
}

Plane gradient(int rows, int cols) {
    Plane p(rows, cols);
    for (int y = 0; y < rows; ++y) {
        for (int x = 0; x < cols; ++x) {
            p(y, x) = 40.0 + 150.0 * (x + y) / (rows + cols);
        }
    }
    return p;
}

} // namespace

TEST_SUITE("imaging") {

TEST_CASE("PGM decode of a 2x2 raster") {
    testutil::TempDir dir;
    std::string bytes = "P5\n2 2\n255\n";
    bytes += std::string{'\x00', '\xff', '\x80', '\x40'};
    write_bytes(dir / "a.pgm", bytes);
    const Image img = load_image(dir / "a.pgm");
    REQUIRE(img.width() == 2);
    REQUIRE(img.height() == 2);
    CHECK(img.samples()(0, 0) == 0);
    CHECK(img.samples()(0, 1) == 255);
    CHECK(img.samples()(1, 0) == 128);
    CHECK(img.samples()(1, 1) == 64);
    CHECK(img.meta().compression_history.empty());
}

TEST_CASE("PGM with comments and 16-bit maxval") {
    testutil::TempDir dir;
    std::string bytes = "P5 # comment\n1 1\n65535\n";
    bytes += std::string{'\xff', '\xff'};
    write_bytes(dir / "b.pgm", bytes);
    CHECK(load_image(dir / "b.pgm").samples()(0, 0) == doctest::Approx(255.0));
}

TEST_CASE("truncated files raise IoError") {
    testutil::TempDir dir;
    write_bytes(dir / "t.pgm", std::string("P5\n4 4\n255\n") + std::string(5, '\x10'));
    CHECK_THROWS_AS(load_image(dir / "t.pgm"), IoError);

    const Image img(gradient(32, 32));
    save_jpeg(img, dir / "full.jpg", 90);
    const std::string full = read_bytes(dir / "full.jpg");
    write_bytes(dir / "cut.jpg", full.substr(0, full.size() / 2));
    CHECK_THROWS_AS(load_image(dir / "cut.jpg"), IoError);
    CHECK_THROWS_AS(load_image(dir / "missing.pgm"), IoError);
}

TEST_CASE("unknown magic is a FormatError") {
    testutil::TempDir dir;
    write_bytes(dir / "x.bin", "GIF89a........");
    CHECK_THROWS_AS(load_image(dir / "x.bin"), FormatError);
}

TEST_CASE("color PNG reduces to BT.601 luminance") {
    testutil::TempDir dir;
    const unsigned char rgb[] = {255, 0, 0, 0, 255, 0, 0, 0, 255, 10, 20, 30};
    png_image image{};
    image.version = PNG_IMAGE_VERSION;
    image.width = 2;
    image.height = 2;
    image.format = PNG_FORMAT_RGB;
    REQUIRE(png_image_write_to_file(&image, (dir / "c.png").c_str(), 0, rgb, 0, nullptr) != 0);
    const Image img = load_image(dir / "c.png");
    CHECK(img.samples()(0, 0) == doctest::Approx(0.299 * 255));
    CHECK(img.samples()(0, 1) == doctest::Approx(0.587 * 255));
    CHECK(img.samples()(1, 0) == doctest::Approx(0.114 * 255));
    CHECK(img.samples()(1, 1) == doctest::Approx(0.299 * 10 + 0.587 * 20 + 0.114 * 30));
}

TEST_CASE("JPEG files record their codec and estimated quality") {
    testutil::TempDir dir;
    save_jpeg(Image(gradient(16, 24)), dir / "q.jpg", 80);
    const Image img = load_image(dir / "q.jpg");
    CHECK(img.width() == 24);
    REQUIRE(img.meta().compression_history.size() == 1);
    CHECK(img.meta().compression_history[0].codec == "jpeg");
    CHECK(img.meta().compression_history[0].quality == 80);
}

TEST_CASE("PGM save/load round trip") {
    testutil::TempDir dir;
    Plane p(3, 5);
    for (int i = 0; i < 15; ++i) {
        p.data()[i] = i * 17 % 256;
    }
    save_pgm(Image(p), dir / "r.pgm");
    CHECK((load_image(dir / "r.pgm").samples() == p).all());
}

TEST_CASE("CropSpec validity") {
    CHECK_THROWS_AS(CropSpec(7), ConfigError);
    CHECK_THROWS_AS(CropSpec(6), ConfigError);
    CHECK(CropSpec(8).side() == 8);
}

TEST_CASE("central crop offsets and errors") {
    Plane p(720, 720);
    for (int y = 0; y < 720; ++y) {
        for (int x = 0; x < 720; ++x) {
            p(y, x) = (y * 720 + x) % 251;
        }
    }
    const Image img(p, {std::string("dev"), {}});
    const Image c = central_crop(img, CropSpec(80));
    CHECK(c.width() == 80);
    CHECK(c.samples()(0, 0) == p(320, 320));
    CHECK(c.samples()(79, 79) == p(399, 399));
    CHECK(c.meta() == img.meta());

    CHECK((central_crop(img, CropSpec(720)).samples() == p).all());
    CHECK((central_crop(central_crop(p, 80), 80) == central_crop(p, 80)).all());

    const Image small(Plane::Constant(100, 100, 1.0));
    CHECK_THROWS_AS(central_crop(small, CropSpec(720)), DimensionError);

    // Odd margins round down.
    Plane q(11, 13);
    for (int i = 0; i < q.size(); ++i) {
        q.data()[i] = i;
    }
    CHECK(central_crop(q, 8)(0, 0) == q(1, 2));
}

TEST_CASE("normalize_by_std") {
    Plane a(1, 2);
    a << 1, -1;
    CHECK((normalize_by_std(a) == a).all());
    Plane b(1, 2);
    b << 2, -2;
    CHECK((normalize_by_std(b) == a).all());
    CHECK_THROWS_AS(normalize_by_std(Plane::Zero(4, 4)), DegenerateInputError);

    Rng rng(5);
    const Plane m = oracle::random_plane(17, 9, rng, 3.0) + 2.0;
    CHECK(population_std(normalize_by_std(m)) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK((normalize_by_std(7.5 * m) - normalize_by_std(m)).abs().maxCoeff() < 1e-12);
}

TEST_CASE("recompress_jpeg") {
    const Image smooth(gradient(64, 64));
    const Image q100 = recompress_jpeg(smooth, 100);
    CHECK((q100.samples() - smooth.samples()).abs().maxCoeff() <= 4.0);
    CHECK(q100.width() == 64);
    CHECK(q100.height() == 64);

    const Image twice = recompress_jpeg(recompress_jpeg(smooth, 80), 90);
    REQUIRE(twice.meta().compression_history.size() == 2);
    CHECK(twice.meta().compression_history[0].quality == 80);
    CHECK(twice.meta().compression_history[1].quality == 90);

    CHECK_THROWS_AS(recompress_jpeg(smooth, 0), ConfigError);
    CHECK_THROWS_AS(recompress_jpeg(smooth, 101), ConfigError);

    const Image odd(gradient(13, 27));
    const Image r = recompress_jpeg(odd, 50);
    CHECK(r.width() == 27);
    CHECK(r.height() == 13);
}

TEST_CASE("Image rejects empty or non-finite data") {
    CHECK_THROWS_AS(Image(Plane(0, 0)), DimensionError);
    Plane p = Plane::Zero(2, 2);
    p(1, 1) = NAN;
    CHECK_THROWS_AS(Image{p}, FormatError);
}

TEST_CASE("quantize_8bit clamps and rounds") {
    Plane p(1, 4);
    p << -3.0, 12.4, 12.6, 300.0;
    const Plane q = quantize_8bit(p);
    CHECK(q(0, 0) == 0);
    CHECK(q(0, 1) == 12);
    CHECK(q(0, 2) == 13);
    CHECK(q(0, 3) == 255);
}

}
