#include "doctest.h"

#include "prnu/errors.hpp"
#include "prnu/fingerprint.hpp"
#include "prnu/pce.hpp"
#include "prnu/residual.hpp"
#include "prnu/synth.hpp"
#include "test_util.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <set>

using namespace prnu;
using namespace prnu::synth;

namespace {

double sample_std(const Plane& p) {
    return std::sqrt((p - p.mean()).square().mean());
}

SynthConfig tiny_config() {
    SynthConfig cfg;
    cfg.n_devices = 3;
    cfg.flats_per_device = 25;
    cfg.naturals_per_device = 40;
    cfg.rows = 32;
    cfg.cols = 32;
    cfg.seed = 5;
    return cfg;
}

std::string slurp(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), {}};
}

} // namespace

TEST_SUITE("synth") {

TEST_CASE("device pattern statistics") {
    const auto a = gen_device(1, 256, 256, 0.02);
    const auto b = gen_device(1, 256, 256, 0.02);
    const auto c = gen_device(2, 256, 256, 0.02);
    CHECK((a.K_true == b.K_true).all());
    CHECK(std::abs(a.K_true.mean()) <= 1e-3 * 0.02);
    const double s = sample_std(a.K_true);
    CHECK(s >= 0.019);
    CHECK(s <= 0.021);
    CHECK(std::abs(pce::ncc(a.K_true, c.K_true)) <= 0.05);
    CHECK_THROWS_AS(gen_device(1, 8, 8, -0.1), ConfigError);
}

TEST_CASE("flat-field model") {
    const auto zero = gen_device(3, 32, 32, 0.0);
    Rng rng(1);
    const auto flat = gen_flat(zero, 128.0, 0.0, rng);
    CHECK((flat.samples() == 128.0).all());

    const auto dev = gen_device(4, 256, 256, 0.02);
    const auto img = gen_flat(dev, 128.0, 2.0, rng);
    const double expected = std::hypot(128.0 * 0.02, 2.0);
    CHECK(std::abs(sample_std(img.samples()) - expected) <= 0.1 * expected);
    const double clipped = ((img.samples() <= 0.0) || (img.samples() >= 255.0)).cast<double>().mean();
    CHECK(clipped < 0.01);
    CHECK(img.meta().device_id == dev.device_id);
}

TEST_CASE("natural images") {
    const auto dev = gen_device(5, 64, 64, 0.02, "camA");
    Rng rng(2);
    const auto a = gen_natural(dev, 2.0, rng);
    const auto b = gen_natural(dev, 2.0, rng);
    CHECK((a.samples() - b.samples()).abs().maxCoeff() > 10.0);
    CHECK(a.meta().device_id == std::optional<std::string>("camA"));
    CHECK(a.samples().minCoeff() >= 0.0);
    CHECK(a.samples().maxCoeff() <= 255.0);
}

TEST_CASE("natural residual sides with its own PRNU") {
    // Pooled over 100 images: each residual's correlation with its own K
    // exceeds the 99th percentile of its correlations with 20 other devices.
    std::vector<SynthDevice> others;
    for (int i = 0; i < 20; ++i) {
        others.push_back(gen_device(900 + i, 64, 64, 0.02));
    }
    std::vector<double> own;
    std::vector<double> wrong;
    Rng rng(3);
    for (int t = 0; t < 100; ++t) {
        const auto dev = gen_device(100 + t, 64, 64, 0.02);
        const Plane w = residual::extract_residual(gen_natural(dev, 2.0, rng)).values;
        own.push_back(pce::ncc(w, dev.K_true));
        for (const auto& o : others) {
            wrong.push_back(pce::ncc(w, o.K_true));
        }
    }
    std::sort(wrong.begin(), wrong.end());
    const double p99 = wrong[static_cast<std::size_t>(0.99 * static_cast<double>(wrong.size()))];
    std::sort(own.begin(), own.end());
    CHECK(own[own.size() / 2] > p99);
}

TEST_CASE("gaussian blur keeps constants and smooths noise") {
    const Plane c = Plane::Constant(20, 30, 4.0);
    CHECK((gaussian_blur(c, 3.0) - c).abs().maxCoeff() < 1e-12);
    Rng rng(4);
    std::normal_distribution<double> n(0.0, 1.0);
    Plane noise(64, 64);
    for (Eigen::Index i = 0; i < noise.size(); ++i) {
        noise.data()[i] = n(rng);
    }
    CHECK(sample_std(gaussian_blur(noise, 4.0)) < 0.2 * sample_std(noise));
}

TEST_CASE("config validation") {
    SynthConfig cfg = tiny_config();
    CHECK_NOTHROW(cfg.validate());
    cfg.train_ratio = 0.6;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg = tiny_config();
    cfg.jpeg_chain = {80, 0};
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    CHECK(tiny_config().describe().find("seed = 5") != std::string::npos);
}

TEST_CASE("dataset counts, splits and determinism") {
    testutil::TempDir dir;
    const SynthConfig cfg = tiny_config();
    const Dataset ds = build_dataset(cfg, dir.path());
    REQUIRE(ds.db.size() == 3);
    REQUIRE(ds.devices.size() == 3);
    for (const auto& d : ds.devices.devices) {
        CHECK(d.train.size() == 20);
        CHECK(d.val.size() == 10);
        CHECK(d.eval.size() == 10);
    }
    // Disjoint splits, every natural accounted for once.
    std::map<std::string, std::set<std::string>> seen;
    for (const auto& e : ds.manifest) {
        if (e.role == "natural") {
            CHECK(seen[e.device_id].insert(e.path).second);
            CHECK((e.split == "train" || e.split == "val" || e.split == "eval"));
        }
    }
    CHECK(seen["dev000"].size() == 40);

    CHECK(std::filesystem::exists(dir / "manifest.tsv"));
    CHECK(std::filesystem::exists(dir.path() / "dev002" / "natural" / "39.pgm"));
    CHECK(std::filesystem::exists(dir.path() / "dev001" / "flat" / "24.pgm"));

    SynthConfig threaded = cfg;
    threaded.threads = 3;
    testutil::TempDir dir2;
    const Dataset again = build_dataset(threaded, dir2.path());
    CHECK(slurp(dir / "manifest.tsv") == slurp(dir2 / "manifest.tsv"));
    CHECK(slurp(dir.path() / "dev001/natural/7.pgm") == slurp(dir2.path() / "dev001/natural/7.pgm"));
    for (std::size_t i = 0; i < 3; ++i) {
        CHECK(again.db[i] == ds.db[i]);
        CHECK((again.devices.devices[i].eval[3] == ds.devices.devices[i].eval[3]).all());
    }

    // Reloading from disk reproduces the in-memory dataset.
    const Dataset loaded = load_dataset(dir.path());
    for (std::size_t i = 0; i < 3; ++i) {
        CHECK(loaded.db[i] == ds.db[i]);
        CHECK((loaded.devices.devices[i].train[5] == ds.devices.devices[i].train[5]).all());
    }
}

TEST_CASE("JPEG chain is applied and recorded") {
    SynthConfig plain = tiny_config();
    plain.n_devices = 2;
    SynthConfig single = plain;
    single.jpeg_chain = {80};
    SynthConfig twice = plain;
    twice.jpeg_chain = {80, 90};
    const Dataset a = build_dataset(plain);
    const Dataset b = build_dataset(single);
    CHECK((a.devices.devices[0].train[0] - b.devices.devices[0].train[0]).matrix().norm() > 0.0);

    testutil::TempDir dir;
    build_dataset(twice, dir.path());
    int naturals = 0;
    for (const auto& e : read_manifest(dir / "manifest.tsv")) {
        CHECK(e.compression == std::vector<int>{80, 90});
        naturals += e.role == "natural" ? 1 : 0;
    }
    CHECK(naturals == 80);
}

TEST_CASE("fingerprints recover K over 10 seeds") {
    for (std::uint64_t s = 0; s < 10; ++s) {
        SynthConfig cfg = tiny_config();
        cfg.n_devices = 1;
        cfg.naturals_per_device = 4;
        cfg.rows = 64;
        cfg.cols = 64;
        cfg.seed = 100 + s;
        const Dataset ds = build_dataset(cfg);
        const auto dev = gen_device(derive_seed(derive_seed(cfg.seed, 0), 0), 64, 64, cfg.strength);
        CHECK(pce::ncc(ds.db[0].K.cast<double>(), dev.K_true) > 0.5);
    }
}

TEST_CASE("manifest errors") {
    testutil::TempDir dir;
    {
        std::ofstream out(dir / "bad.tsv");
        out << "nope\n";
    }
    CHECK_THROWS_AS(read_manifest(dir / "bad.tsv"), FormatError);
    CHECK_THROWS_AS(read_manifest(dir / "missing.tsv"), IoError);
    {
        std::ofstream out(dir / "short.tsv");
        out << "device_id\tpath\trole\tsplit\tcompression\nd\tp\tflat\n";
    }
    CHECK_THROWS_AS(read_manifest(dir / "short.tsv"), FormatError);
}

}
