#include "doctest.h"

#include "oracles.hpp"
#include "prnu/errors.hpp"
#include "prnu/pce.hpp"
#include "prnu/residual.hpp"
#include "prnu/synth.hpp"

using namespace prnu;
using namespace prnu::residual;

namespace {

double max_abs(const Plane& p) {
    return p.abs().maxCoeff();
}

} // namespace

TEST_SUITE("residual") {

TEST_CASE("constant image has vanishing detail bands") {
    const auto pyr = dwt2(Plane::Constant(64, 64, 117.0), 4);
    REQUIRE(pyr.details.size() == 4);
    for (const auto& level : pyr.details) {
        CHECK(max_abs(level.lh) < 1e-9);
        CHECK(max_abs(level.hl) < 1e-9);
        CHECK(max_abs(level.hh) < 1e-9);
    }
    CHECK(pyr.ll.rows() == 4);
}

TEST_CASE("perfect reconstruction over 200 random images") {
    Rng rng(11);
    std::uniform_int_distribution<int> size(16, 80);
    double worst = 0.0;
    for (int t = 0; t < 200; ++t) {
        const int rows = size(rng);
        const int cols = size(rng);
        const Plane img = oracle::random_plane(rows, cols, rng, 40.0);
        const Plane back = idwt2(dwt2(img, 4));
        REQUIRE(back.rows() == rows);
        REQUIRE(back.cols() == cols);
        worst = std::max(worst, max_abs(back - img));
    }
    CHECK(worst < 1e-6);
}

TEST_CASE("impulse reconstructs") {
    Plane img = Plane::Zero(64, 64);
    img(20, 33) = 1.0;
    CHECK(max_abs(idwt2(dwt2(img, 4)) - img) < 1e-6);
}

TEST_CASE("transform is orthogonal on dyadic sizes") {
    Rng rng(3);
    const Plane img = oracle::random_plane(32, 32, rng);
    const auto pyr = dwt2(img, 2);
    double energy = pyr.ll.square().sum();
    for (const auto& d : pyr.details) {
        energy += d.lh.square().sum() + d.hl.square().sum() + d.hh.square().sum();
    }
    CHECK(std::abs(energy - img.square().sum()) <= 1e-10 * img.square().sum());
}

TEST_CASE("wiener_shrink zero cases") {
    CHECK(max_abs(wiener_shrink(Plane::Zero(6, 6), 9.0)) == 0.0);
    Plane small = Plane::Constant(7, 7, 2.0); // localMean(c^2) = 4 <= 9
    CHECK(max_abs(wiener_shrink(small, 9.0)) == 0.0);
}

TEST_CASE("wiener_shrink matches the per-pixel oracle") {
    Rng rng(21);
    for (int t = 0; t < 10; ++t) {
        const Plane c = oracle::random_plane(t == 0 ? 5 : 5 + 3 * t, 5 + 2 * t, rng, 5.0);
        const Plane fast = wiener_shrink(c, 9.0, {3, 5, 7, 9});
        const Plane slow = oracle::wiener(c, 9.0, {3, 5, 7, 9});
        CHECK(max_abs(fast - slow) < 1e-12);
        CHECK(((fast.abs() - c.abs()) <= 0.0).all());
    }
}

TEST_CASE("denoiser configuration is validated") {
    DenoiserConfig cfg;
    cfg.levels = 0;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg = {};
    cfg.sigma0_sq = 0.0;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg = {};
    cfg.window_sizes = {3, 4};
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
}

TEST_CASE("constant image gives a zero residual") {
    const imaging::Image img(Plane::Constant(48, 40, 90.0));
    CHECK(max_abs(extract_residual(img).values) < 1e-6);
}

TEST_CASE("residual norm grows with noise below the shrinkage threshold") {
    // Above sigma0^2 the Wiener gain caps what reaches the residual, so only
    // sub-threshold noise levels are compared.
    const auto dev = synth::gen_device(4, 64, 64, 0.02);
    Rng a(1);
    Rng b(1);
    const auto clean = synth::gen_natural(dev, 0.0, a);
    const auto quiet = synth::gen_natural(dev, 2.0, b);
    const double n_clean = extract_residual(clean).values.matrix().norm();
    const double n_quiet = extract_residual(quiet).values.matrix().norm();
    CHECK(n_clean > 0.0);
    CHECK(n_quiet > n_clean);
}

TEST_CASE("residual correlates with its own PRNU") {
    // I = I0 (1 + K); averaged over 50 trials the residual sides with K.
    Rng rng(99);
    double own = 0.0;
    double other = 0.0;
    for (int t = 0; t < 50; ++t) {
        const auto dev = synth::gen_device(1000 + t, 64, 64, 0.02);
        const auto wrong = synth::gen_device(5000 + t, 64, 64, 0.02);
        const auto img = synth::gen_flat(dev, 128.0, 2.0, rng);
        const Plane w = extract_residual(img).values;
        own += pce::ncc(w, dev.K_true);
        other += pce::ncc(w, wrong.K_true);
    }
    CHECK(own / 50 > other / 50);
}

TEST_CASE("zero_mean") {
    Rng rng(8);
    const Plane r = oracle::random_plane(32, 32, rng);
    const Plane z = zero_mean(r);
    CHECK(z.rowwise().mean().abs().maxCoeff() <= 1e-9);
    CHECK(z.colwise().mean().abs().maxCoeff() <= 1e-9);
    CHECK(max_abs(zero_mean(z) - z) < 1e-12);

    Plane rank1(6, 9);
    for (int i = 0; i < 6; ++i) {
        for (int j = 0; j < 9; ++j) {
            rank1(i, j) = 0.5 * i - 3.0 + std::sin(j);
        }
    }
    CHECK(max_abs(zero_mean(rank1)) < 1e-12);

    NoiseResidual res{r, {}, false};
    const auto zr = zero_mean(res);
    CHECK(zr.zero_meaned);
    CHECK(max_abs(zr.values - z) == 0.0);
}

}
