#include <doctest.h>

#include <cmath>

#include "flowrecon/phantoms.hpp"
#include "test_support.hpp"

using namespace flowrecon;

TEST_SUITE_BEGIN("phantoms");

TEST_CASE("phantom images stay in range and vary") {
    for (PhantomKind kind :
         {PhantomKind::Ellipses, PhantomKind::Shapes, PhantomKind::DigitsLike}) {
        auto imgs = make_phantoms(kind, 16, 4, 7);
        REQUIRE(imgs.size() == 4);
        for (const Tensor& im : imgs) {
            CHECK(im.shape() == Shape{1, 16, 16});
            CHECK(im.min() >= 0.0);
            CHECK(im.max() <= 1.0);
            CHECK(im.max() > 0.0);  // not blank
        }
        CHECK(max_abs_diff(imgs[0], imgs[1]) > 1e-6);
    }
}

TEST_CASE("phantoms are deterministic per seed") {
    auto a = make_phantoms(PhantomKind::Shapes, 16, 3, 5);
    auto b = make_phantoms(PhantomKind::Shapes, 16, 3, 5);
    auto c = make_phantoms(PhantomKind::Shapes, 16, 3, 6);
    for (size_t i = 0; i < a.size(); ++i) CHECK(max_abs_diff(a[i], b[i]) == 0.0);
    CHECK(max_abs_diff(a[0], c[0]) > 0.0);
}

TEST_CASE("phantom kind names round-trip") {
    for (PhantomKind k :
         {PhantomKind::Ellipses, PhantomKind::Shapes, PhantomKind::DigitsLike})
        CHECK(phantom_from_name(phantom_name(k)) == k);
    CHECK_THROWS_AS(phantom_from_name("mandelbrot"), ConfigError);
}

TEST_CASE("mixture density integrates to one") {
    GaussianMixture2D mix = mixture3();
    const int64_t n = 400;
    const double lo = -8.0, hi = 8.0;
    double dx = (hi - lo) / n;
    double total = 0.0;
    for (int64_t i = 0; i < n; ++i)
        for (int64_t j = 0; j < n; ++j) {
            double x = lo + (i + 0.5) * dx;
            double y = lo + (j + 0.5) * dx;
            total += std::exp(mix.log_density(x, y)) * dx * dx;
        }
    CHECK(total == doctest::Approx(1.0).epsilon(0.01));
}

TEST_CASE("mixture samples match component moments") {
    GaussianMixture2D mix = mixture3();
    double wsum = 0.0, ex = 0.0, ey = 0.0;
    for (const auto& c : mix.components) {
        wsum += c.weight;
        ex += c.weight * c.mx;
        ey += c.weight * c.my;
    }
    CHECK(wsum == doctest::Approx(1.0));

    Rng rng(11);
    const int n = 200000;
    double sx = 0.0, sy = 0.0;
    for (int i = 0; i < n; ++i) {
        double x, y;
        mix.sample(rng, x, y);
        sx += x / n;
        sy += y / n;
    }
    CHECK(sx == doctest::Approx(ex).epsilon(0.05));
    CHECK(std::abs(sy - ey) < 0.05);
}

TEST_CASE("tensor-valued sampling matches the scalar overload stream-wise") {
    GaussianMixture2D mix = mixture3();
    Rng a(3), b(3);
    double x, y;
    mix.sample(a, x, y);
    Tensor t = mix.sample(b);
    CHECK(t.shape() == Shape{2});
    CHECK(t[0] == x);
    CHECK(t[1] == y);
}

TEST_CASE("entropy quadrature agrees with the monte-carlo estimate") {
    GaussianMixture2D mix = mixture3();
    double hq = mix.entropy_quadrature(-9.0, 9.0, 300);
    Rng rng(13);
    double hmc = 0.0;
    const int n = 200000;
    for (int i = 0; i < n; ++i) {
        double x, y;
        mix.sample(rng, x, y);
        hmc -= mix.log_density(x, y) / n;
    }
    CHECK(hq == doctest::Approx(hmc).epsilon(0.02));
    // A single unit Gaussian has entropy 1 + ln(2 pi) / ... known value.
    GaussianMixture2D unit;
    unit.components.push_back({1.0, 0.0, 0.0, 1.0, 1.0, 0.0});
    double expect = 1.0 + std::log(2.0 * M_PI);
    CHECK(unit.entropy_quadrature(-9.0, 9.0, 300) == doctest::Approx(expect).epsilon(1e-3));
}

TEST_SUITE_END();
