#include <doctest.h>

#include <Eigen/Dense>
#include <cmath>
#include <complex>

#include "flowrecon/fft.hpp"
#include "flowrecon/metrics.hpp"
#include "flowrecon/operators.hpp"
#include "flowrecon/phantoms.hpp"
#include "test_support.hpp"

using namespace flowrecon;

TEST_SUITE_BEGIN("operators");

namespace {

// <A x, y> == <x, A' y> for random probes.
void check_adjoint(const MeasurementModel& op, uint64_t seed) {
    Tensor x = ts::rand_tensor(op.x_shape(), seed);
    Tensor y = ts::rand_tensor(op.y_shape(), seed + 1);
    double lhs = op.forward(x).dot(y);
    double rhs = x.dot(op.adjoint(y).reshaped(op.x_shape()));
    CHECK(ts::rel_err(lhs, rhs) < 1e-10);
}

}  // namespace

TEST_CASE("fft matches the direct DFT and round-trips") {
    const int64_t n = 16;
    std::vector<std::complex<double>> data(n);
    Rng rng(1);
    for (auto& v : data) v = {rng.normal(), rng.normal()};
    auto ref = data;

    fft_1d(data, false);
    for (int64_t k = 0; k < n; ++k) {
        std::complex<double> s = 0.0;
        for (int64_t j = 0; j < n; ++j)
            s += ref[j] * std::polar(1.0, -2.0 * M_PI * k * j / n);
        CHECK(std::abs(data[k] - s) < 1e-10);
    }
    fft_1d(data, true);
    for (int64_t j = 0; j < n; ++j)
        CHECK(std::abs(data[j] - static_cast<double>(n) * ref[j]) < 1e-9);

    std::vector<std::complex<double>> img(8 * 4);
    for (auto& v : img) v = {rng.normal(), rng.normal()};
    auto img_ref = img;
    fft_2d(img, 8, 4, false);
    fft_2d(img, 8, 4, true);
    for (size_t i = 0; i < img.size(); ++i)
        CHECK(std::abs(img[i] - 32.0 * img_ref[i]) < 1e-9);

    CHECK(next_pow2(1) == 1);
    CHECK(next_pow2(47) == 64);
    CHECK(next_pow2(64) == 64);
}

TEST_CASE("gaussian matrix: statistics, shapes, adjoint") {
    GaussianMatrixModel op(64, 256, 7, Shape{1, 16, 16});
    CHECK(op.x_shape() == Shape{1, 16, 16});
    CHECK(op.y_shape() == Shape{64});
    double s2 = 0.0;
    for (double v : op.matrix()) s2 += v * v;
    CHECK(s2 / (64.0 * 256.0) == doctest::Approx(1.0 / 64.0).epsilon(0.05));
    check_adjoint(op, 10);

    // Same seed gives the same matrix, a different seed does not.
    GaussianMatrixModel op2(64, 256, 7, Shape{1, 16, 16});
    CHECK(op.matrix() == op2.matrix());
    GaussianMatrixModel op3(64, 256, 8, Shape{1, 16, 16});
    CHECK(op.matrix() != op3.matrix());
}

TEST_CASE("forward_ref backpropagates the adjoint") {
    GaussianMatrixModel op(6, 10, 3);
    Tensor x = ts::rand_tensor({10}, 20);
    Tensor w = ts::rand_tensor({6}, 21);
    Tape t;
    Ref rx = t.leaf(x, true);
    Ref y = op.forward_ref(t, rx);
    t.backward(y, w);
    Tensor expect = op.adjoint(w);
    CHECK(max_abs_diff(rx->grad, expect.reshaped(rx->grad.shape())) < 1e-12);
}

TEST_CASE("pseudo-inverse matches the SVD oracle") {
    const int64_t m = 8, n = 16;
    GaussianMatrixModel op(m, n, 5);
    Tensor y = ts::rand_tensor({m}, 22);
    Tensor x = op.pseudo_inverse(y);

    Eigen::MatrixXd A(m, n);
    for (int64_t i = 0; i < m; ++i)
        for (int64_t j = 0; j < n; ++j) A(i, j) = op.matrix()[i * n + j];
    Eigen::VectorXd b(m);
    for (int64_t i = 0; i < m; ++i) b(i) = y[i];
    Eigen::VectorXd ref =
        A.jacobiSvd(Eigen::ComputeThinU | Eigen::ComputeThinV).solve(b);
    for (int64_t j = 0; j < n; ++j) CHECK(std::abs(x[j] - ref(j)) < 1e-6);
    // Consistency: A x reproduces y for the underdetermined system.
    CHECK(max_abs_diff(op.forward(x), y) < 1e-6);
}

TEST_CASE("tv inverse solves the regularized normal equations") {
    const int64_t m = 20, h = 4, w = 4, n = h * w;
    const double lambda = 0.05;
    GaussianMatrixModel op(m, n, 9, Shape{1, h, w});
    Tensor y = ts::rand_tensor({m}, 23);
    Tensor x = op.tv_inverse(y, lambda);

    Eigen::MatrixXd A(m, n);
    for (int64_t i = 0; i < m; ++i)
        for (int64_t j = 0; j < n; ++j) A(i, j) = op.matrix()[i * n + j];
    // Forward differences with replicate boundary (boundary rows vanish).
    std::vector<Eigen::RowVectorXd> rows;
    for (int64_t i = 0; i < h; ++i)
        for (int64_t j = 0; j < w; ++j) {
            if (j + 1 < w) {
                Eigen::RowVectorXd r = Eigen::RowVectorXd::Zero(n);
                r(i * w + j) = -1;
                r(i * w + j + 1) = 1;
                rows.push_back(r);
            }
            if (i + 1 < h) {
                Eigen::RowVectorXd r = Eigen::RowVectorXd::Zero(n);
                r(i * w + j) = -1;
                r((i + 1) * w + j) = 1;
                rows.push_back(r);
            }
        }
    Eigen::MatrixXd G(rows.size(), n);
    for (size_t r = 0; r < rows.size(); ++r) G.row(r) = rows[r];
    Eigen::MatrixXd M = A.transpose() * A + lambda * G.transpose() * G;
    Eigen::VectorXd b(m);
    for (int64_t i = 0; i < m; ++i) b(i) = y[i];
    Eigen::VectorXd ref = M.ldlt().solve(A.transpose() * b);
    for (int64_t j = 0; j < n; ++j) CHECK(std::abs(x[j] - ref(j)) < 1e-5);
}

TEST_CASE("tv inversion favors piecewise-constant images") {
    const int64_t h = 8, w = 8, n = h * w, m = 24;
    GaussianMatrixModel op(m, n, 11, Shape{1, h, w});
    // Piecewise-constant block image.
    Tensor x(Shape{1, h, w}, Dtype::Float64);
    for (int64_t i = 2; i < 6; ++i)
        for (int64_t j = 2; j < 6; ++j) x.at3(0, i, j) = 1.0;
    Tensor y = op.forward(x);
    Tensor x_pinv = op.pseudo_inverse(y).reshaped({1, h, w});
    Tensor x_tv = op.tv_inverse(y, 0.02).reshaped({1, h, w});
    CHECK(mse(x_tv, x) < mse(x_pinv, x));
}

TEST_CASE("approx_inverse switches between inversion modes") {
    GaussianMatrixModel op(12, 16, 13, Shape{1, 4, 4});
    Tensor y = ts::rand_tensor({12}, 24);
    Tensor a = op.approx_inverse(y);
    CHECK(max_abs_diff(a, op.pseudo_inverse(y)) == 0.0);
    op.use_tv_inversion(0.02);
    Tensor b = op.approx_inverse(y);
    CHECK(max_abs_diff(b, op.tv_inverse(y, 0.02)) == 0.0);
    CHECK(max_abs_diff(a, b) > 1e-8);
    op.use_pseudo_inversion();
    CHECK(max_abs_diff(op.approx_inverse(y), a) == 0.0);
}

TEST_CASE("radon: geometry, adjoint, disk chords") {
    RadonModel op(30, 47, 32);
    CHECK(op.x_shape() == Shape{1, 32, 32});
    CHECK(op.y_shape() == Shape{30, 47});
    CHECK(op.detector_spacing() == doctest::Approx(std::sqrt(2.0) * 32.0 / 47.0));
    check_adjoint(op, 30);

    // Centered disk: every projection is the chord profile 2 sqrt(R^2-s^2).
    const double R = 10.0;
    Tensor disk(Shape{1, 32, 32}, Dtype::Float64);
    const double c = (32.0 - 1.0) / 2.0;
    for (int64_t i = 0; i < 32; ++i)
        for (int64_t j = 0; j < 32; ++j)
            if ((i - c) * (i - c) + (j - c) * (j - c) <= R * R) disk.at3(0, i, j) = 1.0;
    Tensor sino = op.forward(disk);
    double worst = 0.0;
    for (int64_t a = 0; a < 30; ++a)
        for (int64_t d = 0; d < 47; ++d) {
            double s = (d - (47.0 - 1.0) / 2.0) * op.detector_spacing();
            double expect = s * s <= R * R ? 2.0 * std::sqrt(R * R - s * s) : 0.0;
            worst = std::max(worst, std::abs(sino[a * 47 + d] - expect));
        }
    CHECK(worst < 2.0);  // within two pixel-lengths of the analytic chord
}

TEST_CASE("fbp reconstructs a smooth phantom") {
    const int64_t size = 48;
    Rng rng(77);
    Tensor x = make_phantom(PhantomKind::Ellipses, size, rng);
    RadonModel op(60, 69, size);
    Tensor rec = op.fbp(op.forward(x));
    CHECK(rec.shape() == x.shape());
    CHECK(psnr(rec, x) > 18.0);
    // Filtering matters: plain backprojection is far blurrier.
    Tensor bp = op.backproject(op.forward(x));
    CHECK(psnr(rec, x) > psnr(bp, x));
}

TEST_CASE("sampling mask selects the low-frequency center deterministically") {
    SamplingMask mask = make_mask(32, 0.08, 4, 5);
    CHECK(mask.width == 32);
    CHECK(static_cast<int64_t>(mask.selected.size()) == 32);
    CHECK(mask.selected_count() == 8);  // width / acceleration
    CHECK(mask.selected[0] == 1);       // DC column always kept
    CHECK(mask.to_line().size() == 32);

    SamplingMask again = make_mask(32, 0.08, 4, 5);
    CHECK(mask.selected == again.selected);
    SamplingMask other = make_mask(32, 0.08, 4, 6);
    CHECK(mask.selected != other.selected);
}

TEST_CASE("fourier mask: unitarity, adjoint, zero-filled inverse") {
    const int64_t h = 16, w = 16;
    SamplingMask full;
    full.width = w;
    full.seed = 0;
    full.selected.assign(w, 1);
    FourierMaskModel op(full, h, w);
    CHECK(op.x_shape() == Shape{1, h, w});
    CHECK(op.y_shape() == Shape{2, h, w});
    check_adjoint(op, 40);

    Tensor x = ts::rand_tensor({1, h, w}, 41, 0.0, 1.0);
    Tensor y = op.forward(x);
    CHECK(y.norm2() == doctest::Approx(x.norm2()).epsilon(1e-10));  // unitary
    // Full mask: zero-filled inverse recovers the (nonnegative) image.
    CHECK(max_abs_diff(op.approx_inverse(y), x) < 1e-10);

    SamplingMask sub = make_mask(w, 0.08, 4, 3);
    FourierMaskModel ops(sub, h, w);
    check_adjoint(ops, 42);
    Tensor ys = ops.forward(x);
    // Unselected columns are zeroed, so energy drops.
    CHECK(ys.norm2() < y.norm2());
    Tensor zf = ops.approx_inverse(ys);
    CHECK(zf.shape() == x.shape());
    CHECK(zf.all_finite());
}

TEST_CASE("relative gaussian noise has the requested level") {
    Tensor y = ts::rand_tensor({5000}, 50, 0.5, 1.5);
    Tensor yn = add_relative_gaussian_noise(y, 0.1, 6);
    Tensor e = yn;
    e.add_scaled(y, -1.0);
    CHECK(e.norm2() / y.norm2() == doctest::Approx(0.1).epsilon(0.05));
    // Deterministic in the seed.
    CHECK(max_abs_diff(yn, add_relative_gaussian_noise(y, 0.1, 6)) == 0.0);
    CHECK(max_abs_diff(yn, add_relative_gaussian_noise(y, 0.1, 7)) > 0.0);
}

TEST_CASE("poisson low-dose noise approaches the clean sinogram at high dose") {
    Tensor p = ts::rand_tensor({400}, 51, 0.1, 2.0);
    Tensor lo = poisson_lowdose_noise(p, 1e8, 3);
    CHECK(max_abs_diff(lo, p) < 0.01);
    Tensor noisy = poisson_lowdose_noise(p, 100.0, 3);
    double dev = 0.0;
    for (int64_t i = 0; i < p.numel(); ++i) dev += std::abs(noisy[i] - p[i]) / p.numel();
    CHECK(dev > 0.01);  // visibly noisy at low dose
    CHECK(noisy.all_finite());
    CHECK(max_abs_diff(noisy, poisson_lowdose_noise(p, 100.0, 3)) == 0.0);
}

TEST_CASE("cg_solve matches a dense solver and reports failure") {
    const int64_t n = 12;
    Eigen::MatrixXd B = Eigen::MatrixXd::Random(n, n);
    Eigen::MatrixXd M = B.transpose() * B + Eigen::MatrixXd::Identity(n, n);
    Eigen::VectorXd b = Eigen::VectorXd::Random(n);
    auto apply = [&](const Tensor& v) {
        Tensor out(Shape{n}, Dtype::Float64);
        for (int64_t i = 0; i < n; ++i) {
            double s = 0.0;
            for (int64_t j = 0; j < n; ++j) s += M(i, j) * v[j];
            out[i] = s;
        }
        return out;
    };
    Tensor rhs(Shape{n}, Dtype::Float64);
    for (int64_t i = 0; i < n; ++i) rhs[i] = b(i);
    Tensor x = cg_solve(apply, rhs, 1e-12, 500, "test system");
    Eigen::VectorXd ref = M.ldlt().solve(b);
    for (int64_t i = 0; i < n; ++i) CHECK(std::abs(x[i] - ref(i)) < 1e-8);

    CHECK_THROWS_AS(cg_solve(apply, rhs, 1e-14, 1, "tight budget"), NumericalError);
}

TEST_CASE("operators validate input shapes") {
    GaussianMatrixModel op(6, 10, 3);
    CHECK_THROWS_AS(op.forward(Tensor(Shape{9}, Dtype::Float64)), ShapeError);
    CHECK_THROWS_AS(op.adjoint(Tensor(Shape{5}, Dtype::Float64)), ShapeError);
    RadonModel rop(10, 15, 16);
    CHECK_THROWS_AS(rop.forward(Tensor(Shape{1, 8, 8}, Dtype::Float64)), ShapeError);
}

TEST_SUITE_END();
