#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "flowrecon/tape.hpp"
#include "flowrecon/tensor.hpp"

namespace flowrecon {

enum class OperatorKind { GaussianMatrix, Radon, FourierMask };

// Linear measurement model y = A x with adjoint and a fixed approximate
// inverse. Immutable after construction; applications are pure.
class MeasurementModel {
public:
    virtual ~MeasurementModel() = default;
    virtual OperatorKind kind() const = 0;
    virtual Shape x_shape() const = 0;
    virtual Shape y_shape() const = 0;
    virtual Tensor forward(const Tensor& x) const = 0;
    virtual Tensor adjoint(const Tensor& y) const = 0;
    // Model-based inversion used at the front of conditioning networks
    // (pseudo-inverse / TV solve / FBP / zero-filled IFFT).
    virtual Tensor approx_inverse(const Tensor& y) const = 0;
    virtual std::string describe() const = 0;

    // Tape node for A x whose backward applies the adjoint.
    Ref forward_ref(Tape& tape, Ref x) const;

protected:
    void check_x(const Tensor& x) const;
    void check_y(const Tensor& y) const;
};

// ---- Gaussian compressed sensing ------------------------------------------

class GaussianMatrixModel final : public MeasurementModel {
public:
    // m x n matrix with entries ~ N(0, 1/m). `image_shape` (optional)
    // gives x an image layout for TV inversion; numel must equal n.
    GaussianMatrixModel(int64_t m, int64_t n, uint64_t seed, Shape image_shape = {});

    OperatorKind kind() const override { return OperatorKind::GaussianMatrix; }
    Shape x_shape() const override { return x_shape_; }
    Shape y_shape() const override { return Shape{m_}; }
    Tensor forward(const Tensor& x) const override;
    Tensor adjoint(const Tensor& y) const override;
    Tensor approx_inverse(const Tensor& y) const override;
    std::string describe() const override;

    // Minimum-norm least squares via conjugate gradients on the normal
    // equations (tolerance 1e-8, at most 500 iterations).
    Tensor pseudo_inverse(const Tensor& y) const;

    // Solve (A'A + lambda G'G) x = A'y where G is the 2D forward
    // difference with replicate boundary; requires an image layout.
    Tensor tv_inverse(const Tensor& y, double lambda) const;

    // Select which inversion approx_inverse performs.
    void use_tv_inversion(double lambda);
    void use_pseudo_inversion();

    int64_t m() const { return m_; }
    int64_t n() const { return n_; }
    const std::vector<double>& matrix() const { return a_; }

private:
    int64_t m_, n_;
    uint64_t seed_;
    Shape x_shape_;
    std::vector<double> a_;  // row-major m x n
    bool tv_ = false;
    double tv_lambda_ = 0.02;
};

// ---- parallel-beam Radon ---------------------------------------------------

class RadonModel final : public MeasurementModel {
public:
    // Square image_size x image_size image; angles uniform over [0, pi);
    // detector extent = image diagonal; rays sampled at half-pixel steps
    // with bilinear interpolation.
    RadonModel(int64_t n_angles, int64_t n_detectors, int64_t image_size);

    OperatorKind kind() const override { return OperatorKind::Radon; }
    Shape x_shape() const override { return Shape{1, size_, size_}; }
    Shape y_shape() const override { return Shape{n_angles_, n_det_}; }
    Tensor forward(const Tensor& x) const override;
    Tensor adjoint(const Tensor& y) const override;
    Tensor approx_inverse(const Tensor& y) const override { return fbp(y); }
    std::string describe() const override;

    // Filtered back-projection with the ramp (Ram-Lak) filter applied in
    // the frequency domain of zero-padded detector rows.
    Tensor fbp(const Tensor& sinogram) const;

    // Plain (unfiltered) back-projection, the adjoint up to scaling.
    Tensor backproject(const Tensor& sinogram) const;

    int64_t n_angles() const { return n_angles_; }
    int64_t n_detectors() const { return n_det_; }
    int64_t image_size() const { return size_; }
    double detector_spacing() const { return ds_; }

private:
    template <bool Adjoint>
    void trace(Tensor& x_like, Tensor& y_like) const;

    int64_t n_angles_, n_det_, size_;
    double ds_;  // detector bin spacing in pixel units
};

// ---- masked Fourier --------------------------------------------------------

// Column-selection mask over k-space width.
struct SamplingMask {
    int64_t width = 0;
    double center_fraction = 0.08;
    int64_t acceleration = 4;
    uint64_t seed = 0;
    std::vector<uint8_t> selected;  // size `width`, 0/1

    int64_t selected_count() const;
    std::string to_line() const;  // "0110..." for inspection
};

SamplingMask make_mask(int64_t width, double center_fraction = 0.08, int64_t acceleration = 4,
                       uint64_t seed = 0);

class FourierMaskModel final : public MeasurementModel {
public:
    // x is a real image (1,h,w); y is unitary 2D k-space (2,h,w) with
    // unselected columns zeroed (real/imaginary channels).
    FourierMaskModel(SamplingMask mask, int64_t h, int64_t w);

    OperatorKind kind() const override { return OperatorKind::FourierMask; }
    Shape x_shape() const override { return Shape{1, h_, w_}; }
    Shape y_shape() const override { return Shape{2, h_, w_}; }
    Tensor forward(const Tensor& x) const override;
    Tensor adjoint(const Tensor& y) const override;
    // Zero-filled inverse FFT, magnitude image.
    Tensor approx_inverse(const Tensor& y) const override;
    std::string describe() const override;

    const SamplingMask& mask() const { return mask_; }

private:
    SamplingMask mask_;
    int64_t h_, w_;
};

// ---- noise models ----------------------------------------------------------

// y + e, e iid N(0, s^2) with s = level * ||y||_2 / sqrt(numel).
Tensor add_relative_gaussian_noise(const Tensor& y, double level, uint64_t seed);

// Per bin p: draw k ~ Poisson(N0 * exp(-p)), return -ln(max(k,1)/N0).
Tensor poisson_lowdose_noise(const Tensor& sinogram, double photon_count, uint64_t seed);

// ---- shared solver ---------------------------------------------------------

// Conjugate gradients for s.p.d. `apply`; returns the iterate once
// ||r|| <= tol * ||b|| or throws after max_iter with the residual.
Tensor cg_solve(const std::function<Tensor(const Tensor&)>& apply, const Tensor& b, double tol,
                int64_t max_iter, const std::string& what);

}  // namespace flowrecon
