#pragma once

#include "flowrecon/tensor.hpp"

namespace flowrecon {

// How the dynamic range L is chosen for PSNR/SSIM.
enum class RangeMode {
    MinMax,  // max - min of the reference image
    Fixed,   // externally supplied (per-volume / per-patient convention)
};

// 10 log10(L^2 / MSE); returns +infinity for identical images.
double psnr(const Tensor& recon, const Tensor& reference, RangeMode mode = RangeMode::MinMax,
            double fixed_range = 1.0);

// Mean structural similarity over an 11x11 Gaussian window (sigma 1.5),
// K1 = 0.01, K2 = 0.03, windows fully inside the image.
double ssim(const Tensor& recon, const Tensor& reference, RangeMode mode = RangeMode::MinMax,
            double fixed_range = 1.0);

double mse(const Tensor& a, const Tensor& b);

}  // namespace flowrecon
