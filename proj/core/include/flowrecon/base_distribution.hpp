#pragma once

#include <string>

#include "flowrecon/tape.hpp"
#include "flowrecon/tensor.hpp"

namespace flowrecon {

enum class BaseKind { StandardNormal, RadialGaussian };

const char* base_kind_name(BaseKind k);
BaseKind base_kind_from_name(const std::string& name);

// Base density at the latent end of a flow. Log densities include their
// normalization constants so NLL values are comparable across kinds.
class BaseDistribution {
public:
    BaseDistribution(BaseKind kind, int64_t dim);

    BaseKind kind() const { return kind_; }
    int64_t dim() const { return dim_; }

    // Exact log p(z); the radial kind returns -infinity at z = 0 for
    // dim >= 2 (measure-zero pole, kept total for likelihood training).
    double log_density(const Tensor& z) const;

    // Differentiable log p(z) built from tape primitives.
    Ref log_density_ref(Tape& tape, Ref z) const;

    // One draw of dimension `dim`.
    Tensor sample(Rng& rng, Dtype dtype = Dtype::Float64) const;

private:
    BaseKind kind_;
    int64_t dim_;
    double log_norm_const_;  // additive constant of the log density
};

// Standalone formulas, usable on any vector.
double log_density_normal(const Tensor& z);
double log_density_radial(const Tensor& z);

// log of the surface area of the unit sphere in R^n, via lgamma.
double log_unit_sphere_area(int64_t n);

}  // namespace flowrecon
