#include "flowrecon/base_distribution.hpp"

#include <cmath>
#include <limits>

namespace flowrecon {

const char* base_kind_name(BaseKind k) {
    return k == BaseKind::StandardNormal ? "normal" : "radial";
}

BaseKind base_kind_from_name(const std::string& name) {
    if (name == "normal") return BaseKind::StandardNormal;
    if (name == "radial") return BaseKind::RadialGaussian;
    throw ConfigError("unknown base distribution '" + name + "' (expected normal|radial)");
}

double log_unit_sphere_area(int64_t n) {
    // S_n = 2 pi^(n/2) / Gamma(n/2); computed in log space because
    // Gamma(n/2) overflows for image-sized n.
    double hn = 0.5 * static_cast<double>(n);
    return std::log(2.0) + hn * std::log(M_PI) - std::lgamma(hn);
}

double log_density_normal(const Tensor& z) {
    double n = static_cast<double>(z.numel());
    return -0.5 * z.dot(z) - 0.5 * n * std::log(2.0 * M_PI);
}

double log_density_radial(const Tensor& z) {
    int64_t n = z.numel();
    double r2 = z.dot(z);
    double prefix = 0.5 * std::log(2.0) - 0.5 * std::log(M_PI) - log_unit_sphere_area(n);
    if (n == 1) return prefix - 0.5 * r2;
    if (r2 == 0.0) return -std::numeric_limits<double>::infinity();
    return prefix - 0.5 * static_cast<double>(n - 1) * std::log(r2) - 0.5 * r2;
}

BaseDistribution::BaseDistribution(BaseKind kind, int64_t dim) : kind_(kind), dim_(dim) {
    if (dim < 1) throw Error("base distribution dimension must be >= 1");
    if (kind_ == BaseKind::StandardNormal) {
        log_norm_const_ = -0.5 * static_cast<double>(dim) * std::log(2.0 * M_PI);
    } else {
        log_norm_const_ = 0.5 * std::log(2.0) - 0.5 * std::log(M_PI) - log_unit_sphere_area(dim);
    }
}

double BaseDistribution::log_density(const Tensor& z) const {
    if (z.numel() != dim_)
        throw ShapeError("log_density: expected dimension " + std::to_string(dim_) +
                         ", got " + std::to_string(z.numel()));
    return kind_ == BaseKind::StandardNormal ? log_density_normal(z) : log_density_radial(z);
}

Ref BaseDistribution::log_density_ref(Tape& tape, Ref z) const {
    if (z->value.numel() != dim_)
        throw ShapeError("log_density_ref: expected dimension " + std::to_string(dim_) +
                         ", got " + std::to_string(z->value.numel()));
    Ref r2 = sum(tape, mul(tape, z, z));
    Ref out = add_scalar(tape, scale(tape, r2, -0.5), log_norm_const_);
    if (kind_ == BaseKind::RadialGaussian && dim_ > 1) {
        Ref lr2 = log_op(tape, r2);
        out = add(tape, out, scale(tape, lr2, -0.5 * static_cast<double>(dim_ - 1)));
    }
    return out;
}

Tensor BaseDistribution::sample(Rng& rng, Dtype dtype) const {
    Tensor z(Shape{dim_}, dtype);
    if (kind_ == BaseKind::StandardNormal) {
        for (int64_t i = 0; i < dim_; ++i) z[i] = rng.normal();
        z.quantize();
        return z;
    }
    double norm = 0.0;
    do {
        for (int64_t i = 0; i < dim_; ++i) z[i] = rng.normal();
        norm = z.norm2();
    } while (norm == 0.0);
    double r = std::abs(rng.normal());
    z.scale_inplace(r / norm);
    z.quantize();
    return z;
}

}  // namespace flowrecon
