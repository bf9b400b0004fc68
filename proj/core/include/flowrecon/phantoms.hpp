#pragma once

#include <string>
#include <vector>

#include "flowrecon/tensor.hpp"

namespace flowrecon {

// Synthetic image families standing in for the full-scale datasets.
enum class PhantomKind { Ellipses, Shapes, DigitsLike };

const char* phantom_name(PhantomKind k);
PhantomKind phantom_from_name(const std::string& name);

// One (1, size, size) image with values in [0, 1], deterministic in the
// generator state.
Tensor make_phantom(PhantomKind kind, int64_t size, Rng& rng);

std::vector<Tensor> make_phantoms(PhantomKind kind, int64_t size, int64_t count, uint64_t seed);

// Analytic 2D Gaussian mixture for density-estimation tests.
struct GaussianMixture2D {
    struct Component {
        double weight;
        double mx, my;
        double sx, sy;   // axis-aligned standard deviations
        double rho = 0;  // correlation
    };
    std::vector<Component> components;

    void sample(Rng& rng, double& x, double& y) const;
    Tensor sample(Rng& rng) const;  // shape (2)
    double log_density(double x, double y) const;

    // Differential entropy -integral p ln p over [lo,hi]^2 with an
    // n x n midpoint rule.
    double entropy_quadrature(double lo, double hi, int64_t n) const;
};

// Three well-separated components, the default density-estimation target.
GaussianMixture2D mixture3();

}  // namespace flowrecon
