#pragma once

#include <vector>

#include "flowrecon/conditioner.hpp"
#include "flowrecon/model.hpp"
#include "flowrecon/operators.hpp"

namespace flowrecon {

struct PosteriorSummary {
    std::vector<Tensor> samples;  // empty when keep_samples is false
    Tensor mean;
    Tensor stddev;  // pixelwise, 1/N convention
    int64_t count = 0;
};

// Draw N posterior samples x_i = T(z_i; H(y)) and summarize them.
// Unconditional models pass y = nullptr. Sampling parallelizes across
// FLOWRECON_THREADS workers with per-sample derived seeds.
PosteriorSummary posterior_samples(const FlowModel& model, const Conditioner* cond,
                                   ParameterStore& params, const Tensor* y, int64_t n,
                                   uint64_t seed, bool keep_samples = true);

struct RefineResult {
    Tensor image;
    Tensor initial;
    std::vector<double> objective_trace;
    bool stopped_nan = false;
};

// Data-consistency refinement: gradient descent on
// ||A x - y||^2 - lambda * log p(x|y), initialized at one model sample
// (or the latent `z0` if given). Conditioner features stay fixed.
RefineResult sample_refine(const FlowModel& model, const Conditioner* cond,
                           ParameterStore& params, const MeasurementModel& op, const Tensor& y,
                           double lambda, int64_t iterations = 100, double lr = 1e-4,
                           uint64_t seed = 1, const Tensor* z0 = nullptr);

// Worker cap from FLOWRECON_THREADS (>= 1; default: hardware threads).
int64_t thread_count();

}  // namespace flowrecon
