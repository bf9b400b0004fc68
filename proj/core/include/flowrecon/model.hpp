#pragma once

#include <memory>
#include <string>
#include <vector>

#include "flowrecon/base_distribution.hpp"
#include "flowrecon/layers.hpp"
#include "flowrecon/params.hpp"

namespace flowrecon {

struct FlowForward {
    Ref z = nullptr;       // flat latent, documented fixed order
    Ref logdet = nullptr;  // scalar, x->z direction
};

// Ordered invertible layer stack plus base distribution. Splitting and
// skip bookkeeping is driven here; individual layers stay bijective.
class FlowModel {
public:
    FlowModel() = default;

    void set_input_shape(Shape s) { input_shape_ = std::move(s); }
    void add(std::unique_ptr<FlowLayer> layer);

    // Propagate shapes, derive the latent layout, build the base
    // distribution. Must be called once after the last add().
    void finalize(BaseKind base_kind);

    FlowForward forward(Tape& tape, ParameterStore& params, Ref x,
                        const std::vector<Ref>* cond = nullptr, bool recompute = false) const;
    Tensor inverse(const Tensor& z, const ParameterStore& params,
                   const std::vector<Tensor>* cond = nullptr) const;

    Ref log_likelihood_ref(Tape& tape, ParameterStore& params, Ref x,
                           const std::vector<Ref>* cond = nullptr,
                           bool recompute = false) const;
    double log_likelihood(const ParameterStore& params, const Tensor& x,
                          const std::vector<Tensor>* cond = nullptr) const;

    const BaseDistribution& base() const;
    const Shape& input_shape() const { return input_shape_; }
    int64_t latent_dim() const { return latent_dim_; }
    bool conditional() const { return !cond_shapes_.empty(); }
    const std::vector<Shape>& cond_shapes() const { return cond_shapes_; }
    size_t layer_count() const { return layers_.size(); }
    const FlowLayer& layer(size_t i) const { return *layers_[i]; }

    // Largest |x - inverse(forward(x))| entry, the numerical
    // invertibility monitor.
    double roundtrip_residual(ParameterStore& params, const Tensor& x,
                              const std::vector<Tensor>* cond = nullptr) const;

    // Text manifest of the layer stack and latent ordering.
    std::string describe() const;

private:
    Shape input_shape_;
    std::vector<std::unique_ptr<FlowLayer>> layers_;
    std::vector<Shape> in_shapes_;          // per layer
    std::vector<Shape> split_rest_shapes_;  // forwarded-to-output parts, in order
    Shape final_shape_;
    int64_t latent_dim_ = 0;
    std::vector<Shape> cond_shapes_;
    std::unique_ptr<BaseDistribution> base_;
    bool finalized_ = false;
};

// ---- architecture specs ---------------------------------------------------

struct MultiScaleSpec {
    Shape input_shape{1, 16, 16};
    int scales = 3;
    int couplings_per_block = 2;
    DownKind down = DownKind::Haar;
    double split_fraction = 0.5;
    CouplingKind coupling = CouplingKind::Affine;
    double clamp = 2.0;
    int64_t hidden = 32;
    int64_t dense_couplings = 3;
    int64_t dense_hidden = 64;
    BaseKind base = BaseKind::StandardNormal;
    bool conditional = false;
    int64_t cond_channels = 32;
    int64_t cond_flat_dim = 32;
    uint64_t seed = 1;
    Dtype dtype = Dtype::Float32;
};

struct IUNetSpec {
    Shape input_shape{1, 16, 16};
    int scales = 3;
    int couplings_per_block = 1;
    DownKind down = DownKind::Haar;
    double skip_fraction = 0.5;
    CouplingKind coupling = CouplingKind::Additive;
    double clamp = 2.0;
    int64_t hidden = 32;
    BaseKind base = BaseKind::StandardNormal;
    bool conditional = false;
    int64_t cond_channels = 32;
    uint64_t seed = 1;
    Dtype dtype = Dtype::Float32;
};

struct DenseFlowSpec {
    int64_t dim = 2;
    int couplings = 6;
    int64_t hidden = 64;
    CouplingKind coupling = CouplingKind::Affine;
    double clamp = 2.0;
    BaseKind base = BaseKind::StandardNormal;
    bool conditional = false;
    int64_t cond_dim = 0;
    uint64_t seed = 1;
    Dtype dtype = Dtype::Float32;
};

FlowModel build_multiscale(const MultiScaleSpec& spec, ParameterStore& params);
FlowModel build_iunet(const IUNetSpec& spec, ParameterStore& params);
FlowModel build_dense_flow(const DenseFlowSpec& spec, ParameterStore& params);

// The 28x28 compressed-sensing stack: two invertible downsampling
// operations with conditional coupling sections, then a flattened
// split (656 to output) and a dense conditional section on 128.
FlowModel build_cs_multiscale(ParameterStore& params, BaseKind base = BaseKind::StandardNormal,
                              uint64_t seed = 1, Dtype dtype = Dtype::Float32,
                              int64_t cond_channels = 16, int section_repeats = 8);

}  // namespace flowrecon
