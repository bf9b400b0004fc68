#pragma once

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "flowrecon/params.hpp"
#include "flowrecon/tape.hpp"

namespace flowrecon {

enum class LayerKind { Coupling, Permutation, Downsample, Split, Merge, Flatten };

enum class CouplingKind { Additive, Affine };
enum class PermKind { RandomShuffle, OrthogonalMix };
enum class DownKind { Checkerboard, Haar };

// Coupling subnetwork: two convolutions (kernel 1 or 3) with a leaky
// rectifier between, or the dense analog for flattened stages. The
// last layer is zero-initialized so every coupling starts as the
// identity.
struct SubnetSpec {
    bool dense = false;
    int64_t hidden = 32;
    int64_t kernel = 3;
};

// Context shared by all layers during a tape forward pass.
struct FlowContext {
    Tape* tape = nullptr;
    ParameterStore* params = nullptr;
    const std::vector<Ref>* cond = nullptr;  // per-slot conditional features
    bool recompute = false;                  // recompute couplings during backward
    Ref logdet = nullptr;                    // scalar accumulator
};

// State threaded through forward/inverse by the model: split outputs
// and the iUNet skip stack.
struct InverseContext {
    const ParameterStore* params = nullptr;
    const std::vector<Tensor>* cond = nullptr;
    std::vector<Tensor> skips;
};

class FlowLayer {
public:
    virtual ~FlowLayer() = default;
    virtual LayerKind kind() const = 0;
    virtual std::string describe() const = 0;
    virtual Shape out_shape(const Shape& in) const = 0;
    // Bijective layers only; Split/Merge are driven by the model.
    virtual Ref forward(FlowContext& ctx, Ref x) = 0;
    virtual Tensor inverse(const Tensor& y, InverseContext& ctx) const = 0;
};

// ---- coupling -------------------------------------------------------------

class CouplingLayer final : public FlowLayer {
public:
    // `in_shape` is (c,h,w) or (n); conditional couplings read feature
    // slot `cond_slot` with shape `cond_shape`.
    CouplingLayer(std::string name, CouplingKind ckind, Shape in_shape, SubnetSpec subnet,
                  ParameterStore& params, const Rng& init_rng, Dtype dtype,
                  std::optional<int> cond_slot = std::nullopt, Shape cond_shape = {},
                  double clamp = 2.0);

    LayerKind kind() const override { return LayerKind::Coupling; }
    std::string describe() const override;
    Shape out_shape(const Shape& in) const override { return in; }
    Ref forward(FlowContext& ctx, Ref x) override;
    Tensor inverse(const Tensor& y, InverseContext& ctx) const override;

    CouplingKind coupling_kind() const { return ckind_; }
    bool conditional() const { return cond_slot_.has_value(); }
    std::optional<int> cond_slot() const { return cond_slot_; }
    const Shape& cond_shape() const { return cond_shape_; }
    const std::string& name() const { return name_; }

private:
    Ref forward_recompute(FlowContext& ctx, Ref x);
    Ref fetch_cond(FlowContext& ctx) const;
    const Tensor* fetch_cond(InverseContext& ctx) const;

    std::string name_;
    CouplingKind ckind_;
    Shape in_shape_;
    SubnetSpec subnet_;
    std::optional<int> cond_slot_;
    Shape cond_shape_;
    double clamp_;  // <= 0 disables the soft clamp
    int64_t c1_, c2_;
    Dtype dtype_;
};

// ---- permutation / mixing -------------------------------------------------

class PermutationLayer final : public FlowLayer {
public:
    PermutationLayer(PermKind pkind, int64_t channels, uint64_t seed);

    LayerKind kind() const override { return LayerKind::Permutation; }
    std::string describe() const override;
    Shape out_shape(const Shape& in) const override { return in; }
    Ref forward(FlowContext& ctx, Ref x) override;
    Tensor inverse(const Tensor& y, InverseContext& ctx) const override;

    PermKind perm_kind() const { return pkind_; }

private:
    PermKind pkind_;
    int64_t channels_;
    uint64_t seed_;
    std::vector<int64_t> perm_, inv_perm_;
    std::vector<double> mix_;  // row-major orthogonal matrix, OrthogonalMix only
};

// ---- invertible downsampling ---------------------------------------------

class DownsampleLayer final : public FlowLayer {
public:
    // `up` runs the transform in the channel-reducing direction, used
    // on the iUNet upsampling path.
    DownsampleLayer(DownKind dkind, bool up = false) : dkind_(dkind), up_(up) {}

    LayerKind kind() const override { return LayerKind::Downsample; }
    std::string describe() const override;
    Shape out_shape(const Shape& in) const override;
    Ref forward(FlowContext& ctx, Ref x) override;
    Tensor inverse(const Tensor& y, InverseContext& ctx) const override;

    DownKind down_kind() const { return dkind_; }
    bool up() const { return up_; }

    static Tensor apply_down(DownKind k, const Tensor& x);
    static Tensor apply_up(DownKind k, const Tensor& x4);

private:
    DownKind dkind_;
    bool up_;
};

// ---- split / merge / flatten ---------------------------------------------

enum class SplitTarget { Output, Skip };

// Keeps the first `keep` channels on the main path; the remainder is
// forwarded to the latent output or pushed on the skip stack.
class SplitLayer final : public FlowLayer {
public:
    SplitLayer(int64_t keep, SplitTarget target) : keep_(keep), target_(target) {}

    LayerKind kind() const override { return LayerKind::Split; }
    std::string describe() const override;
    Shape out_shape(const Shape& in) const override;
    Ref forward(FlowContext&, Ref) override { throw Error("split is driven by the model"); }
    Tensor inverse(const Tensor&, InverseContext&) const override {
        throw Error("split is driven by the model");
    }

    int64_t keep() const { return keep_; }
    SplitTarget target() const { return target_; }

private:
    int64_t keep_;
    SplitTarget target_;
};

// Pops the top of the skip stack and concatenates it along channels.
class MergeLayer final : public FlowLayer {
public:
    explicit MergeLayer(Shape skip_shape) : skip_shape_(std::move(skip_shape)) {}

    LayerKind kind() const override { return LayerKind::Merge; }
    std::string describe() const override;
    Shape out_shape(const Shape& in) const override;
    Ref forward(FlowContext&, Ref) override { throw Error("merge is driven by the model"); }
    Tensor inverse(const Tensor&, InverseContext&) const override {
        throw Error("merge is driven by the model");
    }

    const Shape& skip_shape() const { return skip_shape_; }

private:
    Shape skip_shape_;
};

class FlattenLayer final : public FlowLayer {
public:
    LayerKind kind() const override { return LayerKind::Flatten; }
    std::string describe() const override { return "flatten"; }
    Shape out_shape(const Shape& in) const override;
    Ref forward(FlowContext& ctx, Ref x) override;
    Tensor inverse(const Tensor& y, InverseContext& ctx) const override;

    // Set at build time so the inverse can restore the image shape.
    void set_in_shape(Shape s) { in_shape_ = std::move(s); }

private:
    Shape in_shape_;
};

}  // namespace flowrecon
